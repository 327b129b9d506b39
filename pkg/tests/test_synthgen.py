import numpy as np
import pytest

from fairmc.errors import InvalidInputError
from fairmc.synthgen import (
    SyntheticConfig,
    block_stats,
    generate,
    generate_ground_truth,
    realized_rank,
    sample_observations,
)


def test_all_ones_preferences_give_constant_matrix():
    ratings, _ = generate_ground_truth(SyntheticConfig(n=20, m=10, rank=4, p=[[1, 1], [1, 1]]))
    assert (ratings.values == 1.0).all()
    assert realized_rank(ratings) == 1


def test_diagonal_preferences_give_block_matrix():
    ratings, groups = generate_ground_truth(SyntheticConfig.symmetric(1.0, 0.0, 0.2, 0.2, n=12, m=8, rank=4))
    same = groups.user_group[:, None] == groups.item_group[None, :]
    assert np.array_equal(ratings.values, np.where(same, 1.0, -1.0))
    # the two row patterns are negatives of each other, so the +/-1 block matrix has rank 1
    assert realized_rank(ratings) == 1


def test_default_size_rank_and_like_rate():
    rates = []
    for seed in range(1, 6):
        ratings, _ = generate_ground_truth(SyntheticConfig(seed=seed))
        assert ratings.shape == (600, 400)
        assert realized_rank(ratings) <= 20
        # at most r distinct rows
        assert len(np.unique(ratings.values, axis=0)) <= 20
        rates.append((ratings.values > 0).mean())
    assert abs(np.mean(rates) - 0.4) <= 0.02


def test_block_like_rates_converge():
    cfg = SyntheticConfig(n=2000, m=2000, rank=400, p=[[0.7, 0.2], [0.35, 0.55]], seed=3)
    dataset, groups = generate(cfg)
    stats = block_stats(dataset, groups)
    for (g, h), s in stats.items():
        assert abs(s["like_rate"] - cfg.p[g][h]) <= 0.01


def test_observed_fraction_per_block():
    cfg = SyntheticConfig.symmetric(0.4, 0.4, 0.2, 0.01)
    ratings, groups = generate_ground_truth(cfg)
    totals = {k: 0.0 for k in ((0, 0), (0, 1), (1, 0), (1, 1))}
    for seed in range(100):
        mask = sample_observations(ratings, groups, cfg.q, seed)
        for g in (0, 1):
            for h in (0, 1):
                block = mask.observed[np.ix_(groups.user_group == g, groups.item_group == h)]
                totals[(g, h)] += block.mean() / 100
    for (g, h), frac in totals.items():
        assert abs(frac - cfg.q[g][h]) <= 0.1 * cfg.q[g][h]


def test_extreme_observation_probabilities():
    ratings, groups = generate_ground_truth(SyntheticConfig(n=10, m=6, rank=2))
    assert sample_observations(ratings, groups, [[1, 1], [1, 1]], 1).count == 60
    assert sample_observations(ratings, groups, [[0, 0], [0, 0]], 1).count == 0


def test_swapping_groups_mirrors_block_statistics():
    # relabelling the user groups together with p's rows should swap the block stats in distribution
    p = [[0.8, 0.3], [0.1, 0.6]]
    a = block_stats(*generate(SyntheticConfig(n=1000, m=1000, rank=200, p=p, seed=7)))
    b = block_stats(*generate(SyntheticConfig(n=1000, m=1000, rank=200, p=p[::-1], seed=8)))
    for h in (0, 1):
        assert abs(a[(0, h)]["like_rate"] - b[(1, h)]["like_rate"]) < 0.03
        assert abs(a[(1, h)]["like_rate"] - b[(0, h)]["like_rate"]) < 0.03


def test_generation_is_deterministic():
    cfg = SyntheticConfig(n=40, m=30, rank=6, seed=9)
    (d1, _), (d2, _) = generate(cfg), generate(cfg)
    assert np.array_equal(d1.ratings.values, d2.ratings.values)
    assert np.array_equal(d1.observed.observed, d2.observed.observed)
    d3, _ = generate(cfg.with_seed(10))
    assert not np.array_equal(d1.ratings.values, d3.ratings.values)


@pytest.mark.parametrize("kwargs", [
    {"n": 7}, {"rank": 3}, {"rank": 0}, {"n": 10, "m": 10, "rank": 12},
    {"p": [[1.2, 0], [0, 0]]}, {"q": [[0.1, 0.2, 0.3]]},
])
def test_invalid_configs(kwargs):
    with pytest.raises(InvalidInputError):
        SyntheticConfig(**kwargs)
