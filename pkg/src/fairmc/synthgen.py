"""Synthetic low-rank binary ratings with population imbalance and observation bias.

Users and items are each split into two equal halves (group 0 = first half).
Ground truth is built from ``r/2`` random +/-1 basis rows per user group; every
user copies one basis row of its own group, so the matrix has at most ``r``
distinct rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core import (
    GroupAssignment,
    ObservationMask,
    RatingDataset,
    RatingMatrix,
    ValueDomain,
    check_seed,
    make_rng,
)
from .errors import InvalidInputError


def _table(t, name):
    t = np.array(t, dtype=np.float64)
    if t.shape != (2, 2):
        raise InvalidInputError(f"{name} must be a 2x2 table, got shape {t.shape}")
    if not np.all((t >= 0.0) & (t <= 1.0)):
        raise InvalidInputError(f"{name} probabilities must lie in [0, 1]")
    t.setflags(write=False)
    return t


def symmetric_table(same, cross):
    """2x2 table with ``same`` on the diagonal (matching groups) and ``cross`` off it."""
    return [[same, cross], [cross, same]]


@dataclass(frozen=True, eq=False)
class SyntheticConfig:
    """Generator settings.

    ``p[g][h]`` is the probability that a user of group ``g`` likes an item of
    group ``h``; ``q[g][h]`` the probability that such a rating is observed.
    """

    n: int = 600
    m: int = 400
    rank: int = 20
    p: np.ndarray = field(default_factory=lambda: symmetric_table(0.4, 0.4))
    q: np.ndarray = field(default_factory=lambda: symmetric_table(0.2, 0.01))
    seed: int = 1

    def __post_init__(self):
        for name in ("n", "m", "rank"):
            v = getattr(self, name)
            if int(v) != v or v < 2 or v % 2:
                raise InvalidInputError(f"{name} must be a positive even integer, got {v}")
        if self.rank > min(self.n, self.m):
            raise InvalidInputError(f"rank {self.rank} exceeds min(n, m) = {min(self.n, self.m)}")
        object.__setattr__(self, "p", _table(self.p, "p"))
        object.__setattr__(self, "q", _table(self.q, "q"))
        object.__setattr__(self, "seed", check_seed(self.seed))

    @classmethod
    def symmetric(cls, p0, p1, q0, q1, **kwargs) -> SyntheticConfig:
        return cls(p=symmetric_table(p0, p1), q=symmetric_table(q0, q1), **kwargs)

    def with_seed(self, seed) -> SyntheticConfig:
        return replace(self, seed=seed)

    def to_dict(self):
        return {
            "n": self.n, "m": self.m, "rank": self.rank,
            "p": self.p.tolist(), "q": self.q.tolist(), "seed": self.seed,
        }


def half_split_groups(n, m) -> GroupAssignment:
    ug = np.repeat([0, 1], [n // 2, n - n // 2])
    ig = np.repeat([0, 1], [m // 2, m - m // 2])
    return GroupAssignment(ug, ig, 2, 2)


def generate_ground_truth(cfg: SyntheticConfig):
    """Return ``(RatingMatrix, GroupAssignment)`` for ``cfg``."""
    if cfg.rank > cfg.n:
        raise InvalidInputError("cannot place more basis rows than users")
    groups = half_split_groups(cfg.n, cfg.m)
    rng = make_rng(cfg.seed, "ground_truth")
    per_group = cfg.rank // 2
    values = np.empty((cfg.n, cfg.m))
    for g in (0, 1):
        like = cfg.p[g][groups.item_group]
        basis = np.where(rng.random((per_group, cfg.m)) < like, 1.0, -1.0)
        users = np.flatnonzero(groups.user_group == g)
        values[users] = basis[rng.integers(per_group, size=users.size)]
    return RatingMatrix(values, ValueDomain.BINARY), groups


def sample_observations(ratings: RatingMatrix, groups: GroupAssignment, q, seed) -> ObservationMask:
    q = _table(q, "q")
    groups.check_shape(ratings.shape)
    prob = q[groups.user_group[:, None], groups.item_group[None, :]]
    draw = make_rng(seed, "observations").random(ratings.shape)
    return ObservationMask(draw < prob)


def generate(cfg: SyntheticConfig):
    """Ground truth plus biased observations: ``(RatingDataset, GroupAssignment)``."""
    ratings, groups = generate_ground_truth(cfg)
    observed = sample_observations(ratings, groups, cfg.q, cfg.seed)
    return RatingDataset(ratings, observed), groups


def block_stats(dataset: RatingDataset, groups: GroupAssignment):
    """Per (user group, item group) block: fraction of +1 entries and observed fraction."""
    values = dataset.ratings.values
    observed = dataset.observed.observed
    stats = {}
    for g in range(groups.n_user_groups):
        for h in range(groups.n_item_groups):
            rows = groups.user_group == g
            cols = groups.item_group == h
            block = values[np.ix_(rows, cols)]
            stats[(g, h)] = {
                "like_rate": float((block > 0).mean()),
                "observed_rate": float(observed[np.ix_(rows, cols)].mean()),
            }
    return stats


def realized_rank(ratings: RatingMatrix) -> int:
    return int(np.linalg.matrix_rank(ratings.values))
