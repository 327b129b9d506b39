import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairmc import kde
from fairmc.core import UNGROUPED, GroupAssignment
from fairmc.errors import EmptyStratumWarning, InvalidInputError, UnsupportedError
from fairmc.kde import PenaltyConfig, PenaltyKind

from helpers import central_diff, rel_error

ALL_KINDS = [k for k in PenaltyKind if k is not PenaltyKind.NONE]


def random_instance(rng, n=6, m=6, tau=0.0, h=0.01, ungrouped=False):
    """Predictions within a few bandwidths of tau, so every entry carries gradient."""
    ug = rng.permutation(np.arange(n) % 2)
    ig = rng.permutation(np.arange(m) % 2)
    if ungrouped:
        ug[0] = UNGROUPED
        ig[-1] = UNGROUPED
    groups = GroupAssignment(ug, ig)
    pred = tau + h * rng.normal(0.0, 1.5, (n, m))
    truth = np.where(rng.random((n, m)) < 0.5, 1.0, -1.0)
    mask = rng.random((n, m)) < 0.8
    mask[:2, :2] = True
    mask[-2:, -2:] = True
    return pred, truth, mask, groups


def test_survival_matches_complementary_error_function():
    xs = np.linspace(-8, 8, 2001)
    want = np.array([0.5 * math.erfc(x / math.sqrt(2)) for x in xs])
    assert np.max(np.abs(kde.kernel_survival(xs) - want)) <= 1e-7


def test_huber_examples():
    d = 0.3
    assert kde.huber(0.0, d) == 0.0 and kde.huber_deriv(0.0, d) == 0.0
    assert kde.huber(2 * d, d) == pytest.approx(1.5 * d * d, rel=1e-15)
    assert kde.huber(-2 * d, d) == pytest.approx(1.5 * d * d, rel=1e-15)
    assert kde.huber(0.5 * d, d) == pytest.approx(0.125 * d * d, rel=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(1e-4, 10))
def test_huber_derivative_bounded(x, d):
    assert abs(float(kde.huber_deriv(x, d))) <= d


def test_rate_estimate_limits():
    rng = np.random.default_rng(1)
    h = 0.01
    near = rng.normal(0.0, h, 50)
    r = kde.estimate_rate(near, 0.0, h)
    assert 0.0 < r < 1.0
    # entries at least 10 bandwidths from tau reproduce the indicator rate
    far = np.concatenate([rng.uniform(0.1, 1.0, 30), -rng.uniform(0.1, 1.0, 20)])
    for hh in (1e-2, 1e-3, 1e-4):
        assert abs(kde.estimate_rate(far, 0.0, hh) - 0.6) <= 1e-9
    with pytest.raises(InvalidInputError):
        kde.estimate_rate([], 0.0, h)
    with pytest.raises(InvalidInputError):
        kde.estimate_rate([0.1], 0.0, 0.0)


def test_rate_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    x = rng.normal(0.0, 0.02, 12)
    g = kde.estimate_rate_grad(x, 0.0, 0.01)
    fd = central_diff(lambda v: kde.estimate_rate(v, 0.0, 0.01), x)
    assert rel_error(g, fd) <= 1e-4


@pytest.mark.parametrize("kind", ALL_KINDS, ids=lambda k: k.value)
def test_penalty_gradients_match_finite_differences(kind):
    rng = np.random.default_rng(100 + ALL_KINDS.index(kind))
    for trial in range(20):
        tau = float(rng.choice([0.0, 0.5, 3.0]))
        pred, truth, mask, groups = random_instance(rng, tau=tau, ungrouped=trial % 3 == 0)
        cfg = PenaltyConfig(kind, tau=tau, h=0.01, delta=float(rng.choice([0.01, 0.1])))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", EmptyStratumWarning)
            value, grad = kde.fairness_penalty(pred, groups, cfg, truth=truth, train_mask=mask)
            fd = central_diff(lambda p: kde.fairness_penalty(p, groups, cfg, truth=truth, train_mask=mask).value,
                              pred)
        assert np.isfinite(value)
        assert rel_error(grad, fd) <= 1e-4, (kind, trial)


# ---------------------------------------------------------------------------
# independent scalar re-implementations

def _F(x):
    return 0.5 * math.erfc(x / math.sqrt(2))


def _f(x):
    return math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)


def _H(x, d):
    return 0.5 * x * x if abs(x) <= d else d * (abs(x) - 0.5 * d)


def _dH(x, d):
    return x if abs(x) <= d else d * math.copysign(1.0, x)


def scalar_dee_penalty(pred, ug, ig, tau, h, d, entries=None):
    """Value and gradient by explicit loops; ``entries`` restricts to a subset of positions."""
    n, m = len(pred), len(pred[0])
    pos = [(i, j) for i in range(n) for j in range(m)
           if ug[i] != UNGROUPED and ig[j] != UNGROUPED and (entries is None or (i, j) in entries)]
    cells = {(a, b): [(i, j) for (i, j) in pos if ug[i] == a and ig[j] == b] for a in (0, 1) for b in (0, 1)}
    cells = {c: v for c, v in cells.items() if v}
    rate = {c: sum(_F((tau - pred[i][j]) / h) for i, j in v) / len(v) for c, v in cells.items()}
    marg = sum(_F((tau - pred[i][j]) / h) for i, j in pos) / len(pos)
    value = sum(_H(rate[c] - marg, d) for c in cells)
    grad = [[0.0] * m for _ in range(n)]
    for c, v in cells.items():
        w = _dH(rate[c] - marg, d)
        for i, j in pos:
            dens = _f((tau - pred[i][j]) / h) / h
            inside = 1.0 / len(v) if (i, j) in v else 0.0
            grad[i][j] += w * dens * (inside - 1.0 / len(pos))
    return value, np.array(grad)


def test_dee_penalty_matches_scalar_version():
    rng = np.random.default_rng(5)
    for _ in range(5):
        pred, _, _, groups = random_instance(rng, 4, 4, ungrouped=False)
        cfg = PenaltyConfig("dee", tau=0.0, h=0.01, delta=0.01)
        value, grad = kde.dee_penalty(pred, groups, cfg)
        v2, g2 = scalar_dee_penalty(pred.tolist(), groups.user_group.tolist(), groups.item_group.tolist(),
                                    0.0, 0.01, 0.01)
        assert value == pytest.approx(v2, rel=1e-9, abs=1e-15)
        assert np.allclose(grad, g2, rtol=1e-9, atol=1e-13)


def test_cond_y_penalty_matches_scalar_version():
    rng = np.random.default_rng(6)
    for _ in range(5):
        pred, truth, mask, groups = random_instance(rng, 6, 6)
        cfg = PenaltyConfig("dee_cond_y", tau=0.0, h=0.01, delta=0.01)
        truth_prefs = (truth >= 0).astype(np.int8)
        value, grad = kde.dee_cond_y_penalty(pred, truth_prefs, mask, groups, cfg)
        v2, g2 = 0.0, np.zeros((6, 6))
        for y in (0, 1):
            entries = {(i, j) for i in range(6) for j in range(6) if mask[i, j] and truth_prefs[i, j] == y}
            vy, gy = scalar_dee_penalty(pred.tolist(), groups.user_group.tolist(), groups.item_group.tolist(),
                                        0.0, 0.01, 0.01, entries)
            v2 += vy
            g2 += gy
        assert value == pytest.approx(v2, rel=1e-9, abs=1e-15)
        assert np.allclose(grad, g2, rtol=1e-9, atol=1e-13)


# ---------------------------------------------------------------------------
# worked examples

def test_equal_rates_give_zero_value_and_gradient():
    groups = GroupAssignment([0, 1, 0, 1], [0, 0, 1, 1])
    pred = np.full((4, 4), 0.003)
    for fn in (kde.dee_penalty, kde.der_penalty, kde.ugf_penalty, kde.cvs_penalty):
        value, grad = fn(pred, groups, PenaltyConfig())
        assert value == 0.0
        assert not grad.any()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_dee_penalty_zero_iff_rates_equal(seed):
    rng = np.random.default_rng(seed)
    groups = GroupAssignment([0, 0, 1, 1], [0, 1, 0, 1])
    # columns (b0, b0, b1, b1) give both item groups one b0 and one b1 column,
    # so every cell holds the same multiset of values
    base = rng.normal(0.0, 0.01, 2)
    pred = np.tile(np.repeat(base, 2), (4, 1))
    value, _ = kde.dee_penalty(pred, groups, PenaltyConfig())
    assert value <= 1e-12
    pred[0, 0] += 0.05
    value, _ = kde.dee_penalty(pred, groups, PenaltyConfig())
    assert value > 1e-12


def test_block_ratings_separate_dee_from_cvs():
    groups = GroupAssignment(np.repeat([0, 1], 3), np.repeat([0, 1], 3))
    pred = np.where(groups.user_group[:, None] == groups.item_group[None, :], 1.0, -1.0)
    cfg = PenaltyConfig(tau=0.0, h=0.01, delta=0.01)
    assert kde.cvs_penalty(pred, groups, cfg).value <= 1e-12
    assert kde.ugf_penalty(pred, groups, cfg).value <= 1e-12
    assert kde.dee_penalty(pred, groups, cfg).value > 1e-3


def test_val_penalty_examples():
    groups = GroupAssignment([0, 1], [0])
    truth = np.array([[0.0], [0.0]])
    mask = np.ones((2, 1), dtype=bool)
    cfg = PenaltyConfig("val", delta=10.0)
    value, grad = kde.val_penalty(truth, truth, mask, groups, cfg)
    assert value == 0.0 and not grad.any()
    value, _ = kde.val_penalty(np.array([[-1.0], [1.0]]), truth, mask, groups, cfg)
    assert value == 2.0


def test_cov_penalty_examples():
    groups = GroupAssignment([0, 0, 1, 1], [0, 0, 1, 1])
    value, grad = kde.cov_penalty(np.full((4, 4), 0.7), groups, PenaltyConfig("cov"))
    assert value == 0.0 and not grad.any()
    pm = np.where(groups.item_group[None, :] == 1, 1.0, -1.0) * np.ones((4, 1))
    # covariance of a +/-1 prediction with a balanced {0,1} label is 0.5
    assert kde.cov_penalty(pm, groups, PenaltyConfig("cov")).value == pytest.approx(0.25, abs=1e-15)
    zero_one = (pm + 1) / 2
    assert kde.cov_penalty(zero_one, groups, PenaltyConfig("cov")).value == pytest.approx(0.0625, abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_penalties_covariant_under_within_group_permutation(seed):
    rng = np.random.default_rng(seed)
    pred, truth, mask, groups = random_instance(rng, 6, 6)
    ug, ig = groups.user_group, groups.item_group
    pu = np.concatenate([rng.permutation(np.flatnonzero(ug == a)) for a in (0, 1)])
    pi = np.concatenate([rng.permutation(np.flatnonzero(ig == b)) for b in (0, 1)])
    moved = GroupAssignment(ug[pu], ig[pi])
    for kind in ALL_KINDS:
        cfg = PenaltyConfig(kind)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", EmptyStratumWarning)
            a = kde.fairness_penalty(pred, groups, cfg, truth=truth, train_mask=mask)
            b = kde.fairness_penalty(pred[pu][:, pi], moved, cfg, truth=truth[pu][:, pi], train_mask=mask[pu][:, pi])
        assert b.value == pytest.approx(a.value, rel=1e-12, abs=1e-15)
        assert np.allclose(b.grad, a.grad[pu][:, pi], rtol=1e-10, atol=1e-14)


def test_none_kind_is_zero():
    pred, truth, mask, groups = random_instance(np.random.default_rng(0))
    value, grad = kde.fairness_penalty(pred, groups, PenaltyConfig("none"))
    assert value == 0.0 and not grad.any()


def test_penalty_errors():
    groups = GroupAssignment([0, 0], [0, 1])
    pred = np.zeros((2, 2))
    with pytest.raises(InvalidInputError):
        kde.dee_penalty(pred, groups, PenaltyConfig())
    with pytest.raises(InvalidInputError):
        kde.fairness_penalty(pred, groups, PenaltyConfig("val"))
    with pytest.raises(UnsupportedError):
        kde.val_penalty(np.zeros((3, 2)), np.zeros((3, 2)), np.ones((3, 2), bool),
                        GroupAssignment([0, 1, 2], [0, 1], 3, 2), PenaltyConfig("val"))
    with pytest.raises(InvalidInputError):
        PenaltyConfig(h=0.0)
    with pytest.raises(InvalidInputError):
        PenaltyConfig(lam=1.5)
    ok = GroupAssignment([0, 1], [0, 1])
    with pytest.warns(EmptyStratumWarning), pytest.raises(InvalidInputError):
        kde.dee_cond_y_penalty(pred, np.ones((2, 2), np.int8), np.zeros((2, 2), bool), ok, PenaltyConfig())


def test_cond_y_constant_prediction_is_zero():
    pred, truth, mask, groups = random_instance(np.random.default_rng(3))
    value, grad = kde.dee_cond_y_penalty(np.full_like(pred, 0.004), (truth > 0).astype(np.int8), mask, groups,
                                         PenaltyConfig("dee_cond_y"))
    assert value == 0.0 and not grad.any()
