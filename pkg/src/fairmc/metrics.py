"""Evaluation-time accuracy and fairness measures on a predicted rating matrix.

All preference-rate measures count entries exactly (integer counts, one
division per rate) and sum their absolute gaps with ``math.fsum``, so results
do not depend on evaluation order.

Rates are taken over entries whose user *and* item are grouped. By default
that means every such entry of the full predicted matrix; pass ``within`` to
restrict to a subset (for example the test mask).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import GroupAssignment, ObservationMask, threshold_preferences
from .errors import EmptyStratumWarning, InvalidInputError, UnsupportedError


def _as_bool(mask):
    if mask is None:
        return None
    if isinstance(mask, ObservationMask):
        return mask.observed
    return np.asarray(mask, dtype=bool)


def cell_counts(prefs, groups: GroupAssignment, within=None):
    """``(ones, totals)``, each a ``|Z_user| x |Z_item|`` integer table."""
    prefs = np.asarray(prefs)
    groups.check_shape(prefs.shape)
    cells = groups.cell_index()
    valid = cells >= 0
    within = _as_bool(within)
    if within is not None:
        valid &= within
    idx = cells[valid]
    n_cells = groups.n_cells
    totals = np.bincount(idx, minlength=n_cells)
    ones = np.bincount(idx[prefs[valid] == 1], minlength=n_cells)
    shape = (groups.n_user_groups, groups.n_item_groups)
    return ones.reshape(shape), totals.reshape(shape)


def _require_cells(totals, what):
    if (totals == 0).any():
        empty = [tuple(int(v) for v in c) for c in np.argwhere(totals == 0)]
        raise InvalidInputError(f"{what}: empty (user group, item group) cells {empty}")


def _gap(ones, totals, what):
    """|rate(group 1) - rate(group 0)| for a two-group 1-D count table."""
    if ones.size != 2:
        raise UnsupportedError(f"{what} is defined for exactly two groups, got {ones.size}")
    if (totals == 0).any():
        raise InvalidInputError(f"{what}: a group has no grouped entries")
    rates = ones / totals
    return abs(float(rates[1]) - float(rates[0]))


def rmse(pred, truth, eval_mask) -> float:
    mask = _as_bool(eval_mask)
    if mask is None or not mask.any():
        raise InvalidInputError("RMSE needs a non-empty evaluation mask")
    truth = getattr(truth, "values", truth)
    err = (np.asarray(pred) - np.asarray(truth))[mask]
    return float(np.sqrt(np.mean(err * err)))


def val(pred, truth, mask, groups: GroupAssignment) -> float:
    """Value unfairness: mean over items of the gap in mean signed error between user groups.

    Items lacking an observation from either group are skipped and the
    average runs over the retained items only.
    """
    if groups.n_user_groups != 2:
        raise UnsupportedError("VAL is defined for exactly two user groups")
    truth = np.asarray(getattr(truth, "values", truth))
    obs = _as_bool(mask)
    err = truth - np.asarray(pred)
    means = []
    for g in (0, 1):
        sel = obs & (groups.user_group == g)[:, None]
        means.append((np.where(sel, err, 0.0).sum(axis=0), sel.sum(axis=0)))
    (s0, c0), (s1, c1) = means
    keep = (c0 > 0) & (c1 > 0)
    if not keep.any():
        raise InvalidInputError("VAL: no item is observed by both user groups")
    gaps = np.abs(s0[keep] / c0[keep] - s1[keep] / c1[keep])
    return math.fsum(gaps.tolist()) / int(keep.sum())


def cvs(prefs, groups: GroupAssignment, within=None) -> float:
    ones, totals = cell_counts(prefs, groups, within)
    return _gap(ones.sum(axis=0), totals.sum(axis=0), "CVS")


def ugf(prefs, groups: GroupAssignment, within=None) -> float:
    ones, totals = cell_counts(prefs, groups, within)
    return _gap(ones.sum(axis=1), totals.sum(axis=1), "UGF")


def der(prefs, groups: GroupAssignment, within=None) -> float:
    ones, totals = cell_counts(prefs, groups, within)
    _require_cells(totals, "DER")
    user_rate = ones.sum(axis=1) / totals.sum(axis=1)
    cell = ones / totals
    return math.fsum(abs(user_rate[a] - cell[a, b]) for a in range(cell.shape[0]) for b in range(cell.shape[1]))


def dee(prefs, groups: GroupAssignment, within=None) -> float:
    ones, totals = cell_counts(prefs, groups, within)
    _require_cells(totals, "DEE")
    marginal = int(ones.sum()) / int(totals.sum())
    cell = ones / totals
    return math.fsum(abs(marginal - float(r)) for r in cell.ravel())


def cell_rates(prefs, groups: GroupAssignment, within=None):
    """``({(z_user, z_item): rate}, marginal_rate)`` over grouped entries."""
    ones, totals = cell_counts(prefs, groups, within)
    _require_cells(totals, "cell rates")
    rates = {
        (a, b): float(ones[a, b] / totals[a, b])
        for a in range(groups.n_user_groups)
        for b in range(groups.n_item_groups)
    }
    return rates, int(ones.sum()) / int(totals.sum())


def dee_cond_y(prefs, truth_prefs, mask, groups: GroupAssignment) -> float:
    """DEE computed separately inside each ground-truth label stratum of ``mask``, then summed.

    Empty strata or cells are skipped with an ``EmptyStratumWarning``.
    """
    obs = _as_bool(mask)
    truth_prefs = np.asarray(truth_prefs)
    terms = []
    for y in (0, 1):
        stratum = obs & (truth_prefs == y)
        ones, totals = cell_counts(prefs, groups, stratum)
        if totals.sum() == 0:
            warnings.warn(f"label stratum y={y} is empty", EmptyStratumWarning, stacklevel=2)
            continue
        marginal = int(ones.sum()) / int(totals.sum())
        for a in range(groups.n_user_groups):
            for b in range(groups.n_item_groups):
                if totals[a, b] == 0:
                    warnings.warn(f"stratum (y={y}, user={a}, item={b}) is empty",
                                  EmptyStratumWarning, stacklevel=2)
                    continue
                terms.append(abs(marginal - float(ones[a, b] / totals[a, b])))
    return math.fsum(terms)


def top_k_indicator(pred, k: int) -> np.ndarray:
    """Per-user top-``k`` membership; ties go to the lower item index."""
    pred = np.asarray(pred)
    n, m = pred.shape
    if not 1 <= k <= m:
        raise InvalidInputError(f"K must lie in 1..{m}, got {k}")
    order = np.argsort(-pred, axis=1, kind="stable")[:, :k]
    r = np.zeros(pred.shape, dtype=np.int8)
    np.put_along_axis(r, order, 1, axis=1)
    return r


def dee_ranking(pred, k: int, groups: GroupAssignment) -> float:
    return dee(top_k_indicator(pred, k), groups)


@dataclass
class MetricsReport:
    rmse: float
    dee: float
    der: float
    ugf: float
    cvs: float
    val: float
    dee_cond_y: float
    cell_rates: dict
    marginal_rate: float
    dee_ranking: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def to_dict(self):
        """Flat mapping with the fixed serialization names; undefined measures become None."""
        out = {}
        for name in ("rmse", "dee", "der", "ugf", "cvs", "val", "dee_cond_y"):
            out[name] = _clean(getattr(self, name))
        for k in sorted(self.dee_ranking):
            out[f"dee_ranking_K{k}"] = _clean(self.dee_ranking[k])
        for (a, b), rate in sorted(self.cell_rates.items()):
            out[f"rate_u{a}_i{b}"] = _clean(rate)
        out["rate_marginal"] = _clean(self.marginal_rate)
        return out


def _clean(v):
    v = float(v)
    return None if math.isnan(v) else v


def _maybe(fn, *args):
    try:
        return fn(*args)
    except UnsupportedError:
        return math.nan


def evaluate(pred, dataset, groups: GroupAssignment, test_mask, tau: float,
             topk=(), fairness_domain: str = "all") -> MetricsReport:
    """Full report for one predicted matrix.

    RMSE uses ``test_mask``; VAL and the label-conditioned measure use every
    observed entry of ``dataset``; the remaining fairness measures use every
    grouped entry (``fairness_domain="all"``) or only grouped test entries
    (``"test"``).
    """
    pred = np.asarray(pred, dtype=np.float64)
    if not np.isfinite(pred).all():
        raise InvalidInputError("prediction contains non-finite values")
    groups.check_shape(pred.shape)
    if fairness_domain not in ("all", "test"):
        raise InvalidInputError(f"unknown fairness domain {fairness_domain!r}")
    within = None if fairness_domain == "all" else _as_bool(test_mask)
    truth = dataset.ratings.values
    observed = dataset.observed.observed
    prefs = threshold_preferences(pred, tau)
    rates, marginal = cell_rates(prefs, groups, within)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", EmptyStratumWarning)
        cond = dee_cond_y(prefs, threshold_preferences(truth, tau), observed, groups)
    return MetricsReport(
        rmse=rmse(pred, truth, test_mask),
        dee=dee(prefs, groups, within),
        der=der(prefs, groups, within),
        ugf=_maybe(ugf, prefs, groups, within),
        cvs=_maybe(cvs, prefs, groups, within),
        val=_maybe(val, pred, truth, observed, groups),
        dee_cond_y=cond,
        cell_rates=rates,
        marginal_rate=marginal,
        dee_ranking={int(k): dee_ranking(pred, int(k), groups) for k in topk},
        warnings=[str(w.message) for w in caught],
    )


__all__ = [
    "MetricsReport", "cell_counts", "cell_rates", "cvs", "dee", "dee_cond_y",
    "dee_ranking", "der", "evaluate", "rmse", "top_k_indicator", "ugf", "val",
]
