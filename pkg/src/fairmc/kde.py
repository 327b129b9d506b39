"""Differentiable fairness penalties built on Gaussian-kernel density estimates.

Each preference rate P(pred >= tau | subset) is replaced by its KDE estimate
``mean(F((tau - pred) / h))`` where ``F`` is the upper tail of the Gaussian
kernel; its derivative with respect to one prediction is ``f((tau - pred)/h) / h``
divided by the subset size. Absolute gaps between rates are smoothed with the
Huber loss, so every penalty returns a value and an exact gradient with
respect to the predicted matrix.

Only entries whose user and item are both grouped enter the rates.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import ndtr

from .core import UNGROUPED, GroupAssignment
from .errors import EmptyStratumWarning, InvalidInputError, UnsupportedError

_SQRT_2PI = math.sqrt(2.0 * math.pi)
# beyond |x| = 10 the kernel density is < 1e-22 and the tail < 1e-23; both are
# taken as exactly 0 there (the tail as 1 on the other side)
_CUTOFF = 10.0


class PenaltyKind(str, enum.Enum):
    NONE = "none"
    DEE = "dee"
    DER = "der"
    UGF = "ugf"
    CVS = "cvs"
    VAL = "val"
    DEE_COND_Y = "dee_cond_y"
    COV = "cov"


@dataclass(frozen=True)
class PenaltyConfig:
    kind: PenaltyKind = PenaltyKind.DEE
    tau: float = 0.0
    h: float = 0.01
    delta: float = 0.01
    lam: float = 0.99

    def __post_init__(self):
        object.__setattr__(self, "kind", PenaltyKind(self.kind))
        if not self.h > 0:
            raise InvalidInputError("bandwidth h must be positive")
        if not self.delta > 0:
            raise InvalidInputError("Huber delta must be positive")
        if not 0.0 <= self.lam <= 1.0:
            raise InvalidInputError("lambda must lie in [0, 1]")

    @property
    def active(self) -> bool:
        """Whether the fairness term takes part in training at all."""
        return self.kind is not PenaltyKind.NONE and self.lam > 0.0

    def to_dict(self):
        return {"kind": self.kind.value, "tau": self.tau, "h": self.h, "delta": self.delta, "lam": self.lam}


class PenaltyValueGrad(NamedTuple):
    value: float
    grad: np.ndarray


def gaussian_kernel(x):
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-0.5 * x * x) / _SQRT_2PI


def kernel_survival(x):
    """Upper-tail integral of the Gaussian kernel from ``x`` to infinity."""
    return ndtr(-np.asarray(x, dtype=np.float64))


def huber(x, delta):
    x = np.asarray(x, dtype=np.float64)
    a = np.abs(x)
    return np.where(a <= delta, 0.5 * x * x, delta * (a - 0.5 * delta))


def huber_deriv(x, delta):
    x = np.asarray(x, dtype=np.float64)
    return np.where(np.abs(x) <= delta, x, delta * np.sign(x))


def kde_terms(pred, tau, h):
    """Per-entry ``(F((tau - pred)/h), dF/dpred)``.

    Entries more than ``_CUTOFF`` bandwidths from ``tau`` are filled directly
    instead of being evaluated.
    """
    x = (tau - np.asarray(pred, dtype=np.float64)) / h
    flat = x.ravel()
    # integer indices are much cheaper than a boolean mask when few entries are near tau
    idx = np.flatnonzero(np.abs(flat) < _CUTOFF)
    if idx.size == flat.size:
        return ndtr(-x), np.exp(-0.5 * x * x) / (_SQRT_2PI * h)
    surv = (x <= -_CUTOFF).astype(np.float64)
    dens = np.zeros_like(x)
    xs = flat[idx]
    surv.ravel()[idx] = ndtr(-xs)
    dens.ravel()[idx] = np.exp(-0.5 * xs * xs) / (_SQRT_2PI * h)
    return surv, dens


def estimate_rate(entries, tau, h) -> float:
    entries = np.asarray(entries, dtype=np.float64).ravel()
    if entries.size == 0:
        raise InvalidInputError("cannot estimate a rate from no entries")
    if not h > 0:
        raise InvalidInputError("bandwidth h must be positive")
    surv, _ = kde_terms(entries, tau, h)
    return float(surv.mean())


def estimate_rate_grad(entries, tau, h) -> np.ndarray:
    entries = np.asarray(entries, dtype=np.float64)
    if entries.size == 0:
        raise InvalidInputError("cannot estimate a rate from no entries")
    _, dens = kde_terms(entries, tau, h)
    return dens / entries.size


class _Cells:
    """One-hot factorization of the cell structure.

    ``sums(X)`` gives per-cell sums of an n x m array and ``expand(W)`` spreads
    a per-cell table back over entries (zero on ungrouped rows/columns).
    """

    def __init__(self, groups: GroupAssignment):
        self.users = _one_hot(groups.user_group, groups.n_user_groups)
        self.items = _one_hot(groups.item_group, groups.n_item_groups)
        self.counts = np.outer(self.users.sum(axis=0), self.items.sum(axis=0))

    def sums(self, x):
        return self.users.T @ x @ self.items

    def expand(self, table):
        return self.users @ table @ self.items.T


def _one_hot(labels, size):
    out = np.zeros((labels.size, size))
    grouped = labels != UNGROUPED
    out[np.flatnonzero(grouped), labels[grouped]] = 1.0
    return out


def _check(pred, groups):
    pred = np.asarray(pred, dtype=np.float64)
    groups.check_shape(pred.shape)
    return pred


def _require_cells(counts, what):
    if (counts == 0).any():
        raise InvalidInputError(f"{what}: some (user group, item group) cell is empty")


def dee_penalty(pred, groups: GroupAssignment, cfg: PenaltyConfig) -> PenaltyValueGrad:
    """Huber-smoothed sum over cells of (cell rate - marginal rate)."""
    pred = _check(pred, groups)
    cells = _Cells(groups)
    _require_cells(cells.counts, "DEE penalty")
    surv, dens = kde_terms(pred, cfg.tau, cfg.h)
    sums = cells.sums(surv)
    total = cells.counts.sum()
    diff = sums / cells.counts - sums.sum() / total
    hd = huber_deriv(diff, cfg.delta)
    # the marginal depends on every grouped entry, so each entry also gets -sum(H')/N
    weights = hd / cells.counts - hd.sum() / total
    return PenaltyValueGrad(float(huber(diff, cfg.delta).sum()), dens * cells.expand(weights))


def der_penalty(pred, groups: GroupAssignment, cfg: PenaltyConfig) -> PenaltyValueGrad:
    """Huber-smoothed sum over cells of (cell rate - rate of the cell's user group)."""
    pred = _check(pred, groups)
    cells = _Cells(groups)
    _require_cells(cells.counts, "DER penalty")
    surv, dens = kde_terms(pred, cfg.tau, cfg.h)
    sums = cells.sums(surv)
    user_counts = cells.counts.sum(axis=1, keepdims=True)
    diff = sums / cells.counts - sums.sum(axis=1, keepdims=True) / user_counts
    hd = huber_deriv(diff, cfg.delta)
    weights = hd / cells.counts - hd.sum(axis=1, keepdims=True) / user_counts
    return PenaltyValueGrad(float(huber(diff, cfg.delta).sum()), dens * cells.expand(weights))


def _two_group_gap_penalty(pred, groups, cfg, axis, what):
    pred = _check(pred, groups)
    cells = _Cells(groups)
    size = cells.counts.shape[1 - axis]
    if size != 2:
        raise UnsupportedError(f"{what} penalty needs exactly two groups, got {size}")
    surv, dens = kde_terms(pred, cfg.tau, cfg.h)
    counts = cells.counts.sum(axis=axis)
    if (counts == 0).any():
        raise InvalidInputError(f"{what} penalty: a group has no grouped entries")
    rates = cells.sums(surv).sum(axis=axis) / counts
    diff = rates[1] - rates[0]
    sign = np.array([-1.0, 1.0]) / counts
    table = np.expand_dims(sign, axis) * np.ones_like(cells.counts)
    grad = float(huber_deriv(diff, cfg.delta)) * dens * cells.expand(table)
    return PenaltyValueGrad(float(huber(diff, cfg.delta)), grad)


def ugf_penalty(pred, groups: GroupAssignment, cfg: PenaltyConfig) -> PenaltyValueGrad:
    return _two_group_gap_penalty(pred, groups, cfg, axis=1, what="UGF")


def cvs_penalty(pred, groups: GroupAssignment, cfg: PenaltyConfig) -> PenaltyValueGrad:
    return _two_group_gap_penalty(pred, groups, cfg, axis=0, what="CVS")


def val_penalty(pred, truth, train_mask, groups: GroupAssignment, cfg: PenaltyConfig) -> PenaltyValueGrad:
    """Huber-smoothed value unfairness on the training entries.

    Per item, the gap between the two user groups' mean signed errors; items
    missing either group are skipped and the mean runs over the rest.
    """
    if groups.n_user_groups != 2:
        raise UnsupportedError("VAL penalty needs exactly two user groups")
    pred = _check(pred, groups)
    truth = np.asarray(getattr(truth, "values", truth), dtype=np.float64)
    obs = np.asarray(getattr(train_mask, "observed", train_mask), dtype=bool)
    err = truth - pred
    sel = [obs & (groups.user_group == g)[:, None] for g in (0, 1)]
    counts = [s.sum(axis=0) for s in sel]
    keep = (counts[0] > 0) & (counts[1] > 0)
    n_keep = int(keep.sum())
    if n_keep == 0:
        raise InvalidInputError("VAL penalty: no item is observed by both user groups")
    safe = [np.where(keep, c, 1) for c in counts]
    means = [np.where(s, err, 0.0).sum(axis=0) / c for s, c in zip(sel, safe)]
    diff = np.where(keep, means[0] - means[1], 0.0)
    value = float(huber(diff, cfg.delta)[keep].sum()) / n_keep
    hd = np.where(keep, huber_deriv(diff, cfg.delta), 0.0) / n_keep
    # d(mean error of group g)/d pred = -1/count, and the gap is group 0 minus group 1
    grad = np.where(sel[0], -hd / safe[0], 0.0) + np.where(sel[1], hd / safe[1], 0.0)
    return PenaltyValueGrad(value, grad)


def dee_cond_y_penalty(pred, truth_prefs, train_mask, groups: GroupAssignment,
                       cfg: PenaltyConfig) -> PenaltyValueGrad:
    """DEE penalty computed inside each ground-truth label stratum of the train entries.

    Only train entries enter, so the kernel is evaluated on those alone and
    per-cell sums are taken with ``bincount`` over their flat indices.
    """
    pred = _check(pred, groups)
    truth_prefs = np.asarray(truth_prefs)
    obs = np.asarray(getattr(train_mask, "observed", train_mask), dtype=bool)
    shape = (groups.n_user_groups, groups.n_item_groups)
    n_cells = groups.n_cells
    cell = groups.cell_index().ravel()
    flat_pred = pred.ravel()
    value = 0.0
    grad = np.zeros(pred.size)
    used = 0
    for y in (0, 1):
        idx = np.flatnonzero(obs.ravel() & (truth_prefs.ravel() == y) & (cell >= 0))
        if idx.size == 0:
            warnings.warn(f"label stratum y={y} has no grouped train entries", EmptyStratumWarning, stacklevel=2)
            continue
        used += 1
        c = cell[idx]
        surv, dens = kde_terms(flat_pred[idx], cfg.tau, cfg.h)
        counts = np.bincount(c, minlength=n_cells).reshape(shape).astype(np.float64)
        sums = np.bincount(c, weights=surv, minlength=n_cells).reshape(shape)
        total = counts.sum()
        present = counts > 0
        if not present.all():
            warnings.warn(f"label stratum y={y} has empty cells; skipping them", EmptyStratumWarning, stacklevel=2)
        safe = np.where(present, counts, 1.0)
        diff = np.where(present, sums / safe - sums.sum() / total, 0.0)
        hd = np.where(present, huber_deriv(diff, cfg.delta), 0.0)
        value += float(huber(diff, cfg.delta)[present].sum())
        weights = np.where(present, hd / safe, 0.0) - hd.sum() / total
        grad[idx] += dens * weights.ravel()[c]
    if used == 0:
        raise InvalidInputError("label-conditioned penalty: every stratum is empty")
    return PenaltyValueGrad(value, grad.reshape(pred.shape))


def cov_penalty(pred, groups: GroupAssignment, cfg: PenaltyConfig) -> PenaltyValueGrad:
    """Sum over the user and item label of the squared empirical covariance with the prediction."""
    pred = _check(pred, groups)
    grouped = groups.grouped()
    total = int(grouped.sum())
    if total == 0:
        raise InvalidInputError("covariance penalty: no grouped entries")
    value = 0.0
    grad = np.zeros_like(pred)
    labels = (
        np.broadcast_to(groups.user_group[:, None], pred.shape),
        np.broadcast_to(groups.item_group[None, :], pred.shape),
    )
    for z in labels:
        z = z.astype(np.float64)
        centred = np.where(grouped, z - z[grouped].mean(), 0.0)
        cov = float((pred * centred).sum()) / total
        value += cov * cov
        grad += (2.0 * cov / total) * centred
    return PenaltyValueGrad(value, grad)


def fairness_penalty(pred, groups: GroupAssignment, cfg: PenaltyConfig,
                     truth=None, train_mask=None) -> PenaltyValueGrad:
    """Dispatch on ``cfg.kind``. VAL and the label-conditioned kind also need ``truth`` and ``train_mask``."""
    kind = cfg.kind
    if kind is PenaltyKind.NONE:
        return PenaltyValueGrad(0.0, np.zeros(np.shape(pred)))
    if kind in (PenaltyKind.VAL, PenaltyKind.DEE_COND_Y) and (truth is None or train_mask is None):
        raise InvalidInputError(f"{kind.value} penalty needs ground truth and the train mask")
    if kind is PenaltyKind.DEE:
        return dee_penalty(pred, groups, cfg)
    if kind is PenaltyKind.DER:
        return der_penalty(pred, groups, cfg)
    if kind is PenaltyKind.UGF:
        return ugf_penalty(pred, groups, cfg)
    if kind is PenaltyKind.CVS:
        return cvs_penalty(pred, groups, cfg)
    if kind is PenaltyKind.COV:
        return cov_penalty(pred, groups, cfg)
    truth_values = np.asarray(getattr(truth, "values", truth), dtype=np.float64)
    if kind is PenaltyKind.VAL:
        return val_penalty(pred, truth_values, train_mask, groups, cfg)
    truth_prefs = (truth_values >= cfg.tau).astype(np.int8)
    return dee_cond_y_penalty(pred, truth_prefs, train_mask, groups, cfg)
