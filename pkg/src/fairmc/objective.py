"""The lambda-blended training objective, as a function of the predicted matrix.

``(1 - lam) * squared error over the train entries + lam * fairness penalty``.
The squared error is averaged over the train entries by default so that both
terms are O(1) and ``lam`` in [0, 1] actually trades them off; pass
``reduction="sum"`` for the raw sum.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import InvalidInputError
from .kde import PenaltyConfig, fairness_penalty


class ObjectiveValue(NamedTuple):
    loss: float
    accuracy: float
    fairness: float
    grad: np.ndarray


def blended_objective(pred, ratings, train_mask, groups, cfg: PenaltyConfig, reduction="mean") -> ObjectiveValue:
    truth = np.asarray(getattr(ratings, "values", ratings), dtype=np.float64)
    obs = np.asarray(getattr(train_mask, "observed", train_mask), dtype=bool)
    count = int(obs.sum())
    if count == 0:
        raise InvalidInputError("empty train mask")
    if reduction not in ("mean", "sum"):
        raise InvalidInputError(f"unknown loss reduction {reduction!r}")
    scale = 1.0 / count if reduction == "mean" else 1.0
    resid = np.subtract(pred, truth)
    resid *= obs
    flat = resid.ravel()
    accuracy = float(flat @ flat) * scale
    if not cfg.active:
        # no penalty: plain (unweighted) squared error, independent of kind and lam
        return ObjectiveValue(accuracy, accuracy, 0.0, (2.0 * scale) * resid)
    lam = cfg.lam
    pen = fairness_penalty(pred, groups, cfg, truth=truth, train_mask=obs)
    grad = pen.grad * lam
    grad += (2.0 * scale * (1.0 - lam)) * resid
    return ObjectiveValue((1.0 - lam) * accuracy + lam * pen.value, accuracy, pen.value, grad)
