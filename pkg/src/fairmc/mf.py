"""Matrix-factorization predictor ``pred = L @ R`` trained with full-batch Adam."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .core import check_seed, make_rng
from .errors import DivergenceError, FormatError, InvalidInputError
from .adam import Adam
from .kde import PenaltyConfig
from .objective import blended_objective

MAGIC = b"FMC1"


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 1000
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    init_scale: float = 1.5
    seed: int = 1
    loss_reduction: str = "mean"

    def __post_init__(self):
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise InvalidInputError("iterations must be a positive integer")
        if not self.learning_rate > 0 or not self.adam_epsilon > 0 or not self.init_scale > 0:
            raise InvalidInputError("learning_rate, adam_epsilon and init_scale must be positive")
        for b in (self.adam_beta1, self.adam_beta2):
            if not 0.0 < b < 1.0:
                raise InvalidInputError("Adam betas must lie in (0, 1)")
        if self.loss_reduction not in ("mean", "sum"):
            raise InvalidInputError("loss_reduction must be 'mean' or 'sum'")
        object.__setattr__(self, "seed", check_seed(self.seed))

    def to_dict(self):
        return dict(self.__dict__)


@dataclass(eq=False)
class FactorModel:
    L: np.ndarray
    R: np.ndarray
    rank: int = field(init=False)

    def __post_init__(self):
        self.L = np.asarray(self.L, dtype=np.float64)
        self.R = np.asarray(self.R, dtype=np.float64)
        if self.L.ndim != 2 or self.R.ndim != 2 or self.L.shape[1] != self.R.shape[0]:
            raise InvalidInputError(f"factor shapes {self.L.shape} and {self.R.shape} do not chain")
        self.rank = self.L.shape[1]

    @property
    def shape(self):
        return (self.L.shape[0], self.R.shape[1])


def init_factors(n, m, r, cfg: TrainConfig) -> FactorModel:
    """i.i.d. N(0, init_scale^2 / r) entries, so ``L @ R`` starts with O(init_scale^2 / sqrt(r)) spread."""
    if r < 1:
        raise InvalidInputError("rank must be at least 1")
    if r > min(n, m):
        raise InvalidInputError(f"rank {r} exceeds min(n, m) = {min(n, m)}")
    rng = make_rng(cfg.seed, "mf_init")
    std = cfg.init_scale / np.sqrt(r)
    return FactorModel(rng.normal(0.0, std, (n, r)), rng.normal(0.0, std, (r, m)))


def predict(model: FactorModel) -> np.ndarray:
    return model.L @ model.R


def train(ratings, train_mask, groups, penalty_cfg: PenaltyConfig, train_cfg: TrainConfig, rank=20):
    """Fit ``L @ R`` to the train entries under the blended objective.

    Returns ``(model, trace)`` where ``trace`` holds the objective value at each
    iteration (before that iteration's update).
    """
    n, m = ratings.shape
    groups.check_shape((n, m))
    if not np.asarray(getattr(train_mask, "observed", train_mask)).any():
        raise InvalidInputError("empty train mask")
    model = init_factors(n, m, rank, train_cfg)
    params = {"L": model.L, "R": model.R}
    opt = Adam(params, train_cfg.learning_rate, train_cfg.adam_beta1, train_cfg.adam_beta2, train_cfg.adam_epsilon)
    trace = np.empty(train_cfg.iterations)
    for it in range(train_cfg.iterations):
        # overflow surfaces below as a DivergenceError rather than as warnings
        with np.errstate(over="ignore", invalid="ignore"):
            pred = params["L"] @ params["R"]
            obj = blended_objective(pred, ratings, train_mask, groups, penalty_cfg, train_cfg.loss_reduction)
        if not np.isfinite(obj.loss) or not np.isfinite(obj.grad).all():
            raise DivergenceError(it)
        trace[it] = obj.loss
        g = obj.grad
        opt.step({"L": g @ params["R"].T, "R": params["L"].T @ g})
    return FactorModel(params["L"], params["R"]), trace


def save_checkpoint(model: FactorModel, path):
    n, m = model.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<QQQ", n, m, model.rank))
        fh.write(np.ascontiguousarray(model.L, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.R, dtype="<f8").tobytes())


def load_checkpoint(path) -> FactorModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: not a factor-model checkpoint")
    if len(blob) < 28:
        raise FormatError(f"{path}: truncated header")
    n, m, r = struct.unpack_from("<QQQ", blob, 4)
    expected = 28 + 8 * r * (n + m)
    if len(blob) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(blob)}")
    body = np.frombuffer(blob, dtype="<f8", offset=28)
    return FactorModel(body[: n * r].reshape(n, r).copy(), body[n * r:].reshape(r, m).copy())
