"""User-based autoencoder predictor with hand-written reverse mode.

Each user's zero-filled row of train ratings goes through

    relu(x @ enc1 + b1) -> dropout(relu(. @ enc2 + b2)) -> . @ dec + b3

The output stage depends on ``output_mode``: ``TANH`` applies tanh in both
training and evaluation; ``CLIP_STARS`` is the identity while training (clipping
would zero the gradient outside [1, 5]) and clips to [1, 5] at evaluation.
Dropout is inverted (kept units scaled by 1/(1-rate)), so evaluation needs no
rescaling.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

import numpy as np

from .adam import Adam
from .core import make_rng
from .errors import DivergenceError, FormatError, InvalidInputError
from .kde import PenaltyConfig
from .mf import TrainConfig
from .objective import blended_objective

MAGIC = b"AEC1"
PARAM_NAMES = ("enc1", "b1", "enc2", "b2", "dec", "b3")


class OutputMode(str, enum.Enum):
    CLIP_STARS = "clip"
    TANH = "tanh"


_MODE_BYTES = {OutputMode.CLIP_STARS: 0, OutputMode.TANH: 1}


@dataclass(eq=False)
class AutoencoderModel:
    params: dict
    dropout_rate: float = 0.7
    output_mode: OutputMode = OutputMode.TANH
    n_items: int = field(init=False)
    hidden: int = field(init=False)

    def __post_init__(self):
        self.output_mode = OutputMode(self.output_mode)
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidInputError("dropout_rate must lie in [0, 1)")
        missing = set(PARAM_NAMES) - set(self.params)
        if missing:
            raise InvalidInputError(f"missing parameters {sorted(missing)}")
        self.n_items, self.hidden = self.params["enc1"].shape
        m, hid = self.n_items, self.hidden
        expected = {"enc1": (m, hid), "b1": (hid,), "enc2": (hid, hid), "b2": (hid,), "dec": (hid, m), "b3": (m,)}
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise InvalidInputError(f"{name} has shape {self.params[name].shape}, expected {shape}")


def init_autoencoder(n_items, hidden=512, dropout_rate=0.7, output_mode=OutputMode.TANH, seed=1) -> AutoencoderModel:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases, per layer."""
    if hidden < 1 or n_items < 1:
        raise InvalidInputError("hidden width and item count must be positive")
    rng = make_rng(seed, "ae_init")
    params = {}
    for w, b, fan_in, fan_out in (("enc1", "b1", n_items, hidden), ("enc2", "b2", hidden, hidden),
                                  ("dec", "b3", hidden, n_items)):
        bound = 1.0 / np.sqrt(fan_in)
        params[w] = rng.uniform(-bound, bound, (fan_in, fan_out))
        params[b] = rng.uniform(-bound, bound, fan_out)
    return AutoencoderModel(params, dropout_rate, output_mode)


def dropout_mask(seed, iteration, shape, rate) -> np.ndarray:
    """Inverted-dropout mask for one training iteration (kept units hold 1/(1-rate))."""
    if rate == 0.0:
        return np.ones(shape)
    keep = make_rng(seed, "dropout", iteration).random(shape) >= rate
    return keep / (1.0 - rate)


def forward(model: AutoencoderModel, inputs, mask=None, training=False, return_cache=False):
    """Predicted matrix for ``inputs`` (one zero-filled user row per row).

    ``training=True`` applies ``mask`` (if given) and skips the clipping stage.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.n_items:
        raise InvalidInputError(f"input must have {model.n_items} columns, got shape {x.shape}")
    p = model.params
    z1 = x @ p["enc1"] + p["b1"]
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ p["enc2"] + p["b2"]
    a2 = np.maximum(z2, 0.0)
    if training and mask is not None:
        a2 = a2 * mask
    out = a2 @ p["dec"] + p["b3"]
    if model.output_mode is OutputMode.TANH:
        out = np.tanh(out)
    elif not training:
        out = np.clip(out, 1.0, 5.0)
    if return_cache:
        return out, {"x": x, "z1": z1, "a1": a1, "z2": z2, "a2": a2, "out": out, "mask": mask}
    return out


def backward(model: AutoencoderModel, cache, entry_grad) -> dict:
    """Gradients of ``sum(entry_grad * out)`` w.r.t. every parameter (training-mode pass)."""
    p = model.params
    g = np.asarray(entry_grad, dtype=np.float64)
    if model.output_mode is OutputMode.TANH:
        g = g * (1.0 - cache["out"] ** 2)
    grads = {"dec": cache["a2"].T @ g, "b3": g.sum(axis=0)}
    da2 = g @ p["dec"].T
    if cache["mask"] is not None:
        da2 = da2 * cache["mask"]
    dz2 = da2 * (cache["z2"] > 0.0)
    grads["enc2"] = cache["a1"].T @ dz2
    grads["b2"] = dz2.sum(axis=0)
    dz1 = (dz2 @ p["enc2"].T) * (cache["z1"] > 0.0)
    grads["enc1"] = cache["x"].T @ dz1
    grads["b1"] = dz1.sum(axis=0)
    return grads


def input_rows(ratings, train_mask) -> np.ndarray:
    """Train ratings with every other entry zero-filled."""
    values = np.asarray(getattr(ratings, "values", ratings), dtype=np.float64)
    obs = np.asarray(getattr(train_mask, "observed", train_mask), dtype=bool)
    return np.where(obs, values, 0.0)


def predict(model: AutoencoderModel, ratings, train_mask) -> np.ndarray:
    return forward(model, input_rows(ratings, train_mask))


def train_ae(ratings, train_mask, groups, penalty_cfg: PenaltyConfig, train_cfg: TrainConfig,
             hidden=512, dropout_rate=0.7, output_mode=OutputMode.TANH):
    """Full-batch training on all user rows; returns ``(model, trace)``."""
    n, m = ratings.shape
    groups.check_shape((n, m))
    x = input_rows(ratings, train_mask)
    if not np.asarray(getattr(train_mask, "observed", train_mask)).any():
        raise InvalidInputError("empty train mask")
    model = init_autoencoder(m, hidden, dropout_rate, output_mode, train_cfg.seed)
    opt = Adam(model.params, train_cfg.learning_rate, train_cfg.adam_beta1, train_cfg.adam_beta2,
               train_cfg.adam_epsilon)
    trace = np.empty(train_cfg.iterations)
    for it in range(train_cfg.iterations):
        mask = dropout_mask(train_cfg.seed, it, (n, hidden), dropout_rate)
        with np.errstate(over="ignore", invalid="ignore"):
            pred, cache = forward(model, x, mask, training=True, return_cache=True)
            obj = blended_objective(pred, ratings, train_mask, groups, penalty_cfg, train_cfg.loss_reduction)
        if not np.isfinite(obj.loss) or not np.isfinite(obj.grad).all():
            raise DivergenceError(it)
        trace[it] = obj.loss
        opt.step(backward(model, cache, obj.grad))
    return model, trace


def save_checkpoint(model: AutoencoderModel, path):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<QQB", model.n_items, model.hidden, _MODE_BYTES[model.output_mode]))
        for name in PARAM_NAMES:
            fh.write(np.ascontiguousarray(model.params[name], dtype="<f8").tobytes())


def load_checkpoint(path, dropout_rate=0.7) -> AutoencoderModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: not an autoencoder checkpoint")
    if len(blob) < 21:
        raise FormatError(f"{path}: truncated header")
    m, hid, mode_byte = struct.unpack_from("<QQB", blob, 4)
    modes = {v: k for k, v in _MODE_BYTES.items()}
    if mode_byte not in modes:
        raise FormatError(f"{path}: unknown output mode byte {mode_byte}")
    shapes = {"enc1": (m, hid), "b1": (hid,), "enc2": (hid, hid), "b2": (hid,), "dec": (hid, m), "b3": (m,)}
    expected = 21 + 8 * sum(int(np.prod(s)) for s in shapes.values())
    if len(blob) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(blob)}")
    params, offset = {}, 21
    for name in PARAM_NAMES:
        size = int(np.prod(shapes[name]))
        params[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=offset).reshape(shapes[name]).copy()
        offset += 8 * size
    return AutoencoderModel(params, dropout_rate, modes[mode_byte])
