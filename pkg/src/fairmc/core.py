"""Value types shared by all modules: ratings, observation masks, group labels.

Everything here is immutable after construction; arrays are copied and marked
read-only so they can be shared freely between runs.
"""

from __future__ import annotations

import enum
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

UNGROUPED = -1
SEED_MAX = 2**64 - 1


def _readonly(a, dtype=None):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed <= SEED_MAX:
        raise InvalidInputError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def make_rng(seed: int, *stream) -> np.random.Generator:
    """Counter-based generator keyed by ``seed`` plus a stream path.

    Each stochastic operation draws from its own stream, so e.g. the split
    and the initialization stay independent of each other while both being
    reproducible from one user-visible seed. Philox output is identical
    across platforms.
    """
    words = [check_seed(seed)]
    for tag in stream:
        if isinstance(tag, str):
            tag = zlib.crc32(tag.encode())
        words.append(int(tag))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


class ValueDomain(str, enum.Enum):
    BINARY = "binary"
    STARS = "stars"

    @property
    def default_tau(self) -> float:
        return 0.0 if self is ValueDomain.BINARY else 3.0

    @property
    def fill_value(self) -> float:
        # placeholder stored at unobserved positions of real datasets
        return -1.0 if self is ValueDomain.BINARY else 1.0

    def contains(self, values) -> np.ndarray:
        values = np.asarray(values)
        if self is ValueDomain.BINARY:
            return (values == 1.0) | (values == -1.0)
        return (values >= 1.0) & (values <= 5.0)


@dataclass(frozen=True, eq=False)
class RatingMatrix:
    values: np.ndarray
    domain: ValueDomain

    def __post_init__(self):
        values = _readonly(self.values, dtype=np.float64)
        domain = ValueDomain(self.domain)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise InvalidInputError(f"rating matrix must be 2-D and non-empty, got shape {values.shape}")
        if not domain.contains(values).all():
            raise InvalidInputError(f"rating values outside the {domain.value} domain")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "domain", domain)

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True, eq=False)
class ObservationMask:
    """Observed index set, stored densely as a boolean n x m matrix."""

    observed: np.ndarray

    def __post_init__(self):
        observed = _readonly(self.observed, dtype=bool)
        if observed.ndim != 2:
            raise InvalidInputError("observation mask must be 2-D")
        object.__setattr__(self, "observed", observed)

    @classmethod
    def from_pairs(cls, rows, cols, shape) -> ObservationMask:
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        n, m = shape
        if rows.shape != cols.shape:
            raise InvalidInputError("row and column index arrays differ in length")
        if rows.size and (rows.min() < 0 or rows.max() >= n or cols.min() < 0 or cols.max() >= m):
            raise InvalidInputError("observation index out of range")
        observed = np.zeros(shape, dtype=bool)
        observed[rows, cols] = True
        if observed.sum() != rows.size:
            raise InvalidInputError("duplicate observation pairs")
        return cls(observed)

    @classmethod
    def full(cls, shape) -> ObservationMask:
        return cls(np.ones(shape, dtype=bool))

    def pairs(self):
        """Row-major ``(rows, cols)`` index arrays of the observed entries."""
        return np.nonzero(self.observed)

    @property
    def shape(self):
        return self.observed.shape

    @property
    def count(self) -> int:
        return int(self.observed.sum())

    def __len__(self):
        return self.count

    def __and__(self, other):
        return ObservationMask(self.observed & other.observed)

    def __or__(self, other):
        return ObservationMask(self.observed | other.observed)


@dataclass(frozen=True, eq=False)
class GroupAssignment:
    """Sensitive-attribute labels for users and items.

    Labels run over ``0..size-1``; ``UNGROUPED`` (-1) marks rows/columns that
    take part in accuracy terms but are skipped by every fairness sum.
    """

    user_group: np.ndarray
    item_group: np.ndarray
    n_user_groups: int = 2
    n_item_groups: int = 2

    def __post_init__(self):
        ug = _readonly(self.user_group, dtype=np.int64)
        ig = _readonly(self.item_group, dtype=np.int64)
        for name, labels, size in (("user", ug, self.n_user_groups), ("item", ig, self.n_item_groups)):
            if labels.ndim != 1:
                raise InvalidInputError(f"{name} labels must be 1-D")
            if size < 1:
                raise InvalidInputError(f"{name} alphabet size must be >= 1")
            if labels.size and (labels.min() < UNGROUPED or labels.max() >= size):
                raise InvalidInputError(f"{name} label outside 0..{size - 1} (or UNGROUPED)")
            if not (labels != UNGROUPED).any():
                raise InvalidInputError(f"no grouped {name}s")
        object.__setattr__(self, "user_group", ug)
        object.__setattr__(self, "item_group", ig)
        object.__setattr__(self, "n_user_groups", int(self.n_user_groups))
        object.__setattr__(self, "n_item_groups", int(self.n_item_groups))

    @property
    def shape(self):
        return (self.user_group.size, self.item_group.size)

    @property
    def n_cells(self) -> int:
        return self.n_user_groups * self.n_item_groups

    def cell_index(self) -> np.ndarray:
        """n x m matrix of flat cell ids ``z_user * |Z_item| + z_item``; -1 where ungrouped."""
        ug = self.user_group[:, None]
        ig = self.item_group[None, :]
        cells = ug * self.n_item_groups + ig
        return np.where((ug == UNGROUPED) | (ig == UNGROUPED), -1, cells)

    def grouped(self) -> np.ndarray:
        """Boolean n x m matrix of entries whose user and item are both grouped."""
        return (self.user_group[:, None] != UNGROUPED) & (self.item_group[None, :] != UNGROUPED)

    def check_shape(self, shape):
        if tuple(shape) != self.shape:
            raise InvalidInputError(f"group labels are for shape {self.shape}, matrix is {tuple(shape)}")


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.9
    seed: int = 1

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise InvalidInputError("train_fraction must lie in (0, 1)")
        object.__setattr__(self, "seed", check_seed(self.seed))


@dataclass(frozen=True, eq=False)
class RatingDataset:
    ratings: RatingMatrix
    observed: ObservationMask

    def __post_init__(self):
        if self.ratings.shape != self.observed.shape:
            raise InvalidInputError("ratings and observation mask differ in shape")

    @property
    def shape(self):
        return self.ratings.shape

    def split(self, spec: SplitSpec):
        return split_observations(self.observed, spec)


def split_observations(mask: ObservationMask, spec: SplitSpec):
    """Uniform random train/test partition of the observed entries.

    ``round(train_fraction * |observed|)`` entries (halves rounded up) go to
    the train side.
    """
    rows, cols = mask.pairs()
    total = rows.size
    if total < 2:
        raise InvalidInputError("need at least two observed entries to split")
    n_train = int(np.floor(spec.train_fraction * total + 0.5))
    order = make_rng(spec.seed, "split").permutation(total)
    train = np.zeros(mask.shape, dtype=bool)
    pick = order[:n_train]
    train[rows[pick], cols[pick]] = True
    test = mask.observed & ~train
    return ObservationMask(train), ObservationMask(test)


def threshold_preferences(pred, tau: float) -> np.ndarray:
    """Binary preference matrix ``1{pred >= tau}`` (inclusive threshold)."""
    return (np.asarray(pred) >= tau).astype(np.int8)
