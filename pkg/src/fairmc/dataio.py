"""Reading real rating data and persisting datasets.

Two input families are supported:

* MovieLens-1M style ``::``-separated files (ratings, users, movies). Users are
  grouped by gender and movies by genre tags.
* Play-count tables (Last.fm style) that are binarized against their mean,
  with users grouped by gender and items by a prepared ``item<TAB>group`` file.

Datasets of either kind (and synthetic ones) can be written to and read back
from a single binary file; see :func:`save_dataset` for the layout.
"""

from __future__ import annotations

import json
import logging
import os
import struct
import tempfile
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import (
    UNGROUPED,
    GroupAssignment,
    ObservationMask,
    RatingDataset,
    RatingMatrix,
    ValueDomain,
    check_seed,
    make_rng,
)
from .errors import ConsistencyError, FormatError, InvalidInputError, ParseError

log = logging.getLogger(__name__)

DATASET_MAGIC = b"FMCD"
DATASET_VERSION = 1
_PREFIX = struct.Struct("<4sIQ")

MALE_PREFERRED = ("action", "crime", "film-noir", "war")
FEMALE_PREFERRED = ("children's", "fantasy", "musical", "romance")


class DuplicateRatingWarning(UserWarning):
    """The same (user, item) pair appeared more than once; the last value was kept."""


@dataclass(frozen=True)
class GroupSpec:
    """How raw attributes map to group labels.

    ``user_labels`` maps attribute values (compared case-insensitively) to user
    group ids; anything else is UNGROUPED. ``item_tags`` lists one tag set per
    item group. An item joins group ``g`` when it carries at least one tag of
    set ``g`` and none of any other set.
    """

    user_attribute: str = "gender"
    user_labels: dict = field(default_factory=lambda: {"m": 0, "f": 1})
    item_tags: tuple = (MALE_PREFERRED, FEMALE_PREFERRED)

    def __post_init__(self):
        tags = tuple(frozenset(t.lower() for t in s) for s in self.item_tags)
        for a in range(len(tags)):
            for b in range(a + 1, len(tags)):
                if tags[a] & tags[b]:
                    raise InvalidInputError(f"item tag sets overlap: {sorted(tags[a] & tags[b])}")
        object.__setattr__(self, "item_tags", tags)
        object.__setattr__(self, "user_labels", {str(k).lower(): int(v) for k, v in self.user_labels.items()})

    @property
    def n_user_groups(self):
        return max(self.user_labels.values()) + 1

    @property
    def n_item_groups(self):
        return len(self.item_tags)

    def user_group(self, value):
        return self.user_labels.get(value.strip().lower(), UNGROUPED)

    def item_group(self, tags):
        tags = {t.strip().lower() for t in tags}
        hits = [g for g, s in enumerate(self.item_tags) if tags & s]
        return hits[0] if len(hits) == 1 else UNGROUPED


def _sorted_ids(ids):
    """Numeric order when every id is an integer, string order otherwise."""
    ids = list(ids)
    try:
        return sorted(ids, key=int)
    except ValueError:
        return sorted(ids)


def _split_line(path, line_no, line, sep, n_fields, exact=True):
    parts = line.rstrip("\r\n").split(sep)
    if len(parts) < n_fields or (exact and len(parts) != n_fields):
        raise ParseError(path, line_no, f"expected {n_fields} fields, found {len(parts)}")
    return parts


def _lines(path, encoding):
    with open(path, encoding=encoding) as fh:
        for line_no, line in enumerate(fh, start=1):
            if line.strip():
                yield line_no, line


def _parse_float(path, line_no, text, what):
    try:
        v = float(text)
    except ValueError:
        raise ParseError(path, line_no, f"{what} {text!r} is not a number") from None
    if not np.isfinite(v):
        raise ParseError(path, line_no, f"{what} {text!r} is not finite")
    return v


def read_movielens_ratings(path):
    """``[(user_id, item_id, rating), ...]`` from a ``UserID::MovieID::Rating::Timestamp`` file."""
    out = []
    for line_no, line in _lines(path, "latin-1"):
        user, item, rating, stamp = _split_line(path, line_no, line, "::", 4)
        value = _parse_float(path, line_no, rating, "rating")
        if not 1.0 <= value <= 5.0:
            raise ParseError(path, line_no, f"rating {value} outside 1..5")
        try:
            int(stamp)
        except ValueError:
            raise ParseError(path, line_no, f"timestamp {stamp!r} is not an integer") from None
        out.append((user.strip(), item.strip(), value))
    return out


def _fill_matrix(triples, user_index, item_index, domain, path):
    n, m = len(user_index), len(item_index)
    values = np.full((n, m), domain.fill_value)
    observed = np.zeros((n, m), dtype=bool)
    duplicates = 0
    for user, item, value in triples:
        try:
            i = user_index[user]
        except KeyError:
            raise ConsistencyError(f"{path}: rating references unknown user {user!r}") from None
        try:
            j = item_index[item]
        except KeyError:
            raise ConsistencyError(f"{path}: rating references unknown item {item!r}") from None
        duplicates += observed[i, j]
        values[i, j] = value
        observed[i, j] = True
    if duplicates:
        warnings.warn(f"{path}: {duplicates} duplicate ratings; kept the last occurrence",
                      DuplicateRatingWarning, stacklevel=3)
        log.warning("%s: %d duplicate ratings overwritten", path, duplicates)
    return RatingDataset(RatingMatrix(values, domain), ObservationMask(observed))


def load_movielens(ratings_path, users_path, movies_path, spec: GroupSpec | None = None):
    """Dense Stars dataset plus gender/genre groups from MovieLens-1M files.

    Users and movies are the ones listed in the metadata files, indexed in
    sorted id order.
    """
    spec = spec or GroupSpec()
    users = {}
    for line_no, line in _lines(users_path, "latin-1"):
        uid, gender, *_ = _split_line(users_path, line_no, line, "::", 5)
        users[uid.strip()] = spec.user_group(gender)
    movies = {}
    for line_no, line in _lines(movies_path, "latin-1"):
        parts = line.rstrip("\r\n").split("::")
        if len(parts) < 3:
            raise ParseError(movies_path, line_no, f"expected 3 fields, found {len(parts)}")
        # titles may themselves contain "::"; the id is first and genres last
        movies[parts[0].strip()] = spec.item_group(parts[-1].split("|"))
    user_ids = _sorted_ids(users)
    item_ids = _sorted_ids(movies)
    user_index = {u: i for i, u in enumerate(user_ids)}
    item_index = {v: j for j, v in enumerate(item_ids)}
    dataset = _fill_matrix(read_movielens_ratings(ratings_path), user_index, item_index,
                           ValueDomain.STARS, ratings_path)
    groups = GroupAssignment(
        np.array([users[u] for u in user_ids]), np.array([movies[v] for v in item_ids]),
        spec.n_user_groups, spec.n_item_groups,
    )
    return dataset, groups


def binarize_counts(counts, reference):
    """+1 where ``count > reference`` (strictly), else -1."""
    return np.where(np.asarray(counts, dtype=np.float64) > reference, 1.0, -1.0)


def load_binary_playcounts(counts_path, users_path, item_groups_path, spec: GroupSpec | None = None,
                           per_user_mean=False, per_group=None, seed=1):
    """Binary dataset from a play-count table.

    ``counts_path`` lines are ``user<TAB>item[<TAB>...]<TAB>count`` (the Last.fm
    360K layout has the artist name between item and count). ``users_path``
    lines are ``user<TAB>gender[<TAB>...]``; ``item_groups_path`` lines are
    ``item<TAB>group`` with an integer group (-1 for ungrouped).

    Counts are binarized against the mean of *all* counts (or each user's own
    mean with ``per_user_mean``) before any subsampling. ``per_group=k`` keeps
    ``k`` randomly chosen users from every user group (drawn from ``seed``).
    """
    spec = spec or GroupSpec()
    users = {}
    for line_no, line in _lines(users_path, "utf-8"):
        uid, gender, *_ = _split_line(users_path, line_no, line, "\t", 2, exact=False)
        users[uid] = spec.user_group(gender)
    item_groups = {}
    for line_no, line in _lines(item_groups_path, "utf-8"):
        item, label = _split_line(item_groups_path, line_no, line, "\t", 2)
        try:
            item_groups[item] = int(label)
        except ValueError:
            raise ParseError(item_groups_path, line_no, f"group {label!r} is not an integer") from None
    triples = []
    for line_no, line in _lines(counts_path, "utf-8"):
        parts = _split_line(counts_path, line_no, line, "\t", 3, exact=False)
        count = _parse_float(counts_path, line_no, parts[-1], "count")
        if count < 0:
            raise ParseError(counts_path, line_no, f"negative count {count}")
        if parts[0] not in users:
            raise ConsistencyError(f"{counts_path}: counts reference unknown user {parts[0]!r}")
        triples.append((parts[0], parts[1], count))
    if not triples:
        raise InvalidInputError(f"{counts_path}: no counts")

    counts = np.array([t[2] for t in triples])
    if per_user_mean:
        owners = np.array([t[0] for t in triples])
        _, inverse = np.unique(owners, return_inverse=True)
        reference = (np.bincount(inverse, weights=counts) / np.bincount(inverse))[inverse]
    else:
        reference = counts.mean()
    labels = binarize_counts(counts, reference)

    kept_users = sorted({t[0] for t in triples})
    if per_group is not None:
        kept_users = _subsample_users(kept_users, users, spec.n_user_groups, int(per_group), seed)
    keep = set(kept_users)
    rows = [(t[0], t[1], v) for t, v in zip(triples, labels) if t[0] in keep]
    item_ids = _sorted_ids({r[1] for r in rows})
    user_index = {u: i for i, u in enumerate(_sorted_ids(kept_users))}
    item_index = {v: j for j, v in enumerate(item_ids)}
    dataset = _fill_matrix(rows, user_index, item_index, ValueDomain.BINARY, counts_path)
    ig = np.array([item_groups.get(v, UNGROUPED) for v in item_ids])
    n_item_groups = max(spec.n_item_groups, int(ig.max()) + 1 if ig.size else 1)
    groups = GroupAssignment(np.array([users[u] for u in user_index]), ig, spec.n_user_groups, n_item_groups)
    return dataset, groups


def _subsample_users(candidates, users, n_groups, per_group, seed):
    rng = make_rng(check_seed(seed), "subsample")
    chosen = []
    for g in range(n_groups):
        pool = [u for u in candidates if users[u] == g]
        if len(pool) < per_group:
            raise InvalidInputError(f"user group {g} has {len(pool)} users, fewer than {per_group}")
        pick = rng.choice(len(pool), size=per_group, replace=False)
        chosen.extend(pool[i] for i in np.sort(pick))
    return chosen


def save_dataset(path, dataset: RatingDataset, groups: GroupAssignment):
    """Write ``dataset`` and ``groups`` atomically.

    Layout: ``b"FMCD"``, u32 version, u64 header length, UTF-8 JSON header,
    then n*m little-endian float64 ratings (row-major) and the observed
    entries as little-endian u64 ``(row, col)`` pairs in row-major order.
    """
    groups.check_shape(dataset.shape)
    rows, cols = dataset.observed.pairs()
    n, m = dataset.shape
    header = json.dumps({
        "n": n, "m": m, "domain": dataset.ratings.domain.value,
        "n_observed": int(rows.size),
        "n_user_groups": groups.n_user_groups, "n_item_groups": groups.n_item_groups,
        "user_group": groups.user_group.tolist(), "item_group": groups.item_group.tolist(),
    }, sort_keys=True).encode()
    pairs = np.empty((rows.size, 2), dtype="<u8")
    pairs[:, 0] = rows
    pairs[:, 1] = cols
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".fmcd-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(_PREFIX.pack(DATASET_MAGIC, DATASET_VERSION, len(header)))
            fh.write(header)
            fh.write(np.ascontiguousarray(dataset.ratings.values, dtype="<f8").tobytes())
            fh.write(pairs.tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_dataset(path):
    """Inverse of :func:`save_dataset`: ``(RatingDataset, GroupAssignment)``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _PREFIX.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, header_len = _PREFIX.unpack_from(blob)
    if magic != DATASET_MAGIC:
        raise FormatError(f"{path}: not a fairmc dataset file")
    if version != DATASET_VERSION:
        raise FormatError(f"{path}: format version {version}, expected {DATASET_VERSION}")
    start = _PREFIX.size
    if len(blob) < start + header_len:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(blob[start:start + header_len].decode())
        n, m, count = int(header["n"]), int(header["m"]), int(header["n_observed"])
        domain = ValueDomain(header["domain"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: bad header ({exc})") from None
    body = start + header_len
    expected = body + 8 * n * m + 16 * count
    if len(blob) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(blob)}")
    values = np.frombuffer(blob, dtype="<f8", count=n * m, offset=body).reshape(n, m)
    pairs = np.frombuffer(blob, dtype="<u8", count=2 * count, offset=body + 8 * n * m).reshape(count, 2)
    try:
        observed = ObservationMask.from_pairs(pairs[:, 0].astype(np.int64), pairs[:, 1].astype(np.int64), (n, m))
        dataset = RatingDataset(RatingMatrix(values, domain), observed)
        groups = GroupAssignment(header["user_group"], header["item_group"],
                                 header["n_user_groups"], header["n_item_groups"])
        groups.check_shape((n, m))
    except (InvalidInputError, KeyError) as exc:
        raise FormatError(f"{path}: inconsistent contents ({exc})") from None
    return dataset, groups
