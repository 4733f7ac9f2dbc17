"""Sparse ratings matrices, MovieLens ingestion, normalization and splits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit
import scipy.sparse as sp

from .errors import DataError, ParseError

MIN_RATING = 0.5
MAX_RATING = 5.0


@dataclass(frozen=True, eq=False)
class SparseRatings:
    """Row-compressed user x item ratings with an explicit observed pattern.

    Missing entries are structural: a stored 0.0 is an observed rating.
    Within every row the item indices are strictly increasing.
    """

    n_users: int
    n_items: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        indptr = np.ascontiguousarray(self.indptr, dtype=np.int64)
        indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        for arr in (indptr, indices, data):
            arr.setflags(write=False)
        object.__setattr__(self, "indptr", indptr)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "data", data)
        self.validate()

    def validate(self):
        if self.n_users < 0 or self.n_items < 0:
            raise DataError("negative dimensions")
        if self.indptr.shape != (self.n_users + 1,) or self.indptr[0] != 0:
            raise DataError("row pointer has wrong length or does not start at 0")
        if np.any(np.diff(self.indptr) < 0):
            raise DataError("row pointer is not non-decreasing")
        nnz = int(self.indptr[-1])
        if self.indices.shape != (nnz,) or self.data.shape != (nnz,):
            raise DataError("index/value arrays disagree with row pointer")
        if nnz:
            if self.indices.min() < 0 or self.indices.max() >= self.n_items:
                raise DataError("item index out of range")
            if not np.all(np.isfinite(self.data)):
                raise DataError("non-finite rating value")
            steps = np.diff(self.indices)
            row_starts = self.indptr[1:-1]
            row_starts = row_starts[(row_starts > 0) & (row_starts < nnz)]
            # a step across a row boundary may go down; inside a row it must go up
            inside = np.ones(nnz - 1, dtype=bool)
            inside[row_starts - 1] = False
            if np.any(steps[inside] <= 0):
                raise DataError("item indices within a row are not strictly increasing")

    # construction ---------------------------------------------------------

    @classmethod
    def from_triplets(cls, users, items, values, n_users, n_items):
        """Build from (user, item, value) triplets; later duplicates win."""
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if not (users.shape == items.shape == values.shape):
            raise DataError("triplet arrays differ in length")
        if users.size and (users.min() < 0 or users.max() >= n_users):
            raise DataError("user index out of range")
        order = np.lexsort((np.arange(users.size), items, users))
        users, items, values = users[order], items[order], values[order]
        if users.size:
            # keep the last occurrence of each (user, item) key
            last = np.ones(users.size, dtype=bool)
            last[:-1] = (users[1:] != users[:-1]) | (items[1:] != items[:-1])
            users, items, values = users[last], items[last], values[last]
        indptr = np.zeros(n_users + 1, dtype=np.int64)
        np.cumsum(np.bincount(users, minlength=n_users), out=indptr[1:])
        return cls(n_users, n_items, indptr, items, values)

    @classmethod
    def from_dense(cls, values, mask=None):
        values = np.asarray(values, dtype=np.float64)
        if mask is None:
            mask = values != 0
        users, items = np.nonzero(mask)
        return cls.from_triplets(users, items, values[users, items], *values.shape)

    @classmethod
    def from_rows(cls, rows, n_items):
        """Build from a list of ``{item: value}`` dicts (one per user)."""
        users, items, values = [], [], []
        for u, row in enumerate(rows):
            for j, v in row.items():
                users.append(u)
                items.append(j)
                values.append(v)
        return cls.from_triplets(users, items, values, len(rows), n_items)

    # views ----------------------------------------------------------------

    @property
    def shape(self):
        return (self.n_users, self.n_items)

    @property
    def nnz(self):
        return int(self.indptr[-1])

    def row(self, u):
        lo, hi = self.indptr[u], self.indptr[u + 1]
        return self.indices[lo:hi], self.data[lo:hi]

    def row_counts(self):
        return np.diff(self.indptr)

    def row_of_entry(self):
        """User index of every stored entry, aligned with ``indices``/``data``."""
        return np.repeat(np.arange(self.n_users), self.row_counts())

    def to_scipy(self):
        # scipy would drop explicit zeros in some ops; only use it for products
        return sp.csr_matrix(
            (self.data, self.indices, self.indptr), shape=self.shape, copy=True
        )

    def pattern(self):
        """0/1 matrix of the observed pattern as scipy CSR."""
        return sp.csr_matrix(
            (np.ones(self.nnz), self.indices, self.indptr), shape=self.shape, copy=True
        )

    def to_dense(self, fill=0.0):
        out = np.full(self.shape, fill, dtype=np.float64)
        out[self.row_of_entry(), self.indices] = self.data
        return out

    def with_values(self, data):
        """Same pattern, new values."""
        return SparseRatings(self.n_users, self.n_items, self.indptr, self.indices, data)

    def select_rows(self, users):
        users = np.asarray(users, dtype=np.int64)
        counts = self.row_counts()[users]
        indptr = np.zeros(users.size + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        if users.size:
            take = np.concatenate(
                [np.arange(self.indptr[u], self.indptr[u + 1]) for u in users]
            ).astype(np.int64)
        else:
            take = np.zeros(0, dtype=np.int64)
        return SparseRatings(
            users.size, self.n_items, indptr, self.indices[take], self.data[take]
        )

    def select_entries(self, keep):
        """Keep only the stored entries flagged in the boolean ``keep`` array."""
        keep = np.asarray(keep, dtype=bool)
        rows = self.row_of_entry()[keep]
        indptr = np.zeros(self.n_users + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=self.n_users), out=indptr[1:])
        return SparseRatings(
            self.n_users, self.n_items, indptr, self.indices[keep], self.data[keep]
        )

    def __eq__(self, other):
        if not isinstance(other, SparseRatings):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.data, other.data)
        )

    def __repr__(self):
        return f"SparseRatings({self.n_users}x{self.n_items}, nnz={self.nnz})"


@dataclass(frozen=True)
class PreprocessTransform:
    """Per-user means and the one global scale removed by :func:`preprocess`."""

    row_means: np.ndarray
    global_scale: float

    def __post_init__(self):
        if not self.global_scale > 0:
            raise DataError("global_scale must be positive")

    def apply(self, R):
        rows = R.row_of_entry()
        return R.with_values((R.data - self.row_means[rows]) / self.global_scale)

    def invert(self, R):
        rows = R.row_of_entry()
        return R.with_values(R.data * self.global_scale + self.row_means[rows])

    def to_json(self):
        return {"row_means": [float(x) for x in self.row_means], "global_scale": self.global_scale}

    @classmethod
    def from_json(cls, obj):
        return cls(np.asarray(obj["row_means"], dtype=np.float64), float(obj["global_scale"]))

    def __eq__(self, other):
        return (
            isinstance(other, PreprocessTransform)
            and self.global_scale == other.global_scale
            and np.array_equal(self.row_means, other.row_means)
        )


@dataclass(frozen=True)
class EntrySplit:
    train: SparseRatings
    probe: SparseRatings


def load_movielens(path):
    """Read a MovieLens ``ratings.csv`` into a :class:`SparseRatings`.

    User and movie ids are reindexed densely in ascending order of the
    original id. Returns ``(R, user_id_map, item_id_map)`` where the maps go
    from original id to 0-based index.
    """
    path = Path(path)
    users, items, values = [], [], []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError(f"{path}: empty file")
        if [h.strip() for h in header[:3]] != ["userId", "movieId", "rating"]:
            raise ParseError(f"{path}:1: unexpected header {header!r}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) < 3:
                raise ParseError(f"{path}:{lineno}: expected at least 3 fields, got {len(rec)}")
            try:
                u, m, r = int(rec[0]), int(rec[1]), float(rec[2])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            if not (MIN_RATING <= r <= MAX_RATING):
                raise ParseError(f"{path}:{lineno}: rating {r} outside [{MIN_RATING}, {MAX_RATING}]")
            users.append(u)
            items.append(m)
            values.append(r)
    if not users:
        raise ParseError(f"{path}: no ratings")

    raw_users = np.asarray(users, dtype=np.int64)
    raw_items = np.asarray(items, dtype=np.int64)
    user_ids, user_idx = np.unique(raw_users, return_inverse=True)
    item_ids, item_idx = np.unique(raw_items, return_inverse=True)
    R = SparseRatings.from_triplets(user_idx, item_idx, values, user_ids.size, item_ids.size)
    user_map = {int(k): i for i, k in enumerate(user_ids)}
    item_map = {int(k): i for i, k in enumerate(item_ids)}
    return R, user_map, item_map


def preprocess(R):
    """Mean-center each row, then divide everything by one global std-dev."""
    if R.nnz == 0:
        raise DataError("cannot preprocess a matrix with no observed entries")
    counts = R.row_counts()
    sums = np.bincount(R.row_of_entry(), weights=R.data, minlength=R.n_users)
    means = np.divide(sums, counts, out=np.zeros(R.n_users), where=counts > 0)
    centered = R.data - means[R.row_of_entry()]
    scale = float(np.std(centered))
    if not scale > 0:
        raise DataError("zero variance after mean-centering")
    transform = PreprocessTransform(means, scale)
    return R.with_values(centered / scale), transform


def _cut(fraction, total):
    # the epsilon guards products such as 0.29 * 100 = 28.999999999999996
    return int(math.floor(fraction * total + 1e-9))


def split_users(R, test_fraction, seed):
    """Partition users into ``(train, test)`` by a seeded shuffle.

    The test users are the first ``floor(test_fraction * m)`` positions of
    the permutation (at least one user on each side). Both halves keep the
    original relative user order. Returns the two matrices and the index
    arrays into ``R``.
    """
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    m = R.n_users
    if m < 2:
        raise DataError("need at least two users to split")
    perm = np.random.default_rng(seed).permutation(m)
    n_test = min(max(_cut(test_fraction, m), 1), m - 1)
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    return R.select_rows(train_idx), R.select_rows(test_idx), train_idx, test_idx


def split_entries(R, train_fraction=0.8, seed=None):
    """Randomly assign ``floor(train_fraction * nnz)`` entries to train, rest to probe."""
    if R.nnz < 1:
        raise DataError("need at least one observed entry")
    if not 0 <= train_fraction <= 1:
        raise ValueError("train_fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    n_train = _cut(train_fraction, R.nnz)
    keep = np.zeros(R.nnz, dtype=bool)
    keep[rng.permutation(R.nnz)[:n_train]] = True
    return EntrySplit(R.select_entries(keep), R.select_entries(~keep))


@njit(cache=True)
def _running_mean_abs(data):
    avg = 0.0
    for count in range(1, data.shape[0] + 1):
        avg += (abs(data[count - 1]) - avg) / count
    return avg


def mean_abs_entries(R):
    """Mean absolute observed entry.

    Uses the same incremental running mean as the sparse means error, so a
    single all-zero centroid reproduces this value bit for bit.
    """
    if R.nnz == 0:
        raise DataError("mean over an empty set of entries")
    return float(_running_mean_abs(R.data))
