"""Core-user selection from aggregated top-K cosine neighbor lists.

Eight variants: user vectors with ratings or booleans, with or without
hidden ratings imputed from item-item similarity, and frequency-based or
rank-based aggregation of the per-user neighbor lists.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DataError
from .ratings import SparseRatings

# similarities equal to this many decimals count as ties (broken by index)
TIE_DECIMALS = 12
_CHUNK = 2048


@dataclass(frozen=True)
class SimilarityConfig:
    use_item_similarity: bool = False
    use_ratings: bool = True
    rank_based: bool = True
    top_k_users: int = 50
    top_k_items: int = 50

    def __post_init__(self):
        if self.top_k_users < 1 or self.top_k_items < 1:
            raise ConfigError("top_k_users and top_k_items must be >= 1")

    @property
    def name(self):
        return "-".join([
            "itemsim" if self.use_item_similarity else "plain",
            "ratings" if self.use_ratings else "boolean",
            "rank" if self.rank_based else "freq",
        ])

    @classmethod
    def all_variants(cls, top_k_users=50, top_k_items=50):
        """The 8 combinations in the order of the published comparison table."""
        return [
            cls(item, ratings, not freq, top_k_users, top_k_items)
            for item, ratings, freq in itertools.product((True, False), repeat=3)
        ]


@dataclass(frozen=True, eq=False)
class NeighborLists:
    """Per-entity neighbor lists, stored compressed like a CSR matrix.

    Row ``e`` holds ``neighbors[indptr[e]:indptr[e+1]]`` ordered by
    decreasing score, ties by ascending neighbor index.
    """

    indptr: np.ndarray
    neighbors: np.ndarray
    scores: np.ndarray

    @property
    def n_entities(self):
        return self.indptr.shape[0] - 1

    def __len__(self):
        return self.n_entities

    def __getitem__(self, e):
        lo, hi = self.indptr[e], self.indptr[e + 1]
        return self.neighbors[lo:hi], self.scores[lo:hi]

    def __eq__(self, other):
        return (
            isinstance(other, NeighborLists)
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.neighbors, other.neighbors)
            and np.array_equal(self.scores, other.scores)
        )

    @classmethod
    def from_lists(cls, lists):
        indptr = np.zeros(len(lists) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(nb) for nb, _ in lists])
        if lists and indptr[-1]:
            neighbors = np.concatenate([np.asarray(nb, dtype=np.int64) for nb, _ in lists])
            scores = np.concatenate([np.asarray(sc, dtype=np.float64) for _, sc in lists])
        else:
            neighbors, scores = np.zeros(0, dtype=np.int64), np.zeros(0)
        return cls(indptr, neighbors, scores)


@dataclass(frozen=True, eq=False)
class CoreUserSet:
    indices: np.ndarray
    scores: np.ndarray

    def __len__(self):
        return self.indices.shape[0]

    def __eq__(self, other):
        return (
            isinstance(other, CoreUserSet)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.scores, other.scores)
        )

    def to_csv(self):
        lines = ["user_index,score"]
        lines += [f"{int(i)},{float(s)!r}" for i, s in zip(self.indices, self.scores)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text):
        rows = [ln.split(",") for ln in text.strip().splitlines()[1:] if ln.strip()]
        return cls(
            np.array([int(r[0]) for r in rows], dtype=np.int64),
            np.array([float(r[1]) for r in rows], dtype=np.float64),
        )


def _rank_order(scores, ids):
    """Order of ``ids`` by decreasing score with ties by ascending id."""
    key = np.round(scores, TIE_DECIMALS)
    return np.lexsort((ids, -key))


def cosine(a, b, boolean=False):
    """Cosine similarity of two sparse vectors given as ``(indices, values)``.

    Returns 0 when either vector has zero norm. With ``boolean`` every
    observed entry counts as 1.
    """
    ia, va = np.asarray(a[0], dtype=np.int64), np.asarray(a[1], dtype=np.float64)
    ib, vb = np.asarray(b[0], dtype=np.int64), np.asarray(b[1], dtype=np.float64)
    if boolean:
        va, vb = np.ones_like(va), np.ones_like(vb)
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0 or nb == 0:
        return 0.0
    _, pa, pb = np.intersect1d(ia, ib, assume_unique=True, return_indices=True)
    return float(va[pa] @ vb[pb] / (na * nb))


def _topk_from_vectors(X, K):
    """Top-``K`` cosine neighbors between the rows of sparse ``X``.

    Zero-norm rows get an empty list and never appear in another list.
    """
    X = sp.csr_matrix(X)
    m = X.shape[0]
    norms = np.sqrt(np.asarray(X.multiply(X).sum(axis=1)).ravel())
    live = np.flatnonzero(norms > 0)
    inv = np.zeros(m)
    inv[live] = 1.0 / norms[live]
    Xn = sp.diags(inv) @ X
    Xlive_t = Xn[live].T.tocsc()

    lists = [(np.zeros(0, dtype=np.int64), np.zeros(0))] * m
    for start in range(0, live.size, _CHUNK):
        rows = live[start:start + _CHUNK]
        sims = np.asarray((Xn[rows] @ Xlive_t).todense())
        for r, u in enumerate(rows):
            cand = live != u
            ids, sc = live[cand], sims[r, cand]
            order = _rank_order(sc, ids)[:K]
            lists[u] = (ids[order], sc[order])
    return NeighborLists.from_lists(lists)


def item_similarity_topk(R, K):
    """Top-``K`` most similar items for every item (cosine of rating columns).

    Items with no ratings (or only zero ratings) get empty lists.
    """
    return _topk_from_vectors(R.to_scipy().T, K)


def _item_weight_matrix(item_lists, n_items):
    # W[j, j'] = sim(j, j') for j' in topK(j) with positive similarity
    rows = np.repeat(np.arange(item_lists.n_entities), np.diff(item_lists.indptr))
    pos = item_lists.scores > 0
    return sp.csr_matrix(
        (item_lists.scores[pos], (rows[pos], item_lists.neighbors[pos])),
        shape=(n_items, n_items),
    )


def impute_hidden(row, item_lists):
    """Fill a user's unrated items from their ratings on similar items.

    ``row`` is ``(indices, values)``. An unrated item ``j`` gets
    ``sum(sim * r) / sum(sim)`` over the rated items in ``j``'s list with
    positive similarity; if there are none, ``j`` stays missing.
    """
    idx = np.asarray(row[0], dtype=np.int64)
    vals = np.asarray(row[1], dtype=np.float64)
    rated = dict(zip(idx.tolist(), vals.tolist()))
    out = dict(rated)
    for j in range(item_lists.n_entities):
        if j in rated:
            continue
        nbrs, sims = item_lists[j]
        num = den = 0.0
        for jj, s in zip(nbrs.tolist(), sims.tolist()):
            if s > 0 and jj in rated:
                num += s * rated[jj]
                den += s
        if den > 0:
            out[j] = num / den
    keys = np.array(sorted(out), dtype=np.int64)
    return keys, np.array([out[j] for j in keys.tolist()], dtype=np.float64)


def impute_matrix(R, item_lists):
    """Row-wise :func:`impute_hidden` for every user at once."""
    W = _item_weight_matrix(item_lists, R.n_items)
    values = R.to_scipy()
    pattern = R.pattern()
    num = np.asarray((values @ W.T).todense())
    den = np.asarray((pattern @ W.T).todense())
    observed = np.asarray(pattern.todense()) > 0
    out = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    out[observed] = 0.0
    out[R.row_of_entry(), R.indices] = R.data
    return SparseRatings.from_dense(out, mask=observed | (den > 0))


def user_vectors(R, config, item_lists=None):
    """The vectors whose cosine defines user similarity under ``config``."""
    X = R
    if config.use_item_similarity:
        if item_lists is None:
            item_lists = item_similarity_topk(R, config.top_k_items)
        X = impute_matrix(R, item_lists)
    if not config.use_ratings:
        X = X.with_values(np.ones(X.nnz))
    return X


def user_similarity_topk(R, config, item_lists=None):
    """Top-K most similar users of every user, self excluded."""
    if R.n_users < 2:
        raise DataError("need at least two users")
    X = user_vectors(R, config, item_lists)
    return _topk_from_vectors(X.to_scipy(), config.top_k_users)


def select_core_users(lists, s, rank_based):
    """Aggregate neighbor lists into the ``s`` highest-scoring users.

    Frequency mode counts appearances; rank mode adds ``1/rank`` per
    appearance with rank 1 for the most similar neighbor.
    """
    n = lists.n_entities
    if not 0 <= s <= n:
        raise DataError(f"cannot select {s} core users out of {n}")
    if rank_based:
        ranks = np.concatenate(
            [np.arange(1, c + 1) for c in np.diff(lists.indptr)] or [np.zeros(0)]
        )
        weights = 1.0 / ranks
    else:
        weights = np.ones(lists.neighbors.shape[0])
    scores = np.bincount(lists.neighbors, weights=weights, minlength=n).astype(np.float64)
    order = _rank_order(scores, np.arange(n))[:s]
    return CoreUserSet(order.astype(np.int64), scores[order])


def core_users(R, config, s, item_lists=None):
    """Full pipeline: similarity lists under ``config``, then selection."""
    lists = user_similarity_topk(R, config, item_lists)
    return select_core_users(lists, s, config.rank_based)
