"""Artificial Core User training.

The ACU ratings matrix is split into ``zeta`` row blocks. Each block keeps
a rank-``k`` orthonormal factorization ``U_acu diag(S) V^T`` with ``S``
folded into the item factors. Training alternates, against a sampled batch
of real training users, between gradient steps on the batch's user factors,
a K-means style update that pulls the ACU user factors toward the batch's,
and gradient steps on the shared item factors; every update is followed by
re-orthonormalizing the block through a fresh SVD.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit

from .errors import ConfigError, DataError, NumericalError
from .linalg import normalize_columns, sparse_residual, truncated_svd

logger = logging.getLogger(__name__)

USER_STEP, MEANS_STEP, ITEM_STEP = "user", "means", "item"


@dataclass(frozen=True)
class TrainConfig:
    s: int
    zeta: int = 2
    k: int = 10
    alpha: float = 0.01
    beta: float = 1e-4
    lam: float = 0.0
    gamma: float = 0.0
    n_batches: int = 8
    inner_iters: int = 40
    outer_iters: int = 20
    seed: int = 0
    refactor_every: int = 1
    minibatch_means: bool = False
    early_stop_mae: float | None = None

    @property
    def block_rows(self):
        return self.s // self.zeta

    def validate(self, n_users=None, n_items=None):
        if self.s < 1 or self.zeta < 1 or self.s % self.zeta:
            raise ConfigError(f"s={self.s} must be a positive multiple of zeta={self.zeta}")
        if self.k < 1 or self.k > self.block_rows:
            raise ConfigError(f"k={self.k} must lie in [1, s/zeta={self.block_rows}]")
        if n_items is not None and self.k > n_items:
            raise ConfigError(f"k={self.k} exceeds the item count {n_items}")
        if n_users is not None and self.s >= n_users:
            raise ConfigError(f"s={self.s} must be smaller than the user count {n_users}")
        if not (self.alpha > 0 and self.beta > 0):
            raise ConfigError("learning rates alpha and beta must be positive")
        if self.lam < 0 or self.gamma < 0:
            raise ConfigError("regularization coefficients must be non-negative")
        if self.n_batches < 1 or self.inner_iters < 0 or self.outer_iters < 0:
            raise ConfigError("n_batches >= 1 and iteration budgets >= 0 required")
        if self.refactor_every < 1:
            raise ConfigError("refactor_every must be >= 1")
        return self

    def to_json(self):
        return asdict(self)


@dataclass(frozen=True, eq=False)
class FactorBlock:
    """One row block: ``U`` (rows x k) and unit ``V_unit`` (n x k) with singular values ``S``."""

    U: np.ndarray
    S: np.ndarray
    V_unit: np.ndarray

    @property
    def V(self):
        """Item factors with the singular values folded in."""
        return self.V_unit * self.S

    def ratings(self):
        return self.U @ self.V.T

    def __eq__(self, other):
        return (
            isinstance(other, FactorBlock)
            and np.array_equal(self.U, other.U)
            and np.array_equal(self.S, other.S)
            and np.array_equal(self.V_unit, other.V_unit)
        )


@dataclass(eq=False)
class ACUModel:
    blocks: list
    R_acu: np.ndarray
    config: TrainConfig
    trace: list = field(default_factory=list)

    def __eq__(self, other):
        return (
            isinstance(other, ACUModel)
            and self.config == other.config
            and len(self.blocks) == len(other.blocks)
            and all(a == b for a, b in zip(self.blocks, other.blocks))
            and np.array_equal(self.R_acu, other.R_acu)
        )


def assemble(blocks):
    return np.vstack([b.ratings() for b in blocks])


def init_acu(R_train, core_set):
    """Dense ACU start: core users' rows with unobserved entries set to 0."""
    idx = np.asarray(core_set.indices if hasattr(core_set, "indices") else core_set)
    if idx.size == 0 or idx.min() < 0 or idx.max() >= R_train.n_users:
        raise DataError("core user indices outside the training matrix")
    if np.unique(idx).size != idx.size:
        raise DataError("duplicate core user indices")
    return R_train.select_rows(idx).to_dense()


def init_user_factors(n_rows, k, rng):
    """Uniform(-0.5, 0.5) / sqrt(k) entries, then unit columns."""
    U = rng.uniform(-0.5, 0.5, size=(n_rows, k)) / np.sqrt(k)
    return normalize_columns(U)


@njit(cache=True)
def _nearest_rows(A, B):
    # first minimum wins, i.e. ties go to the lowest centroid index
    labels = np.zeros(A.shape[0], dtype=np.int64)
    for r in range(A.shape[0]):
        best = np.inf
        best_l = 0
        for l in range(B.shape[0]):
            d = 0.0
            for c in range(A.shape[1]):
                diff = A[r, c] - B[l, c]
                d += diff * diff
            if d < best:
                best = d
                best_l = l
        labels[r] = best_l
    return labels


def assign_rows(A, B):
    """Index of the nearest (Euclidean) row of ``B`` for every row of ``A``."""
    A = np.ascontiguousarray(A, dtype=np.float64)
    B = np.ascontiguousarray(B, dtype=np.float64)
    if A.shape[1] != B.shape[1]:
        raise DataError(f"column mismatch: {A.shape} vs {B.shape}")
    if B.shape[0] == 0:
        raise DataError("no centroids")
    return _nearest_rows(A, B)


def means_update(A, B):
    """One Lloyd step: each row of ``B`` becomes the mean of the rows of ``A`` nearest to it.

    Rows of ``B`` with no assigned row of ``A`` are returned untouched.
    """
    labels = assign_rows(A, B)
    A = np.asarray(A, dtype=np.float64)
    sums = np.zeros(B.shape)
    np.add.at(sums, labels, A)
    counts = np.bincount(labels, minlength=B.shape[0])
    out = np.array(B, dtype=np.float64)
    hit = counts > 0
    out[hit] = sums[hit] / counts[hit, None]
    return out


def minibatch_means_update(A, B, counts):
    """Per-centroid learning-rate variant (Sculley's mini-batch K-means).

    ``counts`` holds how many points each centroid has absorbed so far and
    is returned updated alongside the new centroids.
    """
    labels = assign_rows(A, B)
    out = np.array(B, dtype=np.float64)
    counts = np.array(counts, dtype=np.int64)
    for r, l in enumerate(labels):
        counts[l] += 1
        eta = 1.0 / counts[l]
        out[l] = (1.0 - eta) * out[l] + eta * A[r]
    return out, counts


def sgd_user_step(U, E, V, beta, gamma):
    """``(1 - beta*gamma) U + beta E V`` with sparse residual ``E``."""
    return (1.0 - beta * gamma) * U + beta * (E.to_scipy() @ V)


def sgd_item_step(V, E, U, alpha, lam):
    """``(1 - alpha*lam) V + alpha E^T U`` with sparse residual ``E``."""
    return (1.0 - alpha * lam) * V + alpha * (E.to_scipy().T @ U)


def refactor_block(U_acu, V, k):
    """Rebuild the block's ratings from ``U_acu V^T`` and re-decompose at rank ``k``."""
    return decompose_block(U_acu @ V.T, k)


def decompose_block(R_block, k):
    svd = truncated_svd(R_block, k)
    return FactorBlock(svd.U, svd.S, svd.V)


def schedule(j):
    """Which update inner iteration ``j`` performs."""
    if j % 2 == 0:
        return USER_STEP
    if j % 4 == 1:
        return MEANS_STEP
    return ITEM_STEP


def train_block(block, batches, config, rng):
    """Run one pass of the inner loop for one ACU block.

    ``block`` is the block's current :class:`FactorBlock`. A batch is drawn
    from ``batches`` with ``rng`` and its user factors are initialized
    fresh. Returns the updated block and a per-block trace dict.
    """
    k = block.S.shape[0]
    i = int(rng.integers(len(batches)))
    R_i = batches[i]
    U_i = init_user_factors(R_i.n_users, k, rng)
    U_acu, V = block.U, block.V
    counts = np.zeros(U_acu.shape[0], dtype=np.int64)
    steps = []
    mae = None
    dirty = False
    for j in range(config.inner_iters):
        E = sparse_residual(R_i, U_i, V)
        mae = float(np.mean(np.abs(E.data))) if E.nnz else 0.0
        if config.early_stop_mae is not None and mae < config.early_stop_mae:
            break
        step = schedule(j)
        if step == USER_STEP:
            U_i = normalize_columns(sgd_user_step(U_i, E, V, config.beta, config.gamma))
        elif step == MEANS_STEP:
            if config.minibatch_means:
                U_acu, counts = minibatch_means_update(U_i, U_acu, counts)
            else:
                U_acu = means_update(U_i, U_acu)
        else:
            V = sgd_item_step(V, E, U_i, config.alpha, config.lam)
        if not (np.all(np.isfinite(U_i)) and np.all(np.isfinite(V))):
            raise NumericalError(f"training diverged at inner iteration {j} ({step} step); "
                                 "lower alpha/beta")
        steps.append(step)
        dirty = True
        if (j + 1) % config.refactor_every == 0:
            block = refactor_block(U_acu, V, k)
            U_acu, V = block.U, block.V
            dirty = False
    if dirty:
        block = refactor_block(U_acu, V, k)
    return block, {"batch": i, "steps": steps, "batch_mae": mae}


def make_batches(R_train, n_batches, seed):
    """Seeded partition of the training users into ``n_batches`` (last may be ragged)."""
    n = min(n_batches, R_train.n_users)
    perm = np.random.default_rng([seed, 0]).permutation(R_train.n_users)
    return [R_train.select_rows(np.sort(part)) for part in np.array_split(perm, n)]


def block_rng(seed, outer, b):
    return np.random.default_rng([seed, 1, outer, b])


def generate_acus(R_train, core_set, config, threads=1, callback=None):
    """Train ACUs initialized from the given core users.

    ``callback(outer, model)`` is invoked after every outer iteration when
    given (used for learning curves).
    """
    config.validate(R_train.n_users, R_train.n_items)
    if len(core_set) != config.s:
        raise DataError(f"core set has {len(core_set)} users, config.s={config.s}")
    R_acu = init_acu(R_train, core_set)
    rows = config.block_rows
    full = min(rows, R_train.n_items)
    # before any training the blocks carry the untruncated initialization
    blocks = [decompose_block(R_acu[b * rows:(b + 1) * rows], full) for b in range(config.zeta)]
    batches = make_batches(R_train, config.n_batches, config.seed)
    trace = []

    def run(outer, b):
        start = decompose_block(blocks[b].ratings(), config.k)
        return train_block(start, batches, config, block_rng(config.seed, outer, b))

    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for outer in range(config.outer_iters):
            if pool is None:
                results = [run(outer, b) for b in range(config.zeta)]
            else:
                results = list(pool.map(lambda b: run(outer, b), range(config.zeta)))
            blocks = [blk for blk, _ in results]
            trace.append({
                "outer": outer,
                "batch_mae": [info["batch_mae"] for _, info in results],
                "batches": [info["batch"] for _, info in results],
                "top_singular_values": [blk.S[:5].tolist() for blk in blocks],
            })
            logger.info("outer %d: batch MAE %s", outer, trace[-1]["batch_mae"])
            if callback is not None:
                callback(outer, ACUModel(list(blocks), assemble(blocks), config, list(trace)))
    finally:
        if pool is not None:
            pool.shutdown()
    R_out = R_acu if config.outer_iters == 0 else assemble(blocks)
    return ACUModel(blocks, R_out, config, trace)
