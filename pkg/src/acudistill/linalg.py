"""Dense-block truncated SVD, sparse residuals and column normalization.

Dense matrices are plain 2-D float64 numpy arrays throughout the package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ConvergenceError, DataError

JACOBI_MAX_SWEEPS = 100
JACOBI_TOL = 1e-12
# singular values below this fraction of the largest one are treated as zero
RANK_TOL = 1e-10
COLUMN_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class TruncatedSVD:
    """Leading singular triplets ``A ~= U @ diag(S) @ V.T``.

    ``U`` is r x k, ``V`` is n x k, both with orthonormal columns; ``S`` is
    non-negative and non-increasing.
    """

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    @property
    def k(self):
        return self.S.shape[0]

    def folded_V(self):
        """Item factors with the singular values absorbed, ``V @ diag(S)``."""
        return self.V * self.S

    def reconstruct(self):
        return (self.U * self.S) @ self.V.T


@njit(cache=True)
def _jacobi_eigh(G, tol, max_sweeps):
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Returns (eigenvalues, eigenvectors as columns, sweeps used, relative
    off-diagonal norm reached).
    """
    p = G.shape[0]
    A = G.copy()
    Q = np.eye(p)
    total = 0.0
    for i in range(p):
        for j in range(p):
            total += A[i, j] * A[i, j]
    total = math.sqrt(total)
    if total == 0.0:
        return np.zeros(p), Q, 0, 0.0

    for sweep in range(max_sweeps + 1):
        off = 0.0
        for i in range(p):
            for j in range(i + 1, p):
                off += 2.0 * A[i, j] * A[i, j]
        rel = math.sqrt(off) / total
        if rel <= tol:
            return np.diag(A).copy(), Q, sweep, rel
        if sweep == max_sweeps:
            return np.diag(A).copy(), Q, -1, rel

        for i in range(p - 1):
            for j in range(i + 1, p):
                aij = A[i, j]
                if aij == 0.0:
                    continue
                theta = (A[j, j] - A[i, i]) / (2.0 * aij)
                if theta >= 0.0:
                    t = 1.0 / (theta + math.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                tau = s / (1.0 + c)
                A[i, i] -= t * aij
                A[j, j] += t * aij
                A[i, j] = 0.0
                A[j, i] = 0.0
                for r in range(p):
                    if r != i and r != j:
                        ari = A[r, i]
                        arj = A[r, j]
                        A[r, i] = ari - s * (arj + tau * ari)
                        A[r, j] = arj + s * (ari - tau * arj)
                        A[i, r] = A[r, i]
                        A[j, r] = A[r, j]
                for r in range(p):
                    qri = Q[r, i]
                    qrj = Q[r, j]
                    Q[r, i] = qri - s * (qrj + tau * qri)
                    Q[r, j] = qrj + s * (qri - tau * qrj)
    return np.diag(A).copy(), Q, -1, 1.0


def symmetric_eigh(G, tol=JACOBI_TOL, max_sweeps=JACOBI_MAX_SWEEPS):
    """Eigenpairs of symmetric ``G`` sorted by decreasing eigenvalue."""
    G = np.ascontiguousarray(G, dtype=np.float64)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise DataError("eigendecomposition needs a square matrix")
    vals, vecs, sweeps, residual = _jacobi_eigh(G, tol, max_sweeps)
    if sweeps < 0:
        raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps", residual)
    order = np.argsort(-vals, kind="stable")
    return vals[order], vecs[:, order]


def _orthonormalize(W, keep, dim):
    """Orthonormalize the columns of ``W`` in order (modified Gram-Schmidt, two passes).

    Columns where ``keep`` is False are replaced by orthogonal completion
    from the standard basis, scanned in index order.
    """
    k = W.shape[1]
    Q = np.zeros((dim, k))
    basis = 0
    for i in range(k):
        if keep[i]:
            v = W[:, i].copy()
            for _ in range(2):
                v -= Q[:, :i] @ (Q[:, :i].T @ v)
            norm = np.linalg.norm(v)
            if norm > 0.5 * np.linalg.norm(W[:, i]):
                Q[:, i] = v / norm
                continue
        # orthogonal completion
        while True:
            if basis >= dim:
                raise DataError("orthogonal completion ran out of basis vectors")
            v = np.zeros(dim)
            v[basis] = 1.0
            basis += 1
            for _ in range(2):
                v -= Q[:, :i] @ (Q[:, :i].T @ v)
            norm = np.linalg.norm(v)
            if norm > 1e-3:
                Q[:, i] = v / norm
                break
    return Q


def _fix_signs(U, V):
    # first numerically nonzero component of every U column made positive
    for i in range(U.shape[1]):
        col = U[:, i]
        nz = np.flatnonzero(np.abs(col) > 1e-12)
        if nz.size and col[nz[0]] < 0:
            U[:, i] = -col
            V[:, i] = -V[:, i]
    return U, V


def truncated_svd(A, k):
    """The ``k`` leading singular triplets of dense ``A``.

    Eigendecomposes the smaller Gram matrix (``A A^T`` for short-and-fat
    inputs) with cyclic Jacobi, then recovers the other side as
    ``A^T u / sigma`` with ``sigma = ||A^T u||`` taken from ``A`` itself
    (after dividing ``A`` by its largest magnitude, which is undone on ``S``).
    """
    A = np.ascontiguousarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise DataError("truncated_svd expects a 2-D array")
    r, n = A.shape
    if not 0 <= k <= min(r, n):
        raise DataError(f"k={k} outside [0, {min(r, n)}]")
    if not np.all(np.isfinite(A)):
        raise DataError("matrix has non-finite entries")
    if k == 0:
        return TruncatedSVD(np.zeros((r, 0)), np.zeros(0), np.zeros((n, 0)))

    tall = r > n
    B = A.T if tall else A
    # work on A / max|A| so squares neither overflow nor underflow
    scale = np.abs(B).max()
    if scale > 0:
        B = B / scale
    _, Q = symmetric_eigh(B @ B.T)
    Q = np.ascontiguousarray(Q[:, :k])
    W = B.T @ Q
    S = np.linalg.norm(W, axis=0) * (scale if scale > 0 else 1.0)
    order = np.argsort(-S, kind="stable")
    Q, W, S = Q[:, order], W[:, order], S[order]
    smax = S[0] if S.size else 0.0
    keep = S > RANK_TOL * smax if smax > 0 else np.zeros(k, dtype=bool)
    P = _orthonormalize(W, keep, W.shape[0])
    S = np.where(keep, S, 0.0)
    U, V = (P, Q) if tall else (Q, P)
    U, V = _fix_signs(np.ascontiguousarray(U), np.ascontiguousarray(V))
    return TruncatedSVD(U, S, V)


def sparse_residual(R, U, V):
    """``R - U V^T`` evaluated only on the observed entries of ``R``."""
    U = np.asarray(U, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if U.shape[0] != R.n_users or V.shape[0] != R.n_items or U.shape[1] != V.shape[1]:
        raise DataError(
            f"shape mismatch: R {R.shape}, U {U.shape}, V {V.shape}"
        )
    rows = R.row_of_entry()
    pred = np.einsum("ij,ij->i", U[rows], V[R.indices])
    return R.with_values(R.data - pred)


def normalize_columns(U, eps=COLUMN_EPS):
    """Scale each column to unit Euclidean norm; near-zero columns are left alone."""
    U = np.array(U, dtype=np.float64)
    # divide by the column peak first so the squared norm cannot overflow
    peak = np.abs(U).max(axis=0) if U.shape[0] else np.zeros(U.shape[1])
    live = peak > 0
    U[:, live] /= peak[live]
    norms = np.linalg.norm(U, axis=0)
    big = live & (norms * np.where(live, peak, 0.0) > eps)
    U[:, big] /= norms[big]
    U[:, live & ~big] *= peak[live & ~big]
    return U
