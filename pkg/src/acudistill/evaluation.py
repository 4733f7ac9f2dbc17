"""Quality metrics for a distilled user set.

* item-vectors testing error (IVTE): freeze item factors taken from the
  distilled set, fit only user factors for held-out users on 80% of their
  ratings and report the mean absolute error on the other 20%;
* sparse means error (SME): how well the distilled rows act as centroids
  for held-out users when distance only looks at observed coordinates;
* singular-value profile against a same-pattern random matrix.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit

from .errors import DataError
from .linalg import normalize_columns, sparse_residual, truncated_svd
from .ratings import SparseRatings, mean_abs_entries, split_entries
from .training import init_user_factors, sgd_user_step

MAX_FIT_ITERS = 500
MIN_TEST_ENTRIES = 5
MAX_HALVINGS = 40


@dataclass
class IVTERun:
    seed: list
    n_users: int
    train_mae: float
    probe_mae: float
    iterations: int
    converged: bool
    final_beta: float
    train_curve: list = field(default_factory=list)


@dataclass
class IVTEReport:
    n_factors_used: int
    train_mae: float
    probe_mae: float
    runs: int
    seeds: list
    sv_mass_fraction: float
    unconverged_runs: int
    per_run: list

    @property
    def all_converged(self):
        return self.unconverged_runs == 0

    def to_json(self):
        out = asdict(self)
        out["all_converged"] = self.all_converged
        return out


def _dense(R_subject):
    if isinstance(R_subject, SparseRatings):
        return R_subject.to_dense()
    return np.asarray(R_subject, dtype=np.float64)


def _per_block_counts(n_factors, zeta):
    base, extra = divmod(n_factors, zeta)
    return [base + (1 if b < extra else 0) for b in range(zeta)]


def subject_item_factors(R_subject, zeta, n_factors):
    """Concatenated folded item factors from per-block truncated SVDs.

    Returns ``(V, mass_fraction)``: ``V`` is n x n_factors, holding the
    ``n_factors/zeta`` leading triplets of every row block with singular
    values folded in; ``mass_fraction`` is the kept share of the sum of all
    blocks' singular values.
    """
    A = _dense(R_subject)
    s, n = A.shape
    if zeta < 1 or s % zeta:
        raise DataError(f"{s} subject rows cannot be split into {zeta} equal blocks")
    rows = s // zeta
    counts = _per_block_counts(n_factors, zeta)
    if n_factors < 0 or max(counts) > min(rows, n):
        raise DataError(f"n_factors={n_factors} too large for {zeta} blocks of {rows}x{n}")
    parts, kept, total = [], 0.0, 0.0
    for b, kb in enumerate(counts):
        block = A[b * rows:(b + 1) * rows]
        svd = truncated_svd(block, min(rows, n))
        parts.append(svd.V[:, :kb] * svd.S[:kb])
        kept += float(svd.S[:kb].sum())
        total += float(svd.S.sum())
    V = np.hstack(parts) if parts else np.zeros((n, 0))
    return V, (kept / total if total > 0 else 0.0)


def fit_user_factors(R_train, V, beta, gamma, train_stop, rng, max_iters=MAX_FIT_ITERS,
                     adaptive=True):
    """Fit column-normalized user factors against frozen item factors ``V``.

    Repeats the regularized gradient step followed by column normalization
    until the train MAE drops to ``train_stop`` or ``max_iters`` is hit.
    With ``adaptive`` a step that would raise the train MAE is rejected and
    ``beta`` halved instead, so the train MAE never increases.

    Returns ``(U, info)``.
    """
    k = V.shape[1]
    U = init_user_factors(R_train.n_users, k, rng) if k else np.zeros((R_train.n_users, 0))
    E = sparse_residual(R_train, U, V)
    mae = float(np.mean(np.abs(E.data)))
    curve = [mae]
    it = 0
    halvings = 0
    while it < max_iters and mae > train_stop and k:
        cand = normalize_columns(sgd_user_step(U, E, V, beta, gamma))
        E_c = sparse_residual(R_train, cand, V)
        mae_c = float(np.mean(np.abs(E_c.data)))
        it += 1
        if adaptive and mae_c > mae:
            beta *= 0.5
            halvings += 1
            if halvings > MAX_HALVINGS:
                break
            continue
        U, E, mae = cand, E_c, mae_c
        curve.append(mae)
    return U, {"train_mae": mae, "iterations": it, "converged": mae <= train_stop,
               "final_beta": beta, "curve": curve}


def item_vectors_testing_error(R_test, R_subject, zeta, n_factors, beta=0.05, gamma=0.0,
                               train_stop=0.2, runs=1, users_per_run=200, seed=0,
                               max_iters=MAX_FIT_ITERS, adaptive=True):
    """Probe MAE of test users fitted against the subject's item vectors, averaged over runs."""
    V, mass = subject_item_factors(R_subject, zeta, n_factors)
    if V.shape[0] != R_test.n_items:
        raise DataError("subject and test matrices disagree on the item count")
    eligible = np.flatnonzero(R_test.row_counts() >= MIN_TEST_ENTRIES)
    if eligible.size == 0:
        raise DataError(f"no test user has >= {MIN_TEST_ENTRIES} ratings")
    if runs < 1:
        raise DataError("runs must be >= 1")

    per_run = []
    for run in range(runs):
        run_seed = [int(seed), run]
        rng = np.random.default_rng(run_seed)
        take = min(users_per_run, eligible.size)
        users = np.sort(rng.choice(eligible, size=take, replace=False))
        split = split_entries(R_test.select_rows(users), 0.8, rng)
        U, info = fit_user_factors(split.train, V, beta, gamma, train_stop, rng,
                                   max_iters=max_iters, adaptive=adaptive)
        probe_mae = mean_abs_entries(sparse_residual(split.probe, U, V))
        per_run.append(IVTERun(run_seed, int(take), info["train_mae"], probe_mae,
                               info["iterations"], info["converged"], info["final_beta"],
                               info["curve"]))

    return IVTEReport(
        n_factors_used=int(V.shape[1]),
        train_mae=float(np.mean([r.train_mae for r in per_run])),
        probe_mae=float(np.mean([r.probe_mae for r in per_run])),
        runs=runs,
        seeds=[r.seed for r in per_run],
        sv_mass_fraction=mass,
        unconverged_runs=sum(not r.converged for r in per_run),
        per_run=per_run,
    )


@njit(cache=True)
def _sparse_means_error(indptr, indices, data, C):
    avg = 0.0
    count = 0
    for r in range(indptr.shape[0] - 1):
        lo, hi = indptr[r], indptr[r + 1]
        if lo == hi:
            continue
        best = np.inf
        best_l = 0
        for l in range(C.shape[0]):
            d = 0.0
            for e in range(lo, hi):
                diff = data[e] - C[l, indices[e]]
                d += diff * diff
            if d < best:
                best = d
                best_l = l
        for e in range(lo, hi):
            count += 1
            err = abs(data[e] - C[best_l, indices[e]])
            avg += (err - avg) / count
    return avg, count


def sparse_means_error(R_test, R_acu):
    """Mean absolute error against each test user's nearest ACU row.

    Nearness is squared Euclidean distance over the user's observed items
    only; ties go to the lowest ACU index. The mean is the running average
    over all observed test entries.
    """
    C = np.ascontiguousarray(_dense(R_acu))
    if C.shape[1] != R_test.n_items:
        raise DataError("column counts differ")
    if R_test.nnz == 0:
        raise DataError("test matrix has no observed entries")
    if C.shape[0] == 0:
        raise DataError("no ACU rows")
    avg, _ = _sparse_means_error(R_test.indptr, R_test.indices, R_test.data, C)
    return float(avg)


@dataclass
class SVProfile:
    subject: np.ndarray
    random: np.ndarray

    @property
    def difference(self):
        return np.abs(self.subject - self.random)

    def order_percent(self, n_rows):
        i = np.arange(1, self.subject.shape[0] + 1)
        return i / (n_rows / 100.0)

    def to_csv(self, curve, n_rows):
        values = {"subject": self.subject, "random": self.random,
                  "difference": self.difference}[curve]
        lines = ["order_percent,value"]
        lines += [f"{float(x)!r},{float(v)!r}" for x, v in zip(self.order_percent(n_rows), values)]
        return "\n".join(lines) + "\n"

    def to_json(self):
        return {"subject": self.subject.tolist(), "random": self.random.tolist(),
                "difference": self.difference.tolist()}


def _singular_values(R, top_k):
    s = np.linalg.svd(R.to_dense(), compute_uv=False)
    return s if top_k is None else s[:top_k]


def sv_profile(R_subject, seed, top_k=None, permutation=None):
    """Singular values of the subject and of a same-pattern matrix with shuffled values.

    The random comparison matrix keeps the subject's exact observed pattern
    and fills it with a uniformly random permutation of the subject's own
    observed values. ``permutation`` overrides the seeded shuffle.
    """
    if permutation is None:
        permutation = np.random.default_rng(seed).permutation(R_subject.nnz)
    shuffled = R_subject.with_values(R_subject.data[np.asarray(permutation)])
    return SVProfile(_singular_values(R_subject, top_k), _singular_values(shuffled, top_k))
