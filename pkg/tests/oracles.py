"""Slow, obviously-correct reference implementations used as test oracles.

Everything here works on plain Python dicts and lists so that it shares no
code path with the package under test.
"""

import math

import numpy as np

TIE_DECIMALS = 12


def rows_as_dicts(R):
    return [dict(zip(*(a.tolist() for a in R.row(u)))) for u in range(R.n_users)]


def columns_as_dicts(rows, n_items):
    cols = [dict() for _ in range(n_items)]
    for u, row in enumerate(rows):
        for j, v in row.items():
            cols[j][u] = v
    return cols


def cosine(a, b, boolean=False):
    if boolean:
        a = {k: 1.0 for k in a}
        b = {k: 1.0 for k in b}
    na = math.sqrt(sum(v * v for v in a.values()))
    nb = math.sqrt(sum(v * v for v in b.values()))
    if na == 0 or nb == 0:
        return 0.0
    return sum(v * b[k] for k, v in a.items() if k in b) / (na * nb)


def topk(vectors, K, boolean=False):
    """Exhaustive top-K lists; zero-norm vectors are skipped on both sides."""
    def live(v):
        return any((1.0 if boolean else x) != 0 for x in v.values())

    out = []
    for e, v in enumerate(vectors):
        if not live(v):
            out.append([])
            continue
        cands = [(cosine(v, w, boolean), f) for f, w in enumerate(vectors) if f != e and live(w)]
        cands.sort(key=lambda t: (-round(t[0], TIE_DECIMALS), t[1]))
        out.append(cands[:K])
    return out


def impute(row, item_lists):
    out = dict(row)
    for j, lst in enumerate(item_lists):
        if j in row:
            continue
        num = den = 0.0
        for sim, jj in lst:
            if sim > 0 and jj in row:
                num += sim * row[jj]
                den += sim
        if den > 0:
            out[j] = num / den
    return out


def aggregate(lists, n, s, rank_based):
    score = [0.0] * n
    for lst in lists:
        for rank, (_, f) in enumerate(lst, start=1):
            score[f] += 1.0 / rank if rank_based else 1.0
    order = sorted(range(n), key=lambda f: (-round(score[f], TIE_DECIMALS), f))[:s]
    return order, [score[f] for f in order]


def core_selection(R, s, use_item_similarity, use_ratings, rank_based, K_users, K_items):
    rows = rows_as_dicts(R)
    if use_item_similarity:
        item_lists = topk(columns_as_dicts(rows, R.n_items), K_items)
        rows = [impute(r, item_lists) for r in rows]
    lists = topk(rows, K_users, boolean=not use_ratings)
    return aggregate(lists, R.n_users, s, rank_based), lists


def means_update(A, B):
    """One Lloyd step written with explicit loops."""
    A = [list(map(float, r)) for r in A]
    B = [list(map(float, r)) for r in B]
    sums = [[0.0] * len(B[0]) for _ in B]
    counts = [0] * len(B)
    for a in A:
        best, best_l = math.inf, 0
        for l, b in enumerate(B):
            d = 0.0
            for x, y in zip(a, b):
                d += (x - y) * (x - y)
            if d < best:
                best, best_l = d, l
        counts[best_l] += 1
        sums[best_l] = [s + x for s, x in zip(sums[best_l], a)]
    return np.array([[s / counts[l] for s in sums[l]] if counts[l] else B[l]
                     for l in range(len(B))])


def sparse_means_error(rows, C):
    """Running-mean absolute error to the nearest centroid over observed coordinates."""
    avg, count = 0.0, 0
    for row in rows:
        if not row:
            continue
        items = sorted(row)
        best, best_l = math.inf, 0
        for l in range(len(C)):
            d = 0.0
            for j in items:
                d += (row[j] - C[l][j]) ** 2
            if d < best:
                best, best_l = d, l
        for j in items:
            count += 1
            avg += (abs(row[j] - C[best_l][j]) - avg) / count
    return avg


def one_sided_jacobi_svd(A, tol=1e-15, max_sweeps=80):
    """Hestenes one-sided Jacobi SVD: singular values in decreasing order."""
    X = np.array(A, dtype=np.float64, copy=True)
    if X.shape[0] < X.shape[1]:
        X = X.T.copy()
    n = X.shape[1]
    for _ in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = X[:, p] @ X[:, p]
                beta = X[:, q] @ X[:, q]
                gamma = X[:, p] @ X[:, q]
                if abs(gamma) <= tol * math.sqrt(alpha * beta) or gamma == 0:
                    continue
                rotated = True
                zeta = (beta - alpha) / (2 * gamma)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1 + zeta * zeta))
                c = 1 / math.sqrt(1 + t * t)
                s = c * t
                xp = X[:, p].copy()
                X[:, p] = c * xp - s * X[:, q]
                X[:, q] = s * xp + c * X[:, q]
        if not rotated:
            break
    return np.sort(np.linalg.norm(X, axis=0))[::-1]


def observed_loss(R, U, V, reg, wrt):
    """0.5 * sum over observed (u,i) of (r - u.v)^2 plus 0.5 * reg * ||wrt||^2."""
    loss = 0.0
    for u in range(R.n_users):
        idx, vals = R.row(u)
        for j, r in zip(idx, vals):
            loss += 0.5 * (r - U[u] @ V[j]) ** 2
    W = U if wrt == "U" else V
    return loss + 0.5 * reg * float(np.sum(W * W))
