"""Stored-number bookkeeping for original data, core users and ACU factors.

Counting rules (every index, pointer or value counts as one stored number):

* a sparse matrix in row-compressed form costs ``2 * nnz + rows + 1``
  (one value and one column index per rating, plus the row pointer);
* core users are kept in that same sparse format;
* ACU factors retaining ``f`` latent factors in total cost ``f * n_items``
  for the item vectors, plus ``s * f`` if the user vectors are stored too
  (the block-diagonal user factor matrix kept densely).
"""

from __future__ import annotations

# MovieLens 20M: users, distinct rated movies, ratings
ML20M = {"n_users": 138493, "n_items": 26744, "nnz": 20000263}


def sparse_cost(nnz, n_rows):
    return 2 * nnz + n_rows + 1


def acu_cost(s, n_items, n_factors, with_users=True):
    items = n_factors * n_items
    return items + (s * n_factors if with_users else 0)


def reduction(cost, baseline):
    return 1.0 - cost / baseline


def memory_report(n_users, n_items, nnz, n_core, s, n_factors, core_nnz=None):
    """Costs and reductions relative to the full sparse dataset.

    ``core_nnz`` is the actual rating count of the selected core users;
    when unknown it is estimated from the average ratings per user.
    """
    estimated = core_nnz is None
    if estimated:
        core_nnz = nnz * n_core / n_users
    base = sparse_cost(nnz, n_users)
    core = sparse_cost(core_nnz, n_core)
    acu_full = acu_cost(s, n_items, n_factors, with_users=True)
    acu_items = acu_cost(s, n_items, n_factors, with_users=False)
    return {
        "inputs": {"n_users": n_users, "n_items": n_items, "nnz": nnz, "n_core": n_core,
                   "s": s, "n_factors": n_factors, "core_nnz": core_nnz,
                   "core_nnz_estimated": estimated},
        "stored_numbers": {"original": base, "core_users": core,
                           "acu_user_and_item_vectors": acu_full,
                           "acu_item_vectors": acu_items},
        "reduction": {"core_users": reduction(core, base),
                      "acu_user_and_item_vectors": reduction(acu_full, base),
                      "acu_item_vectors": reduction(acu_items, base)},
    }


def paper_scale_report():
    """ml-20m with 27000 core users and 13000 ACUs keeping 5% (650) of their factors."""
    return memory_report(n_core=27000, s=13000, n_factors=650, **ML20M)
