import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from acudistill.errors import DataError
from acudistill.evaluation import (fit_user_factors, item_vectors_testing_error,
                                   sparse_means_error, subject_item_factors, sv_profile)
from acudistill.ratings import SparseRatings, mean_abs_entries, split_entries
from conftest import random_sparse


def low_rank_problem(seed, m=15, n=12):
    """Rank-2 ratings ``U V^T`` with orthonormal ``U`` and orthogonal ``V`` columns.

    The SVD of the matrix then returns exactly these factors (up to sign),
    so unit-column user factors can reproduce every entry.
    """
    rng = np.random.default_rng(seed)
    U, _ = np.linalg.qr(rng.normal(size=(m, 2)))
    Q, _ = np.linalg.qr(rng.normal(size=(n, 2)))
    full = U @ (Q * [3.0, 2.0]).T
    return SparseRatings.from_dense(full, mask=np.ones_like(full, dtype=bool))


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**31), rows=st.integers(1, 10), cents=st.integers(1, 5),
       n=st.integers(1, 6), ties=st.booleans())
def test_sme_matches_oracle(seed, rows, cents, n, ties):
    rng = np.random.default_rng(seed)
    R = random_sparse(rng, rows, n, density=0.5, integer=ties)
    if R.nnz == 0:
        return
    C = rng.integers(-2, 3, size=(cents, n)).astype(float) if ties else rng.normal(size=(cents, n))
    assert sparse_means_error(R, C) == oracles.sparse_means_error(oracles.rows_as_dicts(R), C)


def test_sme_frozen():
    R = SparseRatings.from_rows([{0: 1.0, 1: 1.0}, {2: -2.0}], 3)
    C = np.array([[0.0, 0.0, 0.0], [1.0, 2.0, -1.0]])
    # user 0: d=(2, 1) -> centroid 1, errors 0 and 1; user 1: d=(4, 1) -> centroid 1, error 1
    assert sparse_means_error(R, C) == pytest.approx(2.0 / 3.0, rel=1e-15)


def test_sme_zero_centroid_is_mean_abs(tiny):
    assert sparse_means_error(tiny, np.zeros((1, tiny.n_items))) == mean_abs_entries(tiny)
    with pytest.raises(DataError):
        sparse_means_error(tiny, np.zeros((1, tiny.n_items + 1)))


def test_subject_factors_fold_singular_values():
    A = np.diag([4.0, 3.0, 2.0, 1.0])
    V, mass = subject_item_factors(A, 2, 2)
    # blocks [[4,0,0,0],[0,3,0,0]] and [[0,0,2,0],[0,0,0,1]] keep one triplet each
    np.testing.assert_allclose(np.abs(V), [[4, 0], [0, 0], [0, 2], [0, 0]], atol=1e-14)
    assert mass == pytest.approx(6.0 / 10.0)
    with pytest.raises(DataError):
        subject_item_factors(A, 3, 2)
    with pytest.raises(DataError):
        subject_item_factors(A, 2, 6)


def test_realizable_case_reaches_zero_probe_error():
    R_test = low_rank_problem(0)
    rep = item_vectors_testing_error(R_test, R_test, 1, 2, beta=0.05, train_stop=1e-9,
                                     runs=2, users_per_run=15, seed=4, max_iters=5000)
    assert rep.all_converged
    assert rep.probe_mae <= 1e-6


def test_zero_factors_predict_zero():
    R = random_sparse(np.random.default_rng(3), 30, 10, density=0.7)
    rep = item_vectors_testing_error(R, np.zeros((4, 10)), 2, 0, runs=3, users_per_run=10,
                                     seed=9)
    for run in rep.per_run:
        users = np.sort(np.random.default_rng(run.seed).choice(
            np.flatnonzero(R.row_counts() >= 5), size=10, replace=False))
        assert run.n_users == users.size
    rng = np.random.default_rng([9, 0])
    users = np.sort(rng.choice(np.flatnonzero(R.row_counts() >= 5), size=10, replace=False))
    probe = split_entries(R.select_rows(users), 0.8, rng).probe
    assert abs(rep.per_run[0].probe_mae - mean_abs_entries(probe)) <= 1e-12
    assert rep.n_factors_used == 0


def test_fit_never_increases_train_mae():
    R = random_sparse(np.random.default_rng(5), 25, 15, density=0.6)
    V, _ = subject_item_factors(R.to_dense()[:10], 2, 10)
    _, info = fit_user_factors(R, V, beta=5.0, gamma=0.0, train_stop=0.0,
                               rng=np.random.default_rng(0), max_iters=100)
    curve = np.array(info["curve"])
    assert np.all(np.diff(curve) <= 0)
    assert info["final_beta"] < 5.0 and not info["converged"]


def test_ivte_is_reproducible_and_flags_unconverged():
    R = random_sparse(np.random.default_rng(6), 40, 12, density=0.6)
    subject = R.to_dense()[:8]
    kw = dict(zeta=2, n_factors=4, beta=0.01, train_stop=0.0, runs=2, users_per_run=10,
              seed=1, max_iters=20)
    a = item_vectors_testing_error(R, subject, **kw)
    b = item_vectors_testing_error(R, subject, **kw)
    assert a.to_json() == b.to_json()
    assert a.unconverged_runs == 2 and not a.all_converged
    assert a.seeds == [[1, 0], [1, 1]]


def test_ivte_excludes_sparse_users():
    R = SparseRatings.from_rows([{0: 1.0}] * 3, 4)
    with pytest.raises(DataError, match=">= 5"):
        item_vectors_testing_error(R, np.zeros((2, 4)), 1, 1)


def test_sv_profile_permutes_values_on_same_pattern():
    R = SparseRatings.from_rows([{0: 3.0, 1: 0.0}, {1: 4.0}], 2)
    prof = sv_profile(R, seed=0, permutation=[2, 0, 1])
    # shuffled matrix: [[4, 3], [0, 0]] -> singular values (5, 0)
    np.testing.assert_allclose(prof.random, [5.0, 0.0], atol=1e-14)
    np.testing.assert_allclose(prof.subject, [4.0, 3.0], atol=1e-14)
    np.testing.assert_allclose(prof.difference, [1.0, 3.0], atol=1e-14)
    lines = prof.to_csv("difference", 2).splitlines()
    assert lines[0] == "order_percent,value" and lines[1].startswith("50.0,")


def test_sv_profile_seeded():
    R = random_sparse(np.random.default_rng(2), 10, 8)
    a, b = sv_profile(R, 5), sv_profile(R, 5)
    np.testing.assert_array_equal(a.random, b.random)
    assert sv_profile(R, 5, top_k=3).subject.shape == (3,)
