import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from acudistill.errors import DataError, ParseError
from acudistill.ratings import (PreprocessTransform, SparseRatings, load_movielens,
                                mean_abs_entries, preprocess, split_entries, split_users)
from conftest import random_sparse


def write(tmp_path, text):
    p = tmp_path / "ratings.csv"
    p.write_text(text)
    return p


def test_from_triplets_sorts_and_keeps_last_duplicate():
    R = SparseRatings.from_triplets([1, 0, 1, 1], [2, 1, 0, 2], [1.0, 2.0, 3.0, 4.0], 2, 3)
    assert R.indptr.tolist() == [0, 1, 3]
    assert R.indices.tolist() == [1, 0, 2]
    assert R.data.tolist() == [2.0, 3.0, 4.0]


def test_stored_zero_is_observed():
    R = SparseRatings.from_dense(np.array([[0.0, 1.0], [2.0, 0.0]]),
                                 mask=np.array([[True, True], [True, False]]))
    assert R.nnz == 3
    assert R.row(0)[1].tolist() == [0.0, 1.0]


def test_arrays_are_read_only():
    R = SparseRatings.from_triplets([0], [0], [1.0], 1, 1)
    with pytest.raises(ValueError):
        R.data[0] = 2.0


@pytest.mark.parametrize("kwargs", [
    dict(n_users=1, n_items=2, indptr=[0, 2], indices=[1, 0], data=[1.0, 2.0]),
    dict(n_users=1, n_items=2, indptr=[0, 1], indices=[2], data=[1.0]),
    dict(n_users=1, n_items=2, indptr=[0, 1], indices=[0], data=[np.nan]),
    dict(n_users=2, n_items=2, indptr=[0, 1], indices=[0], data=[1.0]),
])
def test_invalid_structure_rejected(kwargs):
    with pytest.raises(DataError):
        SparseRatings(**{k: (np.asarray(v) if isinstance(v, list) else v)
                         for k, v in kwargs.items()})


def test_load_movielens_reindexes_by_ascending_id(tmp_path):
    p = write(tmp_path, "userId,movieId,rating,timestamp\n7,30,4.0,1\n3,10,2.5,2\n7,10,5.0,3\n")
    R, users, items = load_movielens(p)
    assert users == {3: 0, 7: 1} and items == {10: 0, 30: 1}
    assert R.to_dense().tolist() == [[2.5, 0.0], [5.0, 4.0]]


@pytest.mark.parametrize("body, where", [
    ("", "empty file"),
    ("user,movie,rating\n1,1,1\n", ":1:"),
    ("userId,movieId,rating,timestamp\n1,1,4.0,0\n1,x,3.0,0\n", ":3:"),
    ("userId,movieId,rating,timestamp\n1,1,7.0,0\n", ":2: rating 7.0"),
    ("userId,movieId,rating,timestamp\n1,1\n", ":2: expected"),
    ("userId,movieId,rating,timestamp\n", "no ratings"),
])
def test_load_movielens_errors_name_the_line(tmp_path, body, where):
    with pytest.raises(ParseError, match=where):
        load_movielens(write(tmp_path, body))


def test_preprocess_frozen_values():
    R = SparseRatings.from_rows([{0: 1.0, 1: 3.0}, {1: 4.0, 2: 4.0, 3: 1.0}], 4)
    Rn, t = preprocess(R)
    # centered: [-1, 1, 1, 1, -2]; population std = sqrt(8/5)
    s = np.sqrt(8 / 5)
    np.testing.assert_allclose(t.row_means, [2.0, 3.0])
    assert t.global_scale == pytest.approx(s, rel=1e-15)
    np.testing.assert_allclose(Rn.data, np.array([-1, 1, 1, 1, -2]) / s, rtol=1e-15)


def test_preprocess_round_trip_and_json():
    R = random_sparse(np.random.default_rng(0), 20, 15)
    Rn, t = preprocess(R)
    np.testing.assert_allclose(t.invert(Rn).data, R.data, atol=1e-12)
    assert PreprocessTransform.from_json(json.loads(json.dumps(t.to_json()))) == t


def test_preprocess_rejects_constant_data():
    with pytest.raises(DataError):
        preprocess(SparseRatings.from_rows([{0: 3.0}, {1: 4.0}], 2))


def test_split_users_is_a_seeded_partition(tiny):
    tr, te, tri, tei = split_users(tiny, 0.3, seed=5)
    assert sorted(np.concatenate([tri, tei]).tolist()) == list(range(tiny.n_users))
    assert te.n_users == 3 and tr.n_users == 7
    assert tr == tiny.select_rows(tri)
    again = split_users(tiny, 0.3, seed=5)
    assert np.array_equal(again[3], tei)


def test_split_users_fractions_nest():
    # a larger test fraction extends the same shuffled prefix
    R = random_sparse(np.random.default_rng(1), 100, 5, density=0.8)
    _, _, _, small = split_users(R, 0.1, 9)
    _, _, _, large = split_users(R, 0.29, 9)
    assert small.size == 10 and large.size == 29
    assert set(small) <= set(large)


def test_split_users_keeps_both_sides_nonempty():
    R = random_sparse(np.random.default_rng(2), 3, 4, density=1.0)
    tr, te, _, _ = split_users(R, 0.01, 0)
    assert (tr.n_users, te.n_users) == (2, 1)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), frac=st.floats(0.05, 0.95))
def test_split_entries_partitions_entries(seed, frac):
    R = random_sparse(np.random.default_rng(seed % 1000), 8, 9)
    sp = split_entries(R, frac, seed)
    assert sp.train.nnz == int(np.floor(frac * R.nnz + 1e-9))
    assert sp.train.nnz + sp.probe.nnz == R.nnz
    merged = sp.train.to_dense() + sp.probe.to_dense()
    np.testing.assert_array_equal(merged, R.to_dense())
    assert not (sp.train.pattern().multiply(sp.probe.pattern())).nnz


def test_mean_abs_entries():
    R = SparseRatings.from_rows([{0: -1.5}, {0: 0.0, 1: 0.5}], 2)
    assert mean_abs_entries(R) == pytest.approx(2.0 / 3.0)
    with pytest.raises(DataError):
        mean_abs_entries(SparseRatings.from_rows([{}], 2))
