import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vflsim import data
from vflsim.errors import ConfigError, ParseError, SchemaError, ValidationError


def blobs(**kw):
    base = dict(n=400, d=6, num_classes=3, cluster_separation=4.0, noise_std=1.0, seed=0)
    base.update(kw)
    return data.gen_gaussian_blobs(data.SyntheticSpec(**base))


def test_zero_noise_collapses_classes():
    ds = blobs(noise_std=0.0)
    for c in range(3):
        rows = ds.X[ds.y == c]
        np.testing.assert_array_equal(rows, np.broadcast_to(rows[0], rows.shape))


@pytest.mark.parametrize("c,d", [(2, 1), (3, 2), (4, 16), (10, 12)])
def test_centers_respect_separation(c, d):
    ds = blobs(num_classes=c, d=d, n=10 * c, noise_std=0.0, cluster_separation=2.5)
    centers = np.array([ds.X[ds.y == k][0] for k in range(c)])
    for a, b in itertools.combinations(range(c), 2):
        assert np.linalg.norm(centers[a] - centers[b]) >= 2.5 - 1e-9


def test_wide_separation_is_centroid_separable():
    ds = blobs(n=2000, d=16, num_classes=4, cluster_separation=10.0, seed=3)
    tr, te = data.train_test_split(ds, 0.25, 0)
    centroids = np.array([tr.X[tr.y == c].mean(axis=0) for c in range(4)])
    pred = np.argmin(((te.X[:, None, :] - centroids[None]) ** 2).sum(-1), axis=1)
    assert (pred == te.y).mean() >= 0.99


def test_blobs_deterministic_and_balanced():
    a, b = blobs(seed=5), blobs(seed=5)
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.y, b.y)
    counts = np.bincount(a.y)
    assert counts.max() - counts.min() <= 1
    assert not np.array_equal(a.X, blobs(seed=6).X)


def test_blobs_errors():
    with pytest.raises(ConfigError):
        blobs(n=2, num_classes=3)
    with pytest.raises(ConfigError):
        blobs(d=2, num_classes=5)


# ---------------------------------------------------------------------------
# csv


def test_csv_label_encoding_by_first_appearance(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("a,b,label\n1,2,yes\n3,4,no\n")
    ds = data.load_csv(p, "label")
    assert ds.num_classes == 2
    assert ds.y.tolist() == [0, 1]
    assert ds.class_names == ["yes", "no"]
    np.testing.assert_array_equal(ds.X, [[1, 2], [3, 4]])


def test_csv_header_only_is_empty_error(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("a,b,label\n")
    with pytest.raises(ValidationError, match="no data rows"):
        data.load_csv(p, "label")


def test_csv_parse_error_coordinates(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("a,b,label\n1,2,x\n3,oops,y\n")
    with pytest.raises(ParseError, match="row 3, column 1"):
        data.load_csv(p, "label")


def test_csv_missing_label_column(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(SchemaError):
        data.load_csv(p, "label")


def test_csv_round_trip(tmp_path):
    ds = blobs(n=50, seed=11)
    p = tmp_path / "r.csv"
    data.save_csv(ds, p)
    back = data.load_csv(p, "label")
    np.testing.assert_allclose(back.X, ds.X, rtol=0, atol=1e-12)
    # labels come back in first-appearance order; the partition is what must survive
    mapping = {}
    for a, b in zip(ds.y, back.y):
        assert mapping.setdefault(a, b) == b


def test_csv_headerless_with_index(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("1,2,b\n3,4,a\n5,6,b\n")
    ds = data.load_csv(p, 2, has_header=False)
    assert ds.y.tolist() == [0, 1, 0]


# ---------------------------------------------------------------------------
# splits and normalization


def test_vertical_split_examples():
    assert data.vertical_split(4, 2) == [[0, 1], [2, 3]]
    assert data.vertical_split(5, 2) == [[0, 1, 2], [3, 4]]
    assert data.vertical_split(4, 2, [[0, 2], [1, 3]]) == [[0, 2], [1, 3]]


@pytest.mark.parametrize("bad", [[[0, 1], [1, 2, 3]], [[0, 1], [2]], [[0, 1, 2, 3], []]])
def test_vertical_split_explicit_validation(bad):
    with pytest.raises(ValidationError):
        data.vertical_split(4, 2, bad)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 40).flatmap(lambda d: st.tuples(st.just(d), st.integers(1, d))))
def test_vertical_split_is_even_contiguous_cover(case):
    d, k = case
    cols = data.vertical_split(d, k)
    assert [j for c in cols for j in c] == list(range(d))
    widths = [len(c) for c in cols]
    assert set(widths) <= {d // k, -(-d // k)}
    assert widths == sorted(widths, reverse=True)


def test_normalize_examples():
    X = np.column_stack([np.arange(10.0), np.full(10, 3.0), np.arange(10.0) ** 2])
    ds = data.Dataset(X, np.zeros(10, dtype=int), 1)
    out = data.normalize(ds)
    np.testing.assert_array_equal(out.X[:, 1], 0)
    for j in (0, 2):
        assert abs(out.X[:, j].mean()) <= 1e-9
        assert abs(out.X[:, j].std() - 1) <= 1e-9
    np.testing.assert_allclose(data.normalize(out).X, out.X, atol=1e-9)


def test_normalize_uses_supplied_stats():
    tr = data.Dataset(np.array([[0.0], [2.0]]), np.array([0, 0]), 1)
    te = data.Dataset(np.array([[4.0]]), np.array([0]), 1)
    out = data.normalize(te, data.fit_normalizer(tr))
    assert out.X[0, 0] == pytest.approx(3.0)


def test_split_balanced_binary():
    ds = data.Dataset(np.arange(10.0)[:, None], np.array([0, 1] * 5), 2)
    tr, te = data.train_test_split(ds, 0.5, 0)
    assert tr.n == te.n == 5
    assert sorted(np.bincount(te.y).tolist()) == [2, 3]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 0.95))
def test_split_disjoint_exhaustive_deterministic(seed, frac):
    ds = blobs(n=120, seed=seed % 7)
    ds = data.Dataset(np.column_stack([np.arange(ds.n), ds.X]), ds.y, ds.num_classes)
    tr, te = data.train_test_split(ds, frac, seed)
    ids = np.concatenate([tr.X[:, 0], te.X[:, 0]])
    assert sorted(ids.tolist()) == list(range(120))
    tr2, te2 = data.train_test_split(ds, frac, seed)
    np.testing.assert_array_equal(te.X, te2.X)
    for c in range(ds.num_classes):
        assert (tr.y == c).any() and (te.y == c).any()


def test_split_rejects_singleton_class():
    ds = data.Dataset(np.zeros((3, 1)), np.array([0, 0, 1]), 2)
    with pytest.raises(ValidationError):
        data.train_test_split(ds, 0.5, 0)


def test_dataset_validation():
    with pytest.raises(ValidationError):
        data.Dataset(np.array([[np.nan]]), np.array([0]), 1)
    with pytest.raises(ValidationError):
        data.Dataset(np.zeros((2, 1)), np.array([0, 2]), 2)
