import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from redlamp.data import (
    CsvSchema,
    DataError,
    LabeledSeries,
    choose_stride,
    load_csv,
    load_ucr,
    minmax_normalize,
    n_windows,
    split_validation,
    window,
)


def write_ucr(tmp_path, name, n):
    path = tmp_path / name
    path.write_text("\n".join(f"{np.sin(i / 7):.6f}" for i in range(n)) + "\n")
    return path


def test_load_ucr_filename_convention(tmp_path):
    s = load_ucr(write_ucr(tmp_path, "001_UCR_Anomaly_X_2500_5400_5600.txt", 10000))
    assert s.d == 1 and s.T == 10000
    assert s.train_end == 2500
    assert s.labels.sum() == 201
    assert np.flatnonzero(s.labels)[[0, -1]].tolist() == [5400, 5600]


def test_load_ucr_single_point_range(tmp_path):
    s = load_ucr(write_ucr(tmp_path, "X_3_7_7.txt", 20))
    assert s.labels.sum() == 1 and s.labels[7]


def test_load_ucr_bad_name(tmp_path):
    with pytest.raises(DataError, match="_<train_end>_<anom_start>_<anom_end>"):
        load_ucr(write_ucr(tmp_path, "series.txt", 10))


def test_load_ucr_non_numeric_line(tmp_path):
    path = tmp_path / "X_1_2_3.txt"
    path.write_text("1.0\n2.0\nabc\n4.0\n")
    with pytest.raises(DataError, match=":3:"):
        load_ucr(path)


def test_load_csv_features_only(tmp_path):
    rng = np.random.default_rng(0)
    path = tmp_path / "s.csv"
    data = rng.normal(size=(500, 3))
    np.savetxt(path, data, delimiter=",", header="a,b,c", comments="")
    s = load_csv(path)
    assert (s.d, s.T) == (3, 500)
    assert s.labels is None
    np.testing.assert_allclose(s.values, data.T)


def test_load_csv_zero_labels_and_schema_errors(tmp_path):
    path = tmp_path / "s.csv"
    path.write_text("a,b,label\n1,2,0\n3,4,0\n5,6,0\n")
    s = load_csv(path, CsvSchema(features=["a", "b"], label="label", train_end=2))
    assert s.labels is not None and not s.labels.any()
    assert s.train_end == 2
    with pytest.raises(DataError, match="train_end"):
        load_csv(path, CsvSchema(label="label", train_end=4))
    with pytest.raises(DataError, match="missing column"):
        load_csv(path, CsvSchema(features=["a", "zz"]))


def test_load_csv_ragged(tmp_path):
    path = tmp_path / "s.csv"
    path.write_text("a,b\n1,2\n3\n")
    with pytest.raises(DataError, match="expected 2 fields"):
        load_csv(path)


def test_minmax_examples():
    s = minmax_normalize(LabeledSeries(np.array([[2.0, 4.0, 6.0], [5.0, 5.0, 5.0]])))
    np.testing.assert_allclose(s.values, [[0, 0.5, 1], [0, 0, 0]])
    s = minmax_normalize(LabeledSeries(np.array([[0.0, 10.0], [1.0, 1.0]])))
    np.testing.assert_allclose(s.values, [[0, 1], [0, 0]])


def test_minmax_train_only_uses_prefix():
    s = LabeledSeries(np.array([[0.0, 2.0, 4.0]]), train_end=2)
    np.testing.assert_allclose(minmax_normalize(s, train_only=True).values, [[0, 1, 2]])


@given(arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 40)),
              elements=st.floats(-1e6, 1e6, allow_nan=False)))
def test_minmax_idempotent(values):
    once = minmax_normalize(LabeledSeries(values))
    twice = minmax_normalize(once)
    np.testing.assert_allclose(twice.values, once.values, atol=1e-12)
    assert once.values.min() >= 0 and once.values.max() <= 1


@pytest.mark.parametrize("T,size,stride,count", [(1000, 100, 1, 901), (1000, 100, 10, 91), (100, 100, 1, 1)])
def test_window_counts(T, size, stride, count):
    ds = window(np.arange(T, dtype=float), size, stride)
    assert len(ds) == count == n_windows(T, size, stride)


@settings(max_examples=50)
@given(st.integers(1, 3), st.integers(1, 60), st.integers(1, 60), st.integers(1, 7))
def test_window_reconstruction(d, T, size, stride):
    if size > T:
        with pytest.raises(DataError):
            window(np.zeros((d, T)), size, stride)
        return
    values = np.random.default_rng(T).normal(size=(d, T))
    ds = window(values, size, stride)
    assert np.all(np.diff(ds.end_indices) == stride)
    for w, e in zip(ds.windows, ds.end_indices):
        np.testing.assert_array_equal(w, values[:, e - size + 1 : e + 1])


def test_choose_stride_keeps_count_below_limit():
    assert choose_stride(5000, 100) == 1
    assert choose_stride(30000, 100) == 10
    assert choose_stride(2_000_000, 100) == 100


def test_split_validation():
    ds = window(np.arange(199, dtype=float), 100)
    train, val = split_validation(ds, 0.1, seed=3)
    assert (len(train), len(val)) == (90, 10)
    ends = np.concatenate([train.end_indices, val.end_indices])
    assert sorted(ends.tolist()) == ds.end_indices.tolist()
    again = split_validation(ds, 0.1, seed=3)[1]
    np.testing.assert_array_equal(again.end_indices, val.end_indices)

    small = window(np.arange(103, dtype=float), 100)
    assert [len(p) for p in split_validation(small, 0.5, 0)] == [2, 2]
    with pytest.raises(DataError):
        split_validation(window(np.arange(100, dtype=float), 100), 0.1)


def test_series_invariants():
    with pytest.raises(DataError):
        LabeledSeries(np.zeros((1, 5)), labels=np.zeros(4))
    with pytest.raises(DataError):
        LabeledSeries(np.zeros((1, 5)), train_end=6)
