import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tlnets.data import (DataError, RawSeries, SeriesScaler, ingest_csv, iterate_batches,
                         make_windows, normalize, sinusoid_series, split_bounds, window_count,
                         write_csv)

ETT_HEADER = "date,HUFL,HULL,MUFL,MULL,LUFL,LULL,OT"


def write(tmp_path, text, name="series.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_small_file(tmp_path):
    p = write(tmp_path, "date,a,b\n2020-01-01 00:00:00,1,2\n2020-01-01 01:00:00,3,4\n"
                        "2020-01-01 02:00:00,5,6.5\n")
    raw = ingest_csv(p)
    assert raw.values.shape == (3, 2)
    assert raw.columns == ["a", "b"]
    assert raw.values[2, 1] == 6.5


def test_ett_header_gives_seven_variates(tmp_path):
    rows = [ETT_HEADER] + [f"2016-07-01 {h:02d}:00:00," + ",".join(["1.5"] * 7) for h in range(4)]
    raw = ingest_csv(write(tmp_path, "\n".join(rows) + "\n"))
    assert raw.n_channels == 7
    assert raw.columns[-1] == "OT"


@pytest.mark.parametrize("cell", ["NaN", "nan", "", "abc", "inf"])
def test_bad_cell_named(tmp_path, cell):
    p = write(tmp_path, f"date,a,b\n2020-01-01,1,2\n2020-01-02,3,{cell}\n")
    with pytest.raises(DataError, match=r"row 2, col 'b'"):
        ingest_csv(p)


def test_non_monotone_timestamps(tmp_path):
    p = write(tmp_path, "date,a\n2020-01-01,1\n2020-01-03,2\n2020-01-02,3\n2020-01-04,4\n")
    with pytest.raises(DataError, match="data index 2"):
        ingest_csv(p)


def test_duplicate_timestamp_rejected(tmp_path):
    p = write(tmp_path, "date,a\n2020-01-01,1\n2020-01-01,2\n")
    with pytest.raises(DataError, match="data index 1"):
        ingest_csv(p)


def test_short_row_and_missing_file(tmp_path):
    with pytest.raises(DataError, match="row 1"):
        ingest_csv(write(tmp_path, "date,a,b\n2020-01-01,1\n"))
    with pytest.raises(DataError, match="nope.csv"):
        ingest_csv(tmp_path / "nope.csv")
    with pytest.raises(DataError, match="date column"):
        ingest_csv(write(tmp_path, "time,a\n2020-01-01,1\n"))


def test_csv_round_trip(tmp_path):
    raw = sinusoid_series(50)
    write_csv(raw, tmp_path / "s.csv")
    back = ingest_csv(tmp_path / "s.csv")
    assert back.timestamps == raw.timestamps
    assert np.array_equal(back.values, raw.values)


def test_hand_statistics():
    normed, scaler = normalize(np.array([[1.0], [2.0], [3.0], [100.0]]), train_stop=3)
    assert scaler.mean_[0] == 2.0
    assert scaler.scale_[0] == pytest.approx(np.sqrt(2.0 / 3.0), abs=1e-15)
    np.testing.assert_allclose(normed[:3, 0], [-np.sqrt(1.5), 0.0, np.sqrt(1.5)], atol=1e-15)
    assert normed[3, 0] == pytest.approx(98.0 / np.sqrt(2.0 / 3.0))


def test_constant_channel_uses_unit_std():
    x = np.column_stack([np.full(10, 4.0), np.arange(10.0)])
    with pytest.warns(RuntimeWarning, match="constant"):
        normed, scaler = normalize(x, 10)
    assert scaler.scale_[0] == 1.0
    assert np.all(normed[:, 0] == 0.0)


def test_empty_train_range():
    with pytest.raises(DataError):
        normalize(np.ones((5, 2)), 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 60), st.integers(1, 5))
def test_normalization_round_trip(seed, n, d):
    x = np.random.default_rng(seed).normal(3.0, 10.0, size=(n, d))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        normed, scaler = normalize(x, max(1, n // 2))
    assert np.max(np.abs(scaler.inverse_transform(normed) - x)) <= 1e-12 * max(1.0, np.max(np.abs(x)))


def test_single_split_window_count():
    ds = make_windows(np.arange(100.0)[:, None], 10, 5, ratios=(1,))
    assert list(ds.splits) == ["train"]
    assert len(ds["train"]) == 86 == window_count(100, 10, 5)


def test_seven_one_two_boundaries():
    assert split_bounds(100) == [(0, 70), (70, 80), (80, 100)]
    assert split_bounds(17420) == [(0, 12194), (12194, 13936), (13936, 17420)]


def test_first_pair_boundaries():
    x = np.arange(200.0)[:, None] * np.array([[1.0, -1.0]])
    ds = make_windows(x, 10, 5)
    inp, tgt = ds["train"].pair(0)
    raw_in, raw_tgt = ds.denormalize(inp), ds.denormalize(tgt)
    np.testing.assert_allclose(raw_in[0], np.arange(10), atol=1e-12)
    np.testing.assert_allclose(raw_tgt[0], np.arange(10, 15), atol=1e-12)
    assert inp.shape == (2, 10) and tgt.shape == (2, 5)


def test_split_too_short_names_minimum():
    with pytest.raises(DataError, match=r"'val'.*input_len \+ pred_len = 15"):
        make_windows(np.arange(100.0)[:, None], 10, 5)


def test_stats_from_train_only():
    x = np.concatenate([np.zeros(70), np.full(30, 1000.0)])[:, None] + np.arange(100.0)[:, None] * 1e-3
    ds = make_windows(x, 3, 2)
    assert abs(ds.mean[0] - np.mean(x[:70, 0])) <= 1e-12
    assert abs(ds.std[0] - np.std(x[:70, 0])) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(30, 400), st.integers(1, 12), st.integers(1, 12),
       st.lists(st.integers(1, 9), min_size=3, max_size=3))
def test_no_pair_crosses_a_split_boundary(n, t, tau, ratios):
    x = np.arange(float(n))[:, None]
    try:
        ds = make_windows(x, t, tau, tuple(ratios))
    except DataError:
        bounds = split_bounds(n, tuple(ratios))
        assert any(b - a < t + tau for a, b in bounds)
        return
    for (a, b), split in zip(ds.bounds, ds.splits.values()):
        assert len(split) == b - a - t - tau + 1
        xs, ys = split.arrays()
        rows_in = np.rint(ds.denormalize(xs)[:, 0]).astype(int)
        rows_out = np.rint(ds.denormalize(ys)[:, 0]).astype(int)
        assert rows_in.min() >= a and rows_out.max() < b
        assert np.all(rows_out[:, 0] == rows_in[:, -1] + 1)


def test_windows_match_source_slices(rng):
    x = rng.normal(size=(300, 3))
    ds = make_windows(x, 12, 6)
    normed, _ = normalize(x, ds.bounds[0][1])
    for name, (a, _) in zip(ds.splits, ds.bounds):
        split = ds[name]
        for i in rng.integers(0, len(split), 5):
            xi, yi = split.pair(int(i))
            np.testing.assert_array_equal(xi, normed[a + i: a + i + 12].T)
            np.testing.assert_array_equal(yi, normed[a + i + 12: a + i + 18].T)
        bx, by = split.batch([int(i)])
        np.testing.assert_array_equal(bx[0], split.pair(int(i))[0])


def test_shuffled_batches_deterministic(rng):
    ds = make_windows(rng.normal(size=(300, 2)), 12, 6)
    run = lambda: [b[0] for b in iterate_batches(ds["train"], 16, np.random.default_rng(5))]
    a, b = run(), run()
    assert len(a) == len(b) and all(np.array_equal(p, q) for p, q in zip(a, b))
    ordered = list(iterate_batches(ds["train"], 16))
    np.testing.assert_array_equal(ordered[0][0][0], ds["train"].pair(0)[0])


def test_series_is_read_only(rng):
    ds = make_windows(rng.normal(size=(300, 2)), 12, 6)
    with pytest.raises(ValueError):
        ds["train"].segment[0, 0] = 1.0


def test_raw_series_validation():
    with pytest.raises(DataError):
        RawSeries(["a"], np.ones((2, 1)), ["x"])


def test_scaler_is_a_standard_scaler():
    s = SeriesScaler().fit(np.array([[1.0], [3.0]]))
    assert s.get_params()["with_std"] is True
    assert s.scale_[0] == 1.0
