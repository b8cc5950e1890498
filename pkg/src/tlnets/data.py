"""CSV ingestion, train-only normalization and sliding-window datasets."""
import csv
import math
import warnings
from dataclasses import dataclass, field
from datetime import datetime
from fractions import Fraction
from typing import Dict, List, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.preprocessing import StandardScaler

__all__ = [
    "DataError", "RawSeries", "ingest_csv", "write_csv", "split_bounds", "window_count",
    "SeriesScaler", "normalize", "SplitWindows", "WindowedDataset", "make_windows",
    "iterate_batches", "sinusoid_series", "SPLITS",
]

SPLITS = ("train", "val", "test")
DEFAULT_RATIOS = (7, 1, 2)


class DataError(ValueError):
    pass


@dataclass
class RawSeries:
    timestamps: List[str]
    values: np.ndarray
    columns: List[str]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise DataError(f"values must be (n_steps, d), got shape {self.values.shape}")
        if len(self.timestamps) != self.values.shape[0]:
            raise DataError("timestamp count does not match row count")
        if len(self.columns) != self.values.shape[1]:
            raise DataError("column names do not match the value columns")

    @property
    def n_steps(self):
        return self.values.shape[0]

    @property
    def n_channels(self):
        return self.values.shape[1]


def _parse_time(text):
    try:
        return datetime.fromisoformat(text.strip())
    except ValueError:
        return None


def ingest_csv(path, date_column="date"):
    """Read a comma-separated series whose ``date_column`` holds timestamps.

    Every other column must be a finite float. Rows are numbered from 1 for
    the first data line (the header is row 0) in error messages.
    """
    try:
        handle = open(path, newline="", encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"dataset file not found: {path}") from None
    with handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if not header:
            raise DataError(f"{path}: missing header row")
        header = [h.strip() for h in header]
        if date_column not in header:
            raise DataError(f"{path}: no date column {date_column!r} in header {header}")
        date_idx = header.index(date_column)
        columns = [h for i, h in enumerate(header) if i != date_idx]
        if not columns:
            raise DataError(f"{path}: no value columns")
        stamps, rows = [], []
        prev = None
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {row_no} has {len(row)} fields, expected {len(header)}")
            when = _parse_time(row[date_idx])
            if when is None:
                raise DataError(f"{path}: unparsable timestamp at (row {row_no}, col {date_column!r})")
            if prev is not None and when <= prev:
                raise DataError(
                    f"{path}: timestamps not strictly increasing at data index {row_no - 1}")
            prev = when
            vals = []
            for i, cell in enumerate(row):
                if i == date_idx:
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    v = math.nan
                if not math.isfinite(v):
                    raise DataError(
                        f"{path}: bad value {cell!r} at (row {row_no}, col {header[i]!r})")
                vals.append(v)
            stamps.append(row[date_idx].strip())
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return RawSeries(stamps, np.array(rows), columns)


def write_csv(series, path, date_column="date"):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow([date_column] + list(series.columns))
        for stamp, row in zip(series.timestamps, series.values):
            w.writerow([stamp] + [repr(float(v)) for v in row])


def split_bounds(n, ratios=DEFAULT_RATIOS):
    """Chronological ``(start, stop)`` per split: floor of each leading share, remainder last."""
    shares = [Fraction(str(r)) for r in ratios]
    if not shares or any(s < 0 for s in shares) or sum(shares) == 0:
        raise DataError(f"invalid split ratios {ratios}")
    total = sum(shares)
    bounds, start = [], 0
    for s in shares[:-1]:
        stop = start + math.floor(n * s / total)
        bounds.append((start, stop))
        start = stop
    bounds.append((start, n))
    return bounds


def window_count(n_rows, input_len, pred_len):
    return max(0, n_rows - input_len - pred_len + 1)


class SeriesScaler(StandardScaler):
    """Per-channel z-score with population std; constant channels keep std 1."""

    def fit(self, X, y=None, sample_weight=None):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[0] == 0:
            raise DataError(f"cannot fit normalization on an empty range (shape {X.shape})")
        super().fit(X, y, sample_weight)
        flat = np.flatnonzero(X.std(axis=0) == 0)
        if flat.size:
            warnings.warn(f"channels {flat.tolist()} are constant on the fit range; using std 1",
                          RuntimeWarning, stacklevel=2)
        self.scale_[flat] = 1.0
        return self


def normalize(raw, train_stop):
    """Normalize the whole series with statistics from rows ``[0, train_stop)``."""
    values = raw.values if isinstance(raw, RawSeries) else np.asarray(raw, dtype=float)
    if train_stop <= 0:
        raise DataError("empty train range for normalization")
    scaler = SeriesScaler().fit(values[:train_stop])
    return scaler.transform(values), scaler


@dataclass
class SplitWindows:
    """Stride-1 windows over one contiguous segment of a ``(n, d)`` series."""

    name: str
    segment: np.ndarray
    input_len: int
    pred_len: int
    start: int = 0

    def __post_init__(self):
        self.segment = np.ascontiguousarray(self.segment, dtype=float)
        self.segment.setflags(write=False)
        # (d, n) time-major view so windows slice straight into (d, T)
        view = sliding_window_view(self.segment.T, self.input_len + self.pred_len, axis=1)
        self._windows = view[:, : len(self)]

    def __len__(self):
        return window_count(self.segment.shape[0], self.input_len, self.pred_len)

    @property
    def channels(self):
        return self.segment.shape[1]

    def pair(self, i):
        """``(input (d, T), target (d, tau))`` for window ``i``."""
        if not 0 <= i < len(self):
            raise IndexError(f"window {i} out of range for {len(self)} windows")
        t = self.input_len
        return (self.segment[i: i + t].T, self.segment[i + t: i + t + self.pred_len].T)

    def batch(self, idx):
        """Stacked copies ``(B, d, T)`` and ``(B, d, tau)`` for window indices ``idx``."""
        w = self._windows[:, np.asarray(idx)]
        w = np.ascontiguousarray(np.swapaxes(w, 0, 1))
        return w[..., : self.input_len], w[..., self.input_len:]

    def arrays(self):
        return self.batch(np.arange(len(self)))


@dataclass
class WindowedDataset:
    splits: Dict[str, SplitWindows]
    input_len: int
    pred_len: int
    mean: np.ndarray
    std: np.ndarray
    bounds: List[Tuple[int, int]] = field(default_factory=list)
    columns: List[str] = field(default_factory=list)

    @property
    def channels(self):
        return len(self.mean)

    def __getitem__(self, name):
        return self.splits[name]

    def denormalize(self, x):
        """Map ``(..., d, t)`` arrays back to the original scale."""
        return np.asarray(x) * self.std[:, None] + self.mean[:, None]

    def metadata(self):
        return {
            "normalization": "per-channel z-score, population std, train split statistics",
            "bounds": [list(b) for b in self.bounds],
            "windows": {k: len(v) for k, v in self.splits.items()},
        }


def make_windows(series, input_len, pred_len, ratios=DEFAULT_RATIOS, names=SPLITS):
    """Normalize with train statistics and slice every split into its own windows.

    ``series`` is a :class:`RawSeries` or an ``(n, d)`` array. With a single
    ratio the whole series is one split called ``train``.
    """
    if input_len < 1 or pred_len < 1:
        raise DataError(f"input_len and pred_len must be >= 1, got {input_len}, {pred_len}")
    columns = list(series.columns) if isinstance(series, RawSeries) else []
    values = series.values if isinstance(series, RawSeries) else np.asarray(series, dtype=float)
    if values.ndim != 2:
        raise DataError(f"series must be (n_steps, d), got shape {values.shape}")
    bounds = split_bounds(values.shape[0], ratios)
    names = tuple(names)[: len(bounds)]
    need = input_len + pred_len
    for name, (a, b) in zip(names, bounds):
        if b - a < need:
            raise DataError(
                f"split {name!r} has {b - a} rows but needs at least "
                f"input_len + pred_len = {need}")
    normed, scaler = normalize(values, bounds[0][1])
    splits = {
        name: SplitWindows(name, normed[a:b], input_len, pred_len, start=a)
        for name, (a, b) in zip(names, bounds)
    }
    return WindowedDataset(splits, input_len, pred_len, scaler.mean_.copy(),
                           scaler.scale_.copy(), bounds, columns)


def iterate_batches(split, batch_size, rng=None):
    """Yield ``(x, y)`` mini-batches; ``rng`` shuffles, ``None`` keeps order."""
    n = len(split)
    order = np.arange(n) if rng is None else rng.permutation(n)
    for start in range(0, n, batch_size):
        yield split.batch(order[start: start + batch_size])


def sinusoid_series(n_steps, periods=((24, 48), (16, 24)), amplitudes=None, phases=None,
                    start="2016-07-01 00:00:00"):
    """Noiseless sum-of-sinusoids ``RawSeries``, one channel per entry of ``periods``."""
    t = np.arange(n_steps, dtype=float)
    cols = []
    for c, ps in enumerate(periods):
        amps = amplitudes[c] if amplitudes is not None else [1.0] * len(ps)
        phs = phases[c] if phases is not None else [0.3 * (c + 1) * (k + 1) for k in range(len(ps))]
        cols.append(sum(a * np.sin(2 * np.pi * t / p + ph) for a, p, ph in zip(amps, ps, phs)))
    base = np.datetime64(start.replace(" ", "T"))
    stamps = [str(base + np.timedelta64(i, "h")).replace("T", " ") for i in range(n_steps)]
    return RawSeries(stamps, np.stack(cols, axis=1), [f"x{c}" for c in range(len(periods))])
