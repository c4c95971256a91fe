"""Series ingestion, min-max normalization, sliding windows and validation splits.

Timesteps are 0-based throughout. A window "ending at" index ``e`` covers
``values[:, e - size + 1 : e + 1]``.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np


class DataError(ValueError):
    """Malformed input file or an invalid series/window request."""


@dataclass(frozen=True)
class LabeledSeries:
    values: np.ndarray  # (d, T), feature-major
    labels: np.ndarray | None = None  # (T,) bool
    train_end: int = 0
    name: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[None, :]
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise DataError(f"values must be a non-empty d x T matrix, got shape {values.shape}")
        object.__setattr__(self, "values", values)
        if self.labels is not None:
            labels = np.asarray(self.labels).astype(bool)
            if labels.shape != (values.shape[1],):
                raise DataError(f"labels must have length T={values.shape[1]}, got {labels.shape}")
            object.__setattr__(self, "labels", labels)
        if not 0 <= self.train_end <= values.shape[1]:
            raise DataError(f"train_end={self.train_end} outside [0, {values.shape[1]}]")

    @property
    def d(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> int:
        return self.values.shape[1]

    @property
    def train_values(self) -> np.ndarray:
        return self.values[:, : self.train_end]

    @property
    def test_values(self) -> np.ndarray:
        return self.values[:, self.train_end :]

    @property
    def test_labels(self) -> np.ndarray | None:
        return None if self.labels is None else self.labels[self.train_end :]


@dataclass(frozen=True)
class WindowedDataset:
    windows: np.ndarray  # (N, d, size)
    end_indices: np.ndarray  # (N,)
    window_size: int
    stride: int
    # marks windows appended by the contamination harness
    injected: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.windows.ndim != 3 or self.windows.shape[2] != self.window_size:
            raise DataError(f"windows must be (N, d, {self.window_size}), got {self.windows.shape}")
        if len(self.end_indices) != len(self.windows):
            raise DataError("end_indices and windows differ in length")

    def __len__(self) -> int:
        return len(self.windows)

    @property
    def d(self) -> int:
        return self.windows.shape[1]

    def subset(self, idx) -> WindowedDataset:
        idx = np.asarray(idx, dtype=np.int64)
        inj = None if self.injected is None else self.injected[idx]
        return replace(self, windows=self.windows[idx], end_indices=self.end_indices[idx], injected=inj)


_UCR_NAME = re.compile(r"_(\d+)_(\d+)_(\d+)$")


def load_ucr(path: str | Path) -> LabeledSeries:
    """Read a UCR Anomaly Archive file, e.g. ``001_UCR_Anomaly_X_2500_5400_5600.txt``.

    The trailing three integers are ``train_end``, ``anom_start`` and
    ``anom_end``; the anomaly range is inclusive on both ends.
    """
    path = Path(path)
    m = _UCR_NAME.search(path.stem)
    if m is None:
        raise DataError(
            f"{path.name}: expected filename ending in '_<train_end>_<anom_start>_<anom_end>'"
        )
    train_end, start, end = (int(g) for g in m.groups())
    vals = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s:
                continue
            try:
                vals.extend(float(tok) for tok in s.split())
            except ValueError:
                raise DataError(f"{path.name}:{lineno}: non-numeric value {s!r}") from None
    values = np.asarray(vals)
    T = len(values)
    if not (0 <= start <= end < T):
        raise DataError(f"{path.name}: anomaly range [{start}, {end}] outside series of length {T}")
    labels = np.zeros(T, dtype=bool)
    labels[start : end + 1] = True
    return LabeledSeries(values[None, :], labels, train_end, path.stem)


@dataclass(frozen=True)
class CsvSchema:
    """Column map for :func:`load_csv`. ``features=None`` means every non-label column."""

    features: Sequence[str] | None = None
    label: str | None = None
    train_end: int | None = None


def load_csv(path: str | Path, schema: CsvSchema = CsvSchema()) -> LabeledSeries:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path.name}: empty file") from None
        rows = [row for row in reader if row]
    features = list(schema.features) if schema.features else [h for h in header if h != schema.label]
    for col in features + ([schema.label] if schema.label else []):
        if col not in header:
            raise DataError(f"{path.name}: missing column {col!r} (have {header})")
    if not features:
        raise DataError(f"{path.name}: no feature columns")
    for lineno, row in enumerate(rows, 2):
        if len(row) != len(header):
            raise DataError(f"{path.name}:{lineno}: expected {len(header)} fields, got {len(row)}")
    try:
        table = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    except ValueError as exc:
        raise DataError(f"{path.name}: non-numeric cell ({exc})") from None
    values = table[:, [header.index(c) for c in features]].T
    labels = None
    if schema.label:
        labels = table[:, header.index(schema.label)] != 0
    train_end = len(rows) if schema.train_end is None else schema.train_end
    if train_end > len(rows):
        raise DataError(f"{path.name}: train_end={train_end} exceeds series length {len(rows)}")
    return LabeledSeries(values, labels, train_end, path.stem)


def _minmax_rows(x: np.ndarray, ref: np.ndarray) -> np.ndarray:
    lo = ref.min(axis=1, keepdims=True)
    span = ref.max(axis=1, keepdims=True) - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (x - lo) / safe, 0.0)


def minmax_normalize(series: LabeledSeries, train_only: bool = False) -> LabeledSeries:
    """Scale each feature to [0, 1]; constant features become zero.

    With ``train_only`` the statistics come from ``[0, train_end)`` only, so
    test values may fall outside [0, 1].
    """
    ref = series.train_values if train_only and series.train_end > 0 else series.values
    return replace(series, values=_minmax_rows(series.values, ref))


def window(values: np.ndarray | LabeledSeries, size: int, stride: int = 1) -> WindowedDataset:
    if isinstance(values, LabeledSeries):
        values = values.values
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[None, :]
    T = values.shape[1]
    if stride < 1:
        raise DataError(f"stride must be >= 1, got {stride}")
    if size < 1 or size > T:
        raise DataError(f"window size {size} does not fit a series of length {T}")
    ends = np.arange(size - 1, T, stride)
    view = np.lib.stride_tricks.sliding_window_view(values, size, axis=1)  # (d, T-size+1, size)
    windows = np.ascontiguousarray(view[:, ends - size + 1, :].transpose(1, 0, 2))
    return WindowedDataset(windows, ends, size, stride)


def choose_stride(n_timesteps: int, size: int, limit: int = 10000, options=(1, 10, 100)) -> int:
    """Smallest stride in ``options`` keeping the window count at or below ``limit``."""
    for s in options:
        if (n_timesteps - size) // s + 1 <= limit:
            return s
    return options[-1]


def split_validation(dataset: WindowedDataset, fraction: float = 0.1, seed: int = 0):
    """Seeded uniform split into (train, validation); both keep the original order."""
    if not 0 < fraction < 1:
        raise DataError(f"fraction must lie in (0, 1), got {fraction}")
    n = len(dataset)
    if n < 2:
        raise DataError(f"need at least 2 windows to split, got {n}")
    n_val = min(max(int(round(fraction * n)), 1), n - 1)
    rng = np.random.default_rng(seed)
    val = np.sort(rng.choice(n, size=n_val, replace=False))
    train = np.setdiff1d(np.arange(n), val)
    return dataset.subset(train), dataset.subset(val)


def n_windows(T: int, size: int, stride: int) -> int:
    return math.floor((T - size) / stride) + 1
