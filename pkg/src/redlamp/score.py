"""Per-timestep anomaly scores from reconstruction error and adjusted class scores."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .augment import _moving_average
from .data import DataError, window
from .nn import Model, ShapeError


def minmax(x: np.ndarray) -> np.ndarray:
    """Min-max over the whole trace; a constant trace maps to zeros."""
    x = np.asarray(x, dtype=np.float64)
    lo, hi = x.min(), x.max()
    if hi - lo <= 0:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def frequent_classes(probs: np.ndarray, threshold: float) -> tuple[np.ndarray, np.ndarray]:
    """Mean predicted probability per class over the trace, and which exceed ``threshold``."""
    means = np.asarray(probs, dtype=np.float64).mean(axis=0)
    return means, means > threshold


def frequent_anomaly_adjustment(probs: np.ndarray, threshold: float = 0.05) -> np.ndarray:
    """Zero every class column whose trace-mean probability exceeds ``threshold``."""
    probs = np.asarray(probs, dtype=np.float64)
    _, zeroed = frequent_classes(probs, threshold)
    return np.where(zeroed[None, :], 0.0, probs)


def anomaly_class_score(adjusted: np.ndarray, normal_index: int = 0) -> np.ndarray:
    """Sum of the non-normal class columns (last axis)."""
    adjusted = np.asarray(adjusted, dtype=np.float64)
    return adjusted.sum(axis=-1) - adjusted[..., normal_index]


def total_score(s_mse: np.ndarray, s_ce: np.ndarray) -> np.ndarray:
    s_mse, s_ce = np.asarray(s_mse), np.asarray(s_ce)
    if s_mse.shape != s_ce.shape:
        raise ShapeError(f"component lengths differ: {s_mse.shape} vs {s_ce.shape}")
    return 0.5 * minmax(s_mse) + 0.5 * minmax(s_ce)


def smooth(a: np.ndarray, width: int) -> np.ndarray:
    """Centered moving average; the kernel shrinks near the ends."""
    return _moving_average(np.asarray(a, dtype=np.float64), width)


@torch.no_grad()
def forward_windows(model: Model, windows: np.ndarray, batch_size: int = 512):
    """Evaluation-mode pass: (reconstruction errors, class probabilities, embeddings)."""
    model.eval()
    errs, probs, embs = [], [], []
    for i in range(0, len(windows), batch_size):
        x = torch.as_tensor(windows[i : i + batch_size], dtype=torch.float32)
        recon, p, z = model(x)
        errs.append(((x - recon) ** 2).sum(dim=(-2, -1)).double().numpy())
        probs.append(p.double().numpy())
        embs.append(z.double().numpy())
    return np.concatenate(errs), np.concatenate(probs), np.concatenate(embs)


def reconstruction_error(model: Model, window_: np.ndarray) -> float:
    """Squared reconstruction error summed over every cell of one d x size window."""
    return float(forward_windows(model, np.asarray(window_)[None])[0][0])


def window_of_timestep(T: int, window_size: int, stride: int, n_windows: int) -> np.ndarray:
    """Index of the latest window ending at or before each timestep (the first one before that)."""
    t = np.arange(T)
    return np.clip((t - (window_size - 1)) // stride, 0, n_windows - 1)


@dataclass
class ScoreTrace:
    window_size: int
    s_mse: np.ndarray  # (N,) per window, window i ends at timestep window_size - 1 + i
    probs: np.ndarray  # (N, K)
    class_means: np.ndarray  # (K,)
    zeroed: np.ndarray  # (K,) bool
    s_ce_raw: np.ndarray  # (N,) anomaly-class mass before adjustment
    s_ce: np.ndarray  # (N,)
    a: np.ndarray  # (T,) final score per timestep
    threshold: float
    smoothed: bool
    class_names: tuple[str, ...] = ()
    stride: int = 1


    @property
    def T(self) -> int:
        return len(self.a)

    def per_timestep(self, x: np.ndarray) -> np.ndarray:
        """Spread a per-window sequence over timesteps; early steps reuse the first window."""
        return np.asarray(x)[window_of_timestep(self.T, self.window_size, self.stride, len(x))]

    def write_csv(self, path: str | Path) -> None:
        cols = [self.a, self.per_timestep(self.s_mse), self.per_timestep(self.s_ce_raw), self.per_timestep(self.s_ce)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "a", "s_mse_raw", "s_ce_raw_sum", "s_ce_adjusted"])
            for t in range(self.T):
                w.writerow([t, *(repr(float(c[t])) for c in cols)])

    def faa_report(self) -> dict:
        names = self.class_names or tuple(str(i) for i in range(len(self.class_means)))
        return {
            "threshold": self.threshold,
            "class_means": {n: float(m) for n, m in zip(names, self.class_means)},
            "zeroed": [n for n, z in zip(names, self.zeroed) if z],
        }

    def write_faa_report(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.faa_report(), indent=2))


def read_score_csv(path: str | Path) -> np.ndarray:
    """Final score column ``a`` of a trace CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([float(r["a"]) for r in rows])


def score_windows(
    s_mse: np.ndarray, probs: np.ndarray, window_size: int, threshold: float = 0.05,
    smoothing: bool = False, class_names: tuple[str, ...] = (), stride: int = 1, T: int | None = None,
) -> ScoreTrace:
    """Combine per-window components into a per-timestep trace of length ``T``.

    Window ``i`` ends at ``window_size - 1 + i * stride``. ``T`` defaults to
    the end of the last window plus one.
    """
    means, zeroed = frequent_classes(probs, threshold)
    adjusted = np.where(zeroed[None, :], 0.0, probs)
    s_ce = anomaly_class_score(adjusted)
    per_window = total_score(s_mse, s_ce)
    T = window_size + (len(per_window) - 1) * stride if T is None else T
    a = per_window[window_of_timestep(T, window_size, stride, len(per_window))]
    if smoothing:
        a = smooth(a, max(window_size // 2, 1))
    return ScoreTrace(window_size, np.asarray(s_mse, dtype=np.float64), probs, means, zeroed,
                      anomaly_class_score(probs), s_ce, a, threshold, smoothing, tuple(class_names), stride)


def score_series(
    model: Model, values: np.ndarray, window_size: int | None = None, threshold: float = 0.05,
    smoothing: bool = False, batch_size: int = 512, stride: int = 1,
) -> ScoreTrace:
    """Score every timestep of ``values`` (d x T); windows use ``stride`` (1 scores each step)."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[None]
    size = window_size or model.config.window
    if values.shape[1] < size:
        raise DataError(f"series of length {values.shape[1]} is shorter than the window {size}")
    if values.shape[0] != model.config.input_features:
        raise ShapeError(f"model expects {model.config.input_features} features, series has {values.shape[0]}")
    ds = window(values, size, stride)
    s_mse, probs, _ = forward_windows(model, ds.windows, batch_size)
    return score_windows(s_mse, probs, size, threshold, smoothing, model.config.class_names, stride, values.shape[1])
