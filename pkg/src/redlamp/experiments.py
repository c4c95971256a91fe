"""Seeded synthetic fixture and variant runner shared by scripts/ and the acceptance tests."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .data import LabeledSeries, minmax_normalize, window
from .evaluation import ContaminationSpec, contaminate, evaluate, ucr_accuracy
from .score import score_series
from .train import TrainConfig, fit


@dataclass(frozen=True)
class Fixture:
    series: LabeledSeries
    speedup_range: tuple[int, int]  # inclusive, absolute timesteps
    spike_at: int


def make_fixture(seed: int = 0, T: int = 8000, train_end: int = 3000, noise: float = 0.05,
                 speedup_length: int = 400) -> Fixture:
    """Two sinusoids plus noise with a 2x speed-up segment and a single spike in the test part."""
    rng = np.random.default_rng(seed)
    t = np.arange(T, dtype=np.float64)

    def clean(u):
        return np.sin(2 * np.pi * u / 50.0) + 0.6 * np.sin(2 * np.pi * u / 83.0)

    u = t.copy()
    sp_start = train_end + 2000 + int(rng.integers(0, 500))
    sp_len = speedup_length
    u[sp_start : sp_start + sp_len] = sp_start + 2.0 * (t[sp_start : sp_start + sp_len] - sp_start)
    u[sp_start + sp_len :] += sp_len  # phase stays continuous after the segment
    x = clean(u) + noise * rng.standard_normal(T)
    spike_at = sp_start + 1200 + int(rng.integers(0, 300))
    x[spike_at] += 1.0
    labels = np.zeros(T, dtype=bool)
    labels[sp_start : sp_start + sp_len] = True
    labels[spike_at] = True
    series = LabeledSeries(x[None], labels, train_end, f"synthetic-{seed}")
    return Fixture(series, (sp_start, sp_start + sp_len - 1), spike_at)


@dataclass(frozen=True)
class FixtureRun:
    """Desk-scale training budget for the fixture; the loss settings stay at their defaults."""

    window_size: int = 100
    train_stride: int = 10
    max_epochs: int = 24
    patience: float = 10
    faa_threshold: float = 0.05


VARIANTS = {
    "redlamp": {},
    "no_ce": {"loss_weight": 0.0},
    "no_mse": {"loss_weight": 1.0},
    "binary": {"binary_mode": True},
    "no_bc": {"use_backward_correction": False},
    "no_am": {"use_anomaly_mask": False},
}


def run_variant(seed: int, variant: str = "redlamp", contamination: float = 0.0,
                run: FixtureRun = FixtureRun(), faa_threshold: float | None = None) -> dict:
    """Train one variant on the fixture for ``seed`` and return its metrics."""
    t0 = time.time()
    fx = make_fixture(seed)
    series = minmax_normalize(fx.series)
    train = window(series.train_values, run.window_size, run.train_stride)
    if contamination > 0:
        train, _ = contaminate(train, ContaminationSpec(contamination, seed=seed))
    cfg = TrainConfig(seed=seed, max_epochs=run.max_epochs, patience=run.patience)
    cfg = replace(cfg, **VARIANTS[variant])
    result = fit(train, cfg)
    theta = run.faa_threshold if faa_threshold is None else faa_threshold
    trace = score_series(result.model, series.test_values, run.window_size, theta)
    labels = series.test_labels
    report = evaluate(trace.a, labels, run.window_size)
    dominant = np.zeros_like(labels)
    s, e = fx.speedup_range
    dominant[s - series.train_end : e - series.train_end + 1] = True
    return dict(
        seed=seed, variant=variant, contamination=contamination,
        ucr_accuracy=ucr_accuracy(trace.a, dominant), epochs=len(result.log), best_epoch=result.best_epoch,
        seconds=time.time() - t0, **{k: v for k, v in report.metrics().items() if k != "ucr_accuracy"},
    )
