"""Threshold-free range metrics, UCR accuracy and the contamination harness.

Buffer relaxation (range-AUC / VUS). For buffer ``l`` every labeled range
``[s, e]`` is widened by ``l // 2`` steps on each side; a step at distance
``j`` outside the range gets weight ``sqrt(1 - j / l)``. Overlapping
contributions add and are capped at 1, and labeled steps keep weight 1.

Weighted curves. With relaxed weights ``w``, thresholds run over every
distinct score (descending). At threshold ``tau``::

    TP = sum(w[s >= tau])        FP = sum(1 - w[s >= tau])
    TPR = TP / sum(w)            FPR = FP / sum(1 - w)
    precision = TP / (TP + FP)

ROC area uses the trapezoid rule from (0, 0). PR area uses the right-
continuous step rule ``sum((R_k - R_{k-1}) * P_k)``. At ``l = 0`` these are
exactly the point-wise ROC-AUC (ties count one half) and average precision.

Range F-score. Precision and recall are computed over ranges with flat
positional bias and reciprocal cardinality. Recall mixes existence and
overlap with ``alpha = 0.2``; precision uses overlap only. The reported
value is the best F1 over predictions ``score > q`` for 256 score quantiles
``q``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .augment import ANOMALY_KINDS, AugmentConfig, Kind, augment_instance, substream
from .data import WindowedDataset

REPORT_VERSION = 1


class UndefinedMetric(ValueError):
    pass


class EvalUsageError(ValueError):
    pass


def label_ranges(labels: np.ndarray) -> list[tuple[int, int]]:
    """Inclusive ``(start, end)`` pairs of the true runs in a boolean sequence."""
    lab = np.asarray(labels).astype(np.int8)
    diff = np.diff(np.concatenate([[0], lab, [0]]))
    starts = np.flatnonzero(diff == 1)
    ends = np.flatnonzero(diff == -1) - 1
    return list(zip(starts.tolist(), ends.tolist()))


def relaxed_labels(labels: np.ndarray, buffer: int) -> np.ndarray:
    lab = np.asarray(labels).astype(bool)
    w = lab.astype(np.float64)
    half = int(buffer) // 2
    if half == 0:
        return w
    n = len(w)
    j = np.arange(1, half + 1)
    decay = np.sqrt(1.0 - j / buffer)
    for s, e in label_ranges(lab):
        right = e + j
        ok = right < n
        w[right[ok]] += decay[ok]
        left = s - j
        ok = left >= 0
        w[left[ok]] += decay[ok]
    w = np.minimum(w, 1.0)
    w[lab] = 1.0
    return w


def _weighted_curves(scores: np.ndarray, weights: np.ndarray):
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    w = weights[order]
    tp = np.cumsum(w)
    fp = np.cumsum(1.0 - w)
    # keep only the last index of each tie group
    last = np.r_[s[1:] != s[:-1], True]
    return tp[last], fp[last]


def range_auc(scores, labels, buffer: int = 0) -> tuple[float, float]:
    """(ROC area, PR area) against labels relaxed by ``buffer``."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape:
        raise EvalUsageError(f"scores {scores.shape} and labels {labels.shape} differ in shape")
    w = relaxed_labels(labels, buffer)
    pos, neg = w.sum(), (1.0 - w).sum()
    if pos <= 0 or neg <= 0:
        raise UndefinedMetric("need both positive and negative label mass")
    tp, fp = _weighted_curves(scores, w)
    tpr = np.r_[0.0, tp / pos]
    fpr = np.r_[0.0, fp / neg]
    roc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    precision = tp / (tp + fp)
    pr = float(np.sum((tpr[1:] - tpr[:-1]) * precision))
    return roc, pr


def vus_curve(scores, labels, max_buffer: int) -> np.ndarray:
    """Per-buffer (ROC, PR) areas for ``l = 0 .. max_buffer``, shape (L+1, 2)."""
    return np.array([range_auc(scores, labels, l) for l in range(int(max_buffer) + 1)])


def vus(scores, labels, max_buffer: int = 50) -> tuple[float, float]:
    curve = vus_curve(scores, labels, max_buffer)
    return float(curve[:, 0].mean()), float(curve[:, 1].mean())


def _range_recall(real: list, pred: np.ndarray, alpha: float) -> float:
    """Mean per-range reward of ``real`` ranges against boolean predictions ``pred``."""
    if not real:
        return 0.0
    bounds = np.asarray(real)
    s, e = bounds[:, 0], bounds[:, 1]
    pred = pred.astype(np.int64)
    run_start = np.diff(np.concatenate([[0], pred])) == 1
    csum = np.concatenate([[0], np.cumsum(pred)])
    starts = np.concatenate([[0], np.cumsum(run_start)])
    hit = csum[e + 1] - csum[s]
    n_runs = starts[e + 1] - starts[s] + ((pred[s] == 1) & ~run_start[s])
    cardinality = np.where(n_runs <= 1, 1.0, 1.0 / np.maximum(n_runs, 1))
    overlap = cardinality * hit / (e - s + 1)
    reward = alpha * (hit > 0) + (1.0 - alpha) * overlap
    return float(reward.mean())


def range_precision_recall(labels, pred, alpha: float = 0.2) -> tuple[float, float]:
    labels = np.asarray(labels).astype(bool)
    pred = np.asarray(pred).astype(bool)
    real, predicted = label_ranges(labels), label_ranges(pred)
    recall = _range_recall(real, pred, alpha)
    precision = _range_recall(predicted, labels, 0.0)
    return precision, recall


def range_fscore(scores, labels, n_thresholds: int = 256, alpha: float = 0.2) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape:
        raise EvalUsageError("scores and labels differ in shape")
    best = 0.0
    for q in np.unique(np.quantile(scores, np.linspace(0.0, 1.0, n_thresholds))):
        p, r = range_precision_recall(labels, scores > q, alpha)
        if p + r > 0:
            best = max(best, 2 * p * r / (p + r))
    return best


def ucr_accuracy(scores, labels, margin: int = 0) -> int:
    """1 if the first maximum of ``scores`` lies in the single labeled range (+/- margin)."""
    ranges = label_ranges(labels)
    if len(ranges) != 1:
        raise EvalUsageError(f"UCR accuracy needs exactly one anomaly range, found {len(ranges)}")
    (s, e), t = ranges[0], int(np.argmax(scores))
    return int(s - margin <= t <= e + margin)


@dataclass(frozen=True)
class ContaminationSpec:
    ratio: float  # percent: injected instances / normal instances * 100
    kinds: tuple[Kind, ...] = ANOMALY_KINDS
    seed: int = 0

    def __post_init__(self):
        if self.ratio < 0:
            raise ValueError("contamination ratio must be >= 0")


def contaminate(
    train: WindowedDataset, spec: ContaminationSpec, config: AugmentConfig = AugmentConfig()
) -> tuple[WindowedDataset, np.ndarray]:
    """Append ``ceil(ratio/100 * N)`` pseudo-anomalous windows as unlabeled training data.

    Returns the extended dataset and the kind ordinal of each appended
    window. Existing windows are left in place.
    """
    n = len(train)
    count = math.ceil(round(spec.ratio / 100.0 * n, 9))
    rng = np.random.default_rng([spec.seed, 31337])
    kinds = np.array([int(k) for k in spec.kinds])
    picked = kinds[rng.integers(len(kinds), size=count)] if count else np.zeros(0, dtype=int)
    sources = rng.integers(n, size=count)
    extra = []
    for i, (k, src) in enumerate(zip(picked, sources)):
        inst = augment_instance(train.windows[src], Kind(int(k)), substream(spec.seed, 1, i), train,
                                int(src), int(train.end_indices[src]), config=config)
        extra.append(inst.instance)
    if not extra:
        injected = np.zeros(n, dtype=bool) if train.injected is None else train.injected
        return WindowedDataset(train.windows, train.end_indices, train.window_size, train.stride, injected), picked
    windows = np.concatenate([train.windows, np.stack(extra)])
    ends = np.concatenate([train.end_indices, train.end_indices[sources]])
    prior = np.zeros(n, dtype=bool) if train.injected is None else train.injected
    injected = np.concatenate([prior, np.ones(count, dtype=bool)])
    return WindowedDataset(windows, ends, train.window_size, train.stride, injected), picked


@dataclass
class EvalReport:
    vus_roc: float
    vus_pr: float
    range_auc_roc: float
    range_auc_pr: float
    range_fscore: float
    ucr_accuracy: int | None = None
    config: dict = field(default_factory=dict)
    rows: list[dict] = field(default_factory=list)
    version: int = REPORT_VERSION

    def metrics(self) -> dict:
        keys = ("vus_roc", "vus_pr", "range_auc_roc", "range_auc_pr", "range_fscore", "ucr_accuracy")
        return {k: getattr(self, k) for k in keys if getattr(self, k) is not None}

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> EvalReport:
        return cls(**json.loads(text))


def evaluate(scores, labels, window_size: int = 100, buffer: int | None = None,
             max_buffer: int | None = None, ucr_margin: int = 0) -> EvalReport:
    """All metrics for one trace; ``buffer`` and ``max_buffer`` default to half the window."""
    if labels is None:
        raise EvalUsageError("evaluation needs anomaly labels")
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape:
        raise EvalUsageError(f"score trace length {len(scores)} != label length {len(labels)}")
    half = window_size // 2
    buffer = half if buffer is None else buffer
    max_buffer = half if max_buffer is None else max_buffer
    v_roc, v_pr = vus(scores, labels, max_buffer)
    r_roc, r_pr = range_auc(scores, labels, buffer)
    n_ranges = len(label_ranges(labels))
    acc = ucr_accuracy(scores, labels, ucr_margin) if n_ranges == 1 else None
    cfg = dict(window_size=window_size, buffer=buffer, max_buffer=max_buffer, ucr_margin=ucr_margin,
               fscore_thresholds=256, fscore_alpha=0.2)
    return EvalReport(v_roc, v_pr, r_roc, r_pr, range_fscore(scores, labels), acc, cfg)


def aggregate(reports: list[EvalReport], names: list[str]) -> EvalReport:
    """Mean row over several reports; per-item metrics kept under ``rows``."""
    rows = [dict(name=n, **r.metrics()) for n, r in zip(names, reports)]
    def mean(key):
        vals = [getattr(r, key) for r in reports if getattr(r, key) is not None]
        return float(np.mean(vals)) if vals else None
    return EvalReport(mean("vus_roc"), mean("vus_pr"), mean("range_auc_roc"), mean("range_auc_pr"),
                      mean("range_fscore"), mean("ucr_accuracy"), reports[0].config if reports else {}, rows)
