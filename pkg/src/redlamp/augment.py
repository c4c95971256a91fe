"""Multiclass pseudo-anomaly generation.

Every training window yields one instance per augmentation kind. Each
instance carries a one-hot class label and a 0/1 mask marking the cells the
augmentation touched. Segments are half-open ``[st, ed)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .data import WindowedDataset


class AugmentationError(ValueError):
    pass


class Kind(enum.IntEnum):
    NORMAL = 1
    SPIKE = 2
    FLIP = 3
    SPEEDUP = 4
    NOISE = 5
    CUTOFF = 6
    AVERAGE = 7
    SCALE = 8
    WANDER = 9
    CONTEXTUAL = 10
    UPSIDEDOWN = 11
    MIXTURE = 12

    @property
    def title(self) -> str:
        return self.name.title()

    @classmethod
    def parse(cls, name: str) -> Kind:
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise AugmentationError(f"unknown augmentation kind {name!r}") from None


ALL_KINDS: tuple[Kind, ...] = tuple(Kind)
ANOMALY_KINDS: tuple[Kind, ...] = tuple(k for k in Kind if k is not Kind.NORMAL)


@dataclass(frozen=True)
class AugmentConfig:
    noise_var: float = 0.1  # per-element variance of the Noise kind
    spike_min_amplitude: float = 0.1
    average_divisor: int = 5  # moving-average width = window size // divisor
    contextual_guard: float = 0.05


@dataclass(frozen=True)
class AugmentedInstance:
    instance: np.ndarray  # (d, size)
    label: np.ndarray  # (K,) one-hot
    mask: np.ndarray  # (d, size) 0/1
    source_end_index: int
    kind: Kind


def _moving_average(seg: np.ndarray, w: int) -> np.ndarray:
    """Centered mean of width ``w``; the kernel shrinks at the segment edges."""
    n = len(seg)
    w = max(int(w), 1)
    csum = np.concatenate([[0.0], np.cumsum(seg)])
    i = np.arange(n)
    lo = np.clip(i - w // 2, 0, n)
    hi = np.clip(i - w // 2 + w, 0, n)
    return (csum[hi] - csum[lo]) / (hi - lo)


def _speedup(row: np.ndarray, st: int, ed: int, rng: np.random.Generator) -> np.ndarray:
    length = ed - st
    if rng.random() < 0.5:
        src = row[st : min(ed + length, len(row))][::2]
        if len(src) < length:
            src = np.concatenate([src, np.full(length - len(src), src[-1])])
        return src
    half = max(length // 2, 1)
    src = row[st : st + half]
    return np.interp(np.linspace(0, half - 1, length), np.arange(half), src)


def apply_kind(
    kind: Kind,
    window: np.ndarray,
    dim: int,
    st: int,
    ed: int,
    rng: np.random.Generator,
    donor_pool: np.ndarray | WindowedDataset | None = None,
    source_index: int | None = None,
    config: AugmentConfig = AugmentConfig(),
) -> tuple[np.ndarray, np.ndarray]:
    """Apply one augmentation to feature ``dim`` of ``window``.

    Returns a modified copy of the window and a d x size mask holding this
    application's footprint. ``donor_pool`` supplies the other windows for
    Mixture; ``source_index`` excludes the source window from that draw.
    """
    out = np.array(window, dtype=np.float64, copy=True)
    mask = np.zeros(out.shape, dtype=np.uint8)
    size = out.shape[1]
    if kind is Kind.NORMAL:
        return out, mask
    if not 0 <= st < ed <= size:
        raise AugmentationError(f"need 0 <= st < ed <= {size}, got st={st}, ed={ed}")
    row = out[dim]
    seg = row[st:ed].copy()
    length = ed - st

    if kind is Kind.SPIKE:
        a = 0.0
        while abs(a) < config.spike_min_amplitude:
            a = rng.normal()
        row[st] += a
        mask[dim, st] = 1
        return out, mask

    if kind is Kind.WANDER:
        a = rng.normal()
        row[st:ed] += np.linspace(0.0, a, length)
        row[st:] += a
        mask[dim, st:] = 1
        return out, mask

    if kind is Kind.FLIP:
        new = seg[::-1]
    elif kind is Kind.SPEEDUP:
        new = _speedup(window[dim], st, ed, rng)
    elif kind is Kind.NOISE:
        new = seg + rng.normal(0.0, np.sqrt(config.noise_var), length)
    elif kind is Kind.CUTOFF:
        new = np.full(length, rng.uniform(seg.min(), seg.max()))
    elif kind is Kind.AVERAGE:
        new = _moving_average(seg, size // config.average_divisor)
    elif kind is Kind.SCALE:
        new = rng.normal(1.0, 1.0) * seg
    elif kind is Kind.CONTEXTUAL:
        g = config.contextual_guard
        while True:
            a, b = rng.normal(1.0, 1.0), rng.normal(0.0, 1.0)
            if not (abs(a - 1.0) < g and abs(b) < g):
                break
        new = a * seg + b
    elif kind is Kind.UPSIDEDOWN:
        new = 2.0 * seg.mean() - seg
    elif kind is Kind.MIXTURE:
        pool = donor_pool.windows if isinstance(donor_pool, WindowedDataset) else donor_pool
        if pool is None or len(pool) == 0:
            raise AugmentationError("Mixture needs a non-empty donor pool")
        n = len(pool)
        if source_index is not None and n > 1:
            j = int(rng.integers(n - 1))
            j += j >= source_index
        else:
            j = int(rng.integers(n))
        new = pool[j][dim, st:ed]
    else:  # pragma: no cover
        raise AugmentationError(f"unhandled kind {kind!r}")

    row[st:ed] = new
    mask[dim, st:ed] = 1
    return out, mask


def one_hot(position: int, K: int) -> np.ndarray:
    y = np.zeros(K)
    y[position] = 1.0
    return y


def augment_instance(
    window: np.ndarray,
    kind: Kind,
    rng: np.random.Generator,
    donor_pool=None,
    source_index: int | None = None,
    source_end_index: int = -1,
    kinds: Sequence[Kind] = ALL_KINDS,
    config: AugmentConfig = AugmentConfig(),
) -> AugmentedInstance:
    """Alg. 1 inner body: random feature subset, per-feature random range, one kind.

    The label position is the index of ``kind`` within ``kinds``.
    """
    window = np.asarray(window, dtype=np.float64)
    d, size = window.shape
    label = one_hot(list(kinds).index(kind), len(kinds))
    out = window.copy()
    mask = np.zeros((d, size), dtype=np.uint8)
    if kind is not Kind.NORMAL:
        n_feat = int(rng.integers(1, d + 1))
        dims = rng.choice(d, size=n_feat, replace=False)
        for dim in dims:
            st, ed = np.sort(rng.choice(size, size=2, replace=False))
            out, frag = apply_kind(kind, out, int(dim), int(st), int(ed), rng, donor_pool, source_index, config)
            mask |= frag
    return AugmentedInstance(out, label, mask, source_end_index, kind)


@dataclass(frozen=True)
class AugmentedSet:
    """Column-stacked augmented instances (a sequence of :class:`AugmentedInstance`)."""

    instances: np.ndarray  # (M, d, size)
    labels: np.ndarray  # (M, K)
    masks: np.ndarray  # (M, d, size) uint8
    kinds: np.ndarray  # (M,) Kind ordinals
    source_index: np.ndarray  # (M,) row in the source dataset
    source_end_index: np.ndarray  # (M,)

    def __len__(self) -> int:
        return len(self.instances)

    def __getitem__(self, i: int) -> AugmentedInstance:
        return AugmentedInstance(
            self.instances[i], self.labels[i], self.masks[i], int(self.source_end_index[i]), Kind(int(self.kinds[i]))
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @classmethod
    def stack(cls, items: Iterable[tuple[AugmentedInstance, int]]) -> AugmentedSet:
        items = list(items)
        return cls(
            np.stack([a.instance for a, _ in items]),
            np.stack([a.label for a, _ in items]),
            np.stack([a.mask for a, _ in items]),
            np.array([int(a.kind) for a, _ in items]),
            np.array([i for _, i in items]),
            np.array([a.source_end_index for a, _ in items]),
        )


def substream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *(int(k) for k in keys)]))


def _check_kinds(kinds: Sequence[Kind]) -> tuple[Kind, ...]:
    kinds = tuple(sorted(set(Kind(k) for k in kinds)))
    if Kind.NORMAL not in kinds:
        raise AugmentationError("kinds must include NORMAL")
    return kinds


def build_augmented_set(
    train: WindowedDataset,
    kinds: Sequence[Kind] = ALL_KINDS,
    seed: int = 0,
    config: AugmentConfig = AugmentConfig(),
) -> AugmentedSet:
    """One instance per (window, kind), window-major. Mixture donors come from ``train``."""
    kinds = _check_kinds(kinds)
    items = []
    for i, w in enumerate(train.windows):
        for k in kinds:
            rng = substream(seed, i, int(k))
            inst = augment_instance(w, k, rng, train, i, int(train.end_indices[i]), kinds, config)
            items.append((inst, i))
    return AugmentedSet.stack(items)


def build_binary_set(
    train: WindowedDataset,
    kinds: Sequence[Kind] = ALL_KINDS,
    seed: int = 0,
    config: AugmentConfig = AugmentConfig(),
) -> AugmentedSet:
    """Two-class variant: each window gives its normal copy and one pseudo-anomaly.

    The anomaly kind is drawn uniformly per window from the non-normal kinds;
    label position 1 covers all of them.
    """
    kinds = _check_kinds(kinds)
    anomalous = [k for k in kinds if k is not Kind.NORMAL]
    if not anomalous:
        raise AugmentationError("binary mode needs at least one anomaly kind")
    items = []
    for i, w in enumerate(train.windows):
        end = int(train.end_indices[i])
        items.append((AugmentedInstance(np.array(w, dtype=np.float64), one_hot(0, 2),
                                        np.zeros(w.shape, dtype=np.uint8), end, Kind.NORMAL), i))
        rng = substream(seed, i, 0)
        k = anomalous[int(rng.integers(len(anomalous)))]
        inst = augment_instance(w, k, rng, train, i, end, kinds, config)
        items.append((AugmentedInstance(inst.instance, one_hot(1, 2), inst.mask, end, k), i))
    return AugmentedSet.stack(items)
