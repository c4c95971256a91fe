"""Backward-corrected soft labels."""

from __future__ import annotations

import numpy as np


class LabelError(ValueError):
    pass


def backward_correct(label: np.ndarray, p_n: float, p_a: float, normal_index: int = 0) -> np.ndarray:
    """Soften one-hot labels with class-confusion probabilities.

    Every component gets ``(1 - p_n - K*p_a) * y + p_a``; the normal
    component additionally gets ``p_n``. Works on a single label or on a
    stack of labels along the last axis.

    >>> backward_correct(np.eye(3)[1], 0.1, 0.01).round(2).tolist()
    [0.11, 0.88, 0.01]
    """
    y = np.asarray(label, dtype=np.float64)
    K = y.shape[-1]
    if p_n < 0 or p_a < 0 or p_n + K * p_a > 1:
        raise LabelError(f"need p_n, p_a >= 0 and p_n + K*p_a <= 1 (K={K}, p_n={p_n}, p_a={p_a})")
    out = (1.0 - p_n - K * p_a) * y + p_a
    out[..., normal_index] += p_n
    return out
