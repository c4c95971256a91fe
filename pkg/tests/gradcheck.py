"""Central finite-difference oracle for module gradients (float64)."""

import numpy as np
import torch

from redlamp.nn import backward


def numeric_grad(f, tensor: torch.Tensor, h: float = 1e-4, max_entries: int | None = None, rng=None):
    """Central differences of scalar ``f()`` w.r.t. entries of ``tensor`` (perturbed in place)."""
    flat = tensor.data.view(-1)
    idx = np.arange(flat.numel())
    if max_entries is not None and len(idx) > max_entries:
        idx = (rng or np.random.default_rng(0)).choice(len(idx), max_entries, replace=False)
    out = {}
    with torch.no_grad():
        for i in idx:
            old = flat[i].item()
            flat[i] = old + h
            up = f().item()
            flat[i] = old - h
            down = f().item()
            flat[i] = old
            out[int(i)] = (up - down) / (2 * h)
    return out


def relative_error(analytic: torch.Tensor, numeric: dict) -> float:
    idx = np.fromiter(numeric.keys(), dtype=np.int64)
    a = analytic.reshape(-1)[idx].double().numpy()
    n = np.fromiter(numeric.values(), dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-8)
    return float(np.linalg.norm(a - n) / scale)


def check_module(module: torch.nn.Module, loss_fn, max_entries: int = 40, seed: int = 0) -> float:
    """Worst relative error over every parameter of ``module`` for scalar ``loss_fn()``."""
    module.double()
    grads = backward(module, loss_fn())
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in module.named_parameters():
        num = numeric_grad(loss_fn, p, max_entries=max_entries, rng=rng)
        worst = max(worst, relative_error(grads[name], num))
    return worst
