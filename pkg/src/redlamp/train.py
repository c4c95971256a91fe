"""Masked reconstruction + soft-label classification objective and the fit loop."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .augment import ALL_KINDS, AugmentConfig, AugmentedSet, Kind, build_augmented_set, build_binary_set
from .data import WindowedDataset, split_validation
from .labels import backward_correct
from .nn import AdamW, Model, ModelConfig, ShapeError, backward

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    loss_weight: float = 0.1
    batch_size: int = 128
    max_epochs: int = 100
    lr: float = 1e-3
    weight_decay: float = 0.01
    patience: float = 10  # math.inf disables early stopping
    p_n: float = 0.1
    p_a: float = 0.01
    seed: int = 0
    val_fraction: float = 0.1
    use_anomaly_mask: bool = True
    use_backward_correction: bool = True
    kinds: tuple[Kind, ...] = ALL_KINDS
    binary_mode: bool = False
    resample_each_epoch: bool = True
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if not 0.0 <= self.loss_weight <= 1.0:
            raise ValueError(f"loss_weight must lie in [0, 1], got {self.loss_weight}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.kinds = tuple(sorted(set(Kind(k) for k in self.kinds)))

    @property
    def class_names(self) -> tuple[str, ...]:
        if self.binary_mode:
            return ("Normal", "Anomaly")
        return tuple(k.title for k in self.kinds)


def _as_tensor(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(np.asarray(x, dtype=np.float64))


def masked_mse(instance, reconstruction, mask) -> torch.Tensor:
    """Squared error summed over unmasked cells; one value per instance for batched input."""
    x, r, m = _as_tensor(instance), _as_tensor(reconstruction), _as_tensor(mask)
    if not (x.shape == r.shape == m.shape):
        raise ShapeError(f"shape mismatch: {tuple(x.shape)}, {tuple(r.shape)}, {tuple(m.shape)}")
    return (((1 - m) * (x - r)) ** 2).sum(dim=(-2, -1))


def cross_entropy(soft_label, predicted) -> torch.Tensor:
    y, p = _as_tensor(soft_label), _as_tensor(predicted)
    if y.shape != p.shape:
        raise ShapeError(f"shape mismatch: {tuple(y.shape)} vs {tuple(p.shape)}")
    return -(y * torch.log(p.clamp_min(1e-12))).sum(dim=-1)


def total_loss(ce, mse, loss_weight: float) -> torch.Tensor:
    """``loss_weight * mean(ce) + (1 - loss_weight) * mean(mse)``."""
    return loss_weight * _as_tensor(ce).mean() + (1.0 - loss_weight) * _as_tensor(mse).mean()


@dataclass
class EpochRecord:
    epoch: int
    train_ce: float
    train_mse: float
    train_total: float
    val_ce: float
    val_mse: float
    val_total: float


@dataclass
class FitResult:
    model: Model
    log: list[EpochRecord]
    best_epoch: int
    initial_val_total: float


def _augment(ds: WindowedDataset, config: TrainConfig, seed: int) -> AugmentedSet:
    if config.binary_mode:
        return build_binary_set(ds, config.kinds, seed, config.augment)
    return build_augmented_set(ds, config.kinds, seed, config.augment)


def prepare_batch(aug: AugmentedSet, config: TrainConfig):
    """Tensors (x, soft labels, masks) with ablation switches applied."""
    x = torch.as_tensor(aug.instances, dtype=torch.float32)
    if config.use_backward_correction:
        y = backward_correct(aug.labels, config.p_n, config.p_a)
    else:
        y = aug.labels
    y = torch.as_tensor(y, dtype=torch.float32)
    m = torch.as_tensor(aug.masks, dtype=torch.float32)
    if not config.use_anomaly_mask:
        m = torch.zeros_like(m)
    return x, y, m


def batch_losses(model: Model, x, y, m):
    recon, probs, _ = model(x)
    return cross_entropy(y, probs), masked_mse(x, recon, m)


@torch.no_grad()
def evaluate_loss(model: Model, tensors, config: TrainConfig, batch_size: int = 512):
    model.eval()
    x, y, m = tensors
    ce_sum = mse_sum = 0.0
    for i in range(0, len(x), batch_size):
        ce, mse = batch_losses(model, x[i : i + batch_size], y[i : i + batch_size], m[i : i + batch_size])
        ce_sum += ce.sum().item()
        mse_sum += mse.sum().item()
    ce, mse = ce_sum / len(x), mse_sum / len(x)
    return ce, mse, config.loss_weight * ce + (1 - config.loss_weight) * mse


def fit(train_windows: WindowedDataset, config: TrainConfig = TrainConfig(), seed: int | None = None) -> FitResult:
    """Train on augmented windows; keep the checkpoint with the lowest validation loss.

    The validation split is drawn from the source windows and augmented once
    with its own stream. Training augmentation is redrawn every epoch unless
    ``resample_each_epoch`` is off.
    """
    if len(train_windows) == 0:
        raise ValueError("no training windows")
    seed = config.seed if seed is None else seed
    train, val = split_validation(train_windows, config.val_fraction, seed)

    names = config.class_names
    mcfg = ModelConfig(input_features=train_windows.d, window=train_windows.window_size,
                       num_classes=len(names), class_names=names)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = Model(mcfg)
        opt = AdamW(model, lr=config.lr, weight_decay=config.weight_decay)
        val_tensors = prepare_batch(_augment(val, config, seed * 7919 + 1), config)
        _, _, initial = evaluate_loss(model, val_tensors, config)

        best = math.inf
        best_state = copy.deepcopy(model.state_dict())
        best_epoch = 0
        stale = 0
        history: list[EpochRecord] = []
        shuffle_rng = np.random.default_rng([seed, 2])
        for epoch in range(1, config.max_epochs + 1):
            aug_seed = seed * 7919 + 2 + (epoch if config.resample_each_epoch else 0)
            x, y, m = prepare_batch(_augment(train, config, aug_seed), config)
            order = torch.as_tensor(shuffle_rng.permutation(len(x)))
            model.train()
            ce_sum = mse_sum = 0.0
            for b, start in enumerate(range(0, len(x), config.batch_size)):
                idx = order[start : start + config.batch_size]
                if len(idx) < 2:  # batch norm needs more than one sample
                    continue
                ce, mse = batch_losses(model, x[idx], y[idx], m[idx])
                loss = total_loss(ce, mse, config.loss_weight)
                if not torch.isfinite(loss):
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {b}")
                opt.step(backward(model, loss))
                ce_sum += ce.sum().item()
                mse_sum += mse.sum().item()
            tr_ce, tr_mse = ce_sum / len(x), mse_sum / len(x)
            v_ce, v_mse, v_total = evaluate_loss(model, val_tensors, config)
            if not math.isfinite(v_total):
                raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}")
            rec = EpochRecord(epoch, tr_ce, tr_mse, config.loss_weight * tr_ce + (1 - config.loss_weight) * tr_mse,
                              v_ce, v_mse, v_total)
            history.append(rec)
            log.info("epoch %d train_ce=%.4f train_mse=%.4f val_total=%.4f", epoch, tr_ce, tr_mse, v_total)
            if v_total < best:
                best, best_epoch, stale = v_total, epoch, 0
                best_state = copy.deepcopy(model.state_dict())
            else:
                stale += 1
                if stale >= config.patience:
                    break
    model.load_state_dict(best_state)
    model.eval()
    return FitResult(model, history, best_epoch, initial)
