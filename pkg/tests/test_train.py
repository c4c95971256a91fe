import math
from dataclasses import replace

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from redlamp.augment import ALL_KINDS, Kind, build_augmented_set
from redlamp.data import window
from redlamp.nn import ShapeError, checkpoint_bytes
from redlamp.train import (
    TrainConfig,
    TrainingDiverged,
    cross_entropy,
    fit,
    masked_mse,
    prepare_batch,
    total_loss,
)


def test_masked_mse_examples():
    assert masked_mse([[1.0, 2.0]], [[0.0, 0.0]], [[0, 1]]).item() == 1.0
    x = np.random.default_rng(0).normal(size=(2, 9))
    assert masked_mse(x, x, np.zeros_like(x)).item() == 0.0
    assert masked_mse(x, x + 5, np.ones_like(x)).item() == 0.0
    with pytest.raises(ShapeError):
        masked_mse(np.zeros((1, 3)), np.zeros((1, 4)), np.zeros((1, 3)))


def test_masked_mse_batched_shape():
    x = torch.ones(5, 2, 7)
    assert masked_mse(x, torch.zeros_like(x), torch.zeros_like(x)).tolist() == [14.0] * 5


def test_cross_entropy_examples():
    e = np.eye(12)[3]
    assert cross_entropy(e, e).item() == 0.0
    soft = np.random.default_rng(0).dirichlet(np.ones(12))
    assert abs(cross_entropy(soft, np.full(12, 1 / 12)).item() - math.log(12)) < 1e-12
    assert math.isfinite(cross_entropy(e, np.eye(12)[0]).item())
    with pytest.raises(ShapeError):
        cross_entropy(np.ones(3) / 3, np.ones(4) / 4)


def test_cross_entropy_monotone_on_label_coordinate():
    e = np.eye(4)[1]
    values = [cross_entropy(e, np.array([(1 - q) / 3, q, (1 - q) / 3, (1 - q) / 3])).item()
              for q in np.linspace(0.05, 1.0, 20)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_total_loss_examples():
    assert abs(total_loss(torch.tensor([2.0]), torch.tensor([5.0]), 0.1).item() - 4.7) < 1e-6
    ce, mse = torch.tensor([1.0, 3.0]), torch.tensor([10.0, 20.0])
    assert total_loss(ce, mse, 0.0).item() == 15.0
    assert total_loss(ce, mse, 1.0).item() == 2.0


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1), arrays(np.float64, (2, 12), elements=st.floats(-1e3, 1e3)))
def test_mask_blindness(seed, noise):
    g = np.random.default_rng(seed)
    x = g.normal(size=(2, 12))
    r = g.normal(size=(2, 12))
    mask = (g.random((2, 12)) < 0.5).astype(float)
    moved = x + mask * noise
    assert masked_mse(moved, r, mask).item() == masked_mse(x, r, mask).item()


@given(arrays(np.float64, 6, elements=st.floats(0, 1)))
def test_cross_entropy_finite_for_any_probabilities(p):
    assert math.isfinite(cross_entropy(np.ones(6) / 6, p).item())


def test_config_invariants():
    with pytest.raises(ValueError):
        TrainConfig(loss_weight=1.5)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    assert TrainConfig().class_names[0] == "Normal" and len(TrainConfig().class_names) == 12
    assert TrainConfig(binary_mode=True).class_names == ("Normal", "Anomaly")


def sine_windows(n=200, size=32, stride=2):
    t = np.arange(size + (n - 1) * stride)
    return window(0.5 + 0.4 * np.sin(t / 4.0), size, stride)


def test_ablation_switches():
    ds = sine_windows(20)
    aug = build_augmented_set(ds, ALL_KINDS, seed=0)
    _, y, m = prepare_batch(aug, TrainConfig())
    assert m.sum() > 0
    np.testing.assert_allclose(y.sum(-1).numpy(), 1.0, rtol=1e-6)
    assert y.min() > 0
    _, y, _ = prepare_batch(aug, TrainConfig(use_backward_correction=False))
    assert set(np.unique(y.numpy())) == {0.0, 1.0}
    _, _, m = prepare_batch(aug, TrainConfig(use_anomaly_mask=False))
    assert m.sum() == 0


def small(**kw):
    return TrainConfig(batch_size=32, **kw)


def test_single_epoch_with_infinite_patience():
    res = fit(sine_windows(40), small(max_epochs=1, patience=math.inf))
    assert len(res.log) == 1 and res.best_epoch == 1


def test_fit_deterministic_checkpoint_bytes():
    ds = sine_windows(40)
    a = fit(ds, small(max_epochs=2, seed=5))
    b = fit(ds, small(max_epochs=2, seed=5))
    assert checkpoint_bytes(a.model) == checkpoint_bytes(b.model)
    c = fit(ds, small(max_epochs=2, seed=6))
    assert checkpoint_bytes(a.model) != checkpoint_bytes(c.model)


def test_fit_does_not_touch_global_torch_rng():
    torch.manual_seed(123)
    expected = torch.rand(3)
    torch.manual_seed(123)
    fit(sine_windows(20), small(max_epochs=1))
    torch.testing.assert_close(torch.rand(3), expected)


def test_validation_loss_improves_on_sine_windows():
    res = fit(sine_windows(200), small(max_epochs=4, patience=math.inf))
    best = np.minimum.accumulate([r.val_total for r in res.log])
    assert best[-1] < res.initial_val_total
    assert np.all(np.diff(best) <= 0)


def test_early_stopping_respects_patience():
    res = fit(sine_windows(40), small(max_epochs=30, patience=1, lr=0.3))
    assert len(res.log) <= 30
    if len(res.log) < 30:
        assert res.log[-1].val_total >= min(r.val_total for r in res.log[:-1])


def test_binary_and_subset_heads():
    ds = sine_windows(20)
    assert fit(ds, small(max_epochs=1, binary_mode=True)).model.config.num_classes == 2
    res = fit(ds, small(max_epochs=1, kinds=(Kind.NORMAL, Kind.SPIKE, Kind.FLIP)))
    assert res.model.config.class_names == ("Normal", "Spike", "Flip")


def test_divergence_is_reported():
    ds = sine_windows(20)
    bad = replace(ds, windows=ds.windows * 1e30)  # squares overflow float32
    with pytest.raises(TrainingDiverged, match="epoch 1, batch 0"):
        fit(bad, small(max_epochs=1))


def test_empty_training_set():
    ds = sine_windows(5)
    with pytest.raises(ValueError):
        fit(ds.subset(np.array([], dtype=int)), small())
