import math

import numpy as np
import pytest
import torch
from torch import nn

from gradcheck import check_module, numeric_grad, relative_error
from redlamp.nn import (
    AdamW,
    Model,
    ModelConfig,
    NumericError,
    ShapeError,
    UsageError,
    adamw_step,
    backward,
    checkpoint_bytes,
    load_checkpoint,
    save_checkpoint,
)
from redlamp.train import cross_entropy, masked_mse

TOL = 1e-4


def small_config(**kw):
    base = dict(input_features=2, window=16, conv_filters=(4, 4, 6, 6), embedding_dim=8,
                classifier_hidden=5, num_classes=3, class_names=("a", "b", "c"))
    base.update(kw)
    return ModelConfig(**base)


def test_default_architecture_shapes():
    torch.manual_seed(0)
    m = Model(ModelConfig()).eval()
    x = torch.randn(1, 1, 100)
    z = m.encode(x)
    assert z.shape == (1, 128)
    assert m.decode(z).shape == (1, 1, 100)
    p = m.classify(z)
    assert p.shape == (1, 12)
    assert m.classifier[0].out_features == 32
    assert m.config.lengths() == [100, 50, 25, 13, 7]


def test_eval_mode_is_pure_and_finite():
    torch.manual_seed(0)
    m = Model(ModelConfig(input_features=3)).eval()
    x = torch.randn(2, 3, 100)
    x[1] = x[0]
    r, p, z = m(x)
    assert torch.equal(z[0], z[1]) and torch.equal(r[0], r[1])
    torch.testing.assert_close(p.sum(-1), torch.ones(2))
    zero = m.encode(torch.zeros(1, 3, 100))
    assert torch.isfinite(zero).all()
    assert torch.equal(m(x)[0], r)


def test_shape_errors():
    m = Model(ModelConfig())
    with pytest.raises(ShapeError):
        m.encode(torch.zeros(1, 2, 100))
    with pytest.raises(ShapeError):
        m.decode(torch.zeros(1, 64))
    with pytest.raises(ShapeError):
        m.classify(torch.zeros(128))


def test_backward_simple_cases():
    w = nn.Linear(1, 1, bias=False).double()
    with torch.no_grad():
        w.weight.fill_(3.0)
    g = backward(w, (w.weight**2).sum())
    assert g["weight"].item() == 6.0
    g = backward(w, (w.weight * 0).sum())
    assert g["weight"].item() == 0.0
    with pytest.raises(UsageError):
        backward(w, torch.tensor(1.0))


def test_toy_network_three_parameters():
    torch.manual_seed(1)
    net = nn.Sequential(nn.Linear(1, 1), nn.Tanh(), nn.Linear(1, 1, bias=False)).double()
    assert sum(p.numel() for p in net.parameters()) == 3
    x = torch.linspace(-1, 1, 7, dtype=torch.float64)[:, None]
    assert check_module(net, lambda: (net(x) ** 2).sum()) <= TOL


# one builder per layer type: returns (module, loss closure)
def _conv(g, rng):
    c_in, c_out, L = rng.integers(1, 4), rng.integers(1, 4), rng.integers(5, 12)
    m = nn.Conv1d(c_in, c_out, 5, 2, 2)
    x, w = torch.randn(2, c_in, L, generator=g), torch.randn(2, c_out, (L + 1) // 2, generator=g)
    return m, lambda: (m(x.double()) * w.double()).sum()


def _conv_t(g, rng):
    c_in, c_out, L = rng.integers(1, 4), rng.integers(1, 4), rng.integers(3, 8)
    pad = int(rng.integers(0, 2))
    m = nn.ConvTranspose1d(c_in, c_out, 5, 2, 2, output_padding=pad)
    x = torch.randn(2, c_in, L, generator=g).double()
    w = torch.randn(2, c_out, 2 * L - 1 + pad, generator=g).double()
    return m, lambda: (m(x) * w).sum()


def _batchnorm(g, rng):
    c = int(rng.integers(1, 4))
    m = nn.BatchNorm1d(c)
    x = torch.randn(4, c, int(rng.integers(2, 6)), generator=g).double()
    w = torch.randn(x.shape, generator=g).double()
    return m, lambda: (m(x) * w).sum()


def _linear(g, rng):
    m = nn.Linear(int(rng.integers(1, 5)), int(rng.integers(1, 5)))
    x = torch.randn(3, m.in_features, generator=g).double()
    w = torch.randn(3, m.out_features, generator=g).double()
    return m, lambda: (m(x) * w).sum()


def _relu(g, rng):
    m = nn.Linear(3, 4)
    x = torch.randn(5, 3, generator=g).double()
    w = torch.randn(5, 4, generator=g).double()

    def loss():
        h = m(x)
        return (torch.relu(h) * w).sum()

    m.double()
    with torch.no_grad():  # keep pre-activations away from the kink
        h = m(x)
        m.bias += torch.where(h.abs().min(0).values < 1e-2, 0.1, 0.0)
    return m, loss


def _softmax_ce(g, rng):
    K = int(rng.integers(2, 7))
    m = nn.Linear(4, K)
    x = torch.randn(3, 4, generator=g).double()
    y = torch.softmax(torch.randn(3, K, generator=g), -1).double()
    return m, lambda: cross_entropy(y, torch.softmax(m(x), -1)).sum()


def _masked_mse(g, rng):
    m = nn.Conv1d(2, 2, 5, 1, 2)
    x = torch.randn(2, 2, 8, generator=g).double()
    mask = (torch.rand(2, 2, 8, generator=g) > 0.5).double()
    return m, lambda: masked_mse(x, m(x), mask).sum()


LAYERS = {"conv": _conv, "conv_transpose": _conv_t, "batchnorm": _batchnorm, "linear": _linear,
          "relu": _relu, "softmax_ce": _softmax_ce, "masked_mse": _masked_mse}


@pytest.mark.parametrize("layer", list(LAYERS))
def test_layer_gradients_match_finite_differences(layer):
    for trial in range(20):
        g = torch.Generator().manual_seed(trial)
        rng = np.random.default_rng(trial)
        module, loss = LAYERS[layer](g, rng)
        module.double().train()
        err = check_module(module, loss, seed=trial)
        assert err <= TOL, (layer, trial, err)


def test_full_model_gradient_float64():
    torch.manual_seed(0)
    m = Model(small_config(dropout=0.0)).double().train()
    x = torch.randn(4, 2, 16, dtype=torch.float64)
    y = torch.softmax(torch.randn(4, 3), -1).double()
    mask = torch.zeros_like(x)

    def loss():
        r, p, _ = m(x)
        return 0.1 * cross_entropy(y, p).mean() + 0.9 * masked_mse(x, r, mask).mean()

    grads = backward(m, loss())
    rng = np.random.default_rng(0)
    for name, p in m.named_parameters():
        num = numeric_grad(loss, p, max_entries=8, rng=rng)
        if _feeds_batchnorm(m, name):
            # train-mode BN subtracts the batch mean, so these biases have zero gradient
            assert grads[name].abs().max() < 1e-10
            assert max(abs(v) for v in num.values()) < 1e-6
        else:
            assert relative_error(grads[name], num) <= TOL, name


def _feeds_batchnorm(model, name):
    if not name.endswith(".0.bias"):
        return False
    block = model.get_submodule(name.rsplit(".", 2)[0])
    return isinstance(block[1], nn.BatchNorm1d)


def test_input_gradient_through_encoder():
    torch.manual_seed(2)
    m = Model(small_config(dropout=0.0)).double().eval()
    x = torch.randn(2, 2, 16, dtype=torch.float64, requires_grad=True)
    loss = lambda: (m.encode(x) ** 2).sum()
    loss().backward()
    num = numeric_grad(loss, x)
    assert relative_error(x.grad, num) <= TOL


def test_adamw_lr_zero_is_noop():
    p = {"w": torch.tensor([1.0, -2.0])}
    adamw_step(p, {"w": torch.tensor([0.5, 0.5])}, {}, lr=0.0, weight_decay=0.0)
    assert p["w"].tolist() == [1.0, -2.0]


def test_adamw_first_step_closed_form():
    p = {"w": torch.tensor([0.5], dtype=torch.float64)}
    adamw_step(p, {"w": torch.tensor([1.0], dtype=torch.float64)}, {}, lr=1e-3, weight_decay=0.0)
    # bias-corrected moments are both 1 at step 1
    assert abs(p["w"].item() - (0.5 - 1e-3 * 1 / (1 + 1e-8))) < 1e-15


def test_adamw_decoupled_decay():
    p = {"w": torch.tensor([2.0], dtype=torch.float64)}
    adamw_step(p, {"w": torch.zeros(1, dtype=torch.float64)}, {}, lr=0.1, weight_decay=0.5)
    assert abs(p["w"].item() - 2.0 * (1 - 0.05)) < 1e-15


def test_adamw_matches_reference_over_steps():
    torch.manual_seed(0)
    a = nn.Linear(3, 2).double()
    b = nn.Linear(3, 2).double()
    b.load_state_dict(a.state_dict())
    ours = AdamW(a, lr=1e-2, weight_decay=0.01)
    ref = torch.optim.AdamW(b.parameters(), lr=1e-2, weight_decay=0.01)
    x = torch.randn(8, 3, dtype=torch.float64)
    for _ in range(25):
        ours.step(backward(a, (a(x) ** 2).sum()))
        ref.zero_grad()
        (b(x) ** 2).sum().backward()
        ref.step()
    for pa, pb in zip(a.parameters(), b.parameters()):
        torch.testing.assert_close(pa, pb, rtol=1e-10, atol=1e-12)


def test_adamw_rejects_non_finite():
    with pytest.raises(NumericError, match="'bias'"):
        adamw_step({"bias": torch.zeros(1)}, {"bias": torch.tensor([math.nan])}, {})


def test_loss_decreases_on_fixed_batch():
    torch.manual_seed(0)
    m = Model(ModelConfig(input_features=1, window=32, conv_filters=(16, 16, 32, 32), embedding_dim=32,
                          classifier_hidden=16, num_classes=2, class_names=("n", "a"))).train()
    t = torch.arange(32, dtype=torch.float32)
    x = torch.stack([torch.sin(t / 3 + k) for k in range(32)])[:, None] * 0.5 + 0.5
    y = torch.zeros(32, 2)
    y[::2, 0] = 1
    y[1::2, 1] = 1
    x[1::2, :, 10] += 1.0
    mask = torch.zeros_like(x)
    opt = AdamW(m, lr=1e-3)

    def loss():
        r, p, _ = m(x)
        return 0.1 * cross_entropy(y, p).mean() + 0.9 * masked_mse(x, r, mask).mean()

    first = loss().item()
    for _ in range(100):
        opt.step(backward(m, loss()))
    assert loss().item() <= 0.5 * first


def test_checkpoint_roundtrip(tmp_path):
    torch.manual_seed(0)
    m = Model(small_config()).eval()
    path = tmp_path / "m.ckpt"
    save_checkpoint(m, path)
    raw = path.read_bytes()
    assert raw[:8] == b"RLMPCKPT"
    m2 = load_checkpoint(path)
    assert m2.config == m.config
    assert checkpoint_bytes(m2) == raw
    x = torch.randn(3, 2, 16)
    torch.testing.assert_close(m2(x)[0], m(x)[0])
    path.write_bytes(b"nope" + raw)
    with pytest.raises(UsageError):
        load_checkpoint(path)
