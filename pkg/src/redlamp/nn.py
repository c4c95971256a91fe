"""Convolutional encoder/decoder with an MLP classifier head, AdamW, checkpoints.

Gradients come from torch autograd; the parameter update and the on-disk
format are defined here.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
from torch import nn

from .augment import ALL_KINDS


class ShapeError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


class UsageError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    input_features: int = 1
    window: int = 100
    conv_filters: tuple[int, ...] = (128, 128, 256, 256)
    stride: int = 2
    kernel_size: int = 5
    dropout: float = 0.2
    embedding_dim: int = 128
    classifier_hidden: int = 32
    num_classes: int = 12
    class_names: tuple[str, ...] = field(default_factory=lambda: tuple(k.title for k in ALL_KINDS))

    def __post_init__(self):
        dims = (self.input_features, self.window, self.stride, self.kernel_size, self.embedding_dim,
                self.classifier_hidden, self.num_classes, *self.conv_filters)
        if min(dims) < 1 or not self.conv_filters:
            raise ShapeError(f"all model dimensions must be positive: {self}")
        if len(self.class_names) != self.num_classes:
            raise ShapeError(f"{len(self.class_names)} class names for {self.num_classes} classes")

    def lengths(self) -> list[int]:
        """Temporal length after each strided block, starting from the window."""
        pad = self.kernel_size // 2
        out = [self.window]
        for _ in self.conv_filters:
            out.append((out[-1] + 2 * pad - self.kernel_size) // self.stride + 1)
        return out

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> ModelConfig:
        raw = json.loads(text)
        raw["conv_filters"] = tuple(raw["conv_filters"])
        raw["class_names"] = tuple(raw["class_names"])
        return cls(**raw)


def _block(conv: nn.Module, channels: int, dropout: float) -> nn.Sequential:
    return nn.Sequential(conv, nn.BatchNorm1d(channels, eps=1e-5, momentum=0.1), nn.ReLU(), nn.Dropout(dropout))


class Model(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = c = config
        k, s, pad = c.kernel_size, c.stride, c.kernel_size // 2
        chans = [c.input_features, *c.conv_filters]
        self.encoder = nn.Sequential(*[
            _block(nn.Conv1d(chans[i], chans[i + 1], k, s, pad), chans[i + 1], c.dropout)
            for i in range(len(c.conv_filters))
        ])
        self.to_embedding = nn.Conv1d(chans[-1], c.embedding_dim, 1)

        lengths = c.lengths()
        self._bottleneck = (chans[-1], lengths[-1])
        self.upsample = nn.Linear(c.embedding_dim, chans[-1] * lengths[-1])
        dec_in = list(reversed(c.conv_filters))
        dec_out = dec_in[1:] + [dec_in[-1]]
        blocks = []
        for i, (ci, co) in enumerate(zip(dec_in, dec_out)):
            src, dst = lengths[-1 - i], lengths[-2 - i]
            out_pad = dst - ((src - 1) * s - 2 * pad + k)
            blocks.append(_block(nn.ConvTranspose1d(ci, co, k, s, pad, output_padding=out_pad), co, c.dropout))
        self.decoder = nn.Sequential(*blocks)
        self.to_series = nn.Conv1d(dec_out[-1], c.input_features, k, 1, pad)

        self.classifier = nn.Sequential(
            nn.Linear(c.embedding_dim, c.classifier_hidden),
            nn.BatchNorm1d(c.classifier_hidden, eps=1e-5, momentum=0.1),
            nn.ReLU(),
            nn.Dropout(c.dropout),
            nn.Linear(c.classifier_hidden, c.num_classes),
        )
        self.reset_parameters()

    def reset_parameters(self):
        for m in self.modules():
            if isinstance(m, (nn.Conv1d, nn.ConvTranspose1d, nn.Linear)):
                nn.init.kaiming_uniform_(m.weight, mode="fan_in", nonlinearity="relu")
                nn.init.zeros_(m.bias)
            elif isinstance(m, nn.BatchNorm1d):
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)

    def _check(self, x: torch.Tensor, shape: tuple, what: str):
        if x.dim() != len(shape) + 1 or tuple(x.shape[1:]) != shape:
            raise ShapeError(f"{what}: expected (batch, {', '.join(map(str, shape))}), got {tuple(x.shape)}")

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        self._check(x, (self.config.input_features, self.config.window), "encode")
        h = self.encoder(x)
        h = h.amax(dim=-1, keepdim=True)
        return self.to_embedding(h).squeeze(-1)

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        self._check(z, (self.config.embedding_dim,), "decode")
        h = self.upsample(z).view(-1, *self._bottleneck)
        return self.to_series(self.decoder(h))

    def logits(self, z: torch.Tensor) -> torch.Tensor:
        self._check(z, (self.config.embedding_dim,), "classify")
        return self.classifier(z)

    def classify(self, z: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.logits(z), dim=-1)

    def forward(self, x: torch.Tensor):
        """Return (reconstruction, class probabilities, embedding)."""
        z = self.encode(x)
        return self.decode(z), self.classify(z), z


def backward(model: nn.Module, loss: torch.Tensor) -> dict[str, torch.Tensor]:
    """Reverse-mode pass; returns a gradient for every named parameter.

    Parameters the loss does not depend on get zero gradients.
    """
    if not isinstance(loss, torch.Tensor) or loss.numel() != 1:
        raise UsageError("loss must be a scalar tensor")
    if not loss.requires_grad:
        raise UsageError("loss is not attached to a computation graph")
    for p in model.parameters():
        p.grad = None
    loss.backward()
    return {
        name: (p.grad if p.grad is not None else torch.zeros_like(p)).detach()
        for name, p in model.named_parameters()
    }


@torch.no_grad()
def adamw_step(
    params: dict[str, torch.Tensor],
    grads: dict[str, torch.Tensor],
    state: dict,
    lr: float = 1e-3,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.01,
) -> dict:
    """Decoupled-weight-decay Adam, updating ``params`` in place.

    ``state`` holds ``"step"`` (update count) and ``"moments"`` (parameter
    name -> first/second moment pair); it is mutated and returned.
    """
    for name, g in grads.items():
        if not torch.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name!r}")
    b1, b2 = betas
    t = state.get("step", 0) + 1
    state["step"] = t
    moments = state.setdefault("moments", {})
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {tuple(g.shape)} != parameter shape {tuple(p.shape)} for {name!r}")
        if name not in moments:
            moments[name] = (torch.zeros_like(p), torch.zeros_like(p))
        m, v = moments[name]
        p.mul_(1.0 - lr * weight_decay)
        m.mul_(b1).add_(g, alpha=1.0 - b1)
        v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
        denom = (v / c2).sqrt_().add_(eps)
        p.addcdiv_(m, denom, value=-lr / c1)
    return state


class AdamW:
    """Stateful wrapper so training code reads like a torch optimizer."""

    def __init__(self, model: nn.Module, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.params = dict(model.named_parameters())
        self.hyper = dict(lr=lr, betas=betas, eps=eps, weight_decay=weight_decay)
        self.state: dict = {}

    def step(self, grads: dict[str, torch.Tensor]):
        adamw_step(self.params, grads, self.state, **self.hyper)


MAGIC = b"RLMPCKPT"
FORMAT_VERSION = 1


def _tensors(model: Model) -> list[tuple[str, torch.Tensor]]:
    return [(k, v) for k, v in model.state_dict().items() if not k.endswith("num_batches_tracked")]


def checkpoint_bytes(model: Model) -> bytes:
    """Serialize config and tensors.

    Layout (little-endian): magic ``RLMPCKPT``; u32 version; u32 config
    length; UTF-8 JSON config; u32 tensor count; then per tensor, in
    ``state_dict`` order: u32 ndim, ndim x u32 dims, float32 data.
    """
    buf = io.BytesIO()
    cfg = model.config.to_json().encode()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", FORMAT_VERSION, len(cfg)))
    buf.write(cfg)
    tensors = _tensors(model)
    buf.write(struct.pack("<I", len(tensors)))
    for _, t in tensors:
        t = t.detach().to(torch.float32).contiguous()
        buf.write(struct.pack(f"<I{t.dim()}I", t.dim(), *t.shape))
        buf.write(t.numpy().astype("<f4").tobytes())
    return buf.getvalue()


def save_checkpoint(model: Model, path: str | Path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


def load_checkpoint(path: str | Path) -> Model:
    import numpy as np

    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise UsageError(f"{path}: not a model checkpoint")
    off = len(MAGIC)
    version, n = struct.unpack_from("<II", raw, off)
    if version != FORMAT_VERSION:
        raise UsageError(f"{path}: unsupported checkpoint version {version}")
    off += 8
    config = ModelConfig.from_json(raw[off : off + n].decode())
    off += n
    model = Model(config)
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    names = _tensors(model)
    if count != len(names):
        raise UsageError(f"{path}: {count} tensors, model expects {len(names)}")
    state = {}
    for name, ref in names:
        (ndim,) = struct.unpack_from("<I", raw, off)
        shape = struct.unpack_from(f"<{ndim}I", raw, off + 4)
        off += 4 + 4 * ndim
        size = math.prod(shape)
        data = np.frombuffer(raw, dtype="<f4", count=size, offset=off).reshape(shape)
        off += 4 * size
        if tuple(shape) != tuple(ref.shape):
            raise UsageError(f"{path}: tensor {name} has shape {shape}, expected {tuple(ref.shape)}")
        state[name] = torch.from_numpy(data.copy())
    model.load_state_dict(state, strict=False)
    model.eval()
    return model
