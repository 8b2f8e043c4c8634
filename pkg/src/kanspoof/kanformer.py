"""Kanformer encoder and the bonafide/spoof classifier built on it.

Each block is the Conformer macaron sandwich FF -> MHSA -> Conv -> FF
followed by a layer norm.  The feed-forward and convolution modules each
come in a baseline form (linear layers, standard convolutions) and a KAN
form (Chebyshev KAN layers, Kolmogorov-Arnold convolutions), so the same
builder yields the Conformer baseline, the full Kanformer, and every
single-component ablation in between.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from .kan import ChebyKanLayer, KanConv
from .module import BatchNorm1d, LayerNorm, Linear, Module
from .numerics import ConfigurationError, Parameter, Tensor, ops
from .numerics.tensor import DimensionError

BONAFIDE, SPOOF = 0, 1


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int = 16
    model_dim: int = 32
    heads: int = 4
    blocks: int = 2
    ff_expansion: int = 4
    cheby_degree: int = 4
    depthwise_kernel: int = 15
    kan_projection: bool = True
    kan_feedforward: bool = True
    kan_convolution: bool = True
    dropout: float = 0.0

    def validate(self) -> "ModelConfig":
        bad = []
        for name in ("feature_dim", "model_dim", "heads", "ff_expansion", "depthwise_kernel"):
            if not isinstance(getattr(self, name), int) or getattr(self, name) < 1:
                bad.append(name)
        if not isinstance(self.blocks, int) or self.blocks < 0:
            bad.append("blocks")
        if not isinstance(self.cheby_degree, int) or not 0 <= self.cheby_degree <= 8:
            bad.append("cheby_degree")
        if "model_dim" not in bad and "heads" not in bad and self.model_dim % self.heads:
            bad.append("model_dim % heads")
        if not 0.0 <= self.dropout < 1.0:
            bad.append("dropout")
        for name in ("kan_projection", "kan_feedforward", "kan_convolution"):
            if not isinstance(getattr(self, name), bool):
                bad.append(name)
        if bad:
            raise ConfigurationError(f"invalid model config fields: {', '.join(bad)}")
        return self

    def hash(self) -> bytes:
        """SHA-256 over the canonical JSON form; 32 bytes."""
        blob = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).digest()

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    rate = np.exp(-np.log(10000.0) * (np.arange(0, dim, 2) / dim))
    pe = np.zeros((length, dim))
    pe[:, 0::2] = np.sin(pos * rate)
    pe[:, 1::2] = np.cos(pos * rate[: dim // 2])
    return pe


class Conv1d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel_size: int, groups: int, rng: np.random.Generator):
        fan_in = (in_ch // groups) * kernel_size
        bound = 1.0 / np.sqrt(fan_in)
        self.weight = Parameter(rng.uniform(-bound, bound, (out_ch, in_ch // groups, kernel_size)))
        self.bias = Parameter(rng.uniform(-bound, bound, out_ch))
        self.groups = groups

    def forward(self, x: Tensor) -> Tensor:
        y = ops.conv1d(x, self.weight, groups=self.groups, padding="same")
        return y + ops.reshape(self.bias, (-1, 1))


class FeedForwardModule(Module):
    """``x + 0.5 * FF(LN(x))`` with FF = lin/KAN -> Swish -> lin/KAN."""

    def __init__(self, dim: int, expansion: int, variant: str, degree: int, rng, dropout: float = 0.0):
        self.variant = variant
        self.norm = LayerNorm(dim)
        hidden = dim * expansion
        if variant == "mlp":
            self.linear1 = Linear(dim, hidden, rng)
            self.linear2 = Linear(hidden, dim, rng)
        elif variant == "kan":
            self.kan1 = ChebyKanLayer(dim, hidden, degree, rng)
            self.kan2 = ChebyKanLayer(hidden, dim, degree, rng)
        else:
            raise ConfigurationError(f"feed-forward variant must be 'mlp' or 'kan', got {variant!r}")
        self.dim = dim
        self.dropout = dropout
        self.rng = rng

    def forward(self, x: Tensor) -> Tensor:
        return ff_forward(self, x)


def ff_forward(m: FeedForwardModule, x: Tensor) -> Tensor:
    if x.shape[-1] != m.dim:
        raise DimensionError(f"feed-forward expects last axis {m.dim}, got {x.shape}")
    first, second = (m.linear1, m.linear2) if m.variant == "mlp" else (m.kan1, m.kan2)
    h = ops.swish(first(m.norm(x)))
    h = ops.dropout(h, m.dropout, m.rng, m.training)
    h = ops.dropout(second(h), m.dropout, m.rng, m.training)
    return x + ops.scale(h, 0.5)


class ConvolutionModule(Module):
    """LN -> pointwise(2D) -> GLU -> depthwise(k) -> BN -> Swish -> pointwise(D), residual."""

    def __init__(self, dim: int, kernel_size: int, variant: str, degree: int, rng, dropout: float = 0.0):
        self.variant = variant
        self.dim = dim
        self.norm = LayerNorm(dim)
        if variant == "standard":
            self.pointwise1 = Conv1d(dim, 2 * dim, 1, 1, rng)
            self.depthwise = Conv1d(dim, dim, kernel_size, dim, rng)
            self.pointwise2 = Conv1d(dim, dim, 1, 1, rng)
        elif variant == "kan":
            self.pointwise1 = KanConv(dim, 2 * dim, 1, "pointwise", degree, rng=rng)
            self.depthwise = KanConv(dim, dim, kernel_size, "depthwise", degree, rng=rng)
            self.pointwise2 = KanConv(dim, dim, 1, "pointwise", degree, rng=rng)
        else:
            raise ConfigurationError(f"convolution variant must be 'standard' or 'kan', got {variant!r}")
        self.batch_norm = BatchNorm1d(dim)
        self.dropout = dropout
        self.rng = rng

    def forward(self, x: Tensor) -> Tensor:
        return conv_module_forward(self, x)


def conv_module_forward(m: ConvolutionModule, x: Tensor) -> Tensor:
    if x.shape[-1] != m.dim:
        raise DimensionError(f"convolution module expects last axis {m.dim}, got {x.shape}")
    h = ops.transpose(m.norm(x), (0, 2, 1))  # B x D x T
    h = ops.glu(m.pointwise1(h), axis=1)
    h = ops.swish(m.batch_norm(m.depthwise(h)))
    h = m.pointwise2(h)
    h = ops.dropout(ops.transpose(h, (0, 2, 1)), m.dropout, m.rng, m.training)
    return x + h


class MultiHeadSelfAttention(Module):
    def __init__(self, dim: int, heads: int, rng, dropout: float = 0.0):
        if dim % heads:
            raise ConfigurationError(f"model_dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.norm = LayerNorm(dim)
        self.query = Linear(dim, dim, rng)
        self.key = Linear(dim, dim, rng)
        self.value = Linear(dim, dim, rng)
        self.out = Linear(dim, dim, rng)
        self.dropout = dropout
        self.rng = rng
        self.last_attention: np.ndarray | None = None

    def forward(self, x: Tensor) -> Tensor:
        return mhsa_forward(self, x)


def mhsa_forward(m: MultiHeadSelfAttention, x: Tensor) -> Tensor:
    if x.shape[-1] != m.dim:
        raise DimensionError(f"attention expects last axis {m.dim}, got {x.shape}")
    b, t, d = x.shape
    hd = d // m.heads
    h = m.norm(x)

    def split(y):
        return ops.transpose(ops.reshape(y, (b, t, m.heads, hd)), (0, 2, 1, 3))

    q, k, v = split(m.query(h)), split(m.key(h)), split(m.value(h))
    scores = ops.scale(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(hd))
    attn = ops.softmax(scores, axis=-1)
    m.last_attention = attn.data
    ctx = ops.reshape(ops.transpose(ops.matmul(attn, v), (0, 2, 1, 3)), (b, t, d))
    return x + ops.dropout(m.out(ctx), m.dropout, m.rng, m.training)


class KanformerBlock(Module):
    def __init__(self, cfg: ModelConfig, rng):
        d = cfg.model_dim
        ff = "kan" if cfg.kan_feedforward else "mlp"
        conv = "kan" if cfg.kan_convolution else "standard"
        self.ff1 = FeedForwardModule(d, cfg.ff_expansion, ff, cfg.cheby_degree, rng, cfg.dropout)
        self.mhsa = MultiHeadSelfAttention(d, cfg.heads, rng, cfg.dropout)
        self.conv = ConvolutionModule(d, cfg.depthwise_kernel, conv, cfg.cheby_degree, rng, cfg.dropout)
        self.ff2 = FeedForwardModule(d, cfg.ff_expansion, ff, cfg.cheby_degree, rng, cfg.dropout)
        self.final_norm = LayerNorm(d)

    def forward(self, x: Tensor) -> Tensor:
        x = self.ff1(x)
        x = self.mhsa(x)
        x = self.conv(x)
        x = self.ff2(x)
        return self.final_norm(x)


class FeatureProjection(Module):
    """``SeLU(Linear(X))`` or a single Chebyshev KAN layer."""

    def __init__(self, in_dim: int, out_dim: int, variant: str, degree: int, rng):
        self.variant = variant
        self.in_dim = in_dim
        if variant == "linear_selu":
            self.linear = Linear(in_dim, out_dim, rng)
        elif variant == "chebykan":
            self.cheby = ChebyKanLayer(in_dim, out_dim, degree, rng)
        else:
            raise ConfigurationError(f"projection variant must be 'linear_selu' or 'chebykan', got {variant!r}")

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise DimensionError(f"projection expects feature width {self.in_dim}, got {x.shape}")
        if self.variant == "linear_selu":
            return ops.selu(self.linear(x))
        return self.cheby(x)


class KanformerModel(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.config = cfg
        d = cfg.model_dim
        variant = "chebykan" if cfg.kan_projection else "linear_selu"
        self.projection = FeatureProjection(cfg.feature_dim, d, variant, cfg.cheby_degree, rng)
        self.cls_token = Parameter(rng.normal(0.0, 0.02, (1, d)))
        self.blocks = [KanformerBlock(cfg, rng) for _ in range(cfg.blocks)]
        self.head = Linear(d, 2, rng)

    def forward(self, x) -> Tensor:
        return self.head(encoder_forward(self, x)[:, -1, :])


def encoder_forward(model: KanformerModel, x) -> Tensor:
    """Project, append the CLS token at the last position, add positions, run blocks."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim != 3:
        raise DimensionError(f"encoder expects B x T x D features, got {x.shape}")
    b, t, _ = x.shape
    d = model.config.model_dim
    h = model.projection(x)
    cls = ops.broadcast_to(ops.reshape(model.cls_token, (1, 1, d)), (b, 1, d))
    h = ops.concat([h, cls], axis=1)
    h = h + Tensor(sinusoidal_positions(t + 1, d))
    for block in model.blocks:
        h = block(h)
    return h


def classify(model: KanformerModel, x) -> tuple[Tensor, Tensor]:
    """Logits ``(bonafide, spoof)`` and the score ``logit_bonafide - logit_spoof``."""
    logits = model(x)
    score = logits[:, BONAFIDE] - logits[:, SPOOF]
    return logits, score


def build_model(cfg: ModelConfig, seed: int = 0) -> KanformerModel:
    cfg.validate()
    model = KanformerModel(cfg, np.random.default_rng(seed))
    for name, p in model.named_parameters():
        p.name = name
    return model
