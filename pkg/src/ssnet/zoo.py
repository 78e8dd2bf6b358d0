"""Tiny comparison models sharing the SSN policy contract, plus a factory
that builds any model kind from a plain config dict."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .nn import Conv2D, LayerNorm, Linear, Module, MultiHeadSelfAttention, _rng
from .ssn import PolicyModel, SSNModel, SSNModelConfig, TrajectoryHead, UCDLayer
from .tensor import DimensionError, Tensor


@dataclass
class TinyResidualConfig:
    channels: list[int] = field(default_factory=lambda: [16, 32, 64])
    blocks_per_stage: int = 2
    horizon: int = 12
    raster_size: int = 64
    in_channels: int = 5
    proj_dim: int = 64
    seed: int = 0

    kind = "tiny-residual"

    def to_dict(self) -> dict:
        return {"kind": self.kind, **asdict(self)}

    def validate(self) -> None:
        if self.raster_size % (4 * 2 ** (len(self.channels) - 1)):
            raise ValueError(f"raster size {self.raster_size} too small for {len(self.channels)} stages")


@dataclass
class TinyViTConfig:
    patch_size: int = 8
    dim: int = 32
    depth: int = 2
    heads: int = 2
    mlp_ratio: int = 4
    horizon: int = 12
    raster_size: int = 64
    in_channels: int = 5
    proj_dim: int = 64
    seed: int = 0

    kind = "tiny-vit"

    def to_dict(self) -> dict:
        return {"kind": self.kind, **asdict(self)}

    def validate(self) -> None:
        if self.raster_size % self.patch_size:
            raise DimensionError(f"raster {self.raster_size} not divisible by patch size {self.patch_size}")

    @property
    def num_tokens(self) -> int:
        return (self.raster_size // self.patch_size) ** 2


class ResidualBlock(Module):
    """``x + conv(gelu(conv(x)))``; no activation after the sum."""

    def __init__(self, channels: int, seed=0):
        rng = _rng(seed)
        self.conv1 = Conv2D(channels, channels, 3, seed=rng)
        self.conv2 = Conv2D(channels, channels, 3, seed=rng)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.conv2(T.gelu(self.conv1(x)))

    def zero_branch(self) -> None:
        self.conv1.zero_()
        self.conv2.zero_()


class TinyResidual(PolicyModel):
    """Stem (/4) then stages of residual blocks; stages after the first open
    with a pointwise-conv + 2x downsample transition."""

    def __init__(self, config: TinyResidualConfig | None = None):
        config = config or TinyResidualConfig()
        config.validate()
        self.config = config
        rng = np.random.default_rng(config.seed)
        c0 = config.channels[0]
        self.stem = [Conv2D(config.in_channels, c0, 7, stride=2, pad=3, seed=rng), Conv2D(c0, c0, 3, stride=2, pad=1, seed=rng)]
        self.transitions = []
        self.blocks = []
        c_prev = c0
        for i, c in enumerate(config.channels):
            if i > 0:
                self.transitions.append(UCDLayer(c_prev, c, rng))
            self.blocks.append([ResidualBlock(c, rng) for _ in range(config.blocks_per_stage)])
            c_prev = c
        self.head = TrajectoryHead(c_prev, config.proj_dim, config.horizon, seed=rng)

    def named_parameters(self, prefix: str = ""):
        for i, conv in enumerate(self.stem):
            yield from conv.named_parameters(f"{prefix}stem.{i}.")
        for i, stage in enumerate(self.blocks):
            if i > 0:
                yield from self.transitions[i - 1].named_parameters(f"{prefix}transition.{i - 1}.")
            for j, block in enumerate(stage):
                yield from block.named_parameters(f"{prefix}stage.{i}.{j}.")
        yield from self.head.named_parameters(f"{prefix}head.")

    def trunk(self, x: Tensor) -> Tensor:
        for conv in self.stem:
            x = T.gelu(conv(x))
        for i, stage in enumerate(self.blocks):
            if i > 0:
                x = self.transitions[i - 1](x)
            for block in stage:
                x = block(x)
        return x

    def features(self, x: Tensor) -> Tensor:
        return T.avg_pool_global(self.trunk(x))


class FeedForward(Module):
    """Two linear layers around a GELU, hidden width ``ratio * dim``."""

    def __init__(self, dim: int, ratio: int = 4, seed=0):
        rng = _rng(seed)
        self.fc1 = Linear(dim, ratio * dim, rng)
        self.fc2 = Linear(ratio * dim, dim, rng)

    @property
    def hidden_dim(self) -> int:
        return self.fc1.weight.shape[0]

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))


class EncoderBlock(Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: int, seed=0):
        rng = _rng(seed)
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.ffn = FeedForward(dim, mlp_ratio, rng)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.ffn(self.norm2(x))


class TinyViT(PolicyModel):
    def __init__(self, config: TinyViTConfig | None = None):
        config = config or TinyViTConfig()
        config.validate()
        self.config = config
        rng = np.random.default_rng(config.seed)
        p = config.patch_size
        self.patch_embed = Conv2D(config.in_channels, config.dim, p, stride=p, pad=0, seed=rng)
        self.pos_embed = Tensor(0.02 * rng.standard_normal((config.num_tokens, config.dim)), requires_grad=True)
        self.encoder = [EncoderBlock(config.dim, config.heads, config.mlp_ratio, rng) for _ in range(config.depth)]
        self.norm = LayerNorm(config.dim)
        self.head = TrajectoryHead(config.dim, config.proj_dim, config.horizon, seed=rng)

    def tokens(self, x: Tensor) -> Tensor:
        return T.images_to_tokens(self.patch_embed(x))

    def features(self, x: Tensor) -> Tensor:
        h = self.tokens(x) + self.pos_embed
        for block in self.encoder:
            h = block(h)
        return T.mean(self.norm(h), axis=1)


MODEL_CONFIGS = {
    "ssn": SSNModelConfig,
    "tiny-residual": TinyResidualConfig,
    "tiny-vit": TinyViTConfig,
}

_MODELS = {"ssn": SSNModel, "tiny-residual": TinyResidual, "tiny-vit": TinyViT}


def model_config_from_dict(d: dict):
    kind = d.get("kind", "ssn")
    if kind not in MODEL_CONFIGS:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {sorted(MODEL_CONFIGS)}")
    if kind == "ssn":
        return SSNModelConfig.from_dict(d)
    cfg = MODEL_CONFIGS[kind](**{k: v for k, v in d.items() if k != "kind"})
    cfg.validate()
    return cfg


def build_model(config) -> PolicyModel:
    """Build a policy model from a config object or a dict with ``kind``."""
    if isinstance(config, dict):
        config = model_config_from_dict(config)
    return _MODELS[config.kind](config)


def build_tiny_residual(cfg: TinyResidualConfig | None = None) -> TinyResidual:
    return TinyResidual(cfg)


def build_tiny_vit(cfg: TinyViTConfig | None = None) -> TinyViT:
    return TinyViT(cfg)
