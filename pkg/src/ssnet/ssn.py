"""Sequential Spatial Network: convolutional stem, staged SSN blocks joined by
UCD layers, and a pooled regression head emitting a future trajectory.

One SSN block computes::

    A = RRU(X)      two 3x3 convs with an activation between
    B = FMHSA(A)    attention; keys/values from a strided reduction conv
    C = IRU(B) + B  5x5 conv -> activation -> tokenwise linear -> 3x3 conv
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .nn import Conv2D, LayerNorm, Linear, Module, MultiHeadSelfAttention, _rng
from .tensor import DimensionError, Tensor


def activation_fn(name: str):
    if name == "gelu":
        return T.gelu
    if name == "identity":
        return lambda x: x
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class StemConfig:
    kernels: list[int] = field(default_factory=lambda: [7, 5, 5, 3, 3])
    strides: list[int] = field(default_factory=lambda: [2, 1, 2, 1, 1])
    channels: list[int] = field(default_factory=lambda: [16, 16, 32, 32, 32])

    def validate(self) -> None:
        if not (len(self.kernels) == len(self.strides) == len(self.channels) == 5):
            raise ValueError("stem needs exactly five conv layers")
        if any(b > a for a, b in zip(self.kernels, self.kernels[1:])):
            raise ValueError(f"stem kernels must be non-increasing, got {self.kernels}")
        if any(k % 2 == 0 for k in self.kernels):
            raise ValueError("stem kernels must be odd")

    @property
    def downscale(self) -> int:
        return int(np.prod(self.strides))


@dataclass
class StageConfig:
    num_blocks: int
    channels: int
    heads: int


def _default_stages() -> list[StageConfig]:
    return [StageConfig(2, 32, 2), StageConfig(2, 64, 4), StageConfig(2, 128, 4)]


@dataclass
class SSNModelConfig:
    stem: StemConfig = field(default_factory=StemConfig)
    stages: list[StageConfig] = field(default_factory=_default_stages)
    horizon: int = 12
    raster_size: int = 64
    in_channels: int = 5
    reduction: int = 2
    proj_dim: int = 64
    use_layernorm: bool = True
    extra_residuals: bool = False
    activation: str = "gelu"
    seed: int = 0

    kind = "ssn"

    @classmethod
    def from_dict(cls, d: dict) -> "SSNModelConfig":
        d = dict(d)
        d.pop("kind", None)
        stem = d.pop("stem", {})
        d["stem"] = stem if isinstance(stem, StemConfig) else StemConfig(**stem)
        if "stages" in d:
            d["stages"] = [s if isinstance(s, StageConfig) else StageConfig(**s) for s in d["stages"]]
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return {"kind": self.kind, **asdict(self)}

    def stage_resolutions(self) -> list[int]:
        res = self.raster_size // self.stem.downscale
        out = []
        for _ in self.stages:
            out.append(res)
            res //= 2
        return out

    def validate(self) -> None:
        self.stem.validate()
        if not self.stages:
            raise ValueError("at least one stage required")
        if self.raster_size % self.stem.downscale:
            raise ValueError(f"raster size {self.raster_size} not divisible by stem stride {self.stem.downscale}")
        if self.stages[0].channels != self.stem.channels[-1]:
            raise ValueError("first stage channels must equal the stem output channels")
        for i, (stage, res) in enumerate(zip(self.stages, self.stage_resolutions())):
            if res < self.reduction or res % self.reduction:
                raise ValueError(f"stage {i} resolution {res} incompatible with reduction {self.reduction}")
            if i + 1 < len(self.stages) and res % 2:
                raise ValueError(f"stage {i} resolution {res} must be even before a UCD layer")
            if stage.channels % stage.heads:
                raise ValueError(f"stage {i}: {stage.channels} channels not divisible by {stage.heads} heads")


class UCDLayer(Module):
    """Pointwise conv followed by 2x2 average downsampling."""

    def __init__(self, c_in: int, c_out: int, seed=0):
        self.conv = Conv2D(c_in, c_out, 1, seed=seed)

    def forward(self, x: Tensor) -> Tensor:
        return T.downsample_half(self.conv(x))


class SSNBlock(Module):
    def __init__(
        self,
        channels: int,
        heads: int,
        *,
        reduction: int = 2,
        use_layernorm: bool = True,
        extra_residuals: bool = False,
        activation: str = "gelu",
        seed=0,
    ):
        rng = _rng(seed)
        self.channels = channels
        self.extra_residuals = extra_residuals
        self.activation = activation
        self.bypass_attention = False
        self.rru_conv1 = Conv2D(channels, channels, 3, seed=rng)
        self.rru_conv2 = Conv2D(channels, channels, 3, seed=rng)
        self.norm = LayerNorm(channels) if use_layernorm else None
        self.reduce = Conv2D(channels, channels, reduction, stride=reduction, pad=0, seed=rng)
        self.proj = Linear(channels, channels, rng)
        self.attn = MultiHeadSelfAttention(channels, heads, rng)
        self.iru_conv_a = Conv2D(channels, channels, 5, seed=rng)
        self.iru_linear = Linear(channels, channels, rng)
        self.iru_conv_b = Conv2D(channels, channels, 3, seed=rng)

    @property
    def reduction(self) -> int:
        return self.reduce.stride

    def _check(self, x: Tensor) -> None:
        if x.shape[-3] != self.channels:
            raise DimensionError(f"SSN block expects {self.channels} channels, got input {x.shape}")

    def rru(self, x: Tensor) -> Tensor:
        self._check(x)
        act = activation_fn(self.activation)
        return self.rru_conv2(act(self.rru_conv1(x)))

    def fmhsa(self, x: Tensor) -> Tensor:
        self._check(x)
        if self.bypass_attention:
            return x
        squeeze = x.ndim == 3
        if squeeze:
            x = T.reshape(x, (1,) + x.shape)
        _, _, h, w = x.shape
        if h % self.reduction or w % self.reduction:
            raise DimensionError(f"FMHSA: extents {h}x{w} not divisible by reduction {self.reduction}")
        tokens = T.images_to_tokens(x)
        if self.norm is not None:
            tokens = self.norm(tokens)
        queries = self.proj(tokens)
        reduced = self.reduce(T.tokens_to_images(tokens, h, w))
        out = T.tokens_to_images(self.attn(queries, T.images_to_tokens(reduced)), h, w)
        return T.reshape(out, out.shape[1:]) if squeeze else out

    def iru(self, x: Tensor) -> Tensor:
        self._check(x)
        act = activation_fn(self.activation)
        h = act(self.iru_conv_a(x))
        squeeze = h.ndim == 3
        if squeeze:
            h = T.reshape(h, (1,) + h.shape)
        hh, ww = h.shape[-2:]
        h = T.tokens_to_images(self.iru_linear(T.images_to_tokens(h)), hh, ww)
        if squeeze:
            h = T.reshape(h, h.shape[1:])
        return self.iru_conv_b(h)

    def forward(self, x: Tensor) -> Tensor:
        a = self.rru(x)
        if self.extra_residuals:
            a = a + x
        b = self.fmhsa(a)
        if self.extra_residuals and not self.bypass_attention:
            b = b + a
        return self.iru(b) + b

    def zero_iru(self) -> None:
        self.iru_conv_a.zero_()
        self.iru_linear.zero_()
        self.iru_conv_b.zero_()


class TrajectoryHead(Module):
    """Global average pool -> projection -> linear regression to T x (x, y, yaw)."""

    def __init__(self, channels: int, proj_dim: int, horizon: int, activation: str = "gelu", seed=0):
        rng = _rng(seed)
        self.horizon = horizon
        self.activation = activation
        self.proj = Linear(channels, proj_dim, rng)
        self.out = Linear(proj_dim, 3 * horizon, rng)

    def forward(self, pooled: Tensor) -> Tensor:
        h = activation_fn(self.activation)(self.proj(pooled))
        y = self.out(h)
        return T.reshape(y, y.shape[:-1] + (self.horizon, 3))


class PolicyModel(Module):
    """Shared input/output contract: raster ``(N x) C x H x W`` -> ``(N x) T x 3``."""

    config = None

    def features(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def forward(self, x) -> Tensor:
        x = T.as_tensor(x)
        squeeze = x.ndim == 3
        if squeeze:
            x = T.reshape(x, (1,) + x.shape)
        cfg = self.config
        expected = (cfg.in_channels, cfg.raster_size, cfg.raster_size)
        if x.shape[1:] != expected:
            raise DimensionError(f"model expects rasters of shape {expected}, got {x.shape}")
        y = self.head(self.features(x))
        return T.reshape(y, y.shape[1:]) if squeeze else y

    @property
    def horizon(self) -> int:
        return self.config.horizon


class SSNModel(PolicyModel):
    def __init__(self, config: SSNModelConfig | None = None):
        config = config or SSNModelConfig()
        config.validate()
        self.config = config
        rng = np.random.default_rng(config.seed)
        c_prev = config.in_channels
        self.stem = []
        for k, s, c in zip(config.stem.kernels, config.stem.strides, config.stem.channels):
            self.stem.append(Conv2D(c_prev, c, k, stride=s, pad=k // 2, seed=rng))
            c_prev = c
        self.stages = []
        self.ucds = []
        for i, stage in enumerate(config.stages):
            if i > 0:
                self.ucds.append(UCDLayer(c_prev, stage.channels, rng))
            self.stages.append(
                [
                    SSNBlock(
                        stage.channels,
                        stage.heads,
                        reduction=config.reduction,
                        use_layernorm=config.use_layernorm,
                        extra_residuals=config.extra_residuals,
                        activation=config.activation,
                        seed=rng,
                    )
                    for _ in range(stage.num_blocks)
                ]
            )
            c_prev = stage.channels
        self.head = TrajectoryHead(c_prev, config.proj_dim, config.horizon, config.activation, rng)

    def named_parameters(self, prefix: str = ""):
        for i, conv in enumerate(self.stem):
            yield from conv.named_parameters(f"{prefix}stem.{i}.")
        for i, blocks in enumerate(self.stages):
            if i > 0:
                yield from self.ucds[i - 1].named_parameters(f"{prefix}ucd.{i - 1}.")
            for j, block in enumerate(blocks):
                yield from block.named_parameters(f"{prefix}stage.{i}.{j}.")
        yield from self.head.named_parameters(f"{prefix}head.")

    def blocks(self) -> list[SSNBlock]:
        return [b for stage in self.stages for b in stage]

    def stem_forward(self, x: Tensor) -> Tensor:
        h, w = x.shape[-2:]
        if h % self.config.stem.downscale or w % self.config.stem.downscale:
            raise DimensionError(f"stem: extents {h}x{w} not divisible by {self.config.stem.downscale}")
        act = activation_fn(self.config.activation)
        for conv in self.stem:
            x = act(conv(x))
        return x

    def features(self, x: Tensor) -> Tensor:
        x = self.stem_forward(x)
        for i, blocks in enumerate(self.stages):
            if i > 0:
                x = self.ucds[i - 1](x)
            for block in blocks:
                x = block(x)
        return T.avg_pool_global(x)


def count_parameters(cfg: SSNModelConfig) -> int:
    """Closed-form parameter count for an :class:`SSNModel` built from ``cfg``."""

    def conv(ci, co, k):
        return co * ci * k * k + co

    def linear(di, do):
        return do * di + do

    total = 0
    c_prev = cfg.in_channels
    for k, c in zip(cfg.stem.kernels, cfg.stem.channels):
        total += conv(c_prev, c, k)
        c_prev = c
    for i, stage in enumerate(cfg.stages):
        c = stage.channels
        if i > 0:
            total += conv(c_prev, c, 1)
        block = (
            2 * conv(c, c, 3)
            + (2 * c if cfg.use_layernorm else 0)
            + conv(c, c, cfg.reduction)
            + linear(c, c)
            + 4 * linear(c, c)
            + conv(c, c, 5)
            + linear(c, c)
            + conv(c, c, 3)
        )
        total += stage.num_blocks * block
        c_prev = c
    total += linear(c_prev, cfg.proj_dim) + linear(cfg.proj_dim, 3 * cfg.horizon)
    return total
