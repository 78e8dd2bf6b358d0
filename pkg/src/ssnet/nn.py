"""Parameterized layers built on :mod:`ssnet.tensor`."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import DimensionError, Tensor


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def init_params(kind: str, fan_in: int, fan_out: int, seed, shape=None) -> tuple[Tensor, Tensor]:
    """Glorot-uniform weights and zero bias.

    ``kind`` is ``"linear"`` (weights ``fan_out x fan_in``) or ``"conv"``, in
    which case ``shape`` gives the full kernel shape and fans include the
    receptive field.
    """
    if fan_in <= 0 or fan_out <= 0:
        raise ValueError(f"fans must be positive, got {fan_in}, {fan_out}")
    rng = _rng(seed)
    if shape is None:
        if kind != "linear":
            raise ValueError("conv init needs an explicit kernel shape")
        shape = (fan_out, fan_in)
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    w = Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)
    b = Tensor(np.zeros(shape[0]), requires_grad=True)
    return w, b


class Module:
    """Minimal parameter container; attributes that are Tensors with
    ``requires_grad`` or nested Modules (also inside lists) are discovered."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in self.__dict__.items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        unexpected = set(state) - set(own)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise DimensionError(f"{name}: expected {p.shape}, got {arr.shape}")
            p.data = arr.copy()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv2D(Module):
    def __init__(self, c_in: int, c_out: int, k: int, stride: int = 1, pad: int | None = None, seed=0):
        if pad is None:
            if k % 2 == 0:
                raise ValueError(f"resolution-preserving conv needs an odd kernel, got {k}")
            pad = k // 2
        self.stride = stride
        self.pad = pad
        self.weight, self.bias = init_params(
            "conv", c_in * k * k, c_out * k * k, seed, shape=(c_out, c_in, k, k)
        )

    @property
    def kernel_size(self) -> int:
        return self.weight.shape[-1]

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.pad)

    def set_identity(self) -> None:
        """Dirac kernel: center tap 1 on the matching channel (needs C_in == C_out)."""
        c_out, c_in, k, _ = self.weight.shape
        if c_out != c_in:
            raise DimensionError("identity kernel needs C_in == C_out")
        w = np.zeros(self.weight.shape)
        w[np.arange(c_out), np.arange(c_in), k // 2, k // 2] = 1.0
        self.weight.data = w
        self.bias.data = np.zeros(c_out)

    def zero_(self) -> None:
        self.weight.data = np.zeros(self.weight.shape)
        self.bias.data = np.zeros(self.bias.shape)


class Linear(Module):
    """Row-wise ``x W^T + b`` on the last axis."""

    def __init__(self, d_in: int, d_out: int, seed=0):
        self.weight, self.bias = init_params("linear", d_in, d_out, seed)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.weight.shape[1]:
            raise DimensionError(f"linear: input {x.shape} does not match weight {self.weight.shape}")
        return T.matmul(x, T.transpose(self.weight)) + self.bias

    def set_identity(self) -> None:
        d_out, d_in = self.weight.shape
        self.weight.data = np.eye(d_out, d_in)
        self.bias.data = np.zeros(d_out)

    def zero_(self) -> None:
        self.weight.data = np.zeros(self.weight.shape)
        self.bias.data = np.zeros(self.bias.shape)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.eps = eps
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.bias = Tensor(np.zeros(dim), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.gain.shape[0]:
            raise DimensionError(f"layer norm: expected last dim {self.gain.shape[0]}, got {x.shape}")
        return T.standardize(x, self.eps) * self.gain + self.bias


class MultiHeadSelfAttention(Module):
    """Scaled dot-product attention over tokens; no positional encoding.

    Queries come from ``x``; keys and values from ``context`` (``x`` itself
    when omitted). Inputs are ``n x d`` or batched ``N x n x d``.
    """

    def __init__(self, dim: int, num_heads: int, seed=0):
        if dim % num_heads:
            raise ValueError(f"model dim {dim} not divisible by {num_heads} heads")
        rng = _rng(seed)
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.query = Linear(dim, dim, rng)
        self.key = Linear(dim, dim, rng)
        self.value = Linear(dim, dim, rng)
        self.out = Linear(dim, dim, rng)
        self.last_attention: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.num_heads * self.head_dim

    def _split(self, t: Tensor) -> Tensor:
        n, length, _ = t.shape
        return T.transpose(T.reshape(t, (n, length, self.num_heads, self.head_dim)), (0, 2, 1, 3))

    def forward(self, x: Tensor, context: Tensor | None = None) -> Tensor:
        squeeze = x.ndim == 2
        if squeeze:
            x = T.reshape(x, (1,) + x.shape)
            if context is not None:
                context = T.reshape(context, (1,) + context.shape)
        if x.shape[-1] != self.dim:
            raise DimensionError(f"attention: token dim {x.shape[-1]} != model dim {self.dim}")
        context = x if context is None else context
        q = self._split(self.query(x))
        k = self._split(self.key(context))
        v = self._split(self.value(context))
        scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(self.head_dim))
        attn = T.softmax(scores, axis=-1)
        self.last_attention = attn.data
        mixed = T.matmul(attn, v)
        n, _, length, _ = mixed.shape
        merged = T.reshape(T.transpose(mixed, (0, 2, 1, 3)), (n, length, self.dim))
        out = self.out(merged)
        return T.reshape(out, out.shape[1:]) if squeeze else out
