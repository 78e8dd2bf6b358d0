"""Behaviour-cloning training on logged ego futures, and checkpoint I/O."""

from __future__ import annotations

import io
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .evaluate import ContractError, to_ego_frame
from .raster import RasterConfig, rasterize_array
from .tensor import Tensor
from .world import Scene, wrap_angle

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"SSN1"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable or incompatible checkpoint."""


# ----------------------------------------------------------------------
# loss
@dataclass
class LossConfig:
    position_weight: float = 1.0
    yaw_weight: float = 1.0

    def __post_init__(self):
        if self.position_weight < 0 or self.yaw_weight < 0:
            raise ValueError("loss weights must be non-negative")
        if self.position_weight == 0 and self.yaw_weight == 0:
            raise ValueError("loss weights cannot both be zero")


def compute_loss(pred: Tensor, target, cfg: LossConfig | None = None) -> Tensor:
    """Position MSE plus weighted MSE of the wrapped yaw difference."""
    cfg = cfg or LossConfig()
    target = T.as_tensor(target)
    if pred.shape != target.shape:
        raise T.DimensionError(f"loss: prediction {pred.shape} vs target {target.shape}")
    diff = pred - target
    pos = T.mean(diff[..., :2] ** 2)
    yaw = T.mean(T.wrap_angle(diff[..., 2]) ** 2)
    return pos * cfg.position_weight + yaw * cfg.yaw_weight


# ----------------------------------------------------------------------
# optimizers
@dataclass
class OptimizerState:
    variant: str = "adaptive-moments"
    learning_rate: float = 1e-3
    momentum: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first: list[np.ndarray] = field(default_factory=list)
    second: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.variant not in ("sgd-momentum", "adaptive-moments"):
            raise ValueError(f"unknown optimizer variant {self.variant!r}")


def optimizer_step(state: OptimizerState, params: Sequence[Tensor], grads: Sequence[np.ndarray] | None = None) -> None:
    """Update ``params`` in place from ``grads`` (default: each ``p.grad``).

    sgd-momentum: ``v <- mu v + g; p <- p - lr v``.
    adaptive-moments: bias-corrected first/second moment update.
    """
    if grads is None:
        grads = [p.grad for p in params]
    for i, g in enumerate(grads):
        if g is None:
            raise ContractError(f"parameter {i} has no gradient")
    if not state.first:
        state.first = [np.zeros_like(p.data) for p in params]
        if state.variant == "adaptive-moments":
            state.second = [np.zeros_like(p.data) for p in params]
    state.step += 1
    lr = state.learning_rate
    if state.variant == "sgd-momentum":
        for p, g, v in zip(params, grads, state.first):
            v *= state.momentum
            v += g
            p.data = p.data - lr * v
        return
    b1, b2 = state.momentum, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.first, state.second):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ----------------------------------------------------------------------
# samples
@dataclass
class SampleSet:
    rasters: np.ndarray  # uint8, N x 5 x H x W
    targets: np.ndarray  # N x T x 3
    index: list[tuple[str, int]] = field(default_factory=list)
    skipped_scenes: int = 0

    def __len__(self) -> int:
        return len(self.targets)

    def batch(self, idx) -> tuple[Tensor, np.ndarray]:
        return Tensor(self.rasters[idx].astype(np.float64)), self.targets[idx]


def ego_future(scene: Scene, frame_index: int, horizon: int) -> np.ndarray:
    """Logged future ``horizon x (x, y, yaw)`` in the ego frame at ``frame_index``."""
    ego = scene.frames[frame_index].ego
    future = [scene.frames[frame_index + k].ego for k in range(1, horizon + 1)]
    out = np.empty((horizon, 3))
    out[:, :2] = to_ego_frame(ego, np.array([f.centroid for f in future]))
    out[:, 2] = wrap_angle(np.array([f.yaw for f in future]) - ego.yaw)
    return out


def build_samples(
    scenes: Sequence[Scene],
    horizon: int,
    raster_cfg: RasterConfig | None = None,
    stride: int = 1,
    offset: int = 0,
) -> SampleSet:
    """Rasters and targets for every ``stride``-th usable frame of each scene."""
    raster_cfg = raster_cfg or RasterConfig()
    hist = raster_cfg.history_steps
    rasters, targets, index = [], [], []
    skipped = 0
    for scene in scenes:
        frames = range(hist + offset, len(scene.frames) - horizon, stride)
        if len(frames) == 0:
            skipped += 1
            continue
        for i in frames:
            rasters.append(rasterize_array(scene, i, raster_cfg).astype(np.uint8))
            targets.append(ego_future(scene, i, horizon))
            index.append((scene.scene_id, i))
    if skipped:
        log.warning("skipped %d scene(s) shorter than history + horizon", skipped)
    if not targets:
        raise ValueError("no usable training samples")
    return SampleSet(np.stack(rasters), np.stack(targets), index, skipped)


# ----------------------------------------------------------------------
# training loop
@dataclass
class TrainConfig:
    epochs: int = 1
    batch_size: int = 16
    seed: int = 0
    learning_rate: float = 1e-3
    optimizer: str = "adaptive-moments"
    max_steps: int | None = None
    position_weight: float = 1.0
    yaw_weight: float = 1.0


@dataclass
class TrainResult:
    loss_curve: list[float]
    steps: int
    optimizer: OptimizerState


def dataset_loss(model, samples: SampleSet, loss_cfg: LossConfig | None = None, batch_size: int = 64) -> float:
    """Mean per-sample loss over the whole sample set (no graph recorded)."""
    total = 0.0
    with T.no_grad():
        for i in range(0, len(samples), batch_size):
            idx = np.arange(i, min(i + batch_size, len(samples)))
            x, y = samples.batch(idx)
            total += compute_loss(model(x), y, loss_cfg).item() * len(idx)
    return total / len(samples)


def train(model, samples: SampleSet, cfg: TrainConfig | None = None, stop=None) -> TrainResult:
    """Seeded minibatch training; returns the per-step loss curve.

    ``stop(step, loss)`` is called after every step; returning True ends
    training early (used for convergence and wall-clock budgets).
    """
    cfg = cfg or TrainConfig()
    if len(samples) == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(cfg.seed)
    loss_cfg = LossConfig(cfg.position_weight, cfg.yaw_weight)
    opt = OptimizerState(cfg.optimizer, cfg.learning_rate)
    params = model.parameters()
    batch = min(cfg.batch_size, len(samples))
    curve: list[float] = []
    steps = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(len(samples))
        for start in range(0, len(order), batch):
            if cfg.max_steps is not None and steps >= cfg.max_steps:
                return TrainResult(curve, steps, opt)
            x, y = samples.batch(np.sort(order[start : start + batch]))
            model.zero_grad()
            loss = compute_loss(model(x), y, loss_cfg)
            loss.backward()
            optimizer_step(opt, params)
            curve.append(loss.item())
            steps += 1
            if not math.isfinite(curve[-1]):
                raise FloatingPointError(f"loss diverged at step {steps}")
            if stop is not None and stop(steps, curve[-1]):
                return TrainResult(curve, steps, opt)
    return TrainResult(curve, steps, opt)


# ----------------------------------------------------------------------
# checkpoints
def _config_dict(model) -> dict:
    return json.loads(json.dumps(model.config.to_dict()))


def save_checkpoint(model, path, step: int = 0) -> None:
    header = json.dumps({"model": _config_dict(model), "step": step}, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    buf.write(struct.pack("<Q", len(header)))
    buf.write(header)
    for name, p in model.named_parameters():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<Q", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", p.ndim))
        buf.write(struct.pack(f"<{p.ndim}Q", *p.shape))
        buf.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}; expected {CHECKPOINT_MAGIC!r} version {CHECKPOINT_VERSION}")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}; expected version {CHECKPOINT_VERSION}")
    try:
        (hlen,) = struct.unpack_from("<Q", data, 8)
        pos = 16 + hlen
        header = json.loads(data[16:pos].decode("utf-8"))
        tensors = {}
        while pos < len(data):
            (nlen,) = struct.unpack_from("<Q", data, pos)
            pos += 8
            name = data[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}Q", data, pos)
            pos += 8 * rank
            count = int(np.prod(shape)) if rank else 1
            if pos + 8 * count > len(data):
                raise CheckpointError(f"{path}: truncated tensor {name!r}")
            tensors[name] = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * count
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from exc
    return header, tensors


def load_checkpoint(path, model=None):
    """Load parameters; builds the model from the stored config when ``model`` is None.

    A provided ``model`` must have been built from the same config.
    """
    from .zoo import build_model

    header, tensors = read_checkpoint(path)
    if model is None:
        model = build_model(header["model"])
    elif _config_dict(model) != header["model"]:
        raise CheckpointError(f"{path}: checkpoint config does not match the model's config")
    model.load_state_dict(tensors)
    return model
