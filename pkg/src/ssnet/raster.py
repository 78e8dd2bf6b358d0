"""Ego-centric bird's-eye-view rasterization.

Channels: 0 ego box at t, 1 ego box at t-1, 2 agent boxes at t,
3 agent boxes at t-1, 4 drivable area. The ego sits at pixel (H/2, W/2)
heading up; its left is toward column 0. A pixel is set when its center
lies inside (or on the edge of) a shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor import Tensor
from .world import AgentState, Scene, SemanticMap

NUM_CHANNELS = 5


@dataclass(frozen=True)
class RasterConfig:
    size: int = 64
    resolution: float = 0.25
    history_steps: int = 1

    def __post_init__(self):
        if self.size % 4:
            raise ValueError(f"raster size must be divisible by 4, got {self.size}")
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if self.history_steps != 1:
            raise ValueError("only one history step is supported")

    @property
    def H(self) -> int:
        return self.size

    @property
    def W(self) -> int:
        return self.size


def _to_ego(ego_xy, ego_yaw: float, pts: np.ndarray) -> np.ndarray:
    """World points (..., 2) -> ego frame (forward, left)."""
    c, s = math.cos(ego_yaw), math.sin(ego_yaw)
    d = np.asarray(pts, dtype=float) - np.asarray(ego_xy, dtype=float)
    return np.stack([c * d[..., 0] + s * d[..., 1], -s * d[..., 0] + c * d[..., 1]], axis=-1)


def world_to_raster(ego: AgentState, cfg: RasterConfig, p) -> tuple[float, float]:
    """Continuous (row, col) of world point ``p``; may fall outside the grid."""
    fwd, left = _to_ego(ego.centroid, ego.yaw, np.asarray(p, dtype=float))
    return cfg.H / 2 - fwd / cfg.resolution, cfg.W / 2 - left / cfg.resolution


_GRID_CACHE: dict[tuple[int, float], tuple[np.ndarray, np.ndarray]] = {}


def pixel_centers(cfg: RasterConfig) -> tuple[np.ndarray, np.ndarray]:
    """Ego-frame (forward, left) coordinates of every pixel center, each H x W."""
    key = (cfg.size, cfg.resolution)
    if key not in _GRID_CACHE:
        idx = np.arange(cfg.size) + 0.5
        fwd = (cfg.H / 2 - idx)[:, None] * cfg.resolution
        left = (cfg.W / 2 - idx)[None, :] * cfg.resolution
        _GRID_CACHE[key] = (np.broadcast_to(fwd, (cfg.H, cfg.W)), np.broadcast_to(left, (cfg.H, cfg.W)))
    return _GRID_CACHE[key]


def _fill_boxes(out: np.ndarray, boxes: np.ndarray, cfg: RasterConfig) -> None:
    """OR oriented boxes ``(n, 5)`` = (fwd, left, rel_yaw, length, width) into ``out``."""
    if len(boxes) == 0:
        return
    fwd, left = pixel_centers(cfg)
    reach = 0.5 * np.hypot(boxes[:, 3], boxes[:, 4])
    half_view = 0.5 * cfg.size * cfg.resolution * math.sqrt(2)
    visible = np.hypot(boxes[:, 0], boxes[:, 1]) <= half_view + reach
    for bx, by, byaw, blen, bwid in boxes[visible]:
        c, s = math.cos(byaw), math.sin(byaw)
        dx = fwd - bx
        dy = left - by
        u = c * dx + s * dy
        v = -s * dx + c * dy
        out |= (np.abs(u) <= 0.5 * blen) & (np.abs(v) <= 0.5 * bwid)


def _fill_polygon(out: np.ndarray, poly: np.ndarray, cfg: RasterConfig) -> None:
    """Even-odd point-in-polygon over pixel centers; ``poly`` in ego frame (n, 2)."""
    fwd, left = pixel_centers(cfg)
    inside = np.zeros(out.shape, dtype=bool)
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if y1 == y2:
            continue
        crosses = (y1 > left) != (y2 > left)
        x_at = x1 + (left - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (fwd < x_at)
    out |= inside


def ego_boxes(ego_xy, ego_yaw, agents: Sequence[AgentState]) -> np.ndarray:
    if not agents:
        return np.zeros((0, 5))
    centers = _to_ego(ego_xy, ego_yaw, np.array([a.centroid for a in agents]))
    yaws = np.array([a.yaw for a in agents]) - ego_yaw
    ext = np.array([a.extent for a in agents])
    return np.column_stack([centers, yaws, ext])


def render(
    ego_now: AgentState,
    ego_prev: AgentState,
    agents_now: Sequence[AgentState],
    agents_prev: Sequence[AgentState],
    semantic: SemanticMap,
    cfg: RasterConfig,
) -> np.ndarray:
    """Binary 5 x H x W raster (bool) centered on ``ego_now``."""
    out = np.zeros((NUM_CHANNELS, cfg.H, cfg.W), dtype=bool)
    center, yaw = ego_now.centroid, ego_now.yaw
    _fill_boxes(out[0], ego_boxes(center, yaw, [ego_now]), cfg)
    _fill_boxes(out[1], ego_boxes(center, yaw, [ego_prev]), cfg)
    _fill_boxes(out[2], ego_boxes(center, yaw, agents_now), cfg)
    _fill_boxes(out[3], ego_boxes(center, yaw, agents_prev), cfg)
    for poly in semantic.polygons:
        _fill_polygon(out[4], _to_ego(center, yaw, np.asarray(poly, dtype=float)), cfg)
    return out


def rasterize_array(scene: Scene, frame_index: int, cfg: RasterConfig) -> np.ndarray:
    if not cfg.history_steps <= frame_index < len(scene.frames):
        raise IndexError(
            f"frame index {frame_index} outside [{cfg.history_steps}, {len(scene.frames)}) for scene {scene.scene_id}"
        )
    now = scene.frames[frame_index]
    prev = scene.frames[frame_index - cfg.history_steps]
    return render(now.ego, prev.ego, now.agents, prev.agents, scene.map, cfg)


def rasterize(scene: Scene, frame_index: int, cfg: RasterConfig | None = None) -> Tensor:
    """Logged-state raster of ``scene`` at ``frame_index`` as a float tensor."""
    cfg = cfg or RasterConfig()
    return Tensor(rasterize_array(scene, frame_index, cfg).astype(np.float64))
