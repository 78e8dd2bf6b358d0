"""Oriented bounding boxes and the separating-axis overlap test."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .world import AgentState


@dataclass(frozen=True)
class OrientedBox:
    center: tuple[float, float]
    yaw: float
    half_length: float
    half_width: float

    def __post_init__(self):
        if self.half_length <= 0 or self.half_width <= 0:
            raise ValueError(f"half extents must be positive, got {self.half_length}, {self.half_width}")

    @classmethod
    def from_agent(cls, agent: AgentState) -> "OrientedBox":
        return cls(tuple(agent.centroid), agent.yaw, 0.5 * agent.extent[0], 0.5 * agent.extent[1])

    @property
    def axes(self) -> tuple[tuple[float, float], tuple[float, float]]:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return (c, s), (-s, c)

    def corners(self) -> np.ndarray:
        (ux, uy), (vx, vy) = self.axes
        cx, cy = self.center
        out = []
        for a, b in ((1, 1), (-1, 1), (-1, -1), (1, -1)):
            out.append((cx + a * self.half_length * ux + b * self.half_width * vx, cy + a * self.half_length * uy + b * self.half_width * vy))
        return np.array(out)

    def radius_along(self, axis) -> float:
        (ux, uy), (vx, vy) = self.axes
        return self.half_length * abs(ux * axis[0] + uy * axis[1]) + self.half_width * abs(vx * axis[0] + vy * axis[1])


def separation_margin(a: OrientedBox, b: OrientedBox) -> float:
    """Largest gap between the projections over the four candidate axes.

    Positive means separated by at least that much along some axis;
    non-positive means overlapping, and its magnitude is the smallest
    penetration depth over the axes.
    """
    dx = b.center[0] - a.center[0]
    dy = b.center[1] - a.center[1]
    worst = -math.inf
    for axis in a.axes + b.axes:
        dist = abs(dx * axis[0] + dy * axis[1])
        worst = max(worst, dist - (a.radius_along(axis) + b.radius_along(axis)))
    return worst


def obb_intersect(a: OrientedBox, b: OrientedBox) -> bool:
    """Exact SAT overlap test; boxes that merely touch count as intersecting."""
    return separation_margin(a, b) <= 0.0
