"""Scenes, frames and agents, plus a scripted synthetic scenario generator.

A scene is 25 s of driving sampled at 10 Hz. Every scenario is laid out in a
road frame (``s`` along the road, ``l`` to the left) and then placed in the
world by a seeded rigid transform, so models cannot lean on absolute pose.

Logged ego behaviour is always collision-free; the scripted interactions
only bite when the ego deviates from its log (e.g. keeps constant speed
behind a braking lead, or stands still in a crossing lane).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

DT = 0.1
SCENE_FRAMES = 250
LANE_WIDTH = 3.5
EGO_EXTENT = (4.5, 1.9)
SCENARIO_KINDS = ("straight", "lead-brake", "cut-in", "crossing", "free")
LABELS = ("vehicle", "cyclist", "pedestrian")


class DatasetError(ValueError):
    """Malformed dataset file."""


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.arctan2(np.sin(a), np.cos(a))
    if np.ndim(w) == 0:
        return math.pi if w == -math.pi else float(w)
    return np.where(w == -np.pi, np.pi, w)


def q9(x: float) -> float:
    """Round to 9 significant digits (the on-disk precision)."""
    return float(f"{x:.9g}")


@dataclass
class AgentState:
    track_id: int
    centroid: tuple[float, float]
    yaw: float
    extent: tuple[float, float]
    velocity: tuple[float, float] = (0.0, 0.0)
    label: str = "vehicle"

    def __post_init__(self):
        if self.extent[0] <= 0 or self.extent[1] <= 0:
            raise ValueError(f"agent {self.track_id}: extent must be positive, got {self.extent}")
        if self.label not in LABELS:
            raise ValueError(f"agent {self.track_id}: unknown label {self.label!r}")


@dataclass
class Frame:
    timestamp: float
    ego: AgentState
    agents: list[AgentState] = field(default_factory=list)

    def agent(self, track_id: int) -> AgentState:
        for a in self.agents:
            if a.track_id == track_id:
                return a
        raise KeyError(track_id)


@dataclass
class SemanticMap:
    polygons: list[list[tuple[float, float]]] = field(default_factory=list)
    lanes: list[list[tuple[float, float]]] = field(default_factory=list)


@dataclass
class Scene:
    scene_id: str
    host: str
    frames: list[Frame]
    map: SemanticMap = field(default_factory=SemanticMap)
    kind: str = ""
    start_index: int = 0

    @property
    def end_index(self) -> int:
        """Exclusive end index into a concatenated frames array."""
        return self.start_index + len(self.frames)

    def __len__(self) -> int:
        return len(self.frames)


def frame_intervals(scenes: Iterable[Scene]) -> list[tuple[int, int]]:
    """``[start, end)`` frame indices of each scene in one flat frames array."""
    out, start = [], 0
    for s in scenes:
        out.append((start, start + len(s.frames)))
        start += len(s.frames)
    return out


# ----------------------------------------------------------------------
# scenario scripting
class _Track:
    """Road-frame trajectory of one actor over all frames."""

    def __init__(self, s: np.ndarray, l: np.ndarray, extent, label="vehicle", heading=0.0):
        self.s = s
        self.l = l
        self.extent = extent
        self.label = label
        self.heading = heading


def speed_change_profile(v0: float, t0: float, accel: float, v1: float, s0: float = 0.0, t=None) -> np.ndarray:
    """Closed-form position: speed ``v0`` until ``t0``, then a linear ramp at
    ``|accel|`` to ``v1``, then ``v1``."""
    t = DT * np.arange(SCENE_FRAMES) if t is None else np.asarray(t, dtype=float)
    a = math.copysign(abs(accel), v1 - v0) if v1 != v0 else 0.0
    ramp = abs(v1 - v0) / abs(accel) if a else 0.0
    u = np.clip(t - t0, 0.0, ramp)
    after = np.maximum(t - t0 - ramp, 0.0)
    return s0 + v0 * np.minimum(t, t0) + v0 * u + 0.5 * a * u * u + v1 * after


def _constant(v: float, s0: float) -> np.ndarray:
    return s0 + v * DT * np.arange(SCENE_FRAMES)


def _lane_change(t_start: float, duration: float, l0: float, l1: float) -> np.ndarray:
    t = DT * np.arange(SCENE_FRAMES)
    u = np.clip((t - t_start) / duration, 0.0, 1.0)
    return l0 + (l1 - l0) * (0.5 - 0.5 * np.cos(np.pi * u))


def _vehicle_extent(rng) -> tuple[float, float]:
    return (float(rng.uniform(4.2, 4.8)), float(rng.uniform(1.8, 2.0)))


def _script(kind: str, rng: np.random.Generator):
    """Road-frame tracks for ego and agents, plus extra drivable polygons."""
    v0 = float(rng.uniform(7.0, 10.0))
    ego_s = _constant(v0, 0.0)
    agents: list[_Track] = []
    extra_polys = []
    react = 0.5

    def side_traffic(count: int):
        for _ in range(count):
            lane = LANE_WIDTH * rng.choice([-1.0, 1.0])
            offset = float(rng.uniform(-20.0, 30.0))
            agents.append(_Track(_constant(v0 + rng.uniform(-0.5, 0.5), offset), np.full(SCENE_FRAMES, lane), _vehicle_extent(rng)))

    def follower(change=None):
        gap = float(rng.uniform(11.0, 15.0))
        if change is None:
            s = _constant(v0, -gap)
        else:
            t0, accel, v1 = change
            s = speed_change_profile(v0, t0 + react, accel, v1, -gap)
        agents.append(_Track(s, np.zeros(SCENE_FRAMES), _vehicle_extent(rng)))

    if kind == "straight":
        lead_gap = float(rng.uniform(16.0, 25.0))
        agents.append(_Track(_constant(v0, lead_gap), np.zeros(SCENE_FRAMES), _vehicle_extent(rng)))
        follower()
        side_traffic(2)
    elif kind == "free":
        follower()
        side_traffic(2)
        agents.append(
            _Track(_constant(1.2, float(rng.uniform(10, 60))), np.full(SCENE_FRAMES, -3.0 * LANE_WIDTH), (0.6, 0.6), "pedestrian")
        )
    elif kind == "lead-brake":
        ext = _vehicle_extent(rng)
        gap = float(rng.uniform(12.0, 18.0))
        lead_s0 = gap + 0.5 * (ext[0] + EGO_EXTENT[0])
        t_brake = float(rng.uniform(3.0, 6.0))
        decel = float(rng.uniform(3.0, 5.0))
        lead_s = speed_change_profile(v0, t_brake, decel, 0.0, lead_s0)
        agents.append(_Track(lead_s, np.zeros(SCENE_FRAMES), ext))
        lead_stop = lead_s0 + v0 * t_brake + v0 * v0 / (2 * decel)
        ego_start = v0 * (t_brake + react)
        stop_at = lead_stop - 0.5 * (ext[0] + EGO_EXTENT[0]) - 4.0
        ego_decel = v0 * v0 / (2.0 * (stop_at - ego_start))
        change = (t_brake + react, ego_decel, 0.0)
        ego_s = speed_change_profile(v0, *change)
        follower(change)
        side_traffic(2)
    elif kind == "cut-in":
        ext = _vehicle_extent(rng)
        side = float(rng.choice([-1.0, 1.0]))
        t_cut = float(rng.uniform(2.0, 4.0))
        v_slow = v0 - float(rng.uniform(2.5, 3.5))
        s0 = float(rng.uniform(12.0, 16.0))
        cut_s = speed_change_profile(v0, t_cut, 1.5, v_slow, s0)
        cut_l = _lane_change(t_cut, 2.5, side * LANE_WIDTH, 0.0)
        agents.append(_Track(cut_s, cut_l, ext))
        change = (t_cut + react, 1.5, v_slow)
        ego_s = speed_change_profile(v0, *change)
        follower(change)
    elif kind == "crossing":
        ext = _vehicle_extent(rng)
        v_cross = float(rng.uniform(6.0, 9.0))
        t_cross = float(rng.uniform(3.0, 5.0))
        side = float(rng.choice([-1.0, 1.0]))
        start = side * v_cross * t_cross
        l = start - side * v_cross * DT * np.arange(SCENE_FRAMES)
        agents.append(_Track(np.zeros(SCENE_FRAMES), l, ext, heading=-side * math.pi / 2))
        agents.append(_Track(_constant(v0, float(rng.uniform(25.0, 35.0))), np.zeros(SCENE_FRAMES), _vehicle_extent(rng)))
        half = 400.0
        extra_polys.append([(-LANE_WIDTH, -half), (LANE_WIDTH, -half), (LANE_WIDTH, half), (-LANE_WIDTH, half)])
    else:
        raise ValueError(f"unknown scenario kind {kind!r}; expected one of {SCENARIO_KINDS}")

    ego = _Track(ego_s, np.zeros(SCENE_FRAMES), EGO_EXTENT)
    return ego, agents, extra_polys


def _track_states(track: _Track, origin, theta, track_id: int) -> list[AgentState]:
    c, s_ = math.cos(theta), math.sin(theta)
    xs = origin[0] + c * track.s - s_ * track.l
    ys = origin[1] + s_ * track.s + c * track.l
    vx = np.gradient(xs, DT)
    vy = np.gradient(ys, DT)
    ds = np.gradient(track.s, DT)
    dl = np.gradient(track.l, DT)
    moving = np.hypot(ds, dl) > 0.05
    local_yaw = np.where(moving, np.arctan2(dl, ds), track.heading)
    yaws = wrap_angle(theta + local_yaw)
    ext = (q9(track.extent[0]), q9(track.extent[1]))
    return [
        AgentState(
            track_id,
            (q9(xs[i]), q9(ys[i])),
            q9(float(yaws[i])),
            ext,
            (q9(vx[i]), q9(vy[i])),
            track.label,
        )
        for i in range(SCENE_FRAMES)
    ]


def generate_scenario(kind: str, seed: int) -> Scene:
    """Deterministic synthetic scene of the given kind."""
    if kind not in SCENARIO_KINDS:
        raise ValueError(f"unknown scenario kind {kind!r}; expected one of {SCENARIO_KINDS}")
    rng = np.random.default_rng([SCENARIO_KINDS.index(kind), int(seed)])
    ego_track, tracks, extra_polys = _script(kind, rng)
    theta = float(rng.uniform(-math.pi, math.pi))
    origin = (float(rng.uniform(-500, 500)), float(rng.uniform(-500, 500)))

    ego_states = _track_states(ego_track, origin, theta, 0)
    agent_states = [_track_states(t, origin, theta, i + 1) for i, t in enumerate(tracks)]
    frames = [
        Frame(q9(i * DT), ego_states[i], [states[i] for states in agent_states]) for i in range(SCENE_FRAMES)
    ]

    def to_world(pts):
        c, s_ = math.cos(theta), math.sin(theta)
        return [(q9(origin[0] + c * a - s_ * b), q9(origin[1] + s_ * a + c * b)) for a, b in pts]

    road_half = 1.5 * LANE_WIDTH
    polygons = [[(-80.0, -road_half), (400.0, -road_half), (400.0, road_half), (-80.0, road_half)]] + extra_polys
    lanes = [[(-80.0, k * LANE_WIDTH), (400.0, k * LANE_WIDTH)] for k in (-1, 0, 1)]
    semantic = SemanticMap([to_world(p) for p in polygons], [to_world(l) for l in lanes])
    return Scene(f"{kind}-{seed}", f"synthetic-{kind}", frames, semantic, kind)


def generate_mix(counts: dict[str, int], seed: int) -> list[Scene]:
    """Scenes for a scenario mix; scene ``j`` of each kind uses seed ``seed * 100003 + j``."""
    scenes = []
    for kind in SCENARIO_KINDS:
        for j in range(int(counts.get(kind, 0))):
            scenes.append(generate_scenario(kind, seed * 100003 + j))
    unknown = set(counts) - set(SCENARIO_KINDS)
    if unknown:
        raise ValueError(f"unknown scenario kinds {sorted(unknown)}")
    return scenes


# ----------------------------------------------------------------------
# JSON-lines persistence
def _agent_dict(a: AgentState, with_id: bool) -> dict:
    d = {
        "cx": q9(a.centroid[0]),
        "cy": q9(a.centroid[1]),
        "yaw": q9(a.yaw),
        "len": q9(a.extent[0]),
        "wid": q9(a.extent[1]),
        "vx": q9(a.velocity[0]),
        "vy": q9(a.velocity[1]),
    }
    if with_id:
        d = {"id": a.track_id, **d, "label": a.label}
    return d


def scene_to_dict(scene: Scene) -> dict:
    return {
        "scene_id": scene.scene_id,
        "host": scene.host,
        "kind": scene.kind,
        "frames": [
            {"t": q9(f.timestamp), "ego": _agent_dict(f.ego, False), "agents": [_agent_dict(a, True) for a in f.agents]}
            for f in scene.frames
        ],
        "map": {
            "polygons": [[[q9(x), q9(y)] for x, y in p] for p in scene.map.polygons],
            "lanes": [[[q9(x), q9(y)] for x, y in p] for p in scene.map.lanes],
        },
    }


def _agent_from(d: dict, track_id: int | None = None) -> AgentState:
    return AgentState(
        int(d["id"]) if track_id is None else track_id,
        (float(d["cx"]), float(d["cy"])),
        float(d["yaw"]),
        (float(d["len"]), float(d["wid"])),
        (float(d.get("vx", 0.0)), float(d.get("vy", 0.0))),
        d.get("label", "vehicle"),
    )


def scene_from_dict(d: dict) -> Scene:
    frames = [
        Frame(float(f["t"]), _agent_from(f["ego"], 0), [_agent_from(a) for a in f.get("agents", [])])
        for f in d["frames"]
    ]
    m = d.get("map", {})
    semantic = SemanticMap(
        [[(float(x), float(y)) for x, y in p] for p in m.get("polygons", [])],
        [[(float(x), float(y)) for x, y in p] for p in m.get("lanes", [])],
    )
    return Scene(str(d["scene_id"]), str(d["host"]), frames, semantic, str(d.get("kind", "")))


def save_dataset(scenes: Iterable[Scene], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for scene in scenes:
            fh.write(json.dumps(scene_to_dict(scene), separators=(",", ":")))
            fh.write("\n")


def load_dataset(path) -> list[Scene]:
    """Read a JSON-lines dataset; any malformed line fails the whole load."""
    scenes = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            scenes.append(scene_from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"{path}: line {lineno}: {exc}") from exc
    starts = frame_intervals(scenes)
    for scene, (start, _) in zip(scenes, starts):
        scene.start_index = start
    return scenes
