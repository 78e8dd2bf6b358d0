"""Closed-loop rollouts, collision classification and per-10k-frame metrics.

Each step rasterizes the executed ego state, asks the policy for a
trajectory in the ego frame, executes only its first waypoint, and replays
every other agent from the log. A contact is counted once per episode: the
same (ego, agent) pair has to separate before it can collide again.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from . import tensor as T
from .geometry import OrientedBox, obb_intersect
from .raster import RasterConfig, render
from .world import DT, AgentState, Scene, wrap_angle

CSV_HEADER = ["method", "front", "side", "rear", "total", "frames"]


class ContractError(ValueError):
    """A caller violated an interface contract."""


class CollisionClass(str, Enum):
    FRONT = "Front"
    SIDE = "Side"
    REAR = "Rear"


def classify_collision(contact_bearing: float) -> CollisionClass:
    b = abs(contact_bearing)
    if b <= math.pi / 4:
        return CollisionClass.FRONT
    if b >= 3 * math.pi / 4:
        return CollisionClass.REAR
    return CollisionClass.SIDE


def contact_bearing(ego: AgentState, other: AgentState) -> float:
    """Bearing of ``other``'s center in the ego body frame, in (-pi, pi]."""
    dx = other.centroid[0] - ego.centroid[0]
    dy = other.centroid[1] - ego.centroid[1]
    c, s = math.cos(ego.yaw), math.sin(ego.yaw)
    return wrap_angle(math.atan2(-s * dx + c * dy, c * dx + s * dy))


@dataclass(frozen=True)
class CollisionEvent:
    scene_id: str
    frame_index: int
    other_track_id: int
    contact_bearing: float

    @property
    def kind(self) -> CollisionClass:
        return classify_collision(self.contact_bearing)


@dataclass(frozen=True)
class RolloutState:
    frame_index: int
    ego: AgentState
    prev_ego: AgentState
    in_contact: frozenset = frozenset()


@dataclass
class Observation:
    scene: Scene
    state: RolloutState
    raster: np.ndarray | None = None


# ----------------------------------------------------------------------
# policies
class Policy:
    """Maps a batch of observations to ``N x T x 3`` ego-frame trajectories."""

    uses_raster = False
    horizon = 12

    def plan(self, observations: Sequence[Observation]) -> np.ndarray:
        raise NotImplementedError


class ModelPolicy(Policy):
    uses_raster = True

    def __init__(self, model, batch_size: int = 64):
        self.model = model
        self.batch_size = batch_size
        self.horizon = model.horizon

    def plan(self, observations):
        rasters = np.stack([o.raster for o in observations]).astype(np.float64)
        outs = []
        with T.no_grad():
            for i in range(0, len(rasters), self.batch_size):
                outs.append(self.model(T.Tensor(rasters[i : i + self.batch_size])).data)
        return np.concatenate(outs, axis=0)


def to_ego_frame(ego: AgentState, xy: np.ndarray) -> np.ndarray:
    c, s = math.cos(ego.yaw), math.sin(ego.yaw)
    d = np.asarray(xy, dtype=float) - np.asarray(ego.centroid)
    return np.stack([c * d[..., 0] + s * d[..., 1], -s * d[..., 0] + c * d[..., 1]], axis=-1)


class ReplayPolicy(Policy):
    """Oracle: the logged ego future, expressed relative to the executed pose."""

    def __init__(self, horizon: int = 12):
        self.horizon = horizon

    def plan(self, observations):
        out = np.zeros((len(observations), self.horizon, 3))
        for n, obs in enumerate(observations):
            last = len(obs.scene.frames) - 1
            idx = [min(obs.state.frame_index + k, last) for k in range(1, self.horizon + 1)]
            future = [obs.scene.frames[i].ego for i in idx]
            out[n, :, :2] = to_ego_frame(obs.state.ego, np.array([f.centroid for f in future]))
            out[n, :, 2] = wrap_angle(np.array([f.yaw for f in future]) - obs.state.ego.yaw)
        return out


class ConstantVelocityPolicy(Policy):
    """Repeats the last executed displacement and heading change."""

    def __init__(self, horizon: int = 12):
        self.horizon = horizon

    def plan(self, observations):
        out = np.zeros((len(observations), self.horizon, 3))
        steps = np.arange(1, self.horizon + 1)[:, None]
        for n, obs in enumerate(observations):
            ego, prev = obs.state.ego, obs.state.prev_ego
            disp = to_ego_frame(prev, np.array(ego.centroid))
            dyaw = wrap_angle(ego.yaw - prev.yaw)
            out[n, :, :2] = steps * disp[None, :]
            out[n, :, 2] = steps[:, 0] * dyaw
        return out


class StationaryPolicy(Policy):
    def __init__(self, horizon: int = 12):
        self.horizon = horizon

    def plan(self, observations):
        return np.zeros((len(observations), self.horizon, 3))


POLICIES = {"replay": ReplayPolicy, "constant-velocity": ConstantVelocityPolicy, "stationary": StationaryPolicy}


# ----------------------------------------------------------------------
# rollout mechanics
def apply_waypoint(ego: AgentState, waypoint, extent) -> AgentState:
    fwd, left, dyaw = (float(v) for v in waypoint)
    c, s = math.cos(ego.yaw), math.sin(ego.yaw)
    x = ego.centroid[0] + c * fwd - s * left
    y = ego.centroid[1] + s * fwd + c * left
    vel = ((x - ego.centroid[0]) / DT, (y - ego.centroid[1]) / DT)
    return AgentState(0, (x, y), wrap_angle(ego.yaw + dyaw), tuple(extent), vel, ego.label)


def detect_contacts(scene: Scene, frame_index: int, ego: AgentState, in_contact: frozenset):
    """New events at ``frame_index`` and the updated in-contact set."""
    ego_box = OrientedBox.from_agent(ego)
    events, touching = [], set()
    for agent in scene.frames[frame_index].agents:
        if obb_intersect(ego_box, OrientedBox.from_agent(agent)):
            touching.add(agent.track_id)
            if agent.track_id not in in_contact:
                events.append(CollisionEvent(scene.scene_id, frame_index, agent.track_id, contact_bearing(ego, agent)))
    return events, frozenset(touching)


def initial_state(scene: Scene, cfg: RasterConfig) -> tuple[RolloutState, list[CollisionEvent]]:
    """Warm start on the log up to the first frame with full history."""
    events: list[CollisionEvent] = []
    contact: frozenset = frozenset()
    for i in range(cfg.history_steps + 1):
        found, contact = detect_contacts(scene, i, scene.frames[i].ego, contact)
        events.extend(found)
    h = cfg.history_steps
    return RolloutState(h, scene.frames[h].ego, scene.frames[h - 1].ego, contact), events


def _observe(policy: Policy, scene: Scene, state: RolloutState, cfg: RasterConfig) -> Observation:
    raster = None
    if policy.uses_raster:
        fr, prev = scene.frames[state.frame_index], scene.frames[state.frame_index - cfg.history_steps]
        raster = render(state.ego, state.prev_ego, fr.agents, prev.agents, scene.map, cfg)
    return Observation(scene, state, raster)


def _advance(scene: Scene, state: RolloutState, plan: np.ndarray):
    nxt = state.frame_index + 1
    ego = apply_waypoint(state.ego, plan[0], scene.frames[nxt].ego.extent)
    events, contact = detect_contacts(scene, nxt, ego, state.in_contact)
    return RolloutState(nxt, ego, state.ego, contact), events


def _check_plan(plan, n: int) -> np.ndarray:
    plan = np.asarray(plan, dtype=float)
    if plan.ndim != 3 or plan.shape[0] != n or plan.shape[1] < 1 or plan.shape[2] != 3:
        raise ContractError(f"policy must return shape ({n}, T, 3), got {plan.shape}")
    if not np.all(np.isfinite(plan)):
        raise ContractError("policy returned non-finite waypoints")
    return plan


def step_closed_loop(policy: Policy, scene: Scene, state: RolloutState, cfg: RasterConfig | None = None):
    """One closed-loop step; returns ``(next_state, events)``.

    ``events`` holds at most one event per agent and is usually empty.
    """
    cfg = cfg or RasterConfig()
    if state.frame_index + 1 >= len(scene.frames):
        raise ContractError(f"scene {scene.scene_id} has no frame after {state.frame_index}")
    plan = _check_plan(policy.plan([_observe(policy, scene, state, cfg)]), 1)
    return _advance(scene, state, plan[0])


@dataclass
class RolloutResult:
    events: list[CollisionEvent] = field(default_factory=list)
    frames_simulated: int = 0
    trajectories: dict[str, list[AgentState]] = field(default_factory=dict)


def rollout(policy: Policy, scenes: Sequence[Scene], cfg: RasterConfig | None = None, keep_trajectories: bool = False) -> RolloutResult:
    """Closed-loop rollout of every scene, stepped in lockstep so model
    policies see one batch per frame."""
    cfg = cfg or RasterConfig()
    result = RolloutResult()
    states, events = [], []
    for scene in scenes:
        st, ev = initial_state(scene, cfg)
        states.append(st)
        events.append(list(ev))
        if keep_trajectories:
            result.trajectories[scene.scene_id] = [f.ego for f in scene.frames[: cfg.history_steps + 1]]
    active = [i for i, s in enumerate(scenes) if states[i].frame_index + 1 < len(s.frames)]
    while active:
        obs = [_observe(policy, scenes[i], states[i], cfg) for i in active]
        plan = _check_plan(policy.plan(obs), len(active))
        for row, i in enumerate(active):
            states[i], ev = _advance(scenes[i], states[i], plan[row])
            events[i].extend(ev)
            if keep_trajectories:
                result.trajectories[scenes[i].scene_id].append(states[i].ego)
        active = [i for i in active if states[i].frame_index + 1 < len(scenes[i].frames)]
    for ev in events:
        result.events.extend(ev)
    result.frames_simulated = sum(len(s.frames) for s in scenes)
    return result


def _rollout_chunk(args):
    policy, scenes, cfg = args
    return rollout(policy, scenes, cfg)


def evaluate_policy(policy: Policy, scenes: Sequence[Scene], cfg: RasterConfig | None = None, jobs: int = 1) -> RolloutResult:
    """Rollout, optionally split over ``jobs`` processes; results merge in scene order."""
    cfg = cfg or RasterConfig()
    if jobs <= 1 or len(scenes) < 2:
        return rollout(policy, scenes, cfg)
    chunks = [list(c) for c in np.array_split(np.array(scenes, dtype=object), min(jobs, len(scenes)))]
    merged = RolloutResult()
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        for part in pool.map(_rollout_chunk, [(policy, c, cfg) for c in chunks]):
            merged.events.extend(part.events)
            merged.frames_simulated += part.frames_simulated
    return merged


# ----------------------------------------------------------------------
# metrics
@dataclass
class MetricsReport:
    method: str
    frames_simulated: int
    counts: dict[str, int]
    rates: dict[str, float]

    @property
    def total(self) -> float:
        return sum(self.rates.values())

    def row(self) -> list[str]:
        r = self.rates
        return [
            self.method,
            f"{r['Front']:.1f}",
            f"{r['Side']:.1f}",
            f"{r['Rear']:.1f}",
            f"{self.total:.1f}",
            str(self.frames_simulated),
        ]


def rates_per_10k(counts: dict[str, int], frames_simulated: int) -> dict[str, float]:
    return {k: v * 10000.0 / frames_simulated for k, v in counts.items()}


def aggregate_metrics(events: Sequence[CollisionEvent], frames_simulated: int, method: str = "") -> MetricsReport:
    if frames_simulated <= 0:
        raise ContractError(f"frames_simulated must be positive, got {frames_simulated}")
    counts = {c.value: 0 for c in CollisionClass}
    for ev in events:
        counts[ev.kind.value] += 1
    return MetricsReport(method, frames_simulated, counts, rates_per_10k(counts, frames_simulated))


def write_metrics_csv(reports: Sequence[MetricsReport], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for rep in reports:
            w.writerow(rep.row())


def read_metrics_rows(path) -> list[list[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != CSV_HEADER:
        raise ValueError(f"{path}: expected header {','.join(CSV_HEADER)}")
    return rows[1:]


def write_events_csv(events: Sequence[CollisionEvent], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scene_id", "frame_index", "other_track_id", "contact_bearing", "class"])
        for ev in events:
            w.writerow([ev.scene_id, ev.frame_index, ev.other_track_id, f"{ev.contact_bearing:.6f}", ev.kind.value])
