"""Scenario description: environment, agent populations and per-kind weights.

Scenario files are TOML with sections ``[params]``, ``[weights.<kind>]``,
``[road.<id>]``, ``[light.<id>]``, ``[obstacle.<id>]``,
``[attractor.<id>]`` and ``[agents.<id>]``. ``dump_scenario`` writes the
fully defaulted form; loading that dump gives the same scenario back.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Union

import numpy as np
import tomli
import tomli_w

from .dataset import KINDS, GroupedDataset, adapt_velocities, speed_group
from .energy import Bodies, EnergyWeights, WEIGHT_KEYS, point_bodies
from .geometry import (
    EPS,
    RECT,
    Circle,
    Rect,
    Shape,
    clearance,
    norm,
    perp,
    shape_params,
    support_radius,
    unit_vector,
)
from .state import AgentState

MAX_PLACEMENT_ATTEMPTS = 10_000
SIDEWALK_WIDTH = 3.0
VIRTUAL_HALF_WIDTH = 0.05


class ScenarioError(ValueError):
    """Invalid scenario configuration; the message starts with the offending key path."""


class InitializationError(RuntimeError):
    def __init__(self, message: str, placed: int, requested: int):
        super().__init__(message)
        self.placed = placed
        self.requested = requested


# ---------------------------------------------------------------- environment


@dataclass(frozen=True)
class RoadPoint:
    segment: int
    arc: float
    lateral: float
    tangent: np.ndarray
    closest: np.ndarray


@dataclass(eq=False)
class Road:
    """One-way road following ``centerline``; lanes are laid out symmetrically about it."""

    id: str
    centerline: np.ndarray
    lane_count: int = 1
    lane_width: float = 3.5

    def __post_init__(self):
        self.centerline = np.asarray(self.centerline, dtype=float).reshape(-1, 2)
        if len(self.centerline) < 2:
            raise ScenarioError(f"road.{self.id}.centerline: need at least 2 points")
        if self.lane_count < 1 or not self.lane_width > 0:
            raise ScenarioError(f"road.{self.id}: lane_count >= 1 and lane_width > 0 required")
        if np.any(norm(np.diff(self.centerline, axis=0)) < EPS):
            raise ScenarioError(f"road.{self.id}.centerline: repeated point")

    @cached_property
    def _segments(self):
        a = self.centerline[:-1]
        d = self.centerline[1:] - a
        lengths = norm(d)
        starts = np.concatenate([[0.0], np.cumsum(lengths)[:-1]])
        return a, d, lengths, starts

    @property
    def length(self) -> float:
        _, _, lengths, _ = self._segments
        return float(lengths.sum())

    @property
    def half_width(self) -> float:
        return 0.5 * self.lane_count * self.lane_width

    def project(self, p) -> RoadPoint:
        a, d, lengths, starts = self._segments
        p = np.asarray(p, dtype=float)
        t = np.clip(((p - a) * d).sum(axis=1) / (lengths * lengths), 0.0, 1.0)
        closest = a + t[:, None] * d
        k = int(np.argmin(norm(p - closest)))
        tangent = d[k] / lengths[k]
        lateral = float(np.dot(p - closest[k], perp(tangent)))
        return RoadPoint(k, float(starts[k] + t[k] * lengths[k]), lateral, tangent, closest[k])

    def point_at(self, arc: float, lateral: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
        a, d, lengths, starts = self._segments
        arc = min(max(arc, 0.0), self.length)
        k = int(min(np.searchsorted(starts, arc, side="right") - 1, len(lengths) - 1))
        tangent = d[k] / lengths[k]
        base = a[k] + tangent * (arc - starts[k])
        return base + lateral * perp(tangent), tangent

    def lane_of(self, lateral: float) -> int:
        k = math.floor((lateral + self.half_width) / self.lane_width)
        return min(max(k, 0), self.lane_count - 1)

    def lane_center(self, lane: int) -> float:
        return -self.half_width + (lane + 0.5) * self.lane_width

    @property
    def start_tangent(self) -> np.ndarray:
        return unit_vector(self.centerline[1] - self.centerline[0])

    @property
    def end_tangent(self) -> np.ndarray:
        return unit_vector(self.centerline[-1] - self.centerline[-2])


@dataclass(eq=False)
class TrafficLight:
    id: str
    stop_line: np.ndarray
    cycle: list
    road: str
    offset: float = 0.0
    kinds: tuple = ()

    def __post_init__(self):
        self.stop_line = np.asarray(self.stop_line, dtype=float).reshape(2, 2)
        if not self.cycle:
            raise ScenarioError(f"light.{self.id}.cycle: must not be empty")
        for phase, dur in self.cycle:
            if phase not in ("green", "red"):
                raise ScenarioError(f"light.{self.id}.cycle: unknown phase {phase!r}")
            if not dur > 0:
                raise ScenarioError(f"light.{self.id}.cycle: durations must be positive")

    def phase(self, t: float) -> str:
        period = sum(d for _, d in self.cycle)
        r = (t + self.offset) % period
        for phase, dur in self.cycle:
            if r < dur:
                return phase
            r -= dur
        return self.cycle[-1][0]


@dataclass(frozen=True)
class Obstacle:
    id: str
    shape: Shape
    position: np.ndarray
    heading: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0]))


@dataclass(frozen=True)
class Attractor:
    id: str
    position: np.ndarray


# ---------------------------------------------------------------- agent specs


@dataclass(frozen=True)
class RegionPlacement:
    rect: tuple


@dataclass(frozen=True)
class RoadsidePlacement:
    road: str
    lateral: str = "lanes"
    arc_range: tuple | None = None


@dataclass(frozen=True)
class CirclePlacement:
    center: tuple
    radius: float


Placement = Union[RegionPlacement, RoadsidePlacement, CirclePlacement]


@dataclass(frozen=True)
class PointGoal:
    target: tuple


@dataclass(frozen=True)
class RoadFollowGoal:
    road: str


@dataclass(frozen=True)
class OppositeSideGoal:
    """Walk along ``direction`` until the coordinate ``p . direction`` reaches ``line``."""

    direction: tuple
    line: float


@dataclass(frozen=True)
class CrossingGoal:
    """Cross ``road``: pedestrians walk beside it (sign ``walk``) and step across at random;
    vehicles turn from ``road`` onto ``to_road``."""

    road: str
    to_road: str | None = None
    walk: float = 1.0


Goal = Union[PointGoal, RoadFollowGoal, OppositeSideGoal, CrossingGoal]


@dataclass(frozen=True)
class AgentSpec:
    id: str
    kind: str
    count: int
    shape: Shape
    placement: Placement
    goal: Goal
    group: str | None = None
    overtake: str = "can_overtake"
    target_speed: float | None = None


@dataclass(frozen=True)
class Params:
    dt: float = 0.1
    T: int = 10
    d_c: float = 1.0
    d_a: float = 1.0
    d_a_max: float | None = None
    h: float = 10.0
    z: int = 2
    bin_width: float = 0.5
    seed: int = 0
    delta: int = 10
    cross_probability: float = 0.01
    leader_range: float | None = None

    def __post_init__(self):
        if self.d_a_max is None:
            object.__setattr__(self, "d_a_max", 3.0 * self.d_a)
        if self.leader_range is None:
            object.__setattr__(self, "leader_range", self.h)


@dataclass(eq=False)
class Scenario:
    bounds: tuple
    params: Params
    weights: dict
    agent_specs: list
    roads: dict = field(default_factory=dict)
    lights: list = field(default_factory=list)
    obstacles: list = field(default_factory=list)
    attractors: list = field(default_factory=list)

    @property
    def kinds(self) -> list[str]:
        return sorted({s.kind for s in self.agent_specs})

    @property
    def total_agents(self) -> int:
        return sum(s.count for s in self.agent_specs)

    @cached_property
    def obstacle_bodies(self) -> Bodies:
        if not self.obstacles:
            return Bodies.empty()
        codes, a, b = zip(*(shape_params(o.shape) for o in self.obstacles))
        k = len(self.obstacles)
        return Bodies(
            np.arange(k, dtype=np.int64),
            np.array([o.position for o in self.obstacles], dtype=float),
            np.zeros((k, 2)),
            np.array([o.heading for o in self.obstacles], dtype=float),
            np.array(codes, dtype=np.int64),
            np.array(a, dtype=float),
            np.array(b, dtype=float),
        )

    @cached_property
    def attractor_bodies(self) -> Bodies:
        if not self.attractors:
            return Bodies.empty()
        return point_bodies(range(len(self.attractors)), [a.position for a in self.attractors])

    def agent_road(self, agent: AgentState, p=None) -> Road | None:
        """Road whose lanes the agent currently drives in, if any."""
        goal = self.agent_specs[agent.spec_index].goal
        p = agent.position if p is None else p
        if isinstance(goal, RoadFollowGoal):
            return self.roads[goal.road]
        if isinstance(goal, CrossingGoal):
            if goal.to_road is None:
                return None
            src = self.roads[goal.road]
            if np.dot(p - src.centerline[-1], src.end_tangent) < 0:
                return src
            dst = self.roads[goal.to_road]
            if np.dot(p - dst.centerline[0], dst.start_tangent) >= 0:
                return dst
        return None


# ---------------------------------------------------------------- behavior


def _crossing_progress(src: Road, dst: Road, p) -> float | None:
    """Fraction of the way from the end of ``src`` to the start of ``dst``; None outside."""
    a = src.centerline[-1]
    b = dst.centerline[0]
    if np.dot(p - a, src.end_tangent) < 0:
        return None
    chord = b - a
    length2 = float(np.dot(chord, chord))
    if length2 < EPS:
        return 1.0
    return float(np.clip(np.dot(p - a, chord) / length2, 0.0, 1.0))


def control_direction(scenario: Scenario, agent: AgentState, p=None, t: float = 0.0) -> np.ndarray:
    """Unit routing direction for ``agent`` at ``p`` (zero once a point goal is reached)."""
    p = agent.position if p is None else np.asarray(p, dtype=float)
    goal = scenario.agent_specs[agent.spec_index].goal
    if isinstance(goal, PointGoal):
        return unit_vector(np.asarray(goal.target, dtype=float) - p)
    if isinstance(goal, OppositeSideGoal):
        dx, dy = goal.direction
        n = math.hypot(dx, dy)
        return np.array([dx / n, dy / n]) if n >= EPS else np.zeros(2)
    if isinstance(goal, RoadFollowGoal):
        return scenario.roads[goal.road].project(p).tangent.copy()
    if isinstance(goal, CrossingGoal):
        src = scenario.roads[goal.road]
        if goal.to_road is None:
            tangent = src.project(p).tangent
            if agent.phase == 1:
                return agent.cross_sign * perp(tangent)
            return goal.walk * tangent
        dst = scenario.roads[goal.to_road]
        lam = _crossing_progress(src, dst, p)
        if lam is None:
            return src.project(p).tangent.copy()
        if lam >= 1.0:
            return dst.project(p).tangent.copy()
        return unit_vector((1.0 - lam) * src.end_tangent + lam * dst.start_tangent)
    raise ScenarioError(f"unsupported goal {goal!r}")


def goal_progress(scenario: Scenario, agent: AgentState, p=None) -> float:
    """Signed distance past the goal line (opposite-side goals) or minus distance to a point goal."""
    p = agent.position if p is None else np.asarray(p, dtype=float)
    goal = scenario.agent_specs[agent.spec_index].goal
    if isinstance(goal, OppositeSideGoal):
        return float(np.dot(p, unit_vector(np.asarray(goal.direction, dtype=float))) - goal.line)
    if isinstance(goal, PointGoal):
        return -float(norm(np.asarray(goal.target, dtype=float) - p))
    raise ScenarioError("goal progress is only defined for point and opposite-side goals")


def _agent_rng(seed: int, agent_id: int, frame: int) -> np.random.Generator:
    return np.random.default_rng([seed, agent_id, frame])


def advance_modes(scenario: Scenario, agents: list[AgentState], frame: int) -> None:
    """Start or finish road crossings for pedestrians with a crossing goal.

    Randomness is keyed on (seed, agent, frame) so the outcome does not
    depend on processing order.
    """
    p_cross = scenario.params.cross_probability
    for ag in agents:
        goal = scenario.agent_specs[ag.spec_index].goal
        if not isinstance(goal, CrossingGoal) or goal.to_road is not None:
            continue
        road = scenario.roads[goal.road]
        lateral = road.project(ag.position).lateral
        if ag.phase == 0:
            if _agent_rng(scenario.params.seed, ag.id, frame).random() < p_cross:
                ag.phase = 1
                ag.cross_sign = -1.0 if lateral > 0 else 1.0
        elif ag.phase == 1 and lateral * ag.cross_sign > road.half_width + 1.0:
            ag.phase = 2


@dataclass
class StopDirective:
    obstacles: Bodies
    suppress_attraction: bool = False


def _front_radius(agent: AgentState) -> float:
    code, a, b = shape_params(agent.shape)
    return float(support_radius(code, a, b, agent.heading, agent.heading))


def light_gate(
    scenario: Scenario,
    agent: AgentState,
    p=None,
    v=None,
    t: float = 0.0,
    others: tuple | None = None,
) -> StopDirective | None:
    """Virtual static obstacles that make ``agent`` hold.

    A red light governing the agent's road places a thin barrier on its stop
    line once the agent could reach the line within the anticipation
    horizon. For vehicles, pedestrians standing in the lane ahead become
    static obstacles and cancel the pull toward leading vehicles. ``others``
    is ``(bodies, kinds)`` for the agents the vehicle can see.
    """
    p = agent.position if p is None else np.asarray(p, dtype=float)
    v = agent.velocity if v is None else np.asarray(v, dtype=float)
    prm = scenario.params
    horizon = prm.T * prm.dt
    reach = float(norm(v)) * horizon + prm.d_c + _front_radius(agent)
    road = scenario.agent_road(agent, p)
    found: list[Bodies] = []
    suppress = False

    if road is not None:
        for light in scenario.lights:
            if light.road != road.id or (light.kinds and agent.kind not in light.kinds):
                continue
            if light.phase(t) != "red":
                continue
            mid = light.stop_line.mean(axis=0)
            approach = road.project(mid).tangent
            ahead = float(np.dot(mid - p, approach))
            if 0.0 < ahead <= reach:
                along = light.stop_line[1] - light.stop_line[0]
                found.append(
                    Bodies(
                        np.array([-1], dtype=np.int64),
                        mid[None, :],
                        np.zeros((1, 2)),
                        unit_vector(along)[None, :],
                        np.array([RECT], dtype=np.int64),
                        np.array([0.5 * float(norm(along))]),
                        np.array([VIRTUAL_HALF_WIDTH]),
                    )
                )

    if others is not None and agent.kind != "pedestrian" and road is not None:
        bodies, kinds = others
        is_ped = np.asarray(kinds) == "pedestrian"
        if np.any(is_ped):
            peds = bodies.take(np.nonzero(is_ped)[0])
            heading = agent.heading
            rel = peds.positions - p
            along = rel @ heading
            lat = np.abs(rel @ perp(heading))
            _, _, half_w = shape_params(agent.shape)
            half_w = half_w or shape_params(agent.shape)[1]
            ahead = (along > 0) & (along <= reach + peds.a) & (lat <= half_w + peds.a + 0.5 * road.lane_width)
            if np.any(ahead):
                idx = np.nonzero(ahead)[0]
                block = peds.take(idx)
                found.append(
                    Bodies(
                        block.ids, block.positions, np.zeros_like(block.velocities),
                        block.headings, block.codes, block.a, block.b,
                    )
                )
                suppress = True

    if not found:
        return None
    return StopDirective(Bodies.concat(found), suppress)


# ---------------------------------------------------------------- initialization


def _sample_position(spec: AgentSpec, scenario: Scenario, rng: np.random.Generator):
    pl = spec.placement
    if isinstance(pl, RegionPlacement):
        x0, y0, x1, y1 = pl.rect
        return np.array([rng.uniform(x0, x1), rng.uniform(y0, y1)]), None
    if isinstance(pl, CirclePlacement):
        r = pl.radius * math.sqrt(rng.uniform())
        th = rng.uniform(0.0, 2.0 * math.pi)
        return np.asarray(pl.center, dtype=float) + r * np.array([math.cos(th), math.sin(th)]), None
    road = scenario.roads[pl.road]
    lo, hi = pl.arc_range if pl.arc_range is not None else (0.0, road.length)
    arc = rng.uniform(lo, hi)
    if pl.lateral == "sidewalk":
        side = 1.0 if rng.uniform() < 0.5 else -1.0
        lateral = side * (road.half_width + rng.uniform(0.5, SIDEWALK_WIDTH))
    else:
        lateral = road.lane_center(int(rng.integers(road.lane_count)))
    pos, tangent = road.point_at(arc, lateral)
    return pos, tangent


def initialize_agents(scenario: Scenario, dataset: GroupedDataset, seed: int | None = None) -> list[AgentState]:
    """Place every agent without overlaps and give it a velocity drawn from the dataset."""
    seed = scenario.params.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    missing = [k for k in scenario.kinds if k not in dataset.groups]
    if missing:
        raise ScenarioError(f"dataset has no states for kind(s): {', '.join(missing)}")
    obstacles = scenario.obstacle_bodies
    agents: list[AgentState] = []
    total = scenario.total_agents
    placed_p = np.zeros((total, 2))
    placed_h = np.zeros((total, 2))
    placed_code = np.zeros(total, dtype=np.int64)
    placed_a = np.zeros(total)
    placed_b = np.zeros(total)
    next_id = 0
    for si, spec in enumerate(scenario.agent_specs):
        code, a, b = shape_params(spec.shape)
        weights = scenario.weights[spec.kind]
        kind_idx = dataset.kind_indices(spec.kind)
        for _ in range(spec.count):
            for _attempt in range(MAX_PLACEMENT_ATTEMPTS):
                pos, tangent = _sample_position(spec, scenario, rng)
                probe = AgentState(next_id, spec.kind, pos, np.zeros(2), np.zeros(2), spec.shape, spec_index=si)
                ctrl = control_direction(scenario, probe, pos, 0.0)
                heading = tangent if tangent is not None else ctrl
                if norm(heading) < EPS:
                    heading = np.array([1.0, 0.0])
                ok = True
                k = next_id
                if k:
                    d = clearance(pos, np.zeros(2), code, a, b, heading, placed_p[:k], np.zeros((k, 2)),
                                  placed_code[:k], placed_a[:k], placed_b[:k], placed_h[:k], 0.0)
                    ok = bool(np.all(d > 0))
                if ok and len(obstacles):
                    d = clearance(pos, np.zeros(2), code, a, b, heading, obstacles.positions,
                                  obstacles.velocities, obstacles.codes, obstacles.a, obstacles.b,
                                  obstacles.headings, 0.0)
                    ok = bool(np.all(d > 0))
                if ok:
                    break
            else:
                raise InitializationError(
                    f"agents.{spec.id}: could not place agent without overlap after "
                    f"{MAX_PLACEMENT_ATTEMPTS} attempts ({len(agents)} of {total} placed)",
                    placed=len(agents),
                    requested=total,
                )
            j = int(kind_idx[rng.integers(len(kind_idx))])
            v0 = adapt_velocities(dataset.velocities[j], dataset.controls[j], ctrl)
            # heading stays as placed so the overlap check above remains valid
            if spec.target_speed is not None:
                target = spec.target_speed
            elif weights.target_speed is not None:
                target = weights.target_speed
            else:
                target = float(norm(v0))
            agents.append(
                AgentState(
                    id=next_id,
                    kind=spec.kind,
                    position=pos,
                    velocity=v0,
                    control_direction=ctrl,
                    shape=spec.shape,
                    heading=heading,
                    group_id=spec.group,
                    speed_group=int(speed_group(norm(v0), dataset.bin_width)),
                    target_speed=float(target),
                    spec_index=si,
                )
            )
            placed_p[next_id] = pos
            placed_h[next_id] = heading
            placed_code[next_id] = code
            placed_a[next_id] = a
            placed_b[next_id] = b
            next_id += 1
    return agents


# ---------------------------------------------------------------- file format

_REQUIRED = object()


class _Table:
    def __init__(self, data, path: str):
        if not isinstance(data, dict):
            raise ScenarioError(f"{path}: expected a table")
        self.data = data
        self.path = path
        self.used: set[str] = set()

    def get(self, key, conv, default=_REQUIRED):
        self.used.add(key)
        where = f"{self.path}.{key}" if self.path else key
        if key not in self.data:
            if default is _REQUIRED:
                raise ScenarioError(f"{where}: missing required key")
            return default
        try:
            return conv(self.data[key])
        except ScenarioError as exc:
            raise ScenarioError(f"{where}: {exc}") from None
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"{where}: {exc}") from None

    def sub(self, key) -> "_Table":
        self.used.add(key)
        return _Table(self.data.get(key, {}), f"{self.path}.{key}" if self.path else key)

    def done(self):
        extra = sorted(set(self.data) - self.used)
        if extra:
            where = f"{self.path}.{extra[0]}" if self.path else extra[0]
            raise ScenarioError(f"{where}: unknown key")


def _num(x) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ScenarioError(f"expected a number, got {x!r}")
    if not math.isfinite(x):
        raise ScenarioError("must be finite")
    return float(x)


def _pos(x) -> float:
    x = _num(x)
    if not x > 0:
        raise ScenarioError("must be positive")
    return x


def _nonneg(x) -> float:
    x = _num(x)
    if x < 0:
        raise ScenarioError("must be non-negative")
    return x


def _int(x) -> int:
    if isinstance(x, bool) or not isinstance(x, int):
        raise ScenarioError(f"expected an integer, got {x!r}")
    return x


def _str(x) -> str:
    if not isinstance(x, str):
        raise ScenarioError(f"expected a string, got {x!r}")
    return x


def _vec(x) -> tuple:
    if not isinstance(x, (list, tuple)) or len(x) != 2:
        raise ScenarioError(f"expected [x, y], got {x!r}")
    return (_num(x[0]), _num(x[1]))


def _points(x) -> list:
    if not isinstance(x, (list, tuple)):
        raise ScenarioError("expected a list of [x, y] points")
    return [_vec(p) for p in x]


def _rect(x) -> tuple:
    if not isinstance(x, (list, tuple)) or len(x) != 4:
        raise ScenarioError("expected [xmin, ymin, xmax, ymax]")
    r = tuple(_num(c) for c in x)
    if not (r[2] >= r[0] and r[3] >= r[1]):
        raise ScenarioError("rectangle max corner must not be below min corner")
    return r


def _shape(t: _Table) -> Shape:
    kind = t.get("shape", _str)
    if kind == "circle":
        return Circle(t.get("radius", _pos))
    if kind == "rect":
        return Rect(t.get("half_length", _pos), t.get("half_width", _pos))
    raise ScenarioError(f"{t.path}.shape: expected 'circle' or 'rect', got {kind!r}")


def _placement(t: _Table, roads) -> Placement:
    kind = t.get("type", _str)
    if kind == "region":
        out = RegionPlacement(t.get("rect", _rect))
    elif kind == "circle":
        out = CirclePlacement(t.get("center", _vec), t.get("radius", _nonneg))
    elif kind == "roadside":
        road = t.get("road", _str)
        if road not in roads:
            raise ScenarioError(f"{t.path}.road: unknown road {road!r}")
        lateral = t.get("lateral", _str, "lanes")
        if lateral not in ("lanes", "sidewalk"):
            raise ScenarioError(f"{t.path}.lateral: expected 'lanes' or 'sidewalk'")
        arc = t.get("arc_range", _vec, None)
        out = RoadsidePlacement(road, lateral, arc)
    else:
        raise ScenarioError(f"{t.path}.type: unknown placement {kind!r}")
    t.done()
    return out


def _goal(t: _Table, roads) -> Goal:
    kind = t.get("type", _str)

    def road_ref(key, default=_REQUIRED):
        r = t.get(key, _str, default)
        if r is not None and r is not _REQUIRED and r not in roads:
            raise ScenarioError(f"{t.path}.{key}: unknown road {r!r}")
        return r

    if kind == "point":
        out = PointGoal(t.get("target", _vec))
    elif kind == "road_follow":
        out = RoadFollowGoal(road_ref("road"))
    elif kind == "opposite_side":
        d = t.get("direction", _vec)
        if math.hypot(*d) < EPS:
            raise ScenarioError(f"{t.path}.direction: must be nonzero")
        n = math.hypot(*d)
        out = OppositeSideGoal((d[0] / n, d[1] / n), t.get("line", _num))
    elif kind == "crossing":
        walk = t.get("walk", _num, 1.0)
        if walk not in (1.0, -1.0):
            raise ScenarioError(f"{t.path}.walk: must be 1 or -1")
        out = CrossingGoal(road_ref("road"), road_ref("to_road", None), walk)
    else:
        raise ScenarioError(f"{t.path}.type: unknown goal {kind!r}")
    t.done()
    return out


def _params(t: _Table) -> Params:
    p = Params(
        dt=t.get("dt", _pos, 0.1),
        T=t.get("T", _int, 10),
        d_c=t.get("d_c", _pos, 1.0),
        d_a=t.get("d_a", _nonneg, 1.0),
        d_a_max=t.get("d_a_max", _nonneg, None),
        h=t.get("h", _pos, 10.0),
        z=t.get("z", _int, 2),
        bin_width=t.get("bin_width", _pos, 0.5),
        seed=t.get("seed", _int, 0),
        delta=t.get("delta", _int, 10),
        cross_probability=t.get("cross_probability", _nonneg, 0.01),
        leader_range=t.get("leader_range", _nonneg, None),
    )
    t.done()
    if p.T < 1:
        raise ScenarioError("params.T: must be at least 1")
    if p.z < 0:
        raise ScenarioError("params.z: must be non-negative")
    if p.delta < 1:
        raise ScenarioError("params.delta: must be at least 1")
    if p.d_a_max < p.d_a:
        raise ScenarioError("params.d_a_max: must be at least d_a")
    if p.leader_range > p.h:
        raise ScenarioError("params.leader_range: must not exceed the cell size h")
    if p.cross_probability > 1:
        raise ScenarioError("params.cross_probability: must be at most 1")
    return p


def parse_scenario(data: dict) -> Scenario:
    root = _Table(data, "")
    bounds = root.get("bounds", _rect)
    params = _params(root.sub("params"))

    roads = {}
    for rid, body in root.get("road", dict, {}).items():
        t = _Table(body, f"road.{rid}")
        roads[rid] = Road(rid, t.get("centerline", _points), t.get("lane_count", _int, 1), t.get("lane_width", _pos, 3.5))
        t.done()

    lights = []
    for lid, body in root.get("light", dict, {}).items():
        t = _Table(body, f"light.{lid}")

        def cycle(x):
            return [(_str(ph), _num(d)) for ph, d in x]

        road = t.get("road", _str)
        if road not in roads:
            raise ScenarioError(f"light.{lid}.road: unknown road {road!r}")
        kinds = tuple(t.get("kinds", lambda x: [_str(k) for k in x], []))
        lights.append(TrafficLight(lid, t.get("stop_line", _points), t.get("cycle", cycle), road, t.get("offset", _num, 0.0), kinds))
        t.done()

    obstacles = []
    for oid, body in root.get("obstacle", dict, {}).items():
        t = _Table(body, f"obstacle.{oid}")
        shape = _shape(t)
        pos = t.get("position", _vec)
        heading = t.get("heading", _vec, (1.0, 0.0))
        obstacles.append(Obstacle(oid, shape, np.array(pos), unit_vector(np.array(heading))))
        t.done()

    attractors = []
    for aid, body in root.get("attractor", dict, {}).items():
        t = _Table(body, f"attractor.{aid}")
        attractors.append(Attractor(aid, np.array(t.get("position", _vec))))
        t.done()

    specs = []
    for sid, body in root.get("agents", dict, {}).items():
        t = _Table(body, f"agents.{sid}")
        kind = t.get("kind", _str)
        if kind not in KINDS:
            raise ScenarioError(f"agents.{sid}.kind: unknown kind {kind!r}")
        count = t.get("count", _int)
        if count < 1:
            raise ScenarioError(f"agents.{sid}.count: must be at least 1")
        shape = _shape(t)
        placement = _placement(t.sub("placement"), roads)
        goal = _goal(t.sub("goal"), roads)
        overtake = t.get("overtake", _str, "can_overtake")
        if overtake not in ("can_overtake", "no_overtake"):
            raise ScenarioError(f"agents.{sid}.overtake: expected can_overtake or no_overtake")
        specs.append(
            AgentSpec(sid, kind, count, shape, placement, goal, t.get("group", _str, None), overtake,
                      t.get("target_speed", _nonneg, None))
        )
        t.done()
    if not specs:
        raise ScenarioError("agents: at least one agent population is required")

    weights = {}
    wroot = root.get("weights", dict, {})
    for kind, body in wroot.items():
        if kind not in KINDS:
            raise ScenarioError(f"weights.{kind}: unknown kind")
        t = _Table(body, f"weights.{kind}")
        vals = {k: t.get(k, _nonneg) for k in WEIGHT_KEYS if k in body}
        t.done()
        try:
            weights[kind] = EnergyWeights.from_table(vals)
        except ValueError as exc:
            raise ScenarioError(f"weights.{kind}: {exc}") from None
    for spec in specs:
        if spec.kind not in weights:
            raise ScenarioError(f"weights.{spec.kind}: missing required key (used by agents.{spec.id})")
    root.done()
    return Scenario(bounds, params, weights, specs, roads, lights, obstacles, attractors)


def load_scenario(source) -> Scenario:
    """Load a scenario from a path, bytes, or a binary/text stream."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            raw = fh.read()
    elif isinstance(source, (bytes, bytearray)):
        raw = bytes(source)
    else:
        raw = source.read()
    text = raw.decode("utf-8") if isinstance(raw, (bytes, bytearray)) else raw
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ScenarioError(f"syntax: {exc}") from None
    return parse_scenario(data)


def _shape_table(shape: Shape) -> dict:
    if isinstance(shape, Circle):
        return {"shape": "circle", "radius": shape.radius}
    return {"shape": "rect", "half_length": shape.half_length, "half_width": shape.half_width}


def _drop_none(d: dict) -> dict:
    return {k: v for k, v in d.items() if v is not None}


def scenario_to_dict(sc: Scenario) -> dict:
    p = sc.params
    out: dict = {
        "bounds": list(sc.bounds),
        "params": {
            "dt": p.dt, "T": p.T, "d_c": p.d_c, "d_a": p.d_a, "d_a_max": p.d_a_max, "h": p.h,
            "z": p.z, "bin_width": p.bin_width, "seed": p.seed, "delta": p.delta,
            "cross_probability": p.cross_probability, "leader_range": p.leader_range,
        },
        "weights": {k: w.to_table() for k, w in sorted(sc.weights.items())},
    }
    if sc.roads:
        out["road"] = {
            r.id: {"centerline": r.centerline.tolist(), "lane_count": r.lane_count, "lane_width": r.lane_width}
            for r in sc.roads.values()
        }
    if sc.lights:
        out["light"] = {
            l.id: {"stop_line": l.stop_line.tolist(), "cycle": [[ph, d] for ph, d in l.cycle], "road": l.road,
                   "offset": l.offset, "kinds": list(l.kinds)}
            for l in sc.lights
        }
    if sc.obstacles:
        out["obstacle"] = {
            o.id: {**_shape_table(o.shape), "position": o.position.tolist(), "heading": o.heading.tolist()}
            for o in sc.obstacles
        }
    if sc.attractors:
        out["attractor"] = {a.id: {"position": a.position.tolist()} for a in sc.attractors}
    agents = {}
    for s in sc.agent_specs:
        pl = s.placement
        if isinstance(pl, RegionPlacement):
            pd = {"type": "region", "rect": list(pl.rect)}
        elif isinstance(pl, CirclePlacement):
            pd = {"type": "circle", "center": list(pl.center), "radius": pl.radius}
        else:
            pd = _drop_none({"type": "roadside", "road": pl.road, "lateral": pl.lateral,
                             "arc_range": list(pl.arc_range) if pl.arc_range else None})
        g = s.goal
        if isinstance(g, PointGoal):
            gd = {"type": "point", "target": list(g.target)}
        elif isinstance(g, RoadFollowGoal):
            gd = {"type": "road_follow", "road": g.road}
        elif isinstance(g, OppositeSideGoal):
            gd = {"type": "opposite_side", "direction": list(g.direction), "line": g.line}
        else:
            gd = _drop_none({"type": "crossing", "road": g.road, "to_road": g.to_road, "walk": g.walk})
        agents[s.id] = _drop_none({
            "kind": s.kind, "count": s.count, **_shape_table(s.shape), "placement": pd, "goal": gd,
            "group": s.group, "overtake": s.overtake, "target_speed": s.target_speed,
        })
    out["agents"] = agents
    return out


def dump_scenario(sc: Scenario) -> str:
    return tomli_w.dumps(scenario_to_dict(sc))
