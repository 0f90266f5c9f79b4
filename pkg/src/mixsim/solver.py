"""Per-frame decision loop.

Every frame reads one immutable snapshot of all agents. Each agent picks
the dataset velocity with the lowest energy, then all agents move together
(forward Euler). Because decisions only read the snapshot, results do not
depend on processing order or on the number of worker processes.

Neighbor pools are always listed in a canonical order (agents by id, then
static obstacles, then virtual obstacles) and summed sequentially, so the
grid path and the all-pairs path produce bit-identical energies whenever
they see the same neighborhood members.
"""

from __future__ import annotations

import copy
import hashlib
import io
import math
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .dataset import EstimatedState, GroupedDataset, adapt_velocities
from .energy import Bodies, EnergyContext, EnergyWeights, total_energy
from .geometry import EPS, clearance, norm, perp, shape_params
from .scenario import (
    Scenario,
    advance_modes,
    control_direction,
    initialize_agents,
    light_gate,
)
from .spatial import SpatialGrid, build_grid, build_obstacle_grid, check_cell_size

MODES = ("accelerated", "brute")
TIE_RTOL = 1e-12


class SolverError(RuntimeError):
    def __init__(self, message: str, frame: int | None = None):
        super().__init__(message if frame is None else f"frame {frame}: {message}")
        self.frame = frame


def adapt_velocity(candidate: EstimatedState, control) -> np.ndarray:
    """Rotate a dataset velocity into the scene by matching control directions."""
    return adapt_velocities(candidate.velocity, candidate.control_direction, control)


def argmin_index(energies: np.ndarray, rtol: float = TIE_RTOL) -> int:
    """Lowest index whose energy is within ``rtol`` (relative) of the minimum.

    The tolerance absorbs last-bit rounding so that uniformly rescaling the
    weights never flips a near-tie.
    """
    energies = np.asarray(energies, dtype=float)
    if energies.size == 0:
        raise SolverError("empty candidate set")
    k = int(np.argmin(energies))
    if k == 0:
        return 0
    e_min = float(energies[k])
    return int(np.argmax(energies[: k + 1] <= e_min + rtol * abs(e_min)))


@dataclass(frozen=True)
class Choice:
    index: int
    velocity: np.ndarray
    energy: float


def choose_velocity(ctx: EnergyContext, velocities, controls, weights: EnergyWeights) -> Choice:
    """Adapt every candidate to ``ctx.control`` and return the lowest-energy one.

    ``index`` refers to the position in the candidate arrays.
    """
    velocities = np.ascontiguousarray(velocities, dtype=float).reshape(-1, 2)
    if len(velocities) == 0:
        raise SolverError("empty candidate set")
    controls = np.asarray(controls, dtype=float)
    if controls.shape != velocities.shape:
        controls = np.broadcast_to(controls, velocities.shape)
    controls = np.ascontiguousarray(controls)
    adapted = kernels.adapt(velocities, controls, float(ctx.control[0]), float(ctx.control[1]))
    energies = np.atleast_1d(total_energy(ctx, adapted, weights))
    k = argmin_index(energies)
    return Choice(k, adapted[k].copy(), float(energies[k]))


def choose_from_states(ctx: EnergyContext, candidates: Sequence[EstimatedState], weights: EnergyWeights) -> Choice:
    if not candidates:
        raise SolverError("empty candidate set")
    return choose_velocity(
        ctx,
        [c.velocity for c in candidates],
        [c.control_direction for c in candidates],
        weights,
    )


# ---------------------------------------------------------------- snapshot


@dataclass
class Snapshot:
    """Read-only view of frame ``n``. Agents are stored in id order, so row == id."""

    frame: int
    time: float
    agents: list
    bodies: Bodies
    kinds: np.ndarray
    groups: np.ndarray
    grid: SpatialGrid

    @classmethod
    def build(cls, frame: int, time: float, agents: list, h: float, origin) -> "Snapshot":
        for row, ag in enumerate(agents):
            if ag.id != row:
                raise SolverError("agent ids must be 0..n-1 in order", frame)
        params = [shape_params(ag.shape) for ag in agents]
        n = len(agents)
        bodies = Bodies(
            np.arange(n, dtype=np.int64),
            np.array([ag.position for ag in agents], dtype=float).reshape(n, 2),
            np.array([ag.velocity for ag in agents], dtype=float).reshape(n, 2),
            np.array([ag.heading for ag in agents], dtype=float).reshape(n, 2),
            np.array([c for c, _, _ in params], dtype=np.int64),
            np.array([a for _, a, _ in params], dtype=float),
            np.array([b for _, _, b in params], dtype=float),
        )
        kinds = np.array([ag.kind for ag in agents], dtype=object)
        groups = np.array([ag.group_id if ag.group_id is not None else "" for ag in agents], dtype=object)
        grid = build_grid(bodies.ids, bodies.positions, h, origin)
        return cls(frame, time, agents, bodies, kinds, groups, grid)


@dataclass(frozen=True)
class Decision:
    velocity: np.ndarray
    control: np.ndarray
    energy: float
    candidate: int


class Engine:
    """Static per-run data plus the decision kernel shared by both modes."""

    def __init__(self, scenario: Scenario, dataset: GroupedDataset, mode: str = "accelerated"):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        self.scenario = scenario
        self.dataset = dataset
        self.mode = mode
        p = scenario.params
        self.origin = np.array(scenario.bounds[:2], dtype=float)
        self.obstacles = scenario.obstacle_bodies
        self.obstacle_grid = build_obstacle_grid(self.obstacles, p.h, self.origin)
        self.attractors = scenario.attractor_bodies
        self.check_roads = bool(scenario.roads)

    def snapshot(self, frame: int, agents: list) -> Snapshot:
        p = self.scenario.params
        return Snapshot.build(frame, frame * p.dt, agents, p.h, self.origin)

    def _leader(self, snap: Snapshot, i: int, rows: np.ndarray) -> int | None:
        """Nearest agent ahead in the same lane within ``leader_range``."""
        ag = snap.agents[i]
        if len(rows) == 0:
            return None
        road = self.scenario.agent_road(ag)
        if road is None:
            return None
        fwd = road.project(ag.position).tangent
        rel = snap.bodies.positions[rows] - ag.position
        along = rel @ fwd
        lateral = np.abs(rel @ perp(fwd))
        dist = norm(rel)
        ok = (along > 0) & (lateral < 0.5 * road.lane_width) & (dist <= self.scenario.params.leader_range)
        if not np.any(ok):
            return None
        cand = np.flatnonzero(ok)
        best = cand[np.argmin(along[cand])]  # argmin keeps the lowest id on ties
        return int(rows[best])

    def context(self, snap: Snapshot, i: int, brute: bool) -> EnergyContext:
        """Energy context of agent ``i``: all-pairs neighbors when ``brute``, else the 3x3 grid block."""
        sc = self.scenario
        prm = sc.params
        ag = snap.agents[i]
        p = ag.position
        ctrl = control_direction(sc, ag, p, snap.time)

        if brute:
            rows = np.concatenate([np.arange(i), np.arange(i + 1, len(snap.agents))]).astype(np.int64)
            obstacles = self.obstacles
        else:
            rows = np.array(sorted(j for j in snap.grid.block(snap.grid.cell_of[i]) if j != i), dtype=np.int64)
            obstacles = self.obstacles.take(self.obstacle_grid.query(p)) if len(self.obstacles) else self.obstacles
        neighbors = snap.bodies.take(rows)

        stop = None
        if self.check_roads:
            stop = light_gate(sc, ag, p, ag.velocity, snap.time, others=(neighbors, snap.kinds[rows]))

        attract_parts = []
        spec = sc.agent_specs[ag.spec_index]
        if spec.overtake == "no_overtake":
            leader = self._leader(snap, i, rows)
            if leader is not None:
                k = int(np.searchsorted(rows, leader))
                _, own_len, _ = shape_params(ag.shape)
                a = neighbors.a.copy()
                a[k] += 2.0 * own_len
                neighbors = replace(neighbors, a=a)
                attract_parts.append(snap.bodies.take([leader]))
        if ag.group_id is not None:
            mates = rows[snap.groups[rows] == ag.group_id]
            if len(mates):
                attract_parts.insert(0, snap.bodies.take(mates))
        attract_parts.append(self.attractors)

        collision = [neighbors, obstacles]
        if stop is not None:
            collision.append(stop.obstacles)
        attraction = Bodies.empty() if stop is not None and stop.suppress_attraction else Bodies.concat(attract_parts)

        code, a, b = shape_params(ag.shape)
        ctx = EnergyContext(
            position=p,
            heading=ag.heading,
            code=code,
            a=a,
            b=b,
            prev_velocity=ag.velocity,
            control=ctrl,
            dt=prm.dt,
            T=prm.T,
            d_c=prm.d_c,
            d_a=prm.d_a,
            d_a_max=prm.d_a_max,
            target_speed=ag.target_speed,
            collision=Bodies.concat(collision),
            attraction=attraction,
            prune=not brute,
        )
        return ctx

    def decide(self, snap: Snapshot, i: int, brute: bool | None = None) -> Decision:
        brute = self.mode == "brute" if brute is None else brute
        ag = snap.agents[i]
        ctx = self.context(snap, i, brute)
        z = None if brute else self.scenario.params.z
        idx, V, C = self.dataset.candidate_block(ag.kind, ag.speed_group, z)
        choice = choose_velocity(ctx, V, C, self.scenario.weights[ag.kind])
        return Decision(choice.velocity, ctx.control, choice.energy, int(idx[choice.index]))

    def decide_range(self, snap: Snapshot, lo: int, hi: int) -> list[Decision]:
        return [self.decide(snap, i) for i in range(lo, hi)]


def brute_force_choose_velocity(engine: Engine, snap: Snapshot, i: int) -> Decision:
    """Oracle: full kind-filtered dataset and all-pairs neighborhoods, no grid."""
    return engine.decide(snap, i, brute=True)


def accelerated_choose_velocity(engine: Engine, snap: Snapshot, i: int) -> Decision:
    return engine.decide(snap, i, brute=False)


# ---------------------------------------------------------------- workers

_WORKER_ENGINE: Engine | None = None


def _init_worker(engine: Engine) -> None:
    global _WORKER_ENGINE
    _WORKER_ENGINE = engine


def _work(snap: Snapshot, lo: int, hi: int) -> list[Decision]:
    return _WORKER_ENGINE.decide_range(snap, lo, hi)


def _chunks(n: int, parts: int) -> list[tuple[int, int]]:
    parts = max(1, min(parts, n))
    edges = np.linspace(0, n, parts + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


# ---------------------------------------------------------------- stepping


@dataclass
class SimState:
    frame: int
    time: float
    agents: list
    grid: SpatialGrid | None = None


def apply_decisions(agents: list, decisions: list[Decision], dt: float, bin_width: float) -> list:
    """Write phase: p += v dt for everyone, plus heading and speed group."""
    out = []
    for ag, dec in zip(agents, decisions):
        v = dec.velocity
        speed = math.sqrt(v[0] * v[0] + v[1] * v[1])
        new = copy.copy(ag)
        new.position = ag.position + v * dt
        new.velocity = v
        new.control_direction = dec.control
        new.heading = v / speed if speed >= EPS else ag.heading
        new.speed_group = math.floor(speed / bin_width)
        out.append(new)
    return out


class Simulator:
    """Owns the engine and an optional worker pool; use as a context manager."""

    def __init__(self, scenario: Scenario, dataset: GroupedDataset, workers: int = 1, mode: str = "accelerated"):
        if workers < 1:
            raise ValueError("workers must be at least 1")
        self.engine = Engine(scenario, dataset, mode)
        self.workers = workers
        self._pool: ProcessPoolExecutor | None = None
        self.last_snapshot: Snapshot | None = None
        self.last_decisions: list[Decision] = []

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def _executor(self) -> ProcessPoolExecutor:
        if self._pool is None:
            self._pool = ProcessPoolExecutor(
                max_workers=self.workers,
                mp_context=multiprocessing.get_context("fork"),
                initializer=_init_worker,
                initargs=(self.engine,),
            )
        return self._pool

    def decide_all(self, snap: Snapshot) -> list[Decision]:
        n = len(snap.agents)
        if self.workers == 1 or n < 2:
            return self.engine.decide_range(snap, 0, n)
        pool = self._executor()
        futures = [pool.submit(_work, snap, lo, hi) for lo, hi in _chunks(n, self.workers)]
        out: list[Decision] = []
        for f in futures:
            out.extend(f.result())
        return out

    def step(self, sim: SimState) -> SimState:
        sc = self.engine.scenario
        advance_modes(sc, sim.agents, sim.frame)
        snap = self.engine.snapshot(sim.frame, sim.agents)
        try:
            decisions = self.decide_all(snap)
        except SolverError as exc:
            raise SolverError(str(exc), sim.frame) from exc
        self.last_snapshot = snap
        self.last_decisions = decisions
        agents = apply_decisions(sim.agents, decisions, sc.params.dt, self.engine.dataset.bin_width)
        frame = sim.frame + 1
        grid = build_grid(np.arange(len(agents)), [ag.position for ag in agents], sc.params.h, self.engine.origin)
        return SimState(frame, frame * sc.params.dt, agents, grid)


def step(sim: SimState, dataset: GroupedDataset, scenario: Scenario, workers: int = 1, mode: str = "accelerated") -> SimState:
    with Simulator(scenario, dataset, workers, mode) as simulator:
        return simulator.step(sim)


# ---------------------------------------------------------------- logging


@dataclass
class TrajectoryLog:
    """Every agent's state at every frame, initial frame included."""

    kinds: list
    shapes: list
    frames: list = field(default_factory=list)
    positions: list = field(default_factory=list)
    velocities: list = field(default_factory=list)
    headings: list = field(default_factory=list)

    def record(self, sim: SimState) -> None:
        self.frames.append(sim.frame)
        self.positions.append(np.array([ag.position for ag in sim.agents], dtype=float))
        self.velocities.append(np.array([ag.velocity for ag in sim.agents], dtype=float))
        self.headings.append(np.array([ag.heading for ag in sim.agents], dtype=float))

    def __len__(self):
        return len(self.frames)

    def write_csv(self, stream) -> None:
        stream.write("frame,agent_id,kind,x,y,vx,vy\n")
        for f, pos, vel in zip(self.frames, self.positions, self.velocities):
            for i, kind in enumerate(self.kinds):
                stream.write(
                    f"{f},{i},{kind},{float(pos[i, 0])!r},{float(pos[i, 1])!r},"
                    f"{float(vel[i, 0])!r},{float(vel[i, 1])!r}\n"
                )

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()

    def checksum(self) -> str:
        return hashlib.sha256(self.to_csv().encode()).hexdigest()


def count_overlaps(positions, headings, shapes) -> int:
    """Number of agent pairs whose shapes overlap (clearance < 0)."""
    positions = np.asarray(positions, dtype=float)
    n = len(positions)
    if n < 2:
        return 0
    params = np.array([shape_params(s) for s in shapes], dtype=float)
    codes = params[:, 0].astype(np.int64)
    iu, ju = np.triu_indices(n, 1)
    zero = np.zeros(2)
    d = clearance(
        positions[iu], zero, codes[iu], params[iu, 1], params[iu, 2], headings[iu],
        positions[ju], zero, codes[ju], params[ju, 1], params[ju, 2], headings[ju], 0.0,
    )
    return int(np.count_nonzero(d < 0))


def grid_condition(scenario: Scenario, dataset: GroupedDataset, agents: list) -> bool:
    """Warn when the cell size is too small for grid neighborhoods to be exact."""
    p = scenario.params
    # obstacles sit in every cell their bounding box touches, so only agent radii matter
    radii = [ag.shape.bounding_radius for ag in agents]
    return check_cell_size(
        p.h,
        d_c=p.d_c,
        d_a_max=p.d_a_max,
        max_radius=max(radii, default=0.0),
        max_speed=dataset.max_adapted_speed(),
        horizon=p.T * p.dt,
    )


def run(
    scenario: Scenario,
    dataset: GroupedDataset,
    frames: int,
    seed: int | None = None,
    workers: int = 1,
    mode: str = "accelerated",
    on_frame: Callable[[SimState], None] | None = None,
) -> TrajectoryLog:
    """Initialize agents and advance ``frames`` steps, logging every frame."""
    if frames < 1:
        raise ValueError("frames must be at least 1")
    if seed is not None:
        scenario = replace(scenario, params=replace(scenario.params, seed=seed))
    agents = initialize_agents(scenario, dataset)
    if mode == "accelerated":
        grid_condition(scenario, dataset, agents)
    sim = SimState(0, 0.0, agents)
    log = TrajectoryLog([ag.kind for ag in agents], [ag.shape for ag in agents])
    log.record(sim)
    if on_frame is not None:
        on_frame(sim)
    with Simulator(scenario, dataset, workers, mode) as simulator:
        for _ in range(frames):
            sim = simulator.step(sim)
            log.record(sim)
            if on_frame is not None:
                on_frame(sim)
    return log


def with_weights(scenario: Scenario, **overrides) -> Scenario:
    """Copy of ``scenario`` with the given weight fields replaced for every kind."""
    weights = {k: replace(w, **overrides) for k, w in scenario.weights.items()}
    return replace(scenario, weights=weights)
