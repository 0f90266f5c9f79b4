"""Trajectory ingestion, per-frame state estimation and speed grouping.

Raw trajectories are CSV rows ``agent_id,frame,x,y[,kind]``. Each consecutive
pair of samples becomes one estimated state (position, finite-difference
velocity, control direction); the states are then bucketed by speed so the
solver can restrict its search to a few neighbouring groups.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .geometry import EPS, norm, unit_vector

KINDS = ("pedestrian", "car", "bicycle", "tricycle", "other")
DEFAULT_BIN_WIDTH = 0.5
DEFAULT_DELTA = 10


class DatasetError(ValueError):
    """Malformed or unusable trajectory data."""


def check_kind(kind: str) -> str:
    if kind not in KINDS:
        raise DatasetError(f"unknown agent kind {kind!r}; expected one of {', '.join(KINDS)}")
    return kind


@dataclass
class RawTrajectory:
    agent_id: int
    kind: str
    frames: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.int64)
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        if len(self.frames) != len(self.positions):
            raise DatasetError(f"agent {self.agent_id}: frames and positions differ in length")
        if np.any(np.diff(self.frames) <= 0):
            raise DatasetError(f"agent {self.agent_id}: frame indices must be strictly increasing")

    def __len__(self):
        return len(self.frames)


@dataclass(frozen=True)
class EstimatedState:
    position: np.ndarray
    velocity: np.ndarray
    control_direction: np.ndarray
    kind: str
    source: tuple[int, int] = (-1, -1)

    @property
    def speed(self) -> float:
        return float(norm(self.velocity))


def _open_text(source):
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(bytes(source).decode("utf-8"), newline="")
    if isinstance(source, io.TextIOBase):
        return source
    return io.TextIOWrapper(source, encoding="utf-8", newline="")


def load_trajectories(source, frame_rate: float | None = None) -> list[RawTrajectory]:
    """Parse a trajectory CSV into per-agent trajectories sorted by frame.

    ``frame_rate`` is only validated here; callers turn it into ``dt``.
    """
    if frame_rate is not None and not frame_rate > 0:
        raise DatasetError(f"frame rate must be positive, got {frame_rate}")
    if isinstance(source, (str, os.PathLike)):
        with open(source, newline="", encoding="utf-8") as fh:
            return _parse_trajectories(fh)
    return _parse_trajectories(_open_text(source))


def _parse_trajectories(stream) -> list[RawTrajectory]:
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None:
        raise DatasetError("line 1: empty trajectory file")
    header = [h.strip() for h in header]
    if header[:4] != ["agent_id", "frame", "x", "y"] or len(header) > 5 or (
        len(header) == 5 and header[4] != "kind"
    ):
        raise DatasetError(f"line 1: expected header agent_id,frame,x,y[,kind], got {','.join(header)}")
    has_kind = len(header) == 5

    rows: dict[int, list[tuple[int, float, float]]] = {}
    kinds: dict[int, str] = {}
    seen: set[tuple[int, int]] = set()
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) not in (4, 5) or (len(row) == 5 and not has_kind):
            raise DatasetError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            agent_id = int(row[0])
            frame = int(row[1])
            x = float(row[2])
            y = float(row[3])
        except ValueError as exc:
            raise DatasetError(f"line {lineno}: {exc}") from None
        if not (math.isfinite(x) and math.isfinite(y)):
            raise DatasetError(f"line {lineno}: non-finite position")
        kind = row[4].strip() if len(row) == 5 and row[4].strip() else "pedestrian"
        try:
            check_kind(kind)
        except DatasetError as exc:
            raise DatasetError(f"line {lineno}: {exc}") from None
        if (agent_id, frame) in seen:
            raise DatasetError(f"line {lineno}: duplicate sample for agent {agent_id} frame {frame}")
        seen.add((agent_id, frame))
        if kinds.setdefault(agent_id, kind) != kind:
            raise DatasetError(f"line {lineno}: agent {agent_id} changes kind")
        rows.setdefault(agent_id, []).append((frame, x, y))

    if not rows:
        raise DatasetError("trajectory file has no samples")
    out = []
    for agent_id in sorted(rows):
        samples = sorted(rows[agent_id])
        frames = [s[0] for s in samples]
        pos = [(s[1], s[2]) for s in samples]
        out.append(RawTrajectory(agent_id, kinds[agent_id], frames, pos))
    return out


def write_trajectories(trajs: Iterable[RawTrajectory], stream) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["agent_id", "frame", "x", "y", "kind"])
    for tr in trajs:
        for f, (x, y) in zip(tr.frames, tr.positions):
            w.writerow([tr.agent_id, int(f), repr(float(x)), repr(float(y)), tr.kind])


def _segments(frames: np.ndarray) -> list[slice]:
    breaks = np.nonzero(np.diff(frames) > 1)[0] + 1
    edges = [0, *breaks.tolist(), len(frames)]
    return [slice(a, b) for a, b in zip(edges[:-1], edges[1:])]


def _displacement_directions(pos: np.ndarray, delta: int) -> np.ndarray:
    """Control direction for every sample of one gap-free segment."""
    n = len(pos)
    out = np.zeros((n, 2))
    if n < 2:
        return out
    if n < delta + 1:
        out[:] = unit_vector(pos[-1] - pos[0])
        return out
    current = np.zeros(2)
    first = None
    for k in range(delta, n, delta):
        disp = pos[k] - pos[k - delta]
        if norm(disp) >= EPS:
            current = unit_vector(disp)
        if first is None:
            first = current.copy()
        out[k : k + delta] = current
    out[:delta] = first
    return out


def estimate_states(
    traj: RawTrajectory,
    dt: float,
    delta: int = DEFAULT_DELTA,
    direction: Sequence[float] | None = None,
) -> list[EstimatedState]:
    """Finite-difference states for every consecutive sample pair.

    With ``direction`` given the control direction is that fixed vector
    (agents that only ever move one way); otherwise it is the normalized
    displacement over ``delta`` frames, refreshed every ``delta`` frames.
    Samples on either side of a frame gap are never differenced.
    """
    if not dt > 0:
        raise DatasetError(f"dt must be positive, got {dt}")
    if delta < 1:
        raise DatasetError(f"delta must be at least 1, got {delta}")
    fixed = None
    if direction is not None:
        fixed = unit_vector(np.asarray(direction, dtype=float))

    states: list[EstimatedState] = []
    for seg in _segments(traj.frames):
        pos = traj.positions[seg]
        frames = traj.frames[seg]
        if len(pos) < 2:
            continue
        vel = (pos[1:] - pos[:-1]) / dt
        if fixed is not None:
            cdir = np.broadcast_to(fixed, (len(pos), 2))
        else:
            cdir = _displacement_directions(pos, delta)
        for j in range(1, len(pos)):
            states.append(
                EstimatedState(
                    position=pos[j].copy(),
                    velocity=vel[j - 1].copy(),
                    control_direction=np.array(cdir[j], dtype=float),
                    kind=traj.kind,
                    source=(traj.agent_id, int(frames[j])),
                )
            )
    return states


def speed_group(speed, bin_width: float):
    """Half-open bin index ``floor(speed / bin_width)``."""
    return np.floor(np.asarray(speed, dtype=float) / bin_width).astype(np.int64)


@dataclass
class GroupedDataset:
    """Estimated states bucketed by kind and speed group.

    Arrays mirror ``states`` index for index so the solver can gather
    candidate blocks without touching Python objects.
    """

    states: list[EstimatedState]
    bin_width: float
    groups: dict[str, dict[int, list[int]]]
    velocities: np.ndarray = field(repr=False)
    controls: np.ndarray = field(repr=False)
    speeds: np.ndarray = field(repr=False)
    group_index: np.ndarray = field(repr=False)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def kinds(self) -> list[str]:
        return sorted(self.groups)

    def kind_indices(self, kind: str) -> np.ndarray:
        """Every state of ``kind``, ascending group then ascending index."""
        return self.candidate_indices(kind, 0, None)

    def candidate_indices(self, kind: str, l: int, z: int | None) -> np.ndarray:
        """Indices of states in groups ``l - z .. l + z`` (all groups if ``z`` is None)."""
        if kind not in self.groups:
            raise DatasetError(f"dataset has no states of kind {kind!r}")
        key = (kind, int(l), z)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        by_group = self.groups[kind]
        present = sorted(by_group)
        if z is None:
            chosen = present
        else:
            if z < 0:
                raise DatasetError(f"group scope z must be non-negative, got {z}")
            lc = min(max(int(l), present[0]), present[-1])
            chosen = [m for m in present if lc - z <= m <= lc + z]
            if not chosen:
                # gap in the speed histogram; take the nearest populated group(s)
                best = min(abs(m - lc) for m in present)
                chosen = [m for m in present if abs(m - lc) == best]
        idx = np.fromiter((i for m in chosen for i in by_group[m]), dtype=np.int64)
        idx.setflags(write=False)
        self._cache[key] = idx
        return idx

    def candidate_block(self, kind: str, l: int, z: int | None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(indices, velocities, controls)`` for ``candidate_indices``, gathered once and cached."""
        key = ("block", kind, int(l), z)
        hit = self._cache.get(key)
        if hit is None:
            idx = self.candidate_indices(kind, l, z)
            V = np.ascontiguousarray(self.velocities[idx])
            C = np.ascontiguousarray(self.controls[idx])
            V.setflags(write=False)
            C.setflags(write=False)
            hit = self._cache[key] = (idx, V, C)
        return hit

    def max_adapted_speed(self) -> float:
        """Upper bound on the speed any candidate can have after direction adaptation."""
        v_hat = unit_vector(self.velocities)
        mismatch = norm(v_hat - self.controls)
        zero_ctrl = norm(self.controls) < EPS
        factor = np.where(zero_ctrl, 1.0, 1.0 + mismatch)
        return float(np.max(self.speeds * factor)) if len(self.speeds) else 0.0


def group_by_speed(states: Sequence[EstimatedState], bin_width: float = DEFAULT_BIN_WIDTH) -> GroupedDataset:
    if not bin_width > 0:
        raise DatasetError(f"bin width must be positive, got {bin_width}")
    states = list(states)
    if not states:
        raise DatasetError("cannot build a dataset from zero states")
    velocities = np.array([s.velocity for s in states], dtype=float).reshape(-1, 2)
    controls = np.array([s.control_direction for s in states], dtype=float).reshape(-1, 2)
    speeds = norm(velocities)
    gidx = speed_group(speeds, bin_width)
    groups: dict[str, dict[int, list[int]]] = {}
    for i, (s, g) in enumerate(zip(states, gidx.tolist())):
        groups.setdefault(check_kind(s.kind), {}).setdefault(g, []).append(i)
    groups = {k: dict(sorted(v.items())) for k, v in sorted(groups.items())}
    for arr in (velocities, controls, speeds, gidx):
        arr.setflags(write=False)
    return GroupedDataset(states, bin_width, groups, velocities, controls, speeds, gidx)


def candidate_states(ds: GroupedDataset, kind: str, l: int, z: int) -> list[EstimatedState]:
    return [ds.states[i] for i in ds.candidate_indices(kind, l, z)]


def synthesize_dataset(
    kinds: Sequence[str] = ("pedestrian",),
    speed_range: tuple[float, float] = (0.0, 2.0),
    count: int = 200,
    seed: int = 0,
    max_turn: float = math.radians(30.0),
) -> list[EstimatedState]:
    """Random estimated states for tests and benchmarks.

    Speeds are uniform over ``speed_range``; headings deviate from a +x
    control direction by at most ``max_turn`` radians. Kinds are assigned
    round-robin so every requested kind is present when ``count >= len(kinds)``.
    """
    lo, hi = speed_range
    if count < 1:
        raise DatasetError("count must be at least 1")
    if not (hi >= lo >= 0):
        raise DatasetError(f"empty or negative speed range {speed_range}")
    kinds = [check_kind(k) for k in kinds]
    if not kinds:
        raise DatasetError("at least one kind is required")
    rng = np.random.default_rng(seed)
    speeds = rng.uniform(lo, hi, size=count)
    angles = rng.uniform(-max_turn, max_turn, size=count)
    pos = rng.uniform(0.0, 50.0, size=(count, 2))
    ctrl = np.array([1.0, 0.0])
    out = []
    for i in range(count):
        v = speeds[i] * np.array([math.cos(angles[i]), math.sin(angles[i])])
        out.append(
            EstimatedState(
                position=pos[i].copy(),
                velocity=v,
                control_direction=ctrl.copy(),
                kind=kinds[i % len(kinds)],
                source=(i, 0),
            )
        )
    return out


def synthesize_trajectories(
    kind: str = "pedestrian",
    agents: int = 40,
    frames: int = 120,
    dt: float = 0.1,
    speed_mean: float = 1.3,
    speed_sd: float = 0.25,
    lateral_sd: float = 0.15,
    seed: int = 0,
    bidirectional: bool = True,
    first_id: int = 1,
) -> list[RawTrajectory]:
    """Smooth noisy walks along the x axis, used to build the shipped datasets.

    Each agent holds a preferred speed, wanders slowly around it and drifts
    sideways; with ``bidirectional`` half of them walk toward -x.
    """
    check_kind(kind)
    rng = np.random.default_rng(seed)
    trajs = []
    for a in range(agents):
        sign = -1.0 if (bidirectional and a % 2) else 1.0
        pref = max(0.05, rng.normal(speed_mean, speed_sd))
        speed = pref
        lateral = 0.0
        p = np.array([rng.uniform(0, 20), rng.uniform(0, 10)])
        pts = [p.copy()]
        for _ in range(frames - 1):
            speed += 0.2 * (pref - speed) + rng.normal(0, 0.05 * speed_mean)
            speed = max(0.0, speed)
            lateral = 0.8 * lateral + rng.normal(0, lateral_sd)
            step = np.array([sign * speed, lateral]) * dt
            p = p + step
            pts.append(p.copy())
        trajs.append(RawTrajectory(first_id + a, kind, np.arange(frames), np.array(pts)))
    return trajs


STATE_HEADER = ["kind", "px", "py", "vx", "vy", "cdx", "cdy", "group"]


def write_states(states: Sequence[EstimatedState], bin_width: float, stream) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(STATE_HEADER)
    for s in states:
        g = int(speed_group(s.speed, bin_width))
        w.writerow(
            [s.kind, *(repr(float(c)) for c in (*s.position, *s.velocity, *s.control_direction)), g]
        )


def load_dataset(
    paths: Sequence,
    dt: float,
    delta: int = DEFAULT_DELTA,
    bin_width: float = DEFAULT_BIN_WIDTH,
) -> GroupedDataset:
    """Load one or more trajectory files and group their estimated states."""
    states: list[EstimatedState] = []
    for path in paths:
        for tr in load_trajectories(path):
            states.extend(estimate_states(tr, dt, delta))
    return group_by_speed(states, bin_width)


def adapt_velocities(velocities, controls_star, control) -> np.ndarray:
    """Map dataset velocities into a scene whose control direction is ``control``.

    The offset between a state's heading and its own control direction is
    carried over: ``|v*| * (control + (unit(v*) - control*))``. States
    without a usable control direction are turned to face ``control``
    at their own speed.
    """
    velocities = np.asarray(velocities, dtype=float)
    single = velocities.ndim == 1
    V = np.ascontiguousarray(velocities.reshape(-1, 2))
    C = np.ascontiguousarray(np.broadcast_to(np.asarray(controls_star, dtype=float), V.shape))
    control = np.asarray(control, dtype=float)
    out = kernels.adapt(V, C, float(control[0]), float(control[1]))
    return out[0] if single else out
