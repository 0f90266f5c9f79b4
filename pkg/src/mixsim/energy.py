"""Energy terms scored for every candidate velocity.

Each term accepts either one velocity ``(2,)`` or a block of candidates
``(m, 2)`` and returns a scalar or an ``(m,)`` array. Neighborhood
membership depends on the candidate velocity, so the collision and
attraction terms filter their body pools per candidate (see ``kernels``).
A context built with ``select=False`` treats its pools as ready-made
neighborhoods instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from functools import lru_cache

import numpy as np

from . import kernels
from .geometry import CIRCLE, dot, norm, perp, unit_vector

# Table-style column names accepted in scenario files, mapped to fields.
WEIGHT_KEYS = {
    "continuity_dir": "w_m1",
    "continuity_len": "w_m2",
    "collision_ins": "w_c1",
    "collision_anti": "w_c2",
    "attraction": "w_a",
    "direction": "w_d",
    "lane": "w_cons",
    "speed": "w_sg",
    "outer_continuity": "w_m",
    "outer_collision": "w_c",
    "outer_constraint": "w_s",
    "target_speed": "target_speed",
}


@dataclass(frozen=True)
class EnergyWeights:
    """Outer weights ``w_m .. w_s`` plus the inner splits of each family.

    ``w_sg`` and ``w_cons`` weight the speed-control and lane terms inside
    the constraint family ``w_s``.
    """

    w_m: float = 1.0
    w_c: float = 1.0
    w_a: float = 0.0
    w_d: float = 1.0
    w_s: float = 1.0
    w_m1: float = 1.0
    w_m2: float = 1.0
    w_c1: float = 1.0
    w_c2: float = 1.0
    w_sg: float = 0.0
    w_cons: float = 0.0
    target_speed: float | None = None

    def __post_init__(self):
        vals = self.values()
        if any(not (v >= 0 and np.isfinite(v)) for v in vals.values()):
            raise ValueError(f"energy weights must be finite and non-negative: {vals}")
        if not any(v > 0 for v in vals.values()):
            raise ValueError("at least one energy weight must be positive")
        if self.target_speed is not None and not self.target_speed >= 0:
            raise ValueError("target speed must be non-negative")

    def values(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "target_speed"}

    def scaled(self, c: float) -> "EnergyWeights":
        if not c > 0:
            raise ValueError("scale must be positive")
        outer = ("w_m", "w_c", "w_a", "w_d", "w_s")
        kw = {k: (v * c if k in outer else v) for k, v in self.values().items()}
        return EnergyWeights(**kw, target_speed=self.target_speed)

    @classmethod
    def from_table(cls, table: dict) -> "EnergyWeights":
        unknown = set(table) - set(WEIGHT_KEYS)
        if unknown:
            raise KeyError(f"unknown weight keys: {', '.join(sorted(unknown))}")
        return cls(**{WEIGHT_KEYS[k]: v for k, v in table.items()})

    def to_table(self) -> dict:
        inv = {v: k for k, v in WEIGHT_KEYS.items()}
        out = {inv[k]: float(v) for k, v in self.values().items()}
        if self.target_speed is not None:
            out["target_speed"] = float(self.target_speed)
        return out


@dataclass
class Bodies:
    """Stacked neighbor bodies (agents, obstacles or attractors)."""

    ids: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    headings: np.ndarray
    codes: np.ndarray
    a: np.ndarray
    b: np.ndarray

    @classmethod
    def empty(cls) -> "Bodies":
        return _EMPTY

    @classmethod
    def concat(cls, parts: list["Bodies"]) -> "Bodies":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty()
        if len(parts) == 1:
            return parts[0]
        return cls(*(np.concatenate([getattr(p, f.name) for p in parts]) for f in fields(cls)))

    def take(self, idx) -> "Bodies":
        return Bodies(
            self.ids[idx], self.positions[idx], self.velocities[idx], self.headings[idx],
            self.codes[idx], self.a[idx], self.b[idx],
        )

    def __len__(self):
        return len(self.ids)


def _frozen(shape, dtype=float):
    arr = np.zeros(shape, dtype=dtype)
    arr.setflags(write=False)
    return arr


_EMPTY = Bodies(
    _frozen(0, np.int64), _frozen((0, 2)), _frozen((0, 2)), _frozen((0, 2)),
    _frozen(0, np.int64), _frozen(0), _frozen(0),
)


@dataclass
class EnergyContext:
    """Everything one agent's decision reads, frozen at the start of the frame."""

    position: np.ndarray
    heading: np.ndarray
    code: int
    a: float
    b: float
    prev_velocity: np.ndarray
    control: np.ndarray
    dt: float
    T: int = 10
    d_c: float = 1.0
    d_a: float = 1.0
    d_a_max: float = 3.0
    target_speed: float = 0.0
    collision: Bodies = field(default_factory=Bodies.empty)
    attraction: Bodies = field(default_factory=Bodies.empty)
    prune: bool = True
    # False: the pools already are the neighborhoods, no threshold test
    select: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.T < 1:
            raise ValueError("anticipation steps T must be at least 1")
        if not self.d_c > 0 or not self.d_a >= 0 or not self.d_a_max >= self.d_a:
            raise ValueError("need d_c > 0 and 0 <= d_a <= d_a_max")

    def _kernel_args(self, bodies: Bodies, v: np.ndarray):
        v = np.ascontiguousarray(np.atleast_2d(v), dtype=float)
        return (
            float(self.position[0]), float(self.position[1]), int(self.code), float(self.a), float(self.b),
            float(self.heading[0]), float(self.heading[1]), v, *_pool_args(bodies),
        )

    def clearances(self, bodies: Bodies, v: np.ndarray, t: float) -> np.ndarray:
        """``(k, m)`` predicted clearances of every body for every candidate."""
        return kernels.clearance_matrix(*self._kernel_args(bodies, v), float(t))


def in_collision_range(d, d_c: float):
    return d < d_c


def in_attraction_band(d, d_a: float, d_a_max: float):
    return (d > d_a) & (d <= d_a_max)


def _squeeze(out: np.ndarray, v):
    return float(out[0]) if np.ndim(v) == 1 else out


def continuity_energy(prev, v, w_m1: float = 1.0, w_m2: float = 1.0):
    prev = np.asarray(prev, dtype=float)
    v = np.asarray(v, dtype=float)
    e_dir = norm(unit_vector(prev) - unit_vector(v))
    e_len = np.abs(norm(prev) - norm(v))
    out = w_m1 * e_dir + w_m2 * e_len
    return float(out) if np.ndim(out) == 0 else out


def _collision(ctx: EnergyContext, v, t: float):
    if len(ctx.collision) == 0:
        return _squeeze(np.zeros(len(np.atleast_2d(v))), v)
    out = kernels.collision_mean(
        *ctx._kernel_args(ctx.collision, v), float(t), float(ctx.d_c), bool(ctx.prune), bool(ctx.select)
    )
    return _squeeze(out, v)


def instantaneous_collision_energy(ctx: EnergyContext, v):
    return _collision(ctx, v, ctx.dt)


def anticipatory_collision_energy(ctx: EnergyContext, v):
    return _collision(ctx, v, ctx.T * ctx.dt)


def attraction_energy(ctx: EnergyContext, v):
    if len(ctx.attraction) == 0:
        return _squeeze(np.zeros(len(np.atleast_2d(v))), v)
    out = kernels.attraction_mean(
        *ctx._kernel_args(ctx.attraction, v), float(ctx.dt), float(ctx.d_a), float(ctx.d_a_max),
        bool(ctx.prune), bool(ctx.select),
    )
    return _squeeze(out, v)


def direction_energy(control, v):
    out = norm(np.asarray(control, dtype=float) - unit_vector(v))
    return float(out) if np.ndim(out) == 0 else out


def speed_control_energy(v, target_speed: float):
    out = np.abs(norm(v) - target_speed)
    return float(out) if np.ndim(out) == 0 else out


def lane_constraint_energy(v, control):
    out = np.abs(dot(v, perp(control)))
    return float(out) if np.ndim(out) == 0 else out


@lru_cache(maxsize=256)
def weight_vector(w: EnergyWeights) -> np.ndarray:
    return np.array([w.w_m, w.w_c, w.w_a, w.w_d, w.w_s, w.w_m1, w.w_m2, w.w_c1, w.w_c2, w.w_sg, w.w_cons])


def _pool_args(bodies: Bodies):
    return (
        np.ascontiguousarray(bodies.positions, dtype=float),
        np.ascontiguousarray(bodies.velocities, dtype=float),
        np.ascontiguousarray(bodies.codes, dtype=np.int64),
        np.ascontiguousarray(bodies.a, dtype=float),
        np.ascontiguousarray(bodies.b, dtype=float),
        np.ascontiguousarray(bodies.headings, dtype=float),
    )


def total_energy(ctx: EnergyContext, v, w: EnergyWeights):
    """Weighted sum of all terms. Terms with zero weight are not evaluated.

    Runs as one compiled loop; it adds the same terms in the same order as
    the individual term functions above, so the results agree bit for bit.
    """
    v_arr = np.ascontiguousarray(np.atleast_2d(np.asarray(v, dtype=float)))
    out = kernels.total_energy(
        float(ctx.position[0]), float(ctx.position[1]), int(ctx.code), float(ctx.a), float(ctx.b),
        float(ctx.heading[0]), float(ctx.heading[1]), v_arr,
        float(ctx.prev_velocity[0]), float(ctx.prev_velocity[1]),
        float(ctx.control[0]), float(ctx.control[1]),
        weight_vector(w), float(ctx.target_speed),
        float(ctx.dt), int(ctx.T), float(ctx.d_c), float(ctx.d_a), float(ctx.d_a_max),
        *_pool_args(ctx.collision), *_pool_args(ctx.attraction), bool(ctx.prune), bool(ctx.select),
    )
    return _squeeze(out, v)


def family_sum(e_m, e_c, e_a, e_d, e_s, w: EnergyWeights):
    """Outer weighted sum of the five family values (continuity, collision,
    attraction, direction, constraint), each already combined with its inner weights."""
    return w.w_m * e_m + w.w_c * e_c + w.w_a * e_a + w.w_d * e_d + w.w_s * e_s


def total_energy_reference(ctx: EnergyContext, v, w: EnergyWeights):
    """Term-by-term evaluation of ``total_energy`` (slower, used to cross-check)."""
    v_arr = np.atleast_2d(np.asarray(v, dtype=float))
    zero = np.zeros(len(v_arr))
    e_m = e_c = e_a = e_d = e_s = zero
    if w.w_m > 0 and (w.w_m1 > 0 or w.w_m2 > 0):
        e_m = continuity_energy(ctx.prev_velocity, v_arr, w.w_m1, w.w_m2)
    if w.w_c > 0 and len(ctx.collision):
        if w.w_c1 > 0:
            e_c = e_c + w.w_c1 * instantaneous_collision_energy(ctx, v_arr)
        if w.w_c2 > 0:
            e_c = e_c + w.w_c2 * anticipatory_collision_energy(ctx, v_arr)
    if w.w_a > 0 and len(ctx.attraction):
        e_a = attraction_energy(ctx, v_arr)
    if w.w_d > 0:
        e_d = direction_energy(ctx.control, v_arr)
    if w.w_s > 0 and (w.w_sg > 0 or w.w_cons > 0):
        if w.w_sg > 0:
            e_s = e_s + w.w_sg * speed_control_energy(v_arr, ctx.target_speed)
        if w.w_cons > 0:
            e_s = e_s + w.w_cons * lane_constraint_energy(v_arr, ctx.control)
    return _squeeze(family_sum(e_m, e_c, e_a, e_d, e_s, w), v)


def point_bodies(ids, positions, radius: float = 0.0) -> Bodies:
    """Static circular bodies; radius zero gives plain attractor points."""
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    k = len(positions)
    return Bodies(
        np.asarray(ids, dtype=np.int64).reshape(k),
        positions,
        np.zeros((k, 2)),
        np.tile([1.0, 0.0], (k, 1)),
        np.full(k, CIRCLE, dtype=np.int64),
        np.full(k, float(radius)),
        np.zeros(k),
    )
