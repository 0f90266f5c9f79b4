"""Uniform grid over the plane and the two neighborhood queries.

Agents are re-bucketed from scratch every frame. Static obstacles live in a
separate grid where each obstacle is registered in every cell its bounding
box touches, so large obstacles are found from any side.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .energy import Bodies, EnergyContext, in_attraction_band, in_collision_range

DEFAULT_CELL_SIZE = 10.0


@dataclass
class SpatialGrid:
    cell_size: float
    origin: np.ndarray = field(default_factory=lambda: np.zeros(2))
    cells: dict = field(default_factory=dict)
    cell_of: dict = field(default_factory=dict)

    def cell(self, p) -> tuple[int, int]:
        q = np.floor((np.asarray(p, dtype=float) - self.origin) / self.cell_size)
        return int(q[0]), int(q[1])

    def block(self, cell) -> list[int]:
        cx, cy = cell
        out: list[int] = []
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                bucket = self.cells.get((cx + dx, cy + dy))
                if bucket:
                    out.extend(bucket)
        return out

    def flatten(self) -> list[int]:
        return [i for bucket in self.cells.values() for i in bucket]


def build_grid(ids, positions, h: float = DEFAULT_CELL_SIZE, origin=(0.0, 0.0)) -> SpatialGrid:
    if not h > 0:
        raise ValueError(f"cell size must be positive, got {h}")
    origin = np.asarray(origin, dtype=float)
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    coords = np.floor((positions - origin) / h).astype(np.int64)
    grid = SpatialGrid(float(h), origin)
    for i, (cx, cy) in zip(np.asarray(ids).tolist(), coords.tolist()):
        key = (cx, cy)
        grid.cells.setdefault(key, []).append(i)
        grid.cell_of[i] = key
    return grid


def candidate_neighbors(grid: SpatialGrid, agent_id: int, p=None) -> list[int]:
    """Ids in the 3x3 block around the agent's cell, itself excluded."""
    cell = grid.cell_of[agent_id] if p is None else grid.cell(p)
    return [j for j in grid.block(cell) if j != agent_id]


@dataclass
class ObstacleGrid:
    cell_size: float
    origin: np.ndarray
    cells: dict

    def query(self, p) -> np.ndarray:
        q = np.floor((np.asarray(p, dtype=float) - self.origin) / self.cell_size)
        cx, cy = int(q[0]), int(q[1])
        hits = set()
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                hits.update(self.cells.get((cx + dx, cy + dy), ()))
        return np.array(sorted(hits), dtype=np.int64)


def build_obstacle_grid(obstacles: Bodies, h: float = DEFAULT_CELL_SIZE, origin=(0.0, 0.0)) -> ObstacleGrid:
    origin = np.asarray(origin, dtype=float)
    cells: dict = {}
    for k in range(len(obstacles)):
        reach = float(math.hypot(obstacles.a[k], obstacles.b[k]))
        lo = np.floor((obstacles.positions[k] - reach - origin) / h).astype(int)
        hi = np.floor((obstacles.positions[k] + reach - origin) / h).astype(int)
        for cx in range(lo[0], hi[0] + 1):
            for cy in range(lo[1], hi[1] + 1):
                cells.setdefault((cx, cy), []).append(k)
    return ObstacleGrid(float(h), origin, cells)


def collision_neighborhood(ctx: EnergyContext, v, t: float, pool: Bodies | None = None) -> np.ndarray:
    """Ids of pool bodies whose predicted clearance after ``t`` is below ``d_c``."""
    pool = ctx.collision if pool is None else pool
    d = ctx.clearances(pool, np.asarray(v, dtype=float), t)[:, 0]
    return pool.ids[in_collision_range(d, ctx.d_c)]


def attraction_neighborhood(ctx: EnergyContext, v, t: float, pool: Bodies | None = None) -> np.ndarray:
    """Ids of pool bodies inside the attraction band ``(d_a, d_a_max]``."""
    pool = ctx.attraction if pool is None else pool
    d = ctx.clearances(pool, np.asarray(v, dtype=float), t)[:, 0]
    return pool.ids[in_attraction_band(d, ctx.d_a, ctx.d_a_max)]


def required_cell_size(d_c: float, d_a_max: float, max_radius: float, max_speed: float, horizon: float) -> float:
    """Smallest cell size for which grid neighborhoods equal all-pairs neighborhoods."""
    return max(d_c, d_a_max) + 2.0 * max_radius + 2.0 * max_speed * horizon


def check_cell_size(h: float, **kw) -> bool:
    need = required_cell_size(**kw)
    if h < need:
        warnings.warn(
            f"grid cell size {h:g} m is below {need:.3g} m; grid neighborhoods may miss fast neighbors",
            RuntimeWarning,
            stacklevel=2,
        )
        return False
    return True
