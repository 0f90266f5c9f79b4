"""2D vector helpers, agent shapes and predicted clearance between bodies.

Vectors are plain ``numpy`` arrays whose last axis has length 2, so every
function here works on a single vector as well as on stacked batches. The
solver relies on that: one candidate velocity or a whole ``(m, 2)`` block of
them goes through the same arithmetic, which keeps accelerated and
brute-force evaluation bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

EPS = 1e-9

CIRCLE = 0
RECT = 1


def vec2(x: float, y: float) -> np.ndarray:
    v = np.array([x, y], dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"non-finite vector component in ({x}, {y})")
    return v


def as_vec2(v) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.shape != (2,):
        raise ValueError(f"expected a 2-vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite vector component in {arr.tolist()}")
    return arr


def norm(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return np.sqrt(v[..., 0] * v[..., 0] + v[..., 1] * v[..., 1])


def dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1]


def perp(v: np.ndarray) -> np.ndarray:
    """Rotate by +90 degrees."""
    v = np.asarray(v, dtype=float)
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


def unit_vector(v: np.ndarray) -> np.ndarray:
    """Normalize ``v``; vectors shorter than ``EPS`` map to zero."""
    v = np.asarray(v, dtype=float)
    n = norm(v)
    small = n < EPS
    safe = np.where(small, 1.0, n)
    out = v / safe[..., None]
    return np.where(small[..., None], 0.0, out)


@dataclass(frozen=True)
class Circle:
    radius: float

    def __post_init__(self):
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise ValueError(f"circle radius must be positive, got {self.radius}")

    @property
    def bounding_radius(self) -> float:
        return self.radius


@dataclass(frozen=True)
class Rect:
    """Oriented box; ``half_length`` runs along the heading."""

    half_length: float
    half_width: float

    def __post_init__(self):
        for name in ("half_length", "half_width"):
            val = getattr(self, name)
            if not (val > 0 and math.isfinite(val)):
                raise ValueError(f"rect {name} must be positive, got {val}")

    @property
    def bounding_radius(self) -> float:
        return math.hypot(self.half_length, self.half_width)


Shape = Union[Circle, Rect]


def shape_params(shape: Shape) -> tuple[int, float, float]:
    """Flatten a shape into ``(code, a, b)`` for vectorized kernels."""
    if isinstance(shape, Circle):
        return CIRCLE, shape.radius, 0.0
    if isinstance(shape, Rect):
        return RECT, shape.half_length, shape.half_width
    raise TypeError(f"unknown shape {shape!r}")


def shape_from_params(code: int, a: float, b: float) -> Shape:
    return Rect(a, b) if code == RECT else Circle(a)


def support_radius(code, a, b, heading, direction) -> np.ndarray:
    """Vectorized directional radius over flattened shape parameters.

    ``heading`` is replaced by +x where it is (near) zero. Circles ignore the
    direction entirely.
    """
    heading = np.asarray(heading, dtype=float)
    direction = np.asarray(direction, dtype=float)
    hx = heading[..., 0]
    hy = heading[..., 1]
    degenerate = (hx * hx + hy * hy) < EPS * EPS
    hx = np.where(degenerate, 1.0, hx)
    hy = np.where(degenerate, 0.0, hy)
    along = np.abs(direction[..., 0] * hx + direction[..., 1] * hy)
    across = np.abs(direction[..., 1] * hx - direction[..., 0] * hy)
    rect = a * along + b * across
    return np.where(code == RECT, rect, a)


def directional_radius(shape: Shape, heading, direction) -> float:
    code, a, b = shape_params(shape)
    return float(support_radius(code, a, b, heading, direction))


def clearance(p_i, v_i, code_i, a_i, b_i, head_i, p_q, v_q, code_q, a_q, b_q, head_q, t):
    """Predicted clearance after ``t`` seconds, broadcasting over all inputs.

    Shapes are kept at their current headings; the relative displacement
    points from ``q`` to ``i``.
    """
    p_i = np.asarray(p_i, dtype=float)
    p_q = np.asarray(p_q, dtype=float)
    r = (p_i + np.asarray(v_i, dtype=float) * t) - (p_q + np.asarray(v_q, dtype=float) * t)
    dist = norm(r)
    r_hat = unit_vector(r)
    r_i = support_radius(code_i, a_i, b_i, head_i, -r_hat)
    r_q = support_radius(code_q, a_q, b_q, head_q, r_hat)
    return dist - r_i - r_q


def predicted_distance(p_i, heading_i, shape_i: Shape, p_q, v_q, heading_q, shape_q: Shape, v, t: float) -> float:
    """Clearance between body ``i`` moving at ``v`` and body ``q`` moving at ``v_q``.

    Negative values mean the two shapes overlap at time ``t``.
    """
    if t < 0:
        raise ValueError("prediction horizon must be non-negative")
    ci, ai, bi = shape_params(shape_i)
    cq, aq, bq = shape_params(shape_q)
    return float(clearance(p_i, v, ci, ai, bi, heading_i, p_q, v_q, cq, aq, bq, heading_q, t))
