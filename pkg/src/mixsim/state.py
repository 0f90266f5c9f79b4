from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Shape


@dataclass
class AgentState:
    """Per-agent state: position, velocity and control direction plus bookkeeping.

    ``heading`` orients rectangular bodies and keeps its last nonzero value
    while the agent stands still. ``phase`` and ``cross_sign`` track the
    road-crossing mode of pedestrians that decide to cross.
    """

    id: int
    kind: str
    position: np.ndarray
    velocity: np.ndarray
    control_direction: np.ndarray
    shape: Shape
    heading: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0]))
    group_id: str | None = None
    speed_group: int = 0
    target_speed: float = 0.0
    spec_index: int = 0
    phase: int = 0
    cross_sign: float = 0.0
