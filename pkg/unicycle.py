"""Unicycle plant, its flat coordinates and the endogenous dynamic feedback.

State x = (x1, x2, x3) with heading x3; the dynamic extension y = (y1, y2) is
the planar velocity and integrates the flat input, y_dot = v.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from design_constants import tolerances
from flat_core import FlatLTI, double_integrator


class SingularState(RuntimeError):
    """Speed below the floor where the heading is undefined."""


@dataclass(frozen=True)
class UnicycleState:
    x1: float
    x2: float
    x3: float
    y1: float
    y2: float

    def __post_init__(self) -> None:
        if not all(math.isfinite(c) for c in (self.x1, self.x2, self.x3, self.y1, self.y2)):
            raise ValueError(f"Non-finite unicycle state {self}")

    @classmethod
    def from_array(cls, a: np.ndarray) -> "UnicycleState":
        return cls(*(float(c) for c in a))

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.x2, self.x3, self.y1, self.y2])

    @property
    def speed(self) -> float:
        return math.hypot(self.y1, self.y2)


def unicycle_flat_system() -> FlatLTI:
    return double_integrator(2)


def wrap_angle(angle: float) -> float:
    return math.atan2(math.sin(angle), math.cos(angle))


def flat_map(s: UnicycleState) -> np.ndarray:
    return np.array([s.x1, s.x2, s.y1, s.y2])


def inverse_map(xi: np.ndarray, floor: float = tolerances.speed_floor) -> UnicycleState:
    xi = np.asarray(xi, dtype=float)
    if math.hypot(xi[2], xi[3]) < floor:
        raise SingularState(f"Speed {math.hypot(xi[2], xi[3]):.3e} below floor {floor}")
    return UnicycleState(xi[0], xi[1], math.atan2(xi[3], xi[2]), xi[2], xi[3])


def endogenous_feedback(
    s: UnicycleState,
    v: np.ndarray,
    heading_gain: float = 0.0,
    floor: float = tolerances.speed_floor,
) -> np.ndarray:
    """Plant input u = (forward speed, turn rate) realizing the flat input v."""
    speed_sq = s.y1**2 + s.y2**2
    if speed_sq < floor**2:
        raise SingularState(f"Speed {math.sqrt(speed_sq):.3e} below floor {floor}")
    u1 = math.sqrt(speed_sq)
    u2 = (-s.y2 * v[0] + s.y1 * v[1]) / speed_sq
    if heading_gain:
        u2 += heading_gain * wrap_angle(math.atan2(s.y2, s.y1) - s.x3)
    return np.array([u1, u2])


def plant_derivative(
    s: UnicycleState, u: np.ndarray, d: np.ndarray, v: np.ndarray | None = None
) -> np.ndarray:
    """Time derivative of (x1, x2, x3, y1, y2) with matched disturbance d."""
    forward = u[0] + d[0]
    c, sn = math.cos(s.x3), math.sin(s.x3)
    y_dot = (0.0, 0.0) if v is None else (v[0], v[1])
    return np.array([forward * c, forward * sn, u[1] + d[1], y_dot[0], y_dot[1]])


def disturbance_jacobian(s: UnicycleState) -> np.ndarray:
    """Flat-state image of the matched channel, (dXi/dx) g(x)."""
    G = np.zeros((4, 2))
    G[0, 0] = math.cos(s.x3)
    G[1, 0] = math.sin(s.x3)
    return G
