"""Low-level ISS tracking law, its Lyapunov function and invariant error ellipsoid."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from flat_core import FlatLTI
    from riccati import RiccatiSolution


@dataclass(frozen=True, eq=False)
class ErrorEllipsoid:
    """Sub-level set {xi_e : 1/2 xi_e^T P xi_e <= level}."""

    P: np.ndarray
    level: float

    def __post_init__(self) -> None:
        if self.level < 0:
            raise ValueError(f"Ellipsoid level must be non-negative, got {self.level}")

    def contains(self, xi_e: np.ndarray) -> bool:
        xi_e = np.asarray(xi_e, dtype=float)
        return bool(0.5 * xi_e @ self.P @ xi_e <= self.level)

    def semi_axes(self) -> np.ndarray:
        """Semi-axis lengths, ascending."""
        eigenvalues = np.linalg.eigvalsh(self.P)[::-1]
        return np.sqrt(2.0 * self.level / eigenvalues)

    def support(self, a: np.ndarray) -> float:
        """max a^T xi over the ellipsoid."""
        a = np.asarray(a, dtype=float)
        return math.sqrt(2.0 * self.level * float(a @ np.linalg.solve(self.P, a)))

    def offsets(self, position_index: tuple[int, ...]) -> np.ndarray:
        """Largest excursion of each position coordinate inside the ellipsoid."""
        P_inv = np.linalg.inv(self.P)
        return np.array([math.sqrt(2.0 * self.level * P_inv[i, i]) for i in position_index])


@dataclass(frozen=True, eq=False)
class TrackingLaw:
    K: np.ndarray
    P: np.ndarray
    V_max: float
    w_bar: float
    gamma: float
    lambda_min_Q: float

    @property
    def ellipsoid(self) -> ErrorEllipsoid:
        return ErrorEllipsoid(self.P, self.V_max)


def compute_v_max(P: np.ndarray, Q: np.ndarray, gamma: float, w_bar: float) -> float:
    if w_bar == 0:
        return 0.0
    if math.isinf(gamma):
        return math.inf
    lambda_max_P = float(np.linalg.eigvalsh(P)[-1])
    lambda_min_Q = float(np.linalg.eigvalsh(Q)[0])
    return 0.5 * gamma**2 * lambda_max_P / lambda_min_Q * w_bar**2


def build_tracking_law(
    sys: FlatLTI,
    Q: np.ndarray,
    R: np.ndarray,
    solution: RiccatiSolution,
    w_bar: float,
) -> TrackingLaw:
    if w_bar < 0:
        raise ValueError(f"Disturbance bound must be non-negative, got {w_bar}")
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    # the gain uses B^T so R^-1 B^T P is m x n_f
    K = 0.5 * np.linalg.solve(R, sys.B.T @ solution.P)
    K.setflags(write=False)
    return TrackingLaw(
        K=K,
        P=solution.P,
        V_max=compute_v_max(solution.P, Q, solution.gamma, w_bar),
        w_bar=float(w_bar),
        gamma=solution.gamma,
        lambda_min_Q=float(np.linalg.eigvalsh(Q)[0]),
    )


def feedback(law: TrackingLaw, xi_e: np.ndarray) -> np.ndarray:
    return -law.K @ np.asarray(xi_e, dtype=float)


def lyapunov(law: TrackingLaw, xi_e: np.ndarray) -> float:
    xi_e = np.asarray(xi_e, dtype=float)
    return float(0.5 * xi_e @ law.P @ xi_e)


def flat_input(
    law: TrackingLaw, xi: np.ndarray, xi_ref: np.ndarray, v_ref: np.ndarray
) -> np.ndarray:
    error = np.asarray(xi, dtype=float) - np.asarray(xi_ref, dtype=float)
    return np.asarray(v_ref, dtype=float) + feedback(law, error)


def iss_margin(law: TrackingLaw, Q: np.ndarray, xi_e: np.ndarray, w: np.ndarray) -> float:
    lambda_min_Q = float(np.linalg.eigvalsh(np.asarray(Q, dtype=float))[0])
    e_sq = float(np.sum(np.square(xi_e)))
    w_sq = float(np.sum(np.square(w)))
    return -0.5 * lambda_min_Q * e_sq + 0.5 * law.gamma**2 * w_sq
