"""Modified algebraic Riccati equation and the attenuation-level line search.

Solves

    P A + A^T P - P (B R^-1 B^T - I / gamma^2) P + Q = 0

for the stabilizing symmetric positive-definite P through the stable invariant
subspace of the Hamiltonian [[A, -S], [-Q, -A^T]] with S = B R^-1 B^T - I/gamma^2.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from design_constants import gamma_grid, tolerances
from flat_core import FlatLTI
from tracker import compute_v_max


class NoStabilizingSolution(RuntimeError):
    """The Hamiltonian has no usable stable subspace for this gamma."""


class AllGammaInfeasible(RuntimeError):
    """No candidate gamma admits a stabilizing solution."""


@dataclass(frozen=True, eq=False)
class RiccatiParams:
    Q: np.ndarray
    R: np.ndarray
    gamma: float

    def __post_init__(self) -> None:
        Q = _check_spd(self.Q, "Q")
        R = _check_spd(self.R, "R")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def inv_gamma_sq(self) -> float:
        return 0.0 if math.isinf(self.gamma) else 1.0 / self.gamma**2


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    P: np.ndarray
    residual: float
    gamma: float

    @property
    def lambda_max(self) -> float:
        return float(np.linalg.eigvalsh(self.P)[-1])

    @property
    def lambda_min(self) -> float:
        return float(np.linalg.eigvalsh(self.P)[0])


@dataclass(frozen=True, eq=False)
class GammaCandidate:
    gamma: float
    solution: RiccatiSolution | None
    metric: float | None
    reason: str | None = None


def _check_spd(M: np.ndarray, name: str) -> np.ndarray:
    M = np.array(M, dtype=float, ndmin=2)
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got {M.shape}")
    if not np.allclose(M, M.T, atol=tolerances.symmetry, rtol=0.0):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(M)[0] <= 0:
        raise ValueError(f"{name} must be positive definite")
    return M


def _disturbance_coupling(sys: FlatLTI, params: RiccatiParams) -> np.ndarray:
    n = sys.n_f
    if params.Q.shape != (n, n) or params.R.shape != (sys.m, sys.m):
        raise ValueError(
            f"Q {params.Q.shape} / R {params.R.shape} do not match n_f={n}, m={sys.m}"
        )
    return sys.B @ np.linalg.solve(params.R, sys.B.T) - params.inv_gamma_sq * np.eye(n)


def riccati_residual(sys: FlatLTI, params: RiccatiParams, P: np.ndarray) -> float:
    P = np.asarray(P, dtype=float)
    S = _disturbance_coupling(sys, params)
    defect = P @ sys.A + sys.A.T @ P - P @ S @ P + params.Q
    return float(np.linalg.norm(defect, "fro"))


def solve_modified_are(sys: FlatLTI, params: RiccatiParams) -> RiccatiSolution:
    n = sys.n_f
    S = _disturbance_coupling(sys, params)
    H = np.block([[sys.A, -S], [-params.Q, -sys.A.T]])

    eigenvalues = np.linalg.eigvals(H)
    scale = max(1.0, float(np.linalg.norm(H, 1)))
    if np.min(np.abs(eigenvalues.real)) <= tolerances.imaginary_axis * scale:
        raise NoStabilizingSolution(
            f"Hamiltonian has eigenvalues on the imaginary axis (gamma={params.gamma})"
        )

    _, Z, sdim = scipy.linalg.schur(H, output="real", sort="lhp")
    if sdim != n:
        raise NoStabilizingSolution(f"Stable subspace has dimension {sdim}, need {n}")
    U1 = Z[:n, :n]
    U2 = Z[n:, :n]
    if np.linalg.cond(U1) > 1.0 / np.finfo(float).eps:
        raise NoStabilizingSolution(f"Stable subspace is singular (gamma={params.gamma})")

    P = np.linalg.solve(U1.T, U2.T).T
    P = 0.5 * (P + P.T)
    if np.linalg.eigvalsh(P)[0] <= 0:
        raise NoStabilizingSolution(f"Solution is not positive definite (gamma={params.gamma})")

    residual = riccati_residual(sys, params, P)
    if residual > tolerances.riccati_residual:
        raise NoStabilizingSolution(
            f"Riccati residual {residual:.3e} exceeds tolerance (gamma={params.gamma})"
        )

    closed_loop = sys.A - 0.5 * sys.B @ np.linalg.solve(params.R, sys.B.T @ P)
    if np.max(np.linalg.eigvals(closed_loop).real) >= 0:
        raise NoStabilizingSolution(f"Tracking closed loop is not Hurwitz (gamma={params.gamma})")

    P.setflags(write=False)
    return RiccatiSolution(P=P, residual=residual, gamma=params.gamma)


def default_gamma_grid() -> np.ndarray:
    decades = math.log10(gamma_grid.high) - math.log10(gamma_grid.low)
    points = int(round(decades * gamma_grid.points_per_decade)) + 1
    return np.logspace(math.log10(gamma_grid.low), math.log10(gamma_grid.high), points)


def ellipsoid_size(P: np.ndarray, Q: np.ndarray, gamma: float, w_bar: float) -> float:
    """Largest semi-axis of {xi : 1/2 xi^T P xi <= V_max}."""
    v_max = compute_v_max(P, Q, gamma, w_bar)
    return math.sqrt(2.0 * v_max / float(np.linalg.eigvalsh(P)[0]))


def scan_gamma(
    sys: FlatLTI,
    Q: np.ndarray,
    R: np.ndarray,
    w_bar: float,
    grid: Sequence[float] | None = None,
) -> list[GammaCandidate]:
    candidates = default_gamma_grid() if grid is None else np.asarray(grid, dtype=float)
    if np.any(np.diff(candidates) <= 0):
        raise ValueError("gamma grid must be strictly ascending")
    results: list[GammaCandidate] = []
    for gamma in candidates:
        params = RiccatiParams(Q, R, float(gamma))
        try:
            solution = solve_modified_are(sys, params)
        except NoStabilizingSolution as exc:
            results.append(GammaCandidate(float(gamma), None, None, str(exc)))
            continue
        metric = ellipsoid_size(solution.P, params.Q, float(gamma), w_bar)
        results.append(GammaCandidate(float(gamma), solution, metric))
    return results


def choose_gamma(candidates: Sequence[GammaCandidate]) -> tuple[float, RiccatiSolution]:
    """Feasible candidate with the smallest ellipsoid, lowest gamma on ties."""
    best: GammaCandidate | None = None
    for candidate in candidates:
        if candidate.solution is None or candidate.metric is None:
            continue
        # strict < keeps the lowest gamma on ties
        if best is None or candidate.metric < best.metric:  # type: ignore[operator]
            best = candidate
    if best is None or best.solution is None:
        raise AllGammaInfeasible(f"No feasible gamma among {len(candidates)} candidates")
    feasible = sum(1 for c in candidates if c.solution is not None)
    logging.info(
        "Gamma search: %d/%d feasible, chose gamma=%.4g size=%.4g",
        feasible,
        len(candidates),
        best.gamma,
        best.metric,
    )
    return best.gamma, best.solution


def minimize_gamma(
    sys: FlatLTI,
    Q: np.ndarray,
    R: np.ndarray,
    w_bar: float,
    grid: Sequence[float] | None = None,
) -> tuple[float, RiccatiSolution]:
    return choose_gamma(scan_gamma(sys, Q, R, w_bar, grid))
