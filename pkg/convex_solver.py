"""Dense primal-dual interior point solver for the planner's convex subproblems.

Solves

    min  1/2 x^T H x + g^T x + constant
    s.t. Aeq x = beq,  Ain x <= bin,  1/2 (x_I - c)^T P (x_I - c) <= level

with Mehrotra predictor-corrector steps on the slack form. Infeasibility is only
reported with a Farkas-type certificate obtained from a phase-I problem.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from design_constants import tolerances

_STEP_FRACTION = 0.995
_REGULARIZATION = 1e-12
_PHASE_ONE_WEIGHT = 1e-9


@dataclass(frozen=True, eq=False)
class EllipsoidConstraint:
    """1/2 (x[indices] - center)^T P (x[indices] - center) <= level."""

    P: np.ndarray
    center: np.ndarray
    level: float
    indices: tuple[int, ...]

    def __post_init__(self) -> None:
        P = np.array(self.P, dtype=float, ndmin=2)
        center = np.array(self.center, dtype=float).ravel()
        k = len(self.indices)
        if P.shape != (k, k) or center.shape != (k,):
            raise ValueError(f"Ellipsoid P {P.shape} / center {center.shape} do not match {k} indices")
        if self.level < 0:
            raise ValueError(f"Ellipsoid level must be non-negative, got {self.level}")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "level", float(self.level))
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))


@dataclass(frozen=True, eq=False)
class ConvexSubproblem:
    H: np.ndarray
    g: np.ndarray
    Aeq: np.ndarray
    beq: np.ndarray
    Ain: np.ndarray
    bin: np.ndarray
    ellipsoid: EllipsoidConstraint | None = None
    constant: float = 0.0

    def __post_init__(self) -> None:
        H = np.array(self.H, dtype=float, ndmin=2)
        n = H.shape[0]
        if H.shape != (n, n):
            raise ValueError(f"H must be square, got {H.shape}")
        if not np.allclose(H, H.T, atol=1e-10 * max(1.0, float(np.abs(H).max(initial=0.0)))):
            raise ValueError("H must be symmetric")
        g = np.array(self.g, dtype=float).ravel()
        Aeq = np.array(self.Aeq, dtype=float).reshape(-1, n)
        beq = np.array(self.beq, dtype=float).ravel()
        Ain = np.array(self.Ain, dtype=float).reshape(-1, n)
        bin_ = np.array(self.bin, dtype=float).ravel()
        if g.shape != (n,):
            raise ValueError(f"g must have length {n}, got {g.shape}")
        if beq.shape != (Aeq.shape[0],) or bin_.shape != (Ain.shape[0],):
            raise ValueError(
                f"Right-hand sides do not match: Aeq {Aeq.shape}, beq {beq.shape}, "
                f"Ain {Ain.shape}, bin {bin_.shape}"
            )
        if self.ellipsoid is not None and max(self.ellipsoid.indices, default=-1) >= n:
            raise ValueError("Ellipsoid indices out of range")
        for name, value in (("H", H), ("g", g), ("Aeq", Aeq), ("beq", beq), ("Ain", Ain), ("bin", bin_)):
            object.__setattr__(self, name, value)

    @property
    def n(self) -> int:
        return self.H.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.H @ x + self.g @ x + self.constant)


@dataclass(frozen=True, eq=False)
class Multipliers:
    eq: np.ndarray
    ineq: np.ndarray
    ellipsoid: float = 0.0


@dataclass(frozen=True, eq=False)
class SolveReport:
    status: str
    x: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    duals: Multipliers
    dual_bound: float = -np.inf
    certificate_residual: float | None = None

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


@dataclass(frozen=True, eq=False)
class _Quadratic:
    """q(x) = 1/2 x^T P x + a^T x + c."""

    P: np.ndarray
    a: np.ndarray
    c: float

    @classmethod
    def from_ellipsoid(cls, ell: EllipsoidConstraint, n: int) -> "_Quadratic":
        idx = np.array(ell.indices)
        P = np.zeros((n, n))
        P[np.ix_(idx, idx)] = ell.P
        a = np.zeros(n)
        a[idx] = -ell.P @ ell.center
        c = 0.5 * float(ell.center @ ell.P @ ell.center) - ell.level
        return cls(P, a, c)

    def value(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.P @ x + self.a @ x + self.c)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self.P @ x + self.a


@dataclass
class _Iterate:
    x: np.ndarray
    y: np.ndarray
    lam: np.ndarray
    converged: bool
    stalled: bool
    iterations: int
    kkt: float


def _constraint_values(x: np.ndarray, Ain: np.ndarray, bin_: np.ndarray, quad: _Quadratic | None) -> np.ndarray:
    c = Ain @ x - bin_
    if quad is not None:
        c = np.append(c, quad.value(x))
    return c


def _constraint_jacobian(x: np.ndarray, Ain: np.ndarray, quad: _Quadratic | None) -> np.ndarray:
    if quad is None:
        return Ain
    return np.vstack([Ain, quad.gradient(x)])


def _residuals(
    H, g, Aeq, beq, Ain, bin_, quad, x, y, lam
) -> tuple[float, float, float, float]:
    """(stationarity, primal, dual, complementarity), all infinity norms."""
    c = _constraint_values(x, Ain, bin_, quad)
    J = _constraint_jacobian(x, Ain, quad)
    r_d = H @ x + g + Aeq.T @ y + J.T @ lam
    primal = max(
        float(np.max(np.abs(Aeq @ x - beq), initial=0.0)),
        float(np.max(c, initial=0.0)),
    )
    dual = float(max(0.0, -np.min(lam, initial=0.0)))
    comp = float(np.max(np.abs(lam * c), initial=0.0))
    return float(np.max(np.abs(r_d), initial=0.0)), primal, dual, comp


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    mask = dv < 0
    if not np.any(mask):
        return 1.0
    return float(min(1.0, np.min(-v[mask] / dv[mask])))


def _initial_point(H: np.ndarray, g: np.ndarray, Aeq: np.ndarray, beq: np.ndarray) -> np.ndarray:
    n, meq = H.shape[0], Aeq.shape[0]
    K = np.block([[H + np.eye(n), Aeq.T], [Aeq, -_REGULARIZATION * np.eye(meq)]])
    sol = scipy.linalg.solve(K, np.concatenate([-g, beq]))
    return sol[:n]


def _interior_point(
    H, g, Aeq, beq, Ain, bin_, quad, max_iter: int, detect_infeasible: bool, x0=None
) -> _Iterate:
    n, meq = H.shape[0], Aeq.shape[0]
    p = Ain.shape[0] + (1 if quad is not None else 0)
    x = _initial_point(H, g, Aeq, beq) if x0 is None else np.array(x0, dtype=float)
    s = np.maximum(-_constraint_values(x, Ain, bin_, quad), 1.0)
    lam = np.ones(p)
    y = np.zeros(meq)
    history: list[float] = []
    kkt = np.inf
    best: _Iterate | None = None
    polish_left = tolerances.polish_iterations

    for it in range(max_iter + 1):
        stat, primal, dual, comp = _residuals(H, g, Aeq, beq, Ain, bin_, quad, x, y, lam)
        kkt = max(stat, primal, dual, comp)
        if kkt <= tolerances.kkt and primal <= tolerances.feasibility:
            if best is None or kkt < best.kkt:
                best = _Iterate(x, y, lam, True, False, it, kkt)
            # keep stepping past acceptance until the residual reaches round-off
            if kkt <= tolerances.kkt_polish or polish_left == 0:
                return best
            polish_left -= 1
        elif best is not None:
            return best
        if it == max_iter:
            break

        history.append(primal)
        if detect_infeasible and best is None and (
            np.max(lam, initial=0.0) > 1e10
            or (it >= 50 and primal > 1e-6 and primal > 0.9 * history[-20])
        ):
            return _Iterate(x, y, lam, False, True, it, kkt)

        c = _constraint_values(x, Ain, bin_, quad)
        J = _constraint_jacobian(x, Ain, quad)
        W = H if quad is None else H + lam[-1] * quad.P
        r_d = H @ x + g + Aeq.T @ y + J.T @ lam
        r_eq = Aeq @ x - beq
        r_in = c + s
        D = lam / s

        K = np.block(
            [
                [W + J.T @ (D[:, None] * J) + _REGULARIZATION * np.eye(n), Aeq.T],
                [Aeq, -_REGULARIZATION * np.eye(meq)],
            ]
        )
        lu = scipy.linalg.lu_factor(K)

        def newton(r_c: np.ndarray):
            rhs = np.concatenate([-r_d - J.T @ (D * r_in - r_c / s), -r_eq])
            sol = scipy.linalg.lu_solve(lu, rhs)
            dx, dy = sol[:n], sol[n:]
            dlam = D * (J @ dx + r_in) - r_c / s
            ds = -(r_c + s * dlam) / lam
            return dx, dy, dlam, ds

        if p == 0:
            dx, dy, dlam, ds = newton(np.zeros(0))
            alpha = 1.0
        else:
            mu = float(s @ lam) / p
            dx, dy, dlam, ds = newton(s * lam)
            alpha_aff = min(_max_step(s, ds), _max_step(lam, dlam))
            mu_aff = float((s + alpha_aff * ds) @ (lam + alpha_aff * dlam)) / p
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            dx, dy, dlam, ds = newton(s * lam + ds * dlam - sigma * mu)
            alpha = min(1.0, _STEP_FRACTION * _max_step(s, ds), _STEP_FRACTION * _max_step(lam, dlam))

        x = x + alpha * dx
        y = y + alpha * dy
        lam = lam + alpha * dlam
        s = s + alpha * ds

    if best is not None:
        return best
    return _Iterate(x, y, lam, False, False, max_iter, kkt)


def _split_multipliers(lam: np.ndarray, y: np.ndarray, n_lin: int, has_quad: bool) -> Multipliers:
    return Multipliers(
        eq=y.copy(),
        ineq=lam[:n_lin].copy(),
        ellipsoid=float(lam[n_lin]) if has_quad else 0.0,
    )


def check_kkt(prob: ConvexSubproblem, x: np.ndarray, duals: Multipliers) -> float:
    """Max of stationarity, primal, dual and complementarity residuals."""
    quad = None if prob.ellipsoid is None else _Quadratic.from_ellipsoid(prob.ellipsoid, prob.n)
    lam = np.asarray(duals.ineq, dtype=float)
    if quad is not None:
        lam = np.append(lam, duals.ellipsoid)
    return max(
        _residuals(
            prob.H, prob.g, prob.Aeq, prob.beq, prob.Ain, prob.bin, quad,
            np.asarray(x, dtype=float), np.asarray(duals.eq, dtype=float), lam,
        )
    )


def primal_residual(prob: ConvexSubproblem, x: np.ndarray) -> float:
    """Largest equality or inequality violation at x (zero when feasible)."""
    quad = None if prob.ellipsoid is None else _Quadratic.from_ellipsoid(prob.ellipsoid, prob.n)
    x = np.asarray(x, dtype=float)
    return max(
        float(np.max(np.abs(prob.Aeq @ x - prob.beq), initial=0.0)),
        float(np.max(_constraint_values(x, prob.Ain, prob.bin, quad), initial=0.0)),
    )


def dual_bound(prob: ConvexSubproblem, x: np.ndarray, duals: Multipliers) -> float:
    """Lagrange dual function value at the given multipliers."""
    quad = None if prob.ellipsoid is None else _Quadratic.from_ellipsoid(prob.ellipsoid, prob.n)
    lam = np.asarray(duals.ineq, dtype=float)
    W = prob.H
    if quad is not None:
        lam = np.append(lam, duals.ellipsoid)
        W = W + duals.ellipsoid * quad.P
    c = _constraint_values(x, prob.Ain, prob.bin, quad)
    J = _constraint_jacobian(x, prob.Ain, quad)
    lagrangian = prob.objective(x) + duals.eq @ (prob.Aeq @ x - prob.beq) + lam @ c
    r_d = prob.H @ x + prob.g + prob.Aeq.T @ duals.eq + J.T @ lam
    return float(lagrangian - 0.5 * r_d @ np.linalg.pinv(W, hermitian=True) @ r_d)


def _equality_certificate(prob: ConvexSubproblem) -> SolveReport | None:
    if prob.Aeq.shape[0] == 0:
        return None
    x_ls, *_ = np.linalg.lstsq(prob.Aeq, prob.beq, rcond=None)
    r = prob.Aeq @ x_ls - prob.beq
    if np.max(np.abs(r)) <= tolerances.feasibility:
        return None
    y = r / np.linalg.norm(r)
    residual = float(np.max(np.abs(prob.Aeq.T @ y)))
    logging.debug("Equality system inconsistent, residual %.3e", np.max(np.abs(r)))
    return _infeasible_report(prob, x_ls, 0, Multipliers(y, np.zeros(prob.Ain.shape[0])), residual)


def _infeasible_report(prob, x, iterations, duals, residual) -> SolveReport:
    return SolveReport(
        status="infeasible",
        x=x,
        objective=np.inf,
        kkt_residual=np.inf,
        iterations=iterations,
        duals=duals,
        dual_bound=np.inf,
        certificate_residual=residual,
    )


def _phase_one(
    Aeq: np.ndarray, beq: np.ndarray, Ain: np.ndarray, bin_: np.ndarray, quad: _Quadratic | None
) -> tuple[_Iterate, np.ndarray, Multipliers]:
    """min t + rho/2 |x|^2  s.t. Aeq x = beq, c(x) <= t, t >= -1."""
    n, n_lin = Ain.shape[1], Ain.shape[0]
    H1 = np.zeros((n + 1, n + 1))
    H1[:n, :n] = _PHASE_ONE_WEIGHT * np.eye(n)
    g1 = np.zeros(n + 1)
    g1[-1] = 1.0
    Aeq1 = np.hstack([Aeq, np.zeros((Aeq.shape[0], 1))])
    Ain1 = np.vstack([np.hstack([Ain, -np.ones((n_lin, 1))]), np.append(np.zeros(n), -1.0)])
    bin1 = np.append(bin_, 1.0)
    quad1 = None
    if quad is not None:
        P1 = np.zeros((n + 1, n + 1))
        P1[:n, :n] = quad.P
        quad1 = _Quadratic(P1, np.append(quad.a, -1.0), quad.c)
    it = _interior_point(
        H1, g1, Aeq1, beq, Ain1, bin1, quad1, tolerances.max_iterations, detect_infeasible=False
    )
    lam = np.delete(it.lam, n_lin)
    return it, it.x[:n], _split_multipliers(lam, it.y, n_lin, quad is not None)


def _certify_infeasible(
    Aeq, beq, Ain, bin_, quad, x_hat: np.ndarray, duals: Multipliers
) -> tuple[Multipliers, float] | None:
    """Normalized multipliers and their residual when they prove the constraints inconsistent."""
    total = float(np.sum(duals.ineq) + duals.ellipsoid)
    if total <= 0:
        return None
    scaled = Multipliers(duals.eq / total, duals.ineq / total, duals.ellipsoid / total)
    lam = scaled.ineq if quad is None else np.append(scaled.ineq, scaled.ellipsoid)
    J = _constraint_jacobian(x_hat, Ain, quad)
    residual = float(np.max(np.abs(Aeq.T @ scaled.eq + J.T @ lam), initial=0.0))
    value = float(scaled.eq @ (Aeq @ x_hat - beq) + lam @ _constraint_values(x_hat, Ain, bin_, quad))
    if residual <= tolerances.certificate and value > 0:
        return scaled, residual
    return None


def solve(prob: ConvexSubproblem) -> SolveReport:
    certificate = _equality_certificate(prob)
    if certificate is not None:
        return certificate

    quad = None if prob.ellipsoid is None else _Quadratic.from_ellipsoid(prob.ellipsoid, prob.n)
    Aeq, beq = prob.Aeq, prob.beq
    collapsed = prob.ellipsoid is not None and prob.ellipsoid.level == 0.0
    if collapsed:
        # zero level pins x[indices] to the center
        idx = list(prob.ellipsoid.indices)
        pin = np.zeros((len(idx), prob.n))
        pin[np.arange(len(idx)), idx] = 1.0
        Aeq = np.vstack([Aeq, pin])
        beq = np.concatenate([beq, prob.ellipsoid.center])
        quad = None

    n_lin = prob.Ain.shape[0]
    args = (prob.H, prob.g, Aeq, beq, prob.Ain, prob.bin, quad)
    it = _interior_point(*args, tolerances.max_iterations, detect_infeasible=True)
    iterations = it.iterations

    if it.stalled:
        phase, x_hat, phase_duals = _phase_one(Aeq, beq, prob.Ain, prob.bin, quad)
        iterations += phase.iterations
        t_star = float(phase.x[-1])
        if phase.converged and t_star > tolerances.feasibility:
            proof = _certify_infeasible(Aeq, beq, prob.Ain, prob.bin, quad, x_hat, phase_duals)
            if proof is not None:
                return _infeasible_report(prob, x_hat, iterations, proof[0], proof[1])
        if phase.converged and t_star <= tolerances.feasibility:
            it = _interior_point(*args, tolerances.max_iterations, detect_infeasible=False, x0=x_hat)
            iterations += it.iterations
        elif not phase.converged or t_star > tolerances.feasibility:
            it = _Iterate(it.x, it.y, it.lam, False, True, iterations, it.kkt)

    duals = _split_multipliers(it.lam, it.y[: prob.Aeq.shape[0]], n_lin, quad is not None)
    if not it.converged:
        logging.debug("Interior point stopped after %d iterations, kkt %.3e", iterations, it.kkt)
        return SolveReport(
            status="max_iter",
            x=it.x,
            objective=prob.objective(it.x),
            kkt_residual=it.kkt,
            iterations=iterations,
            duals=duals,
        )
    bound = prob.objective(it.x) if collapsed else dual_bound(prob, it.x, duals)
    return SolveReport(
        status="optimal",
        x=it.x,
        objective=prob.objective(it.x),
        kkt_residual=it.kkt,
        iterations=iterations,
        duals=duals,
        dual_bound=bound,
    )
