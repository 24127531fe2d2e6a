"""Finite-time optimal control problem over per-step region assignments.

Decision vector layout: x = [z_0, ..., z_N, v_0, ..., v_{N-1}].
"""

from __future__ import annotations

import heapq
import logging
import math
import time
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterator, Sequence

import numpy as np

import convex_solver
from convex_solver import ConvexSubproblem, EllipsoidConstraint
from design_constants import planner, tolerances
from flat_core import DiscreteLTI, FlatLTI, rollout_reference
from safeset import LinearBlock, SafeGeometry, region_constraints
from tracker import ErrorEllipsoid

Assignment = Sequence["int | None"]


class InconsistentAssignment(ValueError):
    """Consecutive steps assigned to regions that do not overlap."""


class FtocpNoPlan(RuntimeError):
    """The search ended without a feasible plan."""


class FtocpInfeasible(FtocpNoPlan):
    """No region assignment admits a feasible trajectory."""


class FtocpTimeout(FtocpNoPlan):
    """The search budget ran out before any feasible assignment was found."""


class FtocpUnresolved(FtocpNoPlan):
    """Leaves stopped at the solver iteration cap, so infeasibility is not established."""


@dataclass(frozen=True, eq=False)
class FtocpSpec:
    flat: FlatLTI
    sys: DiscreteLTI
    N: int
    xi_goal: np.ndarray
    D: ErrorEllipsoid
    geometry: SafeGeometry
    Qc: np.ndarray
    Rc: np.ndarray
    timeout: float = planner.timeout
    node_limit: int = planner.node_limit

    def __post_init__(self) -> None:
        if self.N < 1:
            raise ValueError(f"Horizon must be at least 1, got {self.N}")
        n, m = self.sys.n_f, self.sys.m
        xi_goal = np.array(self.xi_goal, dtype=float).ravel()
        Qc = np.array(self.Qc, dtype=float, ndmin=2)
        Rc = np.array(self.Rc, dtype=float, ndmin=2)
        if xi_goal.shape != (n,) or Qc.shape != (n, n) or Rc.shape != (m, m):
            raise ValueError(
                f"Goal {xi_goal.shape}, Qc {Qc.shape}, Rc {Rc.shape} do not match n_f={n}, m={m}"
            )
        if np.linalg.eigvalsh(0.5 * (Qc + Qc.T))[0] < 0:
            raise ValueError("Qc must be positive semidefinite")
        if np.linalg.eigvalsh(0.5 * (Rc + Rc.T))[0] <= 0:
            raise ValueError("Rc must be positive definite")
        drift = np.max(np.abs(self.sys.A_d @ xi_goal - xi_goal))
        if drift > tolerances.equilibrium * max(1.0, float(np.max(np.abs(xi_goal)))):
            raise ValueError(f"Goal is not an unforced equilibrium (drift {drift:.3e})")
        object.__setattr__(self, "xi_goal", xi_goal)
        object.__setattr__(self, "Qc", Qc)
        object.__setattr__(self, "Rc", Rc)
        # raises EmptyTightenedRegion for a region the tube does not fit in
        object.__setattr__(
            self,
            "region_blocks",
            tuple(region_constraints(r, self.D, self.flat, self.sys.T) for r in self.geometry.regions),
        )

    region_blocks: tuple[LinearBlock, ...] = field(init=False, repr=False)

    @property
    def T(self) -> float:
        return self.sys.T

    @property
    def n_vars(self) -> int:
        return self.sys.n_f * (self.N + 1) + self.sys.m * self.N

    def z_slice(self, i: int) -> slice:
        n = self.sys.n_f
        return slice(i * n, (i + 1) * n)

    def v_slice(self, i: int) -> slice:
        offset = self.sys.n_f * (self.N + 1)
        m = self.sys.m
        return slice(offset + i * m, offset + (i + 1) * m)

    @cached_property
    def _cost_and_dynamics(self) -> tuple[np.ndarray, np.ndarray, float, np.ndarray, np.ndarray]:
        n, m, N = self.sys.n_f, self.sys.m, self.N
        H = np.zeros((self.n_vars, self.n_vars))
        g = np.zeros(self.n_vars)
        for i in range(N):
            zs, vs = self.z_slice(i), self.v_slice(i)
            H[zs, zs] = 2.0 * self.Qc
            H[vs, vs] = 2.0 * self.Rc
            g[zs] = -2.0 * self.Qc @ self.xi_goal
        constant = N * float(self.xi_goal @ self.Qc @ self.xi_goal)

        Aeq = np.zeros((n * (N + 1), self.n_vars))
        beq = np.zeros(n * (N + 1))
        for i in range(N):
            rows = slice(i * n, (i + 1) * n)
            Aeq[rows, self.z_slice(i + 1)] = np.eye(n)
            Aeq[rows, self.z_slice(i)] = -self.sys.A_d
            Aeq[rows, self.v_slice(i)] = -self.sys.B_d
        Aeq[N * n :, self.z_slice(N)] = np.eye(n)
        beq[N * n :] = self.xi_goal
        return H, g, constant, Aeq, beq


@dataclass(frozen=True, eq=False)
class FtocpSolution:
    z: np.ndarray
    v: np.ndarray
    regions: tuple[int, ...]
    cost: float
    status: str
    nodes: int = 0
    solve_time: float = 0.0


def stage_cost(spec: FtocpSpec, z: np.ndarray, v: np.ndarray) -> float:
    e = np.asarray(z, dtype=float) - spec.xi_goal
    v = np.asarray(v, dtype=float)
    return float(e @ spec.Qc @ e + v @ spec.Rc @ v)


def trajectory_cost(spec: FtocpSpec, z: np.ndarray, v: np.ndarray) -> float:
    return float(sum(stage_cost(spec, z[i], v[i]) for i in range(spec.N)))


def _check_assignment(spec: FtocpSpec, assignment: Assignment) -> None:
    if len(assignment) != spec.N:
        raise InconsistentAssignment(f"Assignment has {len(assignment)} steps, horizon is {spec.N}")
    for r in assignment:
        if r is not None and not 0 <= r < len(spec.geometry):
            raise InconsistentAssignment(f"Unknown region id {r}")
    for a, b in zip(assignment, assignment[1:]):
        if a is not None and b is not None and not spec.geometry.overlap(a, b):
            raise InconsistentAssignment(f"Regions {a} and {b} do not overlap")


def build(spec: FtocpSpec, xi_now: np.ndarray, assignment: Assignment) -> ConvexSubproblem:
    """Convex subproblem with region blocks for the fixed steps; None leaves a step free."""
    _check_assignment(spec, assignment)
    H, g, constant, Aeq, beq = spec._cost_and_dynamics
    n, m = spec.sys.n_f, spec.sys.m

    rows: list[np.ndarray] = []
    rhs: list[np.ndarray] = []
    for i, r in enumerate(assignment):
        if r is None:
            continue
        G, h = spec.region_blocks[r]
        block = np.zeros((G.shape[0], spec.n_vars))
        block[:, spec.z_slice(i)] = G[:, :n]
        block[:, spec.v_slice(i)] = G[:, n : n + m]
        rows.append(block)
        rhs.append(h)
    Ain = np.vstack(rows) if rows else np.zeros((0, spec.n_vars))
    bin_ = np.concatenate(rhs) if rhs else np.zeros(0)

    ellipsoid = EllipsoidConstraint(
        P=spec.D.P,
        center=np.asarray(xi_now, dtype=float),
        level=spec.D.level,
        indices=tuple(range(n)),
    )
    return ConvexSubproblem(H, g, Aeq, beq, Ain, bin_, ellipsoid=ellipsoid, constant=constant)


def _unpack(spec: FtocpSpec, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n, m, N = spec.sys.n_f, spec.sys.m, spec.N
    z = x[: n * (N + 1)].reshape(N + 1, n).copy()
    v = x[n * (N + 1) :].reshape(N, m).copy()
    return z, v


def _block_satisfied(spec: FtocpSpec, region: int, z: np.ndarray, v: np.ndarray) -> bool:
    G, h = spec.region_blocks[region]
    return bool(np.all(G @ np.concatenate([z, v]) <= h + tolerances.feasibility))


def _completion(
    spec: FtocpSpec, prefix: tuple[int, ...], z: np.ndarray, v: np.ndarray
) -> tuple[int, ...] | None:
    """Smallest overlap-consistent completion of prefix already satisfied by (z, v)."""
    k = len(prefix)
    allowed = [
        [r for r in range(len(spec.geometry)) if _block_satisfied(spec, r, z[i], v[i])]
        for i in range(k, spec.N)
    ]
    # reachable[i] holds regions at step k+i from which a consistent tail exists
    reachable: list[set[int]] = [set() for _ in allowed]
    for i in reversed(range(len(allowed))):
        for r in allowed[i]:
            if i == len(allowed) - 1 or any(spec.geometry.overlap(r, q) for q in reachable[i + 1]):
                reachable[i].add(r)
    tail: list[int] = []
    previous = prefix[-1] if prefix else None
    for i in range(len(allowed)):
        options = sorted(
            r for r in reachable[i] if previous is None or spec.geometry.overlap(previous, r)
        )
        if not options:
            return None
        previous = options[0]
        tail.append(previous)
    return prefix + tuple(tail)


def _children(spec: FtocpSpec, prefix: tuple[int, ...]) -> list[tuple[int, ...]]:
    if not prefix:
        return [(r,) for r in range(len(spec.geometry))]
    return [prefix + (r,) for r in spec.geometry.neighbors(prefix[-1])]


def enumerate_assignments(spec: FtocpSpec) -> Iterator[tuple[int, ...]]:
    """Every overlap-consistent region sequence of length N, lexicographically."""
    stack: list[tuple[int, ...]] = [()]
    while stack:
        prefix = stack.pop()
        if len(prefix) == spec.N:
            yield prefix
            continue
        stack.extend(reversed(_children(spec, prefix)))


@dataclass(order=True)
class _Incumbent:
    cost: float
    regions: tuple[int, ...]
    x: np.ndarray = field(compare=False)


def solve(
    spec: FtocpSpec,
    xi_now: np.ndarray,
    hint: Assignment | None = None,
    timeout: float | None = None,
    clock: Callable[[], float] = time.perf_counter,
) -> FtocpSolution:
    """Best-first branch and bound over region assignments.

    A node whose convex solve stops at the iteration cap keeps its parent's
    bound and is branched without a relaxed point; it is never counted as
    infeasible.
    """
    budget = spec.timeout if timeout is None else timeout
    started = clock()
    nodes = 0
    unresolved = 0
    incumbent: _Incumbent | None = None

    def offer(cost: float, regions: tuple[int, ...], x: np.ndarray) -> None:
        nonlocal incumbent
        candidate = _Incumbent(cost, regions, x)
        if incumbent is None or candidate < incumbent:
            incumbent = candidate

    def out_of_budget() -> bool:
        if spec.node_limit and nodes >= spec.node_limit:
            return True
        return budget > 0 and clock() - started > budget

    def offer_if_feasible(prob: ConvexSubproblem, report: convex_solver.SolveReport, regions: tuple[int, ...]) -> bool:
        if convex_solver.primal_residual(prob, report.x) > tolerances.feasibility:
            return False
        offer(report.objective, regions, report.x)
        return True

    if hint is not None:
        try:
            prob = build(spec, xi_now, hint)
            report = convex_solver.solve(prob)
            nodes += 1
            if report.optimal:
                offer(report.objective, tuple(hint), report.x)  # type: ignore[arg-type]
            elif report.status == "max_iter":
                offer_if_feasible(prob, report, tuple(hint))  # type: ignore[arg-type]
        except InconsistentAssignment:
            logging.warning("Ignoring inconsistent assignment hint %s", hint)

    # heap entries: (bound, prefix, relaxed x or None when the node solve did not converge)
    heap: list[tuple[float, tuple[int, ...], np.ndarray | None]] = []
    root = convex_solver.solve(build(spec, xi_now, [None] * spec.N))
    nodes += 1
    if root.status == "infeasible":
        raise FtocpInfeasible("Relaxation without region constraints is infeasible")
    if root.optimal:
        heapq.heappush(heap, (root.objective, (), root.x))
    else:
        logging.warning("Root relaxation stopped with status %s, branching without a bound", root.status)
        heapq.heappush(heap, (-math.inf, (), None))

    timed_out = False
    while heap:
        bound, prefix, x = heapq.heappop(heap)
        if incumbent is not None and bound >= incumbent.cost - 1e-12:
            break
        if x is not None:
            z, v = _unpack(spec, x)
            completion = _completion(spec, prefix, z, v)
            if completion is not None:
                offer(bound, completion, x)
                continue
        for child in _children(spec, prefix):
            if out_of_budget():
                timed_out = True
                break
            prob = build(spec, xi_now, list(child) + [None] * (spec.N - len(child)))
            report = convex_solver.solve(prob)
            nodes += 1
            if report.status == "infeasible":
                continue
            if not report.optimal:
                if len(child) == spec.N:
                    if not offer_if_feasible(prob, report, child):
                        unresolved += 1
                        logging.warning("Leaf %s stopped with status %s", child, report.status)
                else:
                    logging.warning("Node %s stopped with status %s, branching with parent bound", child, report.status)
                    heapq.heappush(heap, (bound, child, None))
                continue
            if incumbent is not None and report.objective >= incumbent.cost - 1e-12:
                continue
            if len(child) == spec.N:
                offer(report.objective, child, report.x)
            else:
                heapq.heappush(heap, (report.objective, child, report.x))
        if timed_out:
            break

    elapsed = clock() - started
    if incumbent is None:
        if timed_out:
            raise FtocpTimeout(f"No feasible assignment within budget ({nodes} nodes, {elapsed:.3f}s)")
        if unresolved:
            raise FtocpUnresolved(
                f"{unresolved} leaves stopped at the iteration cap, infeasibility not established ({nodes} nodes)"
            )
        raise FtocpInfeasible(f"No feasible region assignment ({nodes} nodes)")

    z, v = _unpack(spec, incumbent.x)
    status = "timeout" if timed_out else "optimal"
    if timed_out:
        logging.warning("FTOCP budget exhausted after %d nodes, using incumbent", nodes)
    elif unresolved:
        logging.warning("%d leaves stopped at the iteration cap; incumbent may not be optimal", unresolved)
    return FtocpSolution(
        z=z,
        v=v,
        regions=incumbent.regions,
        cost=trajectory_cost(spec, z, v),
        status=status,
        nodes=nodes,
        solve_time=elapsed,
    )


def shift(prev: FtocpSolution, spec: FtocpSpec) -> FtocpSolution:
    z = np.vstack([prev.z[1:], spec.xi_goal])
    v = np.vstack([prev.v[1:], np.zeros(spec.sys.m)])
    regions = prev.regions[1:] + (prev.regions[-1],)
    return FtocpSolution(
        z=z, v=v, regions=regions, cost=trajectory_cost(spec, z, v), status="shifted"
    )


def reference(sol: FtocpSolution, sys: FlatLTI, t: float, T: float) -> tuple[np.ndarray, np.ndarray]:
    """Continuous reference (xi_ref, v_ref) at t seconds after the plan time."""
    N = len(sol.v)
    if t < 0 or t >= N * T:
        raise ValueError(f"t={t} outside [0, {N * T})")
    i = min(int(math.floor(t / T)), N - 1)
    return rollout_reference(sys, sol.z[i], sol.v[i], t - i * T, T), sol.v[i].copy()


def check_solution(spec: FtocpSpec, sol: FtocpSolution, xi_now: np.ndarray) -> list[str]:
    """Names of the constraint groups the solution violates; empty when feasible."""
    violations: list[str] = []
    tol = tolerances.feasibility
    scale = max(1.0, float(np.max(np.abs(sol.z))))
    defects = [sol.z[i + 1] - spec.sys.step(sol.z[i], sol.v[i]) for i in range(spec.N)]
    if max(float(np.max(np.abs(d))) for d in defects) > tol * scale:
        violations.append("dynamics")
    if np.max(np.abs(sol.z[-1] - spec.xi_goal)) > tol * scale:
        violations.append("terminal")
    e = sol.z[0] - np.asarray(xi_now, dtype=float)
    if 0.5 * e @ spec.D.P @ e > spec.D.level * (1.0 + tolerances.invariance_slack) + tol:
        violations.append("initial_ellipsoid")
    for i, r in enumerate(sol.regions):
        if not _block_satisfied(spec, r, sol.z[i], sol.v[i]):
            violations.append(f"region_{i}")
    if any(not spec.geometry.overlap(a, b) for a, b in zip(sol.regions, sol.regions[1:])):
        violations.append("transition")
    return violations
