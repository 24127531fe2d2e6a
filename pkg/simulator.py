"""Closed-loop multirate simulation of the disturbed unicycle.

Replans every T, tracks the plan with the sampled-and-held flat law at f_low and
integrates the plant with fixed-step RK4 at f_int. The run ends when the state
is within the tube of the goal at a replan instant (the robot then rests) or at
t_max.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import pandas as pd

import ftocp
from controller_stack import ControllerStack
from design_constants import tolerances
from disturbance import DisturbanceModel
from flat_core import augmented_exponential
from ftocp import FtocpInfeasible, FtocpNoPlan, FtocpSolution
from safeset import is_safe, safety_margin
from scenario_io import Scenario
from tracker import feedback, lyapunov
from unicycle import (
    UnicycleState,
    disturbance_jacobian,
    endogenous_feedback,
    flat_map,
    plant_derivative,
)

TRAJECTORY_COLUMNS = (
    ["t", "x1", "x2", "x3"]
    + [f"xi{i}" for i in range(1, 5)]
    + [f"ref{i}" for i in range(1, 5)]
    + ["u1", "u2", "v1", "v2"]
    + [f"w{i}" for i in range(1, 5)]
    + ["V", "V_max", "v_goal", "goal_distance", "margin", "rest"]
)


class InitialInfeasible(RuntimeError):
    """The first planning problem has no feasible region assignment."""


class PlanningIncomplete(RuntimeError):
    """The first plan could not be computed, but infeasibility was not proven."""


@dataclass(frozen=True)
class Rates:
    T: float
    f_low: float
    f_int: float
    t_max: float
    heading_gain: float = 0.0

    def __post_init__(self) -> None:
        if not (self.f_int >= 10 * self.f_low and self.f_low * self.T >= 10):
            raise ValueError(f"Rates do not separate time scales: {self}")

    @classmethod
    def from_scenario(cls, scenario: Scenario) -> "Rates":
        return cls(
            T=scenario.T,
            f_low=scenario.f_low,
            f_int=scenario.f_int,
            t_max=scenario.t_max,
            heading_gain=scenario.heading_gain,
        )

    @property
    def ticks_per_sample(self) -> int:
        return int(round(self.f_int / self.f_low))

    @property
    def ticks_per_replan(self) -> int:
        return self.ticks_per_sample * int(round(self.f_low * self.T))

    @property
    def step(self) -> float:
        return 1.0 / self.f_int


@dataclass(frozen=True)
class ReplanRecord:
    k: int
    t: float
    status: str
    cost: float
    regions: tuple[int, ...]
    solve_time: float
    nodes: int
    shift_ok: bool | None
    j_decrease_ok: bool | None

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "t": self.t,
            "status": self.status,
            "cost": self.cost,
            "regions": list(self.regions),
            "solve_time": self.solve_time,
            "nodes": self.nodes,
            "shift_ok": self.shift_ok,
            "j_decrease_ok": self.j_decrease_ok,
        }


@dataclass
class SimLog:
    trajectory: pd.DataFrame
    replans: list[ReplanRecord] = field(default_factory=list)
    converged: bool = False
    seed: int = 0


def rk4_step(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float) -> np.ndarray:
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _closed_loop(
    v: np.ndarray, d: np.ndarray, heading_gain: float
) -> Callable[[np.ndarray], np.ndarray]:
    """Plant vector field with the flat input and disturbance held."""

    def derivative(s: np.ndarray) -> np.ndarray:
        unicycle = UnicycleState.from_array(s)
        u = endogenous_feedback(unicycle, v, heading_gain)
        return plant_derivative(unicycle, u, d, v)

    return derivative


def initial_state(scenario: Scenario) -> np.ndarray:
    xi = scenario.xi_start
    return np.array([xi[0], xi[1], scenario.start_heading, xi[2], xi[3]])


def _reference_tables(stack: ControllerStack, rates: Rates) -> tuple[np.ndarray, np.ndarray]:
    steps = rates.ticks_per_replan
    n, m = stack.flat.n_f, stack.flat.m
    Phi = np.empty((steps + 1, n, n))
    Gamma = np.empty((steps + 1, n, m))
    for j in range(steps + 1):
        Phi[j], Gamma[j] = augmented_exponential(stack.flat, j * rates.step)
    return Phi, Gamma


def _replan(
    stack: ControllerStack,
    xi_now: np.ndarray,
    k: int,
    t: float,
    previous: FtocpSolution | None,
) -> tuple[FtocpSolution, ReplanRecord]:
    spec = stack.spec
    shifted = None if previous is None else ftocp.shift(previous, spec)
    try:
        if shifted is None:
            # no deadline before motion starts
            plan = ftocp.solve(spec, xi_now, timeout=0.0)
        else:
            plan = ftocp.solve(spec, xi_now, hint=list(shifted.regions))
    except FtocpNoPlan as exc:
        if shifted is None:
            if isinstance(exc, FtocpInfeasible):
                raise InitialInfeasible(f"First planning problem failed: {exc}") from exc
            raise PlanningIncomplete(f"First planning problem unresolved: {exc}") from exc
        logging.warning("Replan %d failed (%s), using shifted solution", k, exc)
        plan = shifted

    shift_ok = j_decrease_ok = None
    if shifted is not None:
        violations = ftocp.check_solution(spec, shifted, xi_now)
        shift_ok = not violations
        if violations:
            logging.warning("Replan %d: shifted solution violates %s", k, violations)
        j_decrease_ok = plan.cost <= shifted.cost + tolerances.cost_decrease * max(1.0, shifted.cost)
    record = ReplanRecord(
        k=k,
        t=t,
        status=plan.status,
        cost=plan.cost,
        regions=plan.regions,
        solve_time=plan.solve_time,
        nodes=plan.nodes,
        shift_ok=shift_ok,
        j_decrease_ok=j_decrease_ok,
    )
    logging.info(
        "Replan %d t=%.3f status=%s cost=%.6g nodes=%d time=%.4fs",
        k,
        t,
        plan.status,
        plan.cost,
        plan.nodes,
        plan.solve_time,
    )
    return plan, record


def run(
    scenario: Scenario,
    stack: ControllerStack,
    disturbance: DisturbanceModel,
    rates: Rates,
) -> SimLog:
    law = stack.law
    xi_goal = stack.spec.xi_goal
    goal_level = max(law.V_max * (1.0 + tolerances.invariance_slack), tolerances.equilibrium)
    Phi, Gamma = _reference_tables(stack, rates)
    h = rates.step
    per_sample = rates.ticks_per_sample
    per_replan = rates.ticks_per_replan
    total_replans = int(math.ceil(rates.t_max / rates.T - 1e-9))

    rows = np.zeros((total_replans * per_replan + 1, len(TRAJECTORY_COLUMNS)))
    row_count = 0
    state = initial_state(scenario)
    replans: list[ReplanRecord] = []
    plan: FtocpSolution | None = None
    converged = False

    def log_row(t, s, xi_ref, u, v, d, rest) -> None:
        nonlocal row_count
        unicycle = UnicycleState.from_array(s)
        xi = flat_map(unicycle)
        w = disturbance_jacobian(unicycle) @ d
        rows[row_count] = np.concatenate(
            [
                [t, s[0], s[1], s[2]],
                xi,
                xi_ref,
                u,
                v,
                w,
                [
                    lyapunov(law, xi - xi_ref),
                    law.V_max,
                    lyapunov(law, xi - xi_goal),
                    math.hypot(xi[0] - xi_goal[0], xi[1] - xi_goal[1]),
                    safety_margin(stack.geometry, xi),
                    1.0 if rest else 0.0,
                ],
            ]
        )
        row_count += 1

    for k in range(total_replans):
        t_plan = k * per_replan * h
        xi_now = flat_map(UnicycleState.from_array(state))
        if not is_safe(stack.geometry, xi_now):
            logging.warning("Replan %d at t=%.3f starts outside the safe set", k, t_plan)
        if lyapunov(law, xi_now - xi_goal) <= goal_level:
            logging.info("Rest engaged at t=%.3f (replan %d)", t_plan, k)
            log_row(t_plan, state, xi_goal, np.zeros(2), np.zeros(2), np.zeros(2), True)
            converged = True
            break

        plan, record = _replan(stack, xi_now, k, t_plan, plan)
        replans.append(record)
        z0, v0 = plan.z[0], plan.v[0]
        v = np.zeros(2)
        d = np.zeros(2)

        for j in range(per_replan):
            t = (k * per_replan + j) * h
            xi_ref = Phi[j] @ z0 + Gamma[j] @ v0
            if j % per_sample == 0:
                unicycle = UnicycleState.from_array(state)
                xi_e = flat_map(unicycle) - xi_ref
                v = v0 + feedback(law, xi_e)
                d = disturbance.sample(t, unicycle, xi_e)
            u = endogenous_feedback(UnicycleState.from_array(state), v, rates.heading_gain)
            log_row(t, state, xi_ref, u, v, d, False)
            state = rk4_step(_closed_loop(v, d, rates.heading_gain), state, h)

    if not converged:
        logging.warning("Run ended at t_max=%.3f without reaching the goal tube", rates.t_max)
        t_end = total_replans * per_replan * h
        xi_now = flat_map(UnicycleState.from_array(state))
        ref = xi_now if plan is None else plan.z[1]
        log_row(t_end, state, ref, np.zeros(2), np.zeros(2), np.zeros(2), False)

    trajectory = pd.DataFrame(rows[:row_count], columns=TRAJECTORY_COLUMNS)
    return SimLog(trajectory=trajectory, replans=replans, converged=converged, seed=disturbance.seed)
