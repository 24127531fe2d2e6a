"""Synthesized controller container: tracking law, tube, geometry and planner problem."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any

import numpy as np

from flat_core import FlatLTI, discretize
from ftocp import FtocpSpec
from riccati import GammaCandidate, RiccatiParams, choose_gamma, scan_gamma, solve_modified_are
from scenario_io import Scenario, ScenarioError
from safeset import SafeGeometry, locate, rectangle_region, tighten
from tracker import TrackingLaw, build_tracking_law
from unicycle import unicycle_flat_system


@dataclass(frozen=True, eq=False)
class ControllerStack:
    flat: FlatLTI
    law: TrackingLaw
    Q: np.ndarray
    R: np.ndarray
    geometry: SafeGeometry
    spec: FtocpSpec
    gamma_scan: tuple[GammaCandidate, ...] = ()


def synthesize_controller(scenario: Scenario) -> ControllerStack:
    flat = unicycle_flat_system()
    scan: tuple[GammaCandidate, ...] = ()
    if scenario.gamma is not None:
        solution = solve_modified_are(flat, RiccatiParams(scenario.Q, scenario.R, scenario.gamma))
    else:
        grid = None
        if scenario.gamma_grid is not None:
            low, high, points = scenario.gamma_grid
            grid = np.logspace(np.log10(low), np.log10(high), points)
        scan = tuple(scan_gamma(flat, scenario.Q, scenario.R, scenario.w_bar, grid))
        _, solution = choose_gamma(scan)
    law = build_tracking_law(flat, scenario.Q, scenario.R, solution, scenario.w_bar)
    logging.info(
        "Tracking law: gamma=%.4g lambda_max(P)=%.4g V_max=%.4g w_bar=%.4g",
        law.gamma,
        solution.lambda_max,
        law.V_max,
        law.w_bar,
    )

    geometry = SafeGeometry.from_regions(
        [
            rectangle_region(i, (xmin, ymin), (xmax, ymax))
            for i, (xmin, ymin, xmax, ymax) in enumerate(scenario.regions)
        ]
    )
    spec = FtocpSpec(
        flat=flat,
        sys=discretize(flat, scenario.T),
        N=scenario.N,
        xi_goal=scenario.xi_goal,
        D=law.ellipsoid,
        geometry=geometry,
        Qc=scenario.Qc,
        Rc=scenario.Rc,
        timeout=scenario.timeout,
        node_limit=scenario.node_limit,
    )
    if not locate(geometry, scenario.xi_goal, law.ellipsoid):
        raise ScenarioError("goal.position is not inside any tightened region")
    return ControllerStack(
        flat=flat,
        law=law,
        Q=scenario.Q,
        R=scenario.R,
        geometry=geometry,
        spec=spec,
        gamma_scan=scan,
    )


def describe(stack: ControllerStack) -> dict[str, Any]:
    """JSON-ready summary of the synthesized controller."""
    D = stack.law.ellipsoid
    offsets = []
    for region in stack.geometry.regions:
        for hs in region.halfspaces:
            offsets.append(
                {
                    "region": region.id,
                    "normal": hs.a.tolist(),
                    "b": hs.b,
                    "tightened_b": tighten(hs, D).b,
                    "offset": D.support(hs.a),
                }
            )
    eigenvalues = np.linalg.eigvalsh(stack.law.P)
    return {
        "gamma": stack.law.gamma,
        "P": stack.law.P.tolist(),
        "K": stack.law.K.tolist(),
        "lambda_max_P": float(eigenvalues[-1]),
        "lambda_min_P": float(eigenvalues[0]),
        "V_max": stack.law.V_max,
        "w_bar": stack.law.w_bar,
        "semi_axes": D.semi_axes().tolist(),
        "position_offsets": D.offsets(stack.flat.position_index).tolist(),
        "tightening": offsets,
        "gamma_scan": [
            {"gamma": c.gamma, "feasible": c.solution is not None, "size": c.metric}
            for c in stack.gamma_scan
        ],
    }
