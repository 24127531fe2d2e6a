"""Design constants for the planner, tracker, solver and simulator."""

from __future__ import annotations


class tolerances:
    """Fixed numerical tolerances."""

    # Convex subproblem acceptance (primal-dual interior point)
    kkt = 1e-6
    feasibility = 1e-7
    certificate = 1e-6
    max_iterations = 200
    # extra steps taken after acceptance, stopping early at kkt_polish
    kkt_polish = 1e-10
    polish_iterations = 8

    # Modified Riccati equation
    riccati_residual = 1e-8
    imaginary_axis = 1e-9
    symmetry = 1e-12

    # Closed-loop checks
    invariance_slack = 1e-6
    safety = 1e-9
    cost_decrease = 1e-6  # relative to the shifted cost when that exceeds 1
    equilibrium = 1e-9

    # Unicycle inverse map / endogenous feedback speed floor, m/s
    speed_floor = 1e-6


class gamma_grid:
    """Default logarithmic search range for the attenuation level."""

    low = 0.5
    high = 50.0
    points_per_decade = 50


class planner:
    """Default FTOCP settings."""

    # Stage cost weights are multiples of identity
    state_weight = 1.0
    input_weight = 1.0

    # Replan timeout in seconds (0 disables the timeout)
    timeout = 0.2

    # Upper bound on branch-and-bound nodes per replan
    node_limit = 20000


class profiles:
    """Rate and horizon defaults for the two robot profiles."""

    class rover:
        N = 9
        T = 1.0
        f_low = 300.0
        f_int = 3000.0

    class quadruped:
        N = 30
        T = 2.0
        f_low = 20.0
        f_int = 3000.0


def profile_for(name: str) -> type:
    if name == "quadruped":
        return profiles.quadruped
    if name == "rover":
        return profiles.rover
    raise ValueError(f"Unknown profile: {name!r}")
