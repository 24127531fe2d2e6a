"""Command-line orchestration: synthesize, run and verify verbs."""

from __future__ import annotations

import argparse
import json
import logging
import subprocess
import sys
from pathlib import Path
from typing import Any, Sequence

import config
import log_io
import report
import simulator
from _version import __version__
from controller_stack import ControllerStack, describe, synthesize_controller
from disturbance import make_disturbance
from riccati import AllGammaInfeasible, NoStabilizingSolution
from safeset import EmptyTightenedRegion
from scenario_io import Scenario, ScenarioError, load_scenario
from simulator import InitialInfeasible, PlanningIncomplete, Rates
from unicycle import SingularState

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_SCENARIO = 2
EXIT_INFEASIBLE = 3

_INFEASIBLE_ERRORS = (InitialInfeasible, EmptyTightenedRegion, AllGammaInfeasible, NoStabilizingSolution)


class Orchestrator:
    def run(self, argv: Sequence[str] | None = None) -> int:
        logging.info("Orchestrator run")
        args = list(sys.argv[1:] if argv is None else argv)
        options, parser = parse_args(args)
        if options.version:
            print(_get_version())
            return EXIT_OK
        if options.verb is None:
            parser.print_help(sys.stderr)
            return EXIT_SCENARIO
        try:
            if options.verb == "synthesize":
                return self._synthesize(options)
            if options.verb == "run":
                return self._run(options)
            return self._verify(options)
        except ScenarioError as exc:
            logging.error("Scenario error: %s", exc)
            print(f"Scenario error: {exc}", file=sys.stderr)
            return EXIT_SCENARIO
        except _INFEASIBLE_ERRORS as exc:
            logging.error("%s: %s", type(exc).__name__, exc)
            print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
            return EXIT_INFEASIBLE
        except SingularState as exc:
            logging.error("Singular state during run: %s", exc)
            print(f"SingularState: {exc}", file=sys.stderr)
            return EXIT_VIOLATION
        except PlanningIncomplete as exc:
            logging.error("Planning incomplete: %s", exc)
            print(f"PlanningIncomplete: {exc}", file=sys.stderr)
            return EXIT_VIOLATION

    def _load(self, options: argparse.Namespace) -> Scenario:
        if not options.scenario:
            raise ScenarioError("--scenario is required")
        return load_scenario(Path(options.scenario).expanduser(), options.override, options.profile)

    def _synthesize(self, options: argparse.Namespace) -> int:
        scenario = self._load(options)
        summary = describe(synthesize_controller(scenario))
        text = json.dumps(summary, indent=2, sort_keys=True)
        if options.out:
            out = Path(options.out).expanduser()
            log_io.write_json(summary, out)
            print(f"Wrote controller summary: {out}")
        else:
            print(text)
        return EXIT_OK

    def _run(self, options: argparse.Namespace) -> int:
        scenario = self._load(options)
        out_dir = _output_dir(options, scenario)
        seeds = options.seeds or config.get_seed_count() or 1
        stack = synthesize_controller(scenario)
        if seeds == 1:
            result = simulate_to_dir(scenario, stack, out_dir)
            _print_summary(out_dir, result)
            return report.exit_code(result)

        reports: dict[int, dict[str, Any]] = {}
        for offset in range(seeds):
            seed = scenario.seed + offset
            try:
                reports[seed] = simulate_to_dir(scenario.with_seed(seed), stack, out_dir / f"seed_{seed}")
            except SingularState as exc:
                logging.error("Seed %d hit a singular state: %s", seed, exc)
                print(f"Seed {seed}: SingularState: {exc}", file=sys.stderr)
                return EXIT_VIOLATION
        aggregate = report.aggregate_reports(reports)
        log_io.write_json(aggregate, out_dir / log_io.REPORT_FILE)
        _print_summary(out_dir, aggregate)
        return report.exit_code(aggregate)

    def _verify(self, options: argparse.Namespace) -> int:
        if not options.out:
            raise ScenarioError("verify needs --out pointing at a run directory")
        out_dir = Path(options.out).expanduser()
        seed_dirs = sorted(p for p in out_dir.glob("seed_*") if p.is_dir())
        if not seed_dirs:
            matches, result = report.verify_dir(out_dir)
        else:
            reports: dict[int, dict[str, Any]] = {}
            matches = True
            for seed_dir in seed_dirs:
                seed_matches, reports[int(seed_dir.name.split("_", 1)[1])] = report.verify_dir(seed_dir)
                matches = matches and seed_matches
            result = report.aggregate_reports(reports)
            stored = log_io.read_json(out_dir / log_io.REPORT_FILE)
            matches = matches and report.normalized(result) == report.normalized(stored)
        _print_summary(out_dir, result)
        if not matches:
            print("Stored report does not match the recomputed report", file=sys.stderr)
            return EXIT_VIOLATION
        return report.exit_code(result)


def simulate_to_dir(scenario: Scenario, stack: ControllerStack, out_dir: Path) -> dict[str, Any]:
    """Run one closed-loop simulation and write trajectory, replans and report."""
    disturbance = make_disturbance(
        scenario.disturbance_kind,
        scenario.d_bar,
        seed=scenario.seed,
        frequency=scenario.frequency,
        P=stack.law.P,
    )
    log = simulator.run(scenario, stack, disturbance, Rates.from_scenario(scenario))
    log_io.write_trajectory(log.trajectory, out_dir / log_io.TRAJECTORY_FILE)
    log_io.write_replans((r.to_dict() for r in log.replans), out_dir / log_io.REPLANS_FILE)
    # computed from the files so that verify reproduces it exactly
    result = report.report_for_dir(out_dir)
    log_io.write_json(result, out_dir / log_io.REPORT_FILE)
    logging.info("Run %s seed=%d passed=%s", scenario.name, scenario.seed, result["passed"])
    return result


def _output_dir(options: argparse.Namespace, scenario: Scenario) -> Path:
    if options.out:
        return Path(options.out).expanduser()
    base = config.get_output_dir() or Path("out")
    return base / scenario.name


def _print_summary(out_dir: Path, result: dict[str, Any]) -> None:
    status = "PASS" if result.get("passed") else "FAIL"
    print(
        f"{status} {out_dir}: violations={result['safety_violations']} "
        f"min_margin={result['min_safety_margin']:.4g} max_V_ratio={result['max_v_ratio']:.6g}"
    )


def parse_args(argv: Sequence[str]) -> tuple[argparse.Namespace, argparse.ArgumentParser]:
    parser = argparse.ArgumentParser(
        description="Safe planning and ISS tracking for a flat unicycle in a region-partitioned workspace"
    )
    parser.add_argument("-v", "--version", action="store_true", help="Show version")
    parser.add_argument("verb", nargs="?", choices=["synthesize", "run", "verify"])
    parser.add_argument("--scenario", help="Scenario file (.toml or .json)")
    parser.add_argument("--out", help="Output directory (run/verify) or summary file (synthesize)")
    parser.add_argument("--seeds", type=int, help="Number of Monte Carlo seeds")
    parser.add_argument("--profile", choices=["rover", "quadruped"], help="Rate and horizon profile")
    parser.add_argument(
        "--override",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="Override a scenario value (repeatable)",
    )
    options = parser.parse_args(argv)
    if options.seeds is not None and options.seeds < 1:
        parser.error("--seeds must be at least 1")
    return options, parser


def _get_version() -> str:
    if __version__ and __version__ != "0.0.0":
        return __version__
    try:
        result = subprocess.run(
            ["git", "describe", "--tags", "--always"],
            check=False,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
        )
    except FileNotFoundError:
        return __version__
    if result.returncode == 0:
        return result.stdout.strip() or __version__
    return __version__
