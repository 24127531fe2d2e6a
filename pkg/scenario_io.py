"""Scenario files: TOML or JSON, merged over profile defaults, with key=value overrides."""

from __future__ import annotations

import copy
import json
import logging
import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from design_constants import planner, profile_for, tolerances


class ScenarioError(ValueError):
    """Scenario file is unreadable or fails validation."""


DEFAULT_SCENARIO: dict[str, dict[str, Any]] = {
    "scenario": {"name": "unnamed", "profile": "rover", "seed": 0},
    "geometry": {"regions": []},
    "start": {"position": None, "heading": 0.0, "speed": 0.1},
    "goal": {"position": None},
    "disturbance": {"kind": "uniform", "d_bar": 0.0, "frequency": 0.2, "sampling_margin": 0.0},
    "tracking": {"Q": 1.0, "R": 1.0, "gamma": None, "gamma_grid": None},
    "planner": {
        "N": None,
        "T": None,
        "Qc": planner.state_weight,
        "Rc": planner.input_weight,
        "timeout": planner.timeout,
        "node_limit": planner.node_limit,
    },
    "rates": {"f_low": None, "f_int": None, "t_max": None, "heading_gain": None},
}


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    profile: str
    seed: int
    regions: tuple[tuple[float, float, float, float], ...]
    start_position: tuple[float, float]
    start_heading: float
    start_speed: float
    goal_position: tuple[float, float]
    disturbance_kind: str
    d_bar: float
    frequency: float
    sampling_margin: float
    Q: np.ndarray
    R: np.ndarray
    gamma: float | None
    gamma_grid: tuple[float, float, int] | None
    N: int
    T: float
    Qc: np.ndarray
    Rc: np.ndarray
    timeout: float
    node_limit: int
    f_low: float
    f_int: float
    t_max: float
    heading_gain: float
    source: Path | None = None

    @property
    def w_bar(self) -> float:
        """Flat disturbance bound used for synthesis, including the sampling allowance."""
        return self.d_bar * (1.0 + self.sampling_margin)

    @property
    def xi_start(self) -> np.ndarray:
        return np.array(
            [
                self.start_position[0],
                self.start_position[1],
                self.start_speed * math.cos(self.start_heading),
                self.start_speed * math.sin(self.start_heading),
            ]
        )

    @property
    def xi_goal(self) -> np.ndarray:
        return np.array([self.goal_position[0], self.goal_position[1], 0.0, 0.0])

    def with_seed(self, seed: int) -> "Scenario":
        values = {name: getattr(self, name) for name in self.__dataclass_fields__}
        values["seed"] = seed
        return Scenario(**values)


def read_raw(path: Path) -> dict[str, Any]:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"Cannot read scenario {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(text)
        else:
            data = tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ScenarioError(f"Cannot parse scenario {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ScenarioError(f"Scenario {path} must be a table of sections")
    return data


def _merge_scenario_defaults(data: dict[str, Any]) -> dict[str, Any]:
    merged = copy.deepcopy(DEFAULT_SCENARIO)
    for section, values in data.items():
        if section not in merged:
            raise ScenarioError(f"Unknown section [{section}]")
        if not isinstance(values, dict):
            raise ScenarioError(f"Section [{section}] must be a table")
        for key, value in values.items():
            if key not in merged[section]:
                raise ScenarioError(f"Unknown key {section}.{key}")
            merged[section][key] = value
    return merged


def parse_override(text: str) -> tuple[str, str, Any]:
    key, sep, raw = text.partition("=")
    section, dot, name = key.strip().partition(".")
    if not sep or not dot or not name:
        raise ScenarioError(f"Override must look like section.key=value, got {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return section, name, value


def apply_overrides(merged: dict[str, Any], overrides: list[str]) -> dict[str, Any]:
    for text in overrides:
        section, name, value = parse_override(text)
        if section not in merged or name not in merged[section]:
            raise ScenarioError(f"Unknown key {section}.{name} in override")
        logging.info("Scenario override: %s.%s = %r", section, name, value)
        merged[section][name] = value
    return merged


def _apply_profile(merged: dict[str, Any], profile_override: str | None) -> None:
    if profile_override is not None:
        merged["scenario"]["profile"] = profile_override
    name = merged["scenario"]["profile"]
    try:
        profile = profile_for(name)
    except ValueError as exc:
        raise ScenarioError(f"scenario.profile: {exc}") from exc
    for section, key in (("planner", "N"), ("planner", "T"), ("rates", "f_low"), ("rates", "f_int")):
        if merged[section][key] is None:
            merged[section][key] = getattr(profile, key)


def _number(merged: dict[str, Any], section: str, key: str, positive: bool = False) -> float:
    value = merged[section][key]
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ScenarioError(f"{section}.{key} must be a finite number, got {value!r}")
    if positive and value <= 0:
        raise ScenarioError(f"{section}.{key} must be positive, got {value!r}")
    return float(value)


def _integer(merged: dict[str, Any], section: str, key: str, minimum: int) -> int:
    value = merged[section][key]
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ScenarioError(f"{section}.{key} must be an integer >= {minimum}, got {value!r}")
    return value


def _pair(merged: dict[str, Any], section: str, key: str) -> tuple[float, float]:
    value = merged[section][key]
    if (
        not isinstance(value, list)
        or len(value) != 2
        or not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in value)
    ):
        raise ScenarioError(f"{section}.{key} must be a pair of numbers, got {value!r}")
    return float(value[0]), float(value[1])


def _weight(merged: dict[str, Any], section: str, key: str, size: int, definite: bool) -> np.ndarray:
    value = merged[section][key]
    try:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            matrix = float(value) * np.eye(size)
        else:
            matrix = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{section}.{key} must be a number or a matrix") from exc
    if matrix.shape != (size, size):
        raise ScenarioError(f"{section}.{key} must be {size}x{size}, got shape {matrix.shape}")
    if not np.allclose(matrix, matrix.T):
        raise ScenarioError(f"{section}.{key} must be symmetric")
    smallest = float(np.linalg.eigvalsh(matrix)[0])
    if smallest < 0 or (definite and smallest == 0):
        raise ScenarioError(f"{section}.{key} must be positive {'definite' if definite else 'semidefinite'}")
    return matrix


def _regions(merged: dict[str, Any]) -> tuple[tuple[float, float, float, float], ...]:
    raw = merged["geometry"]["regions"]
    if not isinstance(raw, list) or not raw:
        raise ScenarioError("geometry.regions must be a non-empty list of [xmin, ymin, xmax, ymax]")
    regions = []
    for index, entry in enumerate(raw):
        if not isinstance(entry, list) or len(entry) != 4:
            raise ScenarioError(f"geometry.regions[{index}] must be [xmin, ymin, xmax, ymax]")
        xmin, ymin, xmax, ymax = (float(c) for c in entry)
        if not (xmax > xmin and ymax > ymin):
            raise ScenarioError(f"geometry.regions[{index}] is degenerate: {entry}")
        regions.append((xmin, ymin, xmax, ymax))
    return tuple(regions)


def _whole_ratio(numerator: float, denominator: float) -> bool:
    ratio = numerator / denominator
    return abs(ratio - round(ratio)) <= 1e-9 * max(1.0, ratio)


def validate(merged: dict[str, Any], source: Path | None = None) -> Scenario:
    gamma = merged["tracking"]["gamma"]
    if gamma is not None:
        gamma = _number(merged, "tracking", "gamma", positive=True)
    grid = merged["tracking"]["gamma_grid"]
    if grid is not None:
        if (
            not isinstance(grid, list)
            or len(grid) != 3
            or not (0 < float(grid[0]) < float(grid[1]))
            or not isinstance(grid[2], int)
            or grid[2] < 1
        ):
            raise ScenarioError("tracking.gamma_grid must be [low, high, points] with 0 < low < high")
        grid = (float(grid[0]), float(grid[1]), int(grid[2]))

    kind = merged["disturbance"]["kind"]
    if kind not in ("sinusoid", "uniform", "worst_case"):
        raise ScenarioError(f"disturbance.kind must be sinusoid, uniform or worst_case, got {kind!r}")
    d_bar = _number(merged, "disturbance", "d_bar")
    if d_bar < 0:
        raise ScenarioError("disturbance.d_bar must be non-negative")
    margin = _number(merged, "disturbance", "sampling_margin")
    if margin < 0:
        raise ScenarioError("disturbance.sampling_margin must be non-negative")

    N = _integer(merged, "planner", "N", 1)
    T = _number(merged, "planner", "T", positive=True)
    f_low = _number(merged, "rates", "f_low", positive=True)
    f_int = _number(merged, "rates", "f_int", positive=True)
    if not (f_int >= 10 * f_low and f_low * T >= 10):
        raise ScenarioError(
            f"rates must separate time scales: f_int >= 10 f_low >= 10/T (f_int={f_int}, f_low={f_low}, T={T})"
        )
    if not (_whole_ratio(f_int, f_low) and _whole_ratio(f_low * T, 1.0)):
        raise ScenarioError("rates.f_int / rates.f_low and rates.f_low * planner.T must be whole numbers")
    t_max = merged["rates"]["t_max"]
    t_max = 4.0 * N * T if t_max is None else _number(merged, "rates", "t_max", positive=True)
    heading_gain = merged["rates"]["heading_gain"]
    heading_gain = 0.5 * f_low if heading_gain is None else _number(merged, "rates", "heading_gain")

    timeout = _number(merged, "planner", "timeout")
    if timeout < 0:
        raise ScenarioError("planner.timeout must be non-negative")
    speed = _number(merged, "start", "speed", positive=True)
    if speed <= tolerances.speed_floor:
        raise ScenarioError(f"start.speed must exceed the speed floor {tolerances.speed_floor}")
    if merged["start"]["position"] is None or merged["goal"]["position"] is None:
        raise ScenarioError("start.position and goal.position are required")
    seed = merged["scenario"]["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ScenarioError(f"scenario.seed must be a non-negative integer, got {seed!r}")

    return Scenario(
        name=str(merged["scenario"]["name"]),
        profile=str(merged["scenario"]["profile"]),
        seed=seed,
        regions=_regions(merged),
        start_position=_pair(merged, "start", "position"),
        start_heading=_number(merged, "start", "heading"),
        start_speed=speed,
        goal_position=_pair(merged, "goal", "position"),
        disturbance_kind=kind,
        d_bar=d_bar,
        frequency=_number(merged, "disturbance", "frequency"),
        sampling_margin=margin,
        Q=_weight(merged, "tracking", "Q", 4, definite=True),
        R=_weight(merged, "tracking", "R", 2, definite=True),
        gamma=gamma,
        gamma_grid=grid,
        N=N,
        T=T,
        Qc=_weight(merged, "planner", "Qc", 4, definite=False),
        Rc=_weight(merged, "planner", "Rc", 2, definite=True),
        timeout=timeout,
        node_limit=_integer(merged, "planner", "node_limit", 1),
        f_low=f_low,
        f_int=f_int,
        t_max=t_max,
        heading_gain=heading_gain,
        source=source,
    )


def load_scenario(
    path: Path, overrides: list[str] | None = None, profile: str | None = None
) -> Scenario:
    path = Path(path)
    logging.info("Scenario load: %s", path)
    merged = _merge_scenario_defaults(read_raw(path))
    apply_overrides(merged, overrides or [])
    _apply_profile(merged, profile)
    scenario = validate(merged, source=path)
    logging.info(
        "Scenario %s: profile=%s regions=%d N=%d T=%.3g d_bar=%.3g",
        scenario.name,
        scenario.profile,
        len(scenario.regions),
        scenario.N,
        scenario.T,
        scenario.d_bar,
    )
    return scenario
