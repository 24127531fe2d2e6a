"""Matched disturbance models and their registry."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from unicycle import UnicycleState, disturbance_jacobian


@dataclass
class DisturbanceModel:
    """Base model: every sample satisfies |d| <= d_bar."""

    d_bar: float
    seed: int = 0
    kind: str = field(init=False, default="none")

    def __post_init__(self) -> None:
        if self.d_bar < 0:
            raise ValueError(f"Disturbance bound must be non-negative, got {self.d_bar}")

    def sample(self, t: float, state: UnicycleState, xi_e: np.ndarray) -> np.ndarray:
        return np.zeros(2)


@dataclass
class SinusoidDisturbance(DisturbanceModel):
    frequency: float = 0.2
    kind: str = field(init=False, default="sinusoid")

    def sample(self, t: float, state: UnicycleState, xi_e: np.ndarray) -> np.ndarray:
        phase = 2.0 * math.pi * self.frequency * t
        return self.d_bar * np.array([math.cos(phase), math.sin(phase)])


@dataclass
class UniformDisturbance(DisturbanceModel):
    """Uniform in the disk of radius d_bar, drawn fresh on every call."""

    kind: str = field(init=False, default="uniform")
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self) -> None:
        super().__post_init__()
        self._rng = np.random.default_rng(self.seed)

    def sample(self, t: float, state: UnicycleState, xi_e: np.ndarray) -> np.ndarray:
        radius, turn = self._rng.random(2)
        angle = 2.0 * math.pi * turn
        return self.d_bar * math.sqrt(radius) * np.array([math.cos(angle), math.sin(angle)])


@dataclass
class WorstCaseDisturbance(DisturbanceModel):
    """Pushes the flat error along P xi_e, the direction that grows V fastest."""

    P: np.ndarray | None = None
    kind: str = field(init=False, default="worst_case")

    def sample(self, t: float, state: UnicycleState, xi_e: np.ndarray) -> np.ndarray:
        if self.P is None:
            raise ValueError("Worst-case disturbance needs the tracking P")
        direction = disturbance_jacobian(state).T @ self.P @ np.asarray(xi_e, dtype=float)
        norm = float(np.linalg.norm(direction))
        if norm == 0.0:
            return np.zeros(2)
        return self.d_bar * direction / norm


_DISTURBANCE_KINDS: dict[str, type[DisturbanceModel]] = {
    "sinusoid": SinusoidDisturbance,
    "uniform": UniformDisturbance,
    "worst_case": WorstCaseDisturbance,
}


def disturbance_kinds() -> list[str]:
    return sorted(_DISTURBANCE_KINDS)


def make_disturbance(
    kind: str,
    d_bar: float,
    seed: int = 0,
    frequency: float = 0.2,
    P: np.ndarray | None = None,
) -> DisturbanceModel:
    model_type = _DISTURBANCE_KINDS.get(kind)
    if model_type is None:
        raise ValueError(f"Unknown disturbance kind {kind!r}; expected one of {disturbance_kinds()}")
    if model_type is SinusoidDisturbance:
        return SinusoidDisturbance(d_bar=d_bar, seed=seed, frequency=frequency)
    if model_type is WorstCaseDisturbance:
        return WorstCaseDisturbance(d_bar=d_bar, seed=seed, P=P)
    return model_type(d_bar=d_bar, seed=seed)
