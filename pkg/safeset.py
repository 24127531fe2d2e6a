"""Safe set as overlapping polytopic regions, tube tightening and sampled CBF constraints.

A region is an intersection of half-spaces a^T xi <= b in flat coordinates. The
tightened region is the Pontryagin difference with the tracking ellipsoid, and
the sampled barrier conditions keep the whole constant-input interval inside it.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from design_constants import tolerances
from flat_core import FlatLTI
from tracker import ErrorEllipsoid

# A region block is G @ [z; v] <= h
LinearBlock = tuple[np.ndarray, np.ndarray]


class EmptyTightenedRegion(ValueError):
    """The tracking tube does not fit inside a region."""


@dataclass(frozen=True, eq=False)
class HalfSpace:
    """Safe side {xi : a^T xi <= b}; barrier h(xi) = a^T xi - b."""

    a: np.ndarray
    b: float

    def __post_init__(self) -> None:
        a = np.array(self.a, dtype=float).ravel()
        if not np.any(a):
            raise ValueError("Half-space normal must be nonzero")
        a.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", float(self.b))

    def barrier(self, xi: np.ndarray) -> float:
        return float(self.a @ np.asarray(xi, dtype=float) - self.b)


@dataclass(frozen=True, eq=False)
class Region:
    halfspaces: tuple[HalfSpace, ...]
    id: int

    def contains(self, xi: np.ndarray) -> bool:
        return all(hs.barrier(xi) <= 0 for hs in self.halfspaces)

    def as_inequalities(self) -> LinearBlock:
        G = np.vstack([hs.a for hs in self.halfspaces])
        h = np.array([hs.b for hs in self.halfspaces])
        return G, h


@dataclass(frozen=True, eq=False)
class SafeGeometry:
    regions: tuple[Region, ...]
    overlaps: frozenset[tuple[int, int]] = field(default_factory=frozenset)

    @classmethod
    def from_regions(cls, regions: list[Region] | tuple[Region, ...]) -> "SafeGeometry":
        regions = tuple(regions)
        if not regions:
            raise ValueError("Safe geometry needs at least one region")
        ids = [r.id for r in regions]
        if ids != list(range(len(regions))):
            raise ValueError(f"Region ids must be 0..{len(regions) - 1}, got {ids}")
        for region in regions:
            if _chebyshev_radius(*region.as_inequalities()) <= 1e-9:
                raise ValueError(f"Region {region.id} has an empty interior")
        pairs: set[tuple[int, int]] = set()
        for r1, r2 in itertools.combinations(regions, 2):
            G1, h1 = r1.as_inequalities()
            G2, h2 = r2.as_inequalities()
            if _chebyshev_radius(np.vstack([G1, G2]), np.concatenate([h1, h2])) > 1e-9:
                pairs.add((r1.id, r2.id))
                pairs.add((r2.id, r1.id))
        logging.info("Safe geometry: %d regions, %d overlaps", len(regions), len(pairs) // 2)
        return cls(regions=regions, overlaps=frozenset(pairs))

    def __len__(self) -> int:
        return len(self.regions)

    def overlap(self, i: int, j: int) -> bool:
        return i == j or (i, j) in self.overlaps

    def neighbors(self, i: int) -> list[int]:
        return [j for j in range(len(self.regions)) if self.overlap(i, j)]


def _chebyshev_radius(G: np.ndarray, h: np.ndarray) -> float:
    """Radius of the largest ball inside {x : G x <= h}, capped at 1; -inf if infeasible."""
    norms = np.linalg.norm(G, axis=1)
    n = G.shape[1]
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A_ub = np.hstack([G, norms[:, None]])
    bounds = [(None, None)] * n + [(None, 1.0)]
    result = linprog(c, A_ub=A_ub, b_ub=h, bounds=bounds, method="highs")
    if result.status != 0:
        return -np.inf
    return float(-result.fun)


def rectangle_region(
    region_id: int,
    lower: tuple[float, float],
    upper: tuple[float, float],
    n_f: int = 4,
    position_index: tuple[int, int] = (0, 1),
) -> Region:
    """Axis-aligned rectangle lower <= position <= upper."""
    if not (upper[0] > lower[0] and upper[1] > lower[1]):
        raise ValueError(f"Degenerate rectangle {lower} .. {upper}")
    halfspaces = []
    for axis, idx in enumerate(position_index):
        normal = np.zeros(n_f)
        normal[idx] = 1.0
        halfspaces.append(HalfSpace(normal, upper[axis]))
        halfspaces.append(HalfSpace(-normal, -lower[axis]))
    return Region(halfspaces=tuple(halfspaces), id=region_id)


def tighten(hs: HalfSpace, D: ErrorEllipsoid) -> HalfSpace:
    if D.level < 0:
        raise ValueError(f"Ellipsoid level must be non-negative, got {D.level}")
    return HalfSpace(hs.a, hs.b - D.support(hs.a))


def tighten_region(region: Region, D: ErrorEllipsoid) -> Region:
    return Region(tuple(tighten(hs, D) for hs in region.halfspaces), region.id)


def cbf_interval_constraints(hs: HalfSpace, sys: FlatLTI, T: float) -> LinearBlock:
    """Rows over [z; v] for h0 <= 0, h0 + h0' T <= 0, h0 + h0' T + h0'' T^2 / 2 <= 0."""
    a = hs.a
    aA = a @ sys.A
    aAA = aA @ sys.A
    aB = a @ sys.B
    aAB = aA @ sys.B
    zeros = np.zeros(sys.m)
    G = np.vstack(
        [
            np.concatenate([a, zeros]),
            np.concatenate([a + T * aA, T * aB]),
            np.concatenate([a + T * aA + 0.5 * T**2 * aAA, T * aB + 0.5 * T**2 * aAB]),
        ]
    )
    h = np.full(3, hs.b)
    return G, h


def region_constraints(region: Region, D: ErrorEllipsoid, sys: FlatLTI, T: float) -> LinearBlock:
    tightened = tighten_region(region, D)
    if _chebyshev_radius(*tightened.as_inequalities()) <= 0:
        raise EmptyTightenedRegion(
            f"Region {region.id} is empty after tightening by the tracking tube"
        )
    blocks = [cbf_interval_constraints(hs, sys, T) for hs in tightened.halfspaces]
    G = np.vstack([g for g, _ in blocks])
    h = np.concatenate([h for _, h in blocks])
    return G, h


def locate(geometry: SafeGeometry, xi: np.ndarray, D: ErrorEllipsoid | None = None) -> list[int]:
    """Ids of the (tightened) regions containing xi, boundary included."""
    found = []
    for region in geometry.regions:
        candidate = region if D is None else tighten_region(region, D)
        if candidate.contains(xi):
            found.append(region.id)
    return found


def safety_margin(geometry: SafeGeometry, xi: np.ndarray) -> float:
    """max over regions of min over edges of (b - a^T xi)/|a|; non-negative means safe."""
    xi = np.asarray(xi, dtype=float)
    best = -np.inf
    for region in geometry.regions:
        worst = min(-hs.barrier(xi) / float(np.linalg.norm(hs.a)) for hs in region.halfspaces)
        best = max(best, worst)
    return float(best)


def is_safe(geometry: SafeGeometry, xi: np.ndarray) -> bool:
    return safety_margin(geometry, xi) >= -tolerances.safety
