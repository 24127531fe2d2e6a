"""Flat linear system, exact zero-order-hold discretization and reference rollout."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg


@dataclass(frozen=True, eq=False)
class FlatLTI:
    """Continuous-time flat system  xi_dot = A xi + B v."""

    A: np.ndarray
    B: np.ndarray
    position_index: tuple[int, ...] = (0,)

    def __post_init__(self) -> None:
        A = np.array(self.A, dtype=float, ndmin=2)
        B = np.array(self.B, dtype=float, ndmin=2)
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise ValueError(f"B must have {A.shape[0]} rows, got {B.shape}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise ValueError("A and B must be finite")
        if any(i < 0 or i >= A.shape[0] for i in self.position_index):
            raise ValueError(f"position_index out of range: {self.position_index}")
        rank = np.linalg.matrix_rank(controllability_matrix(A, B))
        if rank != A.shape[0]:
            raise ValueError(f"(A, B) is not controllable: rank {rank} < {A.shape[0]}")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n_f(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True, eq=False)
class DiscreteLTI:
    """Exact ZOH discretization  z+ = A_d z + B_d v  with period T."""

    A_d: np.ndarray
    B_d: np.ndarray
    T: float

    @property
    def n_f(self) -> int:
        return self.A_d.shape[0]

    @property
    def m(self) -> int:
        return self.B_d.shape[1]

    def step(self, z: np.ndarray, v: np.ndarray) -> np.ndarray:
        return self.A_d @ z + self.B_d @ v


def controllability_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    blocks = [B]
    for _ in range(A.shape[0] - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def double_integrator(dim: int = 2) -> FlatLTI:
    """Flat system of `dim` decoupled double integrators, positions first."""
    zeros = np.zeros((dim, dim))
    eye = np.eye(dim)
    A = np.block([[zeros, eye], [zeros, zeros]])
    B = np.vstack([zeros, eye])
    return FlatLTI(A, B, position_index=tuple(range(dim)))


def matrix_exponential(M: np.ndarray) -> np.ndarray:
    # scipy's expm: Pade scaling-and-squaring
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"matrix_exponential needs a square matrix, got {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix_exponential needs a finite matrix")
    return scipy.linalg.expm(M)


def augmented_exponential(sys: FlatLTI, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Return (exp(A t), (int_0^t exp(A s) ds) B) from one augmented exponential."""
    n, m = sys.n_f, sys.m
    augmented = np.zeros((n + m, n + m))
    augmented[:n, :n] = sys.A
    augmented[:n, n:] = sys.B
    E = matrix_exponential(augmented * t)
    return E[:n, :n], E[:n, n:]


def discretize(sys: FlatLTI, T: float) -> DiscreteLTI:
    if not T > 0:
        raise ValueError(f"Sampling period must be positive, got {T}")
    A_d, B_d = augmented_exponential(sys, T)
    A_d.setflags(write=False)
    B_d.setflags(write=False)
    return DiscreteLTI(A_d=A_d, B_d=B_d, T=float(T))


def rollout_reference(
    sys: FlatLTI, z: np.ndarray, v: np.ndarray, t: float, T: float
) -> np.ndarray:
    """Flat state reached from z after t seconds of constant input v, 0 <= t <= T."""
    slack = 1e-12 * max(1.0, T)
    if t < -slack or t > T + slack:
        raise ValueError(f"t={t} outside [0, {T}]")
    t = min(max(t, 0.0), T)
    Phi, Gamma = augmented_exponential(sys, t)
    return Phi @ np.asarray(z, dtype=float) + Gamma @ np.asarray(v, dtype=float)
