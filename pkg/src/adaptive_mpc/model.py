"""Regressor dynamics ``phi(t+1) = F phi(t) + G u(t)`` and linear output maps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, SingularStructureError


@dataclass(frozen=True)
class ModelStructure:
    """Regressor evolution matrices shared by every output.

    Only the spectral radius of ``F`` is validated; any stable (F, G) pair
    works, so alternative orthonormal bases can be plugged in directly.
    """

    f_matrix: np.ndarray
    g_matrix: np.ndarray
    n_y: int
    n_taps: int | None = field(default=None, compare=False)

    def __post_init__(self):
        f = np.atleast_2d(np.asarray(self.f_matrix, dtype=float))
        g = np.asarray(self.g_matrix, dtype=float)
        if g.ndim == 1:
            g = g[:, None]
        if f.shape[0] != f.shape[1]:
            raise DimensionError(f"F must be square, got {f.shape}")
        if g.shape[0] != f.shape[0]:
            raise DimensionError(f"G has {g.shape[0]} rows, F has {f.shape[0]}")
        if self.n_y < 1 or g.shape[1] < 1:
            raise DimensionError("need at least one input and one output")
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g))):
            raise ValueError("F and G must be finite")
        if np.max(np.abs(np.linalg.eigvals(f)), initial=0.0) >= 1.0:
            raise SingularStructureError("F must have spectral radius < 1")
        f.setflags(write=False)
        g.setflags(write=False)
        object.__setattr__(self, "f_matrix", f)
        object.__setattr__(self, "g_matrix", g)

    @property
    def m(self) -> int:
        return self.f_matrix.shape[0]

    @property
    def n_u(self) -> int:
        return self.g_matrix.shape[1]

    @property
    def memory(self) -> int | None:
        """Smallest k with F^k = 0 (finite for FIR structures), else None."""
        power = np.eye(self.m)
        for k in range(1, self.m + 1):
            power = power @ self.f_matrix
            if not np.any(power):
                return k
        return None

    def zero_regressor(self) -> np.ndarray:
        return np.zeros(self.m)


def build_fir_structure(n_u: int, n_y: int, n_taps: int) -> ModelStructure:
    """Block-diagonal shift registers, one block of ``n_taps`` past values per input."""
    for name, val in (("n_u", n_u), ("n_y", n_y), ("n_taps", n_taps)):
        if int(val) != val or val < 1:
            raise DimensionError(f"{name} must be a positive integer, got {val!r}")
    shift = np.eye(n_taps, k=-1)
    inject = np.zeros((n_taps, 1))
    inject[0, 0] = 1.0
    f = np.kron(np.eye(n_u), shift)
    g = np.kron(np.eye(n_u), inject)
    return ModelStructure(f, g, n_y=n_y, n_taps=n_taps)


def advance_regressor(s: ModelStructure, phi, u) -> np.ndarray:
    phi = np.asarray(phi, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    if phi.size != s.m:
        raise DimensionError(f"phi has length {phi.size}, expected {s.m}")
    if u.size != s.n_u:
        raise DimensionError(f"u has length {u.size}, expected {s.n_u}")
    return s.f_matrix @ phi + s.g_matrix @ u


def steady_state_regressor(s: ModelStructure, u) -> np.ndarray:
    """Fixed point ``(I - F)^{-1} G u`` of the regressor recursion under constant input."""
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.size != s.n_u:
        raise DimensionError(f"u has length {u.size}, expected {s.n_u}")
    lhs = np.eye(s.m) - s.f_matrix
    sv = np.linalg.svd(lhs, compute_uv=False)
    if sv[-1] <= 1e-12 * max(1.0, sv[0]):
        raise SingularStructureError("I - F is singular")
    return np.linalg.solve(lhs, s.g_matrix @ u)


@dataclass
class ParameterMatrix:
    """Output map ``y = H phi``; row j holds the parameters of output j."""

    h: np.ndarray

    def __post_init__(self):
        self.h = np.atleast_2d(np.asarray(self.h, dtype=float))
        if not np.all(np.isfinite(self.h)):
            raise ValueError("parameter matrix must be finite")

    @property
    def n_y(self) -> int:
        return self.h.shape[0]

    @property
    def m(self) -> int:
        return self.h.shape[1]

    def check(self, s: ModelStructure) -> None:
        if self.h.shape != (s.n_y, s.m):
            raise DimensionError(f"H has shape {self.h.shape}, structure needs {(s.n_y, s.m)}")


def output_of(h: ParameterMatrix, phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float).reshape(-1)
    if phi.size != h.m:
        raise DimensionError(f"phi has length {phi.size}, expected {h.m}")
    return h.h @ phi
