"""Dimensionless crystal configuration and axial equilibrium positions.

Positions are measured in units of the natural length scale of the axial
trap, so that the potential energy of the chain reads

    V(u) = sum_i u_i**2 / 2 + sum_{i<j} 1 / |u_i - u_j|

and the equilibrium is independent of the ion masses.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .exceptions import ConvergenceError

GRADIENT_TOL = 1e-12
MAX_ITER = 200


@dataclass(frozen=True)
class TrapConfig:
    """Crystal of ``n_ions`` ions with one impurity of mass ratio ``mass_ratio``.

    Parameters
    ----------
    n_ions : int
        Number of ions in the chain (>= 2).
    impurity_site : int
        1-based position of the impurity ion.
    mass_ratio : float
        Impurity mass over host-ion mass.
    alpha : float
        Axial over bare transverse trap frequency, in (0, 1).
    dipole_beta : float
        Optical dipole trap frequency over bare transverse trap frequency.
    ll_phonons : int
        Phonons prepared in the lowest-lying collective mode.
    """

    n_ions: int
    impurity_site: int
    mass_ratio: float = 1.0
    alpha: float = 0.1
    dipole_beta: float = 0.0
    ll_phonons: int = 0

    def __post_init__(self):
        if int(self.n_ions) != self.n_ions or self.n_ions < 2:
            raise ValueError(f"n_ions must be an integer >= 2, got {self.n_ions!r}")
        if int(self.impurity_site) != self.impurity_site or not 1 <= self.impurity_site <= self.n_ions:
            raise ValueError(
                f"impurity_site must lie in 1..{self.n_ions}, got {self.impurity_site!r}"
            )
        if not self.mass_ratio > 0:
            raise ValueError(f"mass_ratio must be positive, got {self.mass_ratio!r}")
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1) for a linear chain, got {self.alpha!r}")
        if not self.dipole_beta >= 0:
            raise ValueError(f"dipole_beta must be non-negative, got {self.dipole_beta!r}")
        if int(self.ll_phonons) != self.ll_phonons or self.ll_phonons < 0:
            raise ValueError(f"ll_phonons must be a non-negative integer, got {self.ll_phonons!r}")

    @property
    def impurity_index(self) -> int:
        """0-based impurity position, for array indexing."""
        return self.impurity_site - 1

    @property
    def omega_x(self) -> float:
        """Transverse single-ion frequency reduced by the axial confinement, in units of the bare one."""
        return float(np.sqrt(1.0 - self.alpha**2 / 2.0))

    def with_(self, **changes) -> "TrapConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class EquilibriumPositions:
    u: np.ndarray = field(repr=False)
    residual: float = 0.0
    iterations: int = 0

    def __post_init__(self):
        self.u.setflags(write=False)

    @property
    def n_ions(self) -> int:
        return len(self.u)


def initial_guess(n_ions: int) -> np.ndarray:
    i = np.arange(1, n_ions + 1, dtype=float)
    return (i - (n_ions + 1) / 2.0) * 2.0 * n_ions**-0.44


def potential(u: np.ndarray) -> float:
    d = np.abs(u[:, None] - u[None, :])
    iu = np.triu_indices(len(u), 1)
    return float(0.5 * np.sum(u**2) + np.sum(1.0 / d[iu]))


def gradient(u: np.ndarray) -> np.ndarray:
    """Force residual g_i = u_i - sum_{p<i} (u_i-u_p)^-2 + sum_{p>i} (u_i-u_p)^-2."""
    diff = u[:, None] - u[None, :]
    np.fill_diagonal(diff, 1.0)
    inv2 = np.sign(diff) / diff**2
    np.fill_diagonal(inv2, 0.0)
    return u - inv2.sum(axis=1)


def hessian(u: np.ndarray) -> np.ndarray:
    diff = np.abs(u[:, None] - u[None, :])
    np.fill_diagonal(diff, 1.0)
    h = -2.0 / diff**3
    np.fill_diagonal(h, 0.0)
    h[np.diag_indices_from(h)] = 1.0 - h.sum(axis=1)
    return h


@lru_cache(maxsize=64)
def _solve_cached(n_ions: int) -> EquilibriumPositions:
    u = initial_guess(n_ions)
    g = gradient(u)
    res = np.max(np.abs(g))
    it = 0
    while res > GRADIENT_TOL:
        if it >= MAX_ITER:
            raise ConvergenceError(
                f"equilibrium solver did not converge for N={n_ions} "
                f"after {MAX_ITER} iterations (residual {res:.3e})",
                residual=float(np.linalg.norm(g)),
            )
        it += 1
        step = np.linalg.solve(hessian(u), g)
        t = 1.0
        norm0 = np.linalg.norm(g)
        while True:
            trial = u - t * step
            # reject steps that reorder the ions
            if np.all(np.diff(trial) > 0):
                g_trial = gradient(trial)
                if np.linalg.norm(g_trial) < norm0 or t < 1e-10:
                    break
            t *= 0.5
            if t < 1e-12:
                raise ConvergenceError(
                    f"line search failed for N={n_ions} (residual {res:.3e})",
                    residual=float(norm0),
                )
        u, g = trial, g_trial
        res = np.max(np.abs(g))

    u = 0.5 * (u - u[::-1])
    return EquilibriumPositions(u=u, residual=float(np.max(np.abs(gradient(u)))), iterations=it)


def solve_equilibrium(n_ions: int) -> EquilibriumPositions:
    """Axial equilibrium positions of a linear chain of ``n_ions`` ions.

    Damped Newton iteration on the force residual with the analytic Hessian,
    started from an equispaced seed. The converged solution is symmetrised
    about the trap centre.

    Raises
    ------
    ConvergenceError
        If the max-norm of the force residual does not drop below 1e-12
        within 200 iterations.
    """
    if int(n_ions) != n_ions or n_ions < 2:
        raise ValueError(f"n_ions must be an integer >= 2, got {n_ions!r}")
    return _solve_cached(int(n_ions))
