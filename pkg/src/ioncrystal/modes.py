"""Transverse normal modes of the impurity-doped chain.

The mode matrix acts on mass-weighted transverse coordinates (the impurity
coordinate is scaled by sqrt(mu)); its eigenvalues are the squared mode
frequencies in units of the bare transverse frequency of a host ion.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .crystal import EquilibriumPositions, TrapConfig, solve_equilibrium
from .exceptions import UnstableCrystalError


@dataclass(frozen=True)
class ModeMatrix:
    b: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.b.shape[0]


@dataclass(frozen=True)
class ModeSpectrum:
    """Eigenpairs of the mode matrix, highest frequency first.

    ``vectors[:, k]`` is the eigenvector of ``lambdas[k]``; row ``j`` holds
    the amplitude of ion ``j`` (0-based) in each mode.
    """

    lambdas: np.ndarray = field(repr=False)
    vectors: np.ndarray = field(repr=False)

    @property
    def freqs(self) -> np.ndarray:
        return np.sqrt(self.lambdas)

    @property
    def n(self) -> int:
        return len(self.lambdas)

    @property
    def com_index(self) -> int:
        """0-based index of the centre-of-mass (highest) mode."""
        return 0

    @property
    def ll_index(self) -> int:
        """0-based index of the lowest-lying mode."""
        return self.n - 1


def _inverse_cubed_distances(u: np.ndarray) -> np.ndarray:
    d = np.abs(u[:, None] - u[None, :])
    np.fill_diagonal(d, np.inf)
    return 1.0 / d**3


def build_matrix(config: TrapConfig, positions: EquilibriumPositions | None = None) -> ModeMatrix:
    """Transverse mode matrix, including the dipole term when ``dipole_beta > 0``."""
    if positions is None:
        positions = solve_equilibrium(config.n_ions)
    if positions.n_ions != config.n_ions:
        raise ValueError(
            f"positions are for {positions.n_ions} ions, config has {config.n_ions}"
        )
    a2 = config.alpha**2
    mu = config.mass_ratio
    jm = config.impurity_index
    inv3 = _inverse_cubed_distances(np.asarray(positions.u, dtype=float))

    b = a2 * inv3
    np.fill_diagonal(b, 1.0 - a2 / 2.0 - a2 * inv3.sum(axis=1))

    scale = np.ones(config.n_ions)
    scale[jm] = 1.0 / np.sqrt(mu)
    b[jm, :] *= scale[jm]
    b[:, jm] *= scale[jm]
    # trap spring constant of the impurity scales as 1/mu, not 1/mu**2 like
    # the mass-independent axial and Coulomb terms picked up above
    b[jm, jm] = 1.0 / mu**2 - a2 / (2.0 * mu) - (a2 / mu) * inv3[jm].sum()
    b[jm, jm] += config.dipole_beta**2
    return ModeMatrix(b=b)


def fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip each column so that its entry of largest magnitude is positive."""
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def diagonalize(matrix: ModeMatrix | np.ndarray) -> ModeSpectrum:
    """Eigen-decomposition sorted by descending eigenvalue with fixed signs.

    Raises
    ------
    UnstableCrystalError
        If an eigenvalue is not strictly positive.
    """
    b = matrix.b if isinstance(matrix, ModeMatrix) else np.asarray(matrix, dtype=float)
    if not np.all(np.isfinite(b)):
        raise ValueError("mode matrix has non-finite entries")
    if not np.array_equal(b, b.T):
        raise ValueError("mode matrix is not symmetric")
    lam, vec = np.linalg.eigh(b)
    order = np.argsort(-lam, kind="stable")
    lam, vec = lam[order], vec[:, order]
    if lam[-1] <= 0:
        raise UnstableCrystalError(
            f"unstable crystal: non-positive eigenvalue {lam[-1]:.6g}", eigenvalue=float(lam[-1])
        )
    return ModeSpectrum(lambdas=lam, vectors=fix_signs(vec))


def spectrum(config: TrapConfig) -> ModeSpectrum:
    """Convenience wrapper: equilibrium, mode matrix and diagonalisation."""
    return diagonalize(build_matrix(config))


def asymptotic_freqs(config: TrapConfig) -> np.ndarray:
    """Mode frequencies in the limit of vanishing Coulomb coupling (alpha -> 0).

    Only the anomalous mode follows ``omega_x / mu``: the centre-of-mass mode
    for a light impurity, the lowest-lying one for a heavy impurity.
    """
    w = np.full(config.n_ions, config.omega_x)
    mu = config.mass_ratio
    if mu < 1:
        w[0] = config.omega_x / mu
    elif mu > 1:
        w[-1] = config.omega_x / mu
    return w


def cusp_metric(config: TrapConfig, alpha: float | None = None, du: float = 1e-3) -> float:
    """Jump of d(omega)/d(mu) across mu = 1 for the extreme modes.

    One-sided differences ``(w(1+du) - w(1)) / du`` and ``(w(1) - w(1-du)) / du``
    are taken for the centre-of-mass and lowest-lying frequencies; the larger
    of the two jumps is returned. ``config.mass_ratio`` is ignored.
    """
    base = config.with_(alpha=config.alpha if alpha is None else alpha)
    w = np.array(
        [spectrum(base.with_(mass_ratio=m)).freqs[[0, -1]] for m in (1.0 - du, 1.0, 1.0 + du)]
    )
    left = (w[1] - w[0]) / du
    right = (w[2] - w[1]) / du
    return float(np.max(np.abs(right - left)))
