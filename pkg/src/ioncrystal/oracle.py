"""Brute-force local phonon statistics in a truncated collective Fock space.

Reference implementation for small crystals: ladder operators of every
collective mode are represented as sparse matrices, the ion coordinates
are assembled from them, and the local number operators are formed
literally as  x_j^2/2 + p_j^2/2 - 1/2  (hbar = m = omega_x0 = 1; the
impurity's own m*omega product is the same, M * omega_x0/mu = m * omega_x0).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .crystal import TrapConfig
from .exceptions import ConvergenceError
from .modes import ModeSpectrum, spectrum as mode_spectrum
from .phonons import PhononObservables, classify_phase

MAX_MODES = 4
CONVERGENCE_TOL = 1e-8


@dataclass(frozen=True)
class FockBasis:
    n_modes: int
    cutoff: int

    @property
    def dim(self) -> int:
        return (self.cutoff + 1) ** self.n_modes

    @property
    def states(self):
        return itertools.product(range(self.cutoff + 1), repeat=self.n_modes)

    def index(self, occupations) -> int:
        idx = 0
        for m in occupations:
            if not 0 <= m <= self.cutoff:
                raise ValueError(f"occupation {m} outside cutoff {self.cutoff}")
            idx = idx * (self.cutoff + 1) + int(m)
        return idx

    def annihilation(self, mode: int) -> sp.csr_matrix:
        """a_mode embedded in the full product space (lexicographic order)."""
        a = sp.diags(np.sqrt(np.arange(1, self.cutoff + 1, dtype=float)), 1, format="csr")
        eye = sp.identity(self.cutoff + 1, format="csr")
        op = sp.identity(1, format="csr")
        for k in range(self.n_modes):
            op = sp.kron(op, a if k == mode else eye, format="csr")
        return op


def ion_operators(basis: FockBasis, spectrum: ModeSpectrum, config: TrapConfig):
    """Lists of sparse position and momentum operators x_j, p_j of every ion."""
    w = spectrum.freqs
    a = [basis.annihilation(k) for k in range(basis.n_modes)]
    big_x = [np.sqrt(1.0 / (2.0 * w[k])) * (a[k].T + a[k]) for k in range(basis.n_modes)]
    big_p = [1j * np.sqrt(w[k] / 2.0) * (a[k].T - a[k]) for k in range(basis.n_modes)]
    xs, ps = [], []
    for j in range(config.n_ions):
        fx = fp = 1.0
        if j == config.impurity_index:
            fx = 1.0 / np.sqrt(config.mass_ratio)
            fp = np.sqrt(config.mass_ratio)
        x = sum(fx * spectrum.vectors[j, k] * big_x[k] for k in range(basis.n_modes))
        p = sum(fp * spectrum.vectors[j, k] * big_p[k] for k in range(basis.n_modes))
        xs.append(sp.csr_matrix(x))
        ps.append(sp.csr_matrix(p))
    return xs, ps


def local_number_operators(basis, spectrum, config):
    xs, ps = ion_operators(basis, spectrum, config)
    eye = sp.identity(basis.dim, format="csr")
    return [0.5 * (x @ x) + 0.5 * (p @ p) - 0.5 * eye for x, p in zip(xs, ps)]


def _evaluate(config: TrapConfig, spectrum: ModeSpectrum, cutoff: int):
    basis = FockBasis(config.n_ions, cutoff)
    occ = [0] * config.n_ions
    occ[-1] = config.ll_phonons
    psi = np.zeros(basis.dim, dtype=complex)
    psi[basis.index(occ)] = 1.0

    applied = [op @ psi for op in local_number_operators(basis, spectrum, config)]
    mean = np.array([np.vdot(psi, v).real for v in applied])
    second = np.array([[np.vdot(u, v).real for v in applied] for u in applied])
    corr = second - np.outer(mean, mean)
    return mean, corr


def exact_observables(
    config: TrapConfig,
    spectrum: ModeSpectrum | None = None,
    cutoff: int | None = None,
    check_convergence: bool = True,
) -> PhononObservables:
    """Exact mean, standard deviation and covariance of the local phonon numbers.

    Raises
    ------
    ValueError
        If the crystal has more than four ions or ``cutoff < ll_phonons + 4``.
    ConvergenceError
        If raising the cutoff by two changes any result by more than 1e-8.
    """
    if config.n_ions > MAX_MODES:
        raise ValueError(
            f"Fock-space oracle refuses N={config.n_ions} (limit {MAX_MODES} ions)"
        )
    if cutoff is None:
        cutoff = config.ll_phonons + 4
    if cutoff < config.ll_phonons + 4:
        raise ValueError(f"cutoff must be at least ll_phonons + 4 = {config.ll_phonons + 4}")
    if spectrum is None:
        spectrum = mode_spectrum(config)

    mean, corr = _evaluate(config, spectrum, cutoff)
    if check_convergence:
        mean2, corr2 = _evaluate(config, spectrum, cutoff + 2)
        delta = max(np.max(np.abs(mean2 - mean)), np.max(np.abs(corr2 - corr)))
        if delta > CONVERGENCE_TOL:
            raise ConvergenceError(
                f"oracle not converged at cutoff {cutoff} (change {delta:.2e}); "
                "increase the cutoff",
                residual=float(delta),
            )
    var = np.diag(corr)
    return PhononObservables(
        mean=mean,
        variance=np.sqrt(np.clip(var, 0.0, None)),
        correlation=corr,
        phase_label=classify_phase(config),
    )


def convergence_scan(config: TrapConfig, cutoffs, spectrum: ModeSpectrum | None = None) -> list[dict]:
    """Observables for each cutoff together with the change from the previous row.

    Unlike :func:`exact_observables` no minimum cutoff is enforced, so the
    truncation error of small cutoffs can be inspected.
    """
    if spectrum is None:
        spectrum = mode_spectrum(config)
    rows = []
    prev = None
    for c in cutoffs:
        if c < 1:
            raise ValueError("cutoffs must be positive")
        mean, corr = _evaluate(config, spectrum, c)
        obs = PhononObservables(mean=mean, variance=np.sqrt(np.clip(np.diag(corr), 0.0, None)),
                                correlation=corr, phase_label=classify_phase(config))
        flat = np.concatenate([obs.mean, obs.variance, obs.correlation.ravel()])
        delta = float("nan") if prev is None else float(np.max(np.abs(flat - prev)))
        rows.append({"cutoff": c, "mean": obs.mean, "variance": obs.variance,
                     "correlation": obs.correlation, "delta": delta})
        prev = flat
    return rows
