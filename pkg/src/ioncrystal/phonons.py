"""Local phonon statistics for a crystal prepared in a collective Fock state.

Each local number operator is a quadratic form in the collective ladder
operators.  Written in normal order,

    n_j = sum_kq M^j_kq a_k^+ a_q + 1/2 sum_kq K^j_kq (a_k^+ a_q^+ + a_k a_q) + E_j,

and its first and second moments in a product of Fock states follow from
the single-mode moments <a^+ a> = m, <a a^+> = m + 1.

Units: hbar = m = omega_x0 = 1.  The impurity is referred to its own trap
frequency omega_x0 / mu, so its local oscillator length equals that of a
host ion and the mass-weighted coordinate enters with a factor 1/mu
(position) and mu (momentum).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .crystal import TrapConfig
from .exceptions import ConsistencyError
from .modes import ModeSpectrum, spectrum as mode_spectrum

PHASE_BAND = 1e-6


class Phase(str, Enum):
    CONDENSED = "condensed"
    CONDUCTING = "conducting"
    CRITICAL = "critical"


@dataclass(frozen=True)
class PhononObservables:
    mean: np.ndarray = field(repr=False)
    variance: np.ndarray = field(repr=False)
    correlation: np.ndarray = field(repr=False)
    phase_label: Phase = Phase.CRITICAL


def ll_occupations(config: TrapConfig) -> np.ndarray:
    """Occupations of |00...n>: ``ll_phonons`` in the last (lowest) mode."""
    occ = np.zeros(config.n_ions)
    occ[-1] = config.ll_phonons
    return occ


def _site_weights(config: TrapConfig) -> tuple[np.ndarray, np.ndarray]:
    cx = np.ones(config.n_ions)
    cp = np.ones(config.n_ions)
    cx[config.impurity_index] = 1.0 / config.mass_ratio
    cp[config.impurity_index] = config.mass_ratio
    return cx, cp


def quadratic_forms(spectrum: ModeSpectrum, config: TrapConfig):
    """Normal-ordered coefficients ``(M, K, E)`` of every local number operator.

    ``M`` and ``K`` have shape (N_sites, N_modes, N_modes), ``E`` shape (N_sites,).
    """
    w = spectrum.freqs
    b = spectrum.vectors
    cx, cp = _site_weights(config)
    s = 1.0 / np.sqrt(2.0 * w)   # zero-point width of X_k
    t = np.sqrt(w / 2.0)         # zero-point width of P_k
    bb = b[:, :, None] * b[:, None, :]
    ss = np.outer(s, s)
    tt = np.outer(t, t)
    m = bb * (cx[:, None, None] * ss + cp[:, None, None] * tt)
    k = bb * (cx[:, None, None] * ss - cp[:, None, None] * tt)
    e = 0.5 * np.einsum("jkk->j", m) - 0.5
    return m, k, e


def _moments(spectrum, config, occupations=None):
    occ = ll_occupations(config) if occupations is None else np.asarray(occupations, float)
    if occ.shape != (spectrum.n,) or np.any(occ < 0):
        raise ValueError("occupations must be a non-negative vector with one entry per mode")
    m, k, e = quadratic_forms(spectrum, config)

    mean = np.einsum("jkk,k->j", m, occ) + e

    # number-conserving hops k -> q, weight m_k (m_q + 1), k != q
    hop = np.outer(occ, occ + 1.0)
    np.fill_diagonal(hop, 0.0)
    # pair creation followed by annihilation and vice versa
    pair = np.outer(occ + 1.0, occ + 1.0) + np.outer(occ, occ)
    np.fill_diagonal(pair, 0.0)
    pair_diag = (occ + 1.0) * (occ + 2.0) + occ * (occ - 1.0)

    corr = (
        np.einsum("ikq,jkq,kq->ij", m, m, hop)
        + 0.5 * np.einsum("ikq,jkq,kq->ij", k, k, pair)
        + 0.25 * np.einsum("ikk,jkk,k->ij", k, k, pair_diag)
    )
    return mean, corr


def classify_phase(config: TrapConfig, band: float = PHASE_BAND) -> Phase:
    """Phase from the effective mass ratio: condensed above 1, conducting below."""
    from .sweep import effective_mass_ratio

    mu_eff = effective_mass_ratio(config.mass_ratio, config.dipole_beta)
    if mu_eff > 1.0 + band:
        return Phase.CONDENSED
    if mu_eff < 1.0 - band:
        return Phase.CONDUCTING
    return Phase.CRITICAL


def observables(
    config: TrapConfig,
    spectrum: ModeSpectrum | None = None,
    occupations=None,
) -> PhononObservables:
    """Mean, standard deviation and covariance of every local phonon number.

    By default the state is |00...n> with ``config.ll_phonons`` quanta in the
    lowest-lying mode; ``occupations`` overrides this with any product of
    collective Fock states.
    """
    if spectrum is None:
        spectrum = mode_spectrum(config)
    mean, corr = _moments(spectrum, config, occupations)
    if np.max(np.abs(corr - corr.T), initial=0.0) > 1e-10:
        raise ConsistencyError("local phonon correlation matrix is not symmetric")
    var = np.diag(corr).copy()
    if np.min(var) < -1e-10:
        raise ConsistencyError(f"negative local phonon variance {np.min(var):.3e}")
    return PhononObservables(
        mean=mean,
        variance=np.sqrt(np.clip(var, 0.0, None)),
        correlation=0.5 * (corr + corr.T),
        phase_label=classify_phase(config),
    )


def mean_occupation(spectrum: ModeSpectrum, config: TrapConfig) -> np.ndarray:
    return _moments(spectrum, config)[0]


def variance(spectrum: ModeSpectrum, config: TrapConfig) -> np.ndarray:
    """Per-site standard deviation of the local phonon number."""
    return observables(config, spectrum).variance


def correlation(spectrum: ModeSpectrum, config: TrapConfig) -> np.ndarray:
    return observables(config, spectrum).correlation
