"""Time-dependent optical dipole sweep on the impurity ion.

The dipole trap frequency follows a schedule omega_s(t) (default
omega_s0 * sqrt(t)), which adds beta(t)**2 to the impurity diagonal of the
mode matrix.  Along the sweep the instantaneous mode frame is tracked
continuously and the non-adiabatic couplings

    S_kq = sum_j b_j^k d/dt b_j^q,    R_kq = sum_j d/dt b_j^k d/dt b_j^q

are evaluated on a uniform time grid.  Times are in units of 1/omega_x0.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import logm
from scipy.optimize import bisect, linear_sum_assignment

from .crystal import TrapConfig, solve_equilibrium
from .exceptions import AlignmentError
from .modes import ModeSpectrum, build_matrix, diagonalize
from .phonons import PhononObservables, observables

log = logging.getLogger(__name__)

ADIABATIC_THRESHOLD = 0.1
MIN_OVERLAP = 0.5
TINY = 1e-300

# omega_x0 implied by a transition at omega_s = 2 pi x 0.4 MHz = 0.37 omega_x0 (Ca+ crystal, alpha = 0.1)
REFERENCE_OMEGA_X0 = 2.0 * math.pi * 0.4e6 / 0.37  # rad/s

LAWS = ("sqrt", "linear", "constant")


def microseconds_to_time(us: float, omega_x0: float = REFERENCE_OMEGA_X0) -> float:
    """Convert a duration in microseconds to units of 1/omega_x0."""
    return us * 1e-6 * omega_x0


def effective_mass_ratio(mu: float, beta: float) -> float:
    """Mass ratio seen by the transverse modes once the dipole trap is on.

    ``(beta**2 + 1/mu**2) ** -0.5``; equals ``mu`` for ``beta = 0``.
    """
    if not mu > 0:
        raise ValueError(f"mass ratio must be positive, got {mu!r}")
    if not beta >= 0:
        raise ValueError(f"beta must be non-negative, got {beta!r}")
    return float((beta**2 + 1.0 / mu**2) ** -0.5)


def critical_beta(mu: float) -> float:
    """Dipole strength at which the effective mass ratio reaches 1 (needs mu > 1)."""
    return math.sqrt(1.0 - 1.0 / mu**2)


@dataclass(frozen=True)
class SweepSchedule:
    """Dipole-trap ramp omega_s(t) on t in [0, duration].

    ``law`` is one of ``"sqrt"`` (omega_s0 * sqrt(t)), ``"linear"``
    (omega_s0 * t) or ``"constant"`` (omega_s0 throughout).
    """

    omega_s0: float
    duration: float
    steps: int = 2001
    law: str = "sqrt"

    def __post_init__(self):
        if self.law not in LAWS:
            raise ValueError(f"unknown schedule law {self.law!r}; expected one of {LAWS}")
        if not self.omega_s0 >= 0:
            raise ValueError("omega_s0 must be non-negative")
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if int(self.steps) != self.steps or self.steps < 3:
            raise ValueError("steps must be an integer >= 3")

    @classmethod
    def to_max(cls, omega_s_max: float, duration: float, steps: int = 2001, law: str = "sqrt"):
        """Schedule that reaches ``omega_s_max`` at ``t = duration``."""
        if law == "sqrt":
            w0 = omega_s_max / math.sqrt(duration)
        elif law == "linear":
            w0 = omega_s_max / duration
        else:
            w0 = omega_s_max
        return cls(omega_s0=w0, duration=duration, steps=steps, law=law)

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.duration, int(self.steps))

    def omega_s(self, t):
        t = np.asarray(t, dtype=float)
        if self.law == "sqrt":
            return self.omega_s0 * np.sqrt(t)
        if self.law == "linear":
            return self.omega_s0 * t
        return np.full_like(t, self.omega_s0)

    def compressed(self, factor: float) -> "SweepSchedule":
        """Same omega_s range traversed ``factor`` times faster."""
        end = float(self.omega_s(self.duration))
        return SweepSchedule.to_max(end, self.duration / factor, self.steps, self.law)


@dataclass(frozen=True)
class SweepResult:
    times: np.ndarray = field(repr=False)
    omega_s: np.ndarray = field(repr=False)
    spectra: list = field(repr=False)
    mu_eff: np.ndarray = field(repr=False)
    s: np.ndarray = field(repr=False)
    r: np.ndarray = field(repr=False)
    adiabatic_margin: np.ndarray = field(repr=False)
    transition_omega_s: float = float("nan")

    @property
    def freqs(self) -> np.ndarray:
        return np.array([sp.freqs for sp in self.spectra])

    @property
    def s_coupling(self) -> np.ndarray:
        return np.abs(self.s)

    @property
    def r_coupling(self) -> np.ndarray:
        return np.abs(self.r)


def _align(prev: np.ndarray, spec: ModeSpectrum, step: int) -> ModeSpectrum:
    """Reorder and re-sign ``spec`` to follow the frame ``prev`` continuously."""
    overlap = prev.T @ spec.vectors
    rows, cols = linear_sum_assignment(-np.abs(overlap))
    matched = overlap[rows, cols]
    worst = np.min(np.abs(matched))
    if worst < MIN_OVERLAP:
        raise AlignmentError(
            f"eigenvector overlap {worst:.3f} between steps {step - 1} and {step}; "
            "an unresolved level crossing - use a finer time grid"
        )
    vec = spec.vectors[:, cols] * np.sign(matched)
    return ModeSpectrum(lambdas=spec.lambdas[cols], vectors=vec)


def _frame_generator(v0: np.ndarray, v1: np.ndarray) -> np.ndarray:
    """Antisymmetric log of the rotation carrying frame v0 into v1."""
    n = v0.shape[1]
    if np.array_equal(v0, v1):
        return np.zeros((n, n))
    e = v0.T @ v1 - np.eye(n)
    if np.linalg.norm(e, 2) < 0.25:
        # Mercator series; terms shrink at least 4x per order
        g = np.zeros((n, n))
        term = np.eye(n)
        for order in range(1, 60):
            term = term @ e
            g += ((-1) ** (order + 1) / order) * term
            if np.max(np.abs(term)) < 1e-18:
                break
    else:
        g = np.real(logm(np.eye(n) + e))
    return 0.5 * (g - g.T)


def frame_couplings(vectors: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """S and R from a continuity-aligned frame series of shape (T, N, N).

    The frame velocity is a central difference on the rotation group,
    ``(log(V_i^T V_{i+1}) - log(V_i^T V_{i-1})) / 2dt``, with second-order
    one-sided stencils at both ends.  S comes out exactly antisymmetric and
    ``d/dt V = V S``.
    """
    nt, n, _ = vectors.shape
    fwd = [_frame_generator(vectors[i], vectors[i + 1]) for i in range(nt - 1)]
    s = np.empty((nt, n, n))
    for i in range(1, nt - 1):
        # log(V_i^T V_{i-1}) = -log(V_{i-1}^T V_i) for orthogonal frames
        s[i] = (fwd[i] + fwd[i - 1]) / (2.0 * dt)
    s[0] = (4.0 * fwd[0] - _frame_generator(vectors[0], vectors[2])) / (2.0 * dt)
    s[-1] = (4.0 * fwd[-1] + _frame_generator(vectors[-1], vectors[-3])) / (2.0 * dt)
    r = np.einsum("tkp,tkq->tpq", s, s)
    return s, r


def run_sweep(config: TrapConfig, schedule: SweepSchedule) -> SweepResult:
    """Follow the mode spectrum along ``schedule``.

    ``config.dipole_beta`` is ignored; the schedule sets beta(t) = omega_s(t).

    Raises
    ------
    AlignmentError
        If the eigenvectors of two successive steps cannot be matched.
    """
    if not config.mass_ratio > 1:
        raise ValueError("the dipole sweep needs a heavy impurity (mass_ratio > 1)")
    pos = solve_equilibrium(config.n_ions)
    times = schedule.times
    omega_s = schedule.omega_s(times)

    spectra = []
    for i, w in enumerate(omega_s):
        spec = diagonalize(build_matrix(config.with_(dipole_beta=float(w)), pos))
        if spectra:
            spec = _align(spectra[-1].vectors, spec, i)
        spectra.append(spec)

    dt = times[1] - times[0]
    s, r = frame_couplings(np.array([sp.vectors for sp in spectra]), dt)
    freqs = np.array([sp.freqs for sp in spectra])
    off = ~np.eye(config.n_ions, dtype=bool)
    min_gap = np.array([np.min(np.abs(f[:, None] - f[None, :])[off]) for f in freqs])
    max_s = np.max(np.abs(s)[:, off], axis=1)
    margin = min_gap / np.maximum(max_s, TINY)

    mu = config.mass_ratio
    mu_eff = np.array([effective_mass_ratio(mu, w) for w in omega_s])
    lo, hi = float(omega_s.min()), float(omega_s.max())
    f = lambda w: effective_mass_ratio(mu, w) - 1.0  # noqa: E731
    transition = bisect(f, lo, hi, xtol=1e-14) if f(lo) > 0 > f(hi) else float("nan")

    return SweepResult(
        times=times, omega_s=omega_s, spectra=spectra, mu_eff=mu_eff, s=s, r=r,
        adiabatic_margin=margin, transition_omega_s=float(transition),
    )


@dataclass(frozen=True)
class AdiabaticReport:
    worst_ratio: float
    worst_time: float
    worst_pair: tuple
    min_gap: float
    do_lhs: float
    do_rhs: float
    threshold: float

    @property
    def demkov_osherov_ok(self) -> bool:
        return self.do_lhs <= self.do_rhs

    @property
    def passed(self) -> bool:
        return self.worst_ratio <= self.threshold

    def as_dict(self) -> dict:
        return {
            "worst_ratio": self.worst_ratio,
            "worst_time": self.worst_time,
            "worst_pair": list(self.worst_pair),
            "min_gap": self.min_gap,
            "demkov_osherov_lhs": self.do_lhs,
            "demkov_osherov_rhs": self.do_rhs,
            "demkov_osherov_ok": self.demkov_osherov_ok,
            "demkov_osherov_normalization": "omega_s0**2 (omega_x0**3 units) vs min_gap**2 * T (T in 1/omega_x0)",
            "threshold": self.threshold,
            "passed": self.passed,
        }


def adiabatic_check(result: SweepResult, schedule: SweepSchedule,
                    threshold: float = ADIABATIC_THRESHOLD) -> AdiabaticReport:
    """Adiabaticity diagnostics of a sweep.

    The verdict compares max_{t, k != q} |S_kq| / |omega_k - omega_q| with
    ``threshold``.  The level-crossing estimate omega_s0**2 <= gap_min**2 * T is
    reported alongside but does not enter the verdict.
    """
    freqs = result.freqs
    gap = np.abs(freqs[:, :, None] - freqs[:, None, :])
    n = freqs.shape[1]
    off = ~np.eye(n, dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(off[None] & (gap > 0), np.abs(result.s) / gap, 0.0)
    flat = int(np.argmax(ratio))
    ti, k, q = np.unravel_index(flat, ratio.shape)
    min_gap = float(np.min(gap[:, off]))
    return AdiabaticReport(
        worst_ratio=float(ratio[ti, k, q]),
        worst_time=float(result.times[ti]),
        worst_pair=(int(k) + 1, int(q) + 1),
        min_gap=min_gap,
        do_lhs=float(schedule.omega_s0**2),
        do_rhs=float(min_gap**2 * schedule.duration),
        threshold=threshold,
    )


@dataclass(frozen=True)
class SweepObservables:
    times: np.ndarray = field(repr=False)
    omega_s: np.ndarray = field(repr=False)
    observables: list = field(repr=False)
    report: AdiabaticReport
    warning: str | None = None

    @property
    def mean(self) -> np.ndarray:
        return np.array([o.mean for o in self.observables])

    @property
    def variance(self) -> np.ndarray:
        return np.array([o.variance for o in self.observables])


def observables_along_sweep(config: TrapConfig, schedule: SweepSchedule,
                            result: SweepResult | None = None,
                            threshold: float = ADIABATIC_THRESHOLD) -> SweepObservables:
    """Local phonon statistics assuming the crystal follows |00...n> adiabatically.

    The LL occupation is attached to the instantaneous lowest mode.  An
    adiabaticity failure is attached as ``warning`` rather than raised.
    """
    if result is None:
        result = run_sweep(config, schedule)
    report = adiabatic_check(result, schedule, threshold)
    obs: list[PhononObservables] = []
    for w, spec in zip(result.omega_s, result.spectra):
        order = np.argsort(-spec.lambdas, kind="stable")
        ordered = ModeSpectrum(lambdas=spec.lambdas[order], vectors=spec.vectors[:, order])
        obs.append(observables(config.with_(dipole_beta=float(w)), ordered))
    warning = None
    if not report.passed:
        warning = (
            f"adiabatic condition violated: max |S|/gap = {report.worst_ratio:.3g} "
            f"> {threshold:g} at t = {report.worst_time:.4g} (modes {report.worst_pair})"
        )
        log.warning(warning)
    return SweepObservables(times=result.times, omega_s=result.omega_s, observables=obs,
                            report=report, warning=warning)
