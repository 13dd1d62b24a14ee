"""Transverse phonons of a linear ion crystal doped with one impurity ion."""
from .crystal import EquilibriumPositions, TrapConfig, solve_equilibrium
from .exceptions import (
    AlignmentError, ConsistencyError, ConvergenceError, NumericalError, UnstableCrystalError,
)
from .modes import ModeMatrix, ModeSpectrum, asymptotic_freqs, build_matrix, cusp_metric, diagonalize, spectrum
from .phonons import (
    Phase, PhononObservables, classify_phase, correlation, mean_occupation, observables, variance,
)
from .sweep import (
    SweepResult, SweepSchedule, adiabatic_check, effective_mass_ratio, observables_along_sweep, run_sweep,
)

__version__ = "0.1.0"
