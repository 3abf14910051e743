"""Multiple-quantum NMR coherence dynamics for systems of equivalent spins.

Simulates the creation and relaxation of multiple-quantum coherences in
systems where every spin pair shares one averaged dipolar coupling, using
the exact total-spin block decomposition to reach several hundred spins.
"""

__version__ = "0.1.0"

from .analysis import (
    ClusterCount,
    ClusterTrace,
    DecayCurve,
    DecayTimeResult,
    cluster_size,
    decay_time_e,
    decay_time_perturbed,
    envelopes,
    perturbation_second_order,
)
from .coherence import (
    MIXING_IDEAL,
    MIXING_MATCHED,
    AveragedSpectrum,
    AveragingWindow,
    CoherenceSpectrum,
    averaged_intensities,
    averaged_table,
    coherence_component,
    fourier_area_check,
    intensities_perturbed,
    intensities_standard,
)
from .fitting import FitResult, fit_coth, fit_tanh
from .propagator import Eigensystem, EigensolverError, diagonalize, evolve, perturbed_density, prepared_density
from .sectors import (
    BlockOperator,
    SpinSector,
    SpinSystem,
    double_quantum_hamiltonian,
    effective_hamiltonian,
    enumerate_sectors,
    initial_density,
    iz_squared_trace,
    ladder_elements,
    secular_dipolar_hamiltonian,
    sector_degeneracy,
)

__all__ = [name for name in dir() if not name.startswith("_")]
