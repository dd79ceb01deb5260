"""simshield: decay and decoherence control for shared-bath multiparticle systems.

Simulates the amplitude dynamics of singly excited multilevel particles
coupled to a common structured reservoir, under impulsive phase modulation
of the individual decay channels, and searches for pulse sequences that
enforce target symmetries of the decoherence matrix.
"""

from .bath import (
    BathModel,
    Channel,
    CouplingSpectrum,
    GaussianBathModel,
    channel_label,
    particle_blocks,
)
from .decoherence import (
    DecoherenceTrajectory,
    QuadratureConfig,
    decoherence_matrix,
    hermitian_part,
    modulation_kernel,
    overlap_decoherence_matrix,
    rate_matrix,
)
from .dynamics import (
    DiscreteBath,
    FidelityReport,
    SystemAmplitudes,
    bell_closed_form,
    commutator_ratio,
    concurrence,
    discrete_bath_oracle,
    fidelity_report,
    named_initial_state,
    propagate,
)
from .errors import (
    ApplicabilityError,
    ApproximationDomainError,
    BudgetExhausted,
    IntegratorError,
    NumericalToleranceError,
    ValidationError,
    WindowError,
)
from .modulation import (
    ModulationSpectrum,
    ProbePhaseResult,
    PulseSequence,
    StarkShiftSchedule,
    delta_approximation,
    effective_shift,
    epsilon_spectrum,
    epsilon_time,
)
from .scenario import Scenario, parse_scenario, scenario_from_dict, serialize_scenario
from .symmetry import (
    DeviationReport,
    ICPFeasibilityReport,
    OptimizationProblem,
    OptimizationResult,
    SymmetryTarget,
    cross_suppression,
    icp_feasibility,
    optimize_pulses,
    replace_channel,
    symmetry_deviation,
)

__version__ = "0.1.0"

__all__ = [
    "BathModel",
    "Channel",
    "CouplingSpectrum",
    "GaussianBathModel",
    "channel_label",
    "particle_blocks",
    "DecoherenceTrajectory",
    "QuadratureConfig",
    "decoherence_matrix",
    "hermitian_part",
    "modulation_kernel",
    "overlap_decoherence_matrix",
    "rate_matrix",
    "DiscreteBath",
    "FidelityReport",
    "SystemAmplitudes",
    "bell_closed_form",
    "commutator_ratio",
    "concurrence",
    "discrete_bath_oracle",
    "fidelity_report",
    "named_initial_state",
    "propagate",
    "ModulationSpectrum",
    "ProbePhaseResult",
    "PulseSequence",
    "StarkShiftSchedule",
    "delta_approximation",
    "effective_shift",
    "epsilon_spectrum",
    "epsilon_time",
    "Scenario",
    "parse_scenario",
    "scenario_from_dict",
    "serialize_scenario",
    "DeviationReport",
    "ICPFeasibilityReport",
    "OptimizationProblem",
    "OptimizationResult",
    "SymmetryTarget",
    "cross_suppression",
    "icp_feasibility",
    "optimize_pulses",
    "replace_channel",
    "symmetry_deviation",
    "ApplicabilityError",
    "ApproximationDomainError",
    "BudgetExhausted",
    "IntegratorError",
    "NumericalToleranceError",
    "ValidationError",
    "WindowError",
    "__version__",
]
