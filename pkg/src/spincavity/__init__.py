"""Spin-squeezing dynamics of atoms dispersively coupled to a lossy driven cavity.

Full atom-cavity Lindblad/stochastic dynamics, second- and third-order
adiabatically eliminated spin models, and an independent quadrature oracle
for the elimination coefficients.
"""

__version__ = "0.1.0"

from .errors import SpinCavityError
from .hilbert import (
    CavityAlgebra,
    QuantumState,
    SpinAlgebra,
    cavity_operators,
    coherent_state,
    css_x_state,
    partial_trace_cavity,
    spin_operators,
    tensor_embed,
)
from .models import (
    DerivedParams,
    LindbladModel,
    ModelParams,
    build_full_model,
    build_reduced_model,
    derive_params,
    optimal_homodyne_phase,
    verify_jump_factorization,
)
from .elimination import (
    CoefficientSet,
    assemble_reduced_generator,
    closed_form_coefficients,
    closed_form_correlations,
    coefficients_by_quadrature,
    first_order_vanishes,
    heisenberg_propagate,
)
from .integrators import (
    TimeGrid,
    TrajectoryRecord,
    evolve_homodyne_trajectory,
    evolve_master_equation,
    unconditional_consistency_check,
)
from .observables import (
    ScalingFit,
    SpinMoments,
    SqueezingCurve,
    find_optimal_squeezing,
    fit_scaling,
    photon_number,
    spin_moments,
    squeezing_parameter,
)
from .montecarlo import EnsembleResult, EnsembleSpec, run_ensemble, summarize
