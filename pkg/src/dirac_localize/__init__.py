"""Numerical laboratory for spectral localization of deformed Dirac
operators: Clifford-module structure analysis at singular fibers, vertical
oscillator models, staggered form complexes on flat tori, sparse symmetric
eigensolvers, and the localization experiments built on them."""

from .clifford_kernel import (
    CliffordModule,
    JetError,
    PerturbationJet,
    StructureReport,
    analyze_jet,
    build_witten_module,
    check_bundle_cross_term,
    check_concentrating_pair,
    witten_morse_jet,
)
from .eigensolve import EigenRequest, EigenResult, gap_split, lowest_eigenpairs
from .localization_lab import (
    ApproxEigensection,
    ExperimentConfig,
    GapNotFound,
    IndexResult,
    SpectrumReport,
    build_approx_eigensection,
    concentration_profile,
    gap_lemma_check,
    index_experiment,
    spectral_flow,
    splice_residual_slope,
)
from .model_fiber import (
    FiberGrid,
    GaussianSection,
    assemble_vertical,
    gaussian_residual,
    oscillator_spectrum,
    weitzenbock_residual,
)
from .scalar_functions import ScalarFunction, get_function, parse_expression
from .torus_forms import (
    CriticalReport,
    FormField,
    TorusGrid,
    assemble_d,
    assemble_deformed,
    assemble_dstar,
    assemble_witten,
    find_critical_set,
)

__version__ = "0.1.0"
