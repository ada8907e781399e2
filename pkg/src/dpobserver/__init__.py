"""Differentially private nonlinear state observers via contraction analysis."""

from .contraction import (
    CascadeBound,
    ContractionCertificate,
    DomainBox,
    JacobianField,
    cascade_rate,
    divergence_bound,
    observer_coupling_gain,
    verify_contraction,
    verify_contraction_lmi,
)
from .linalg import (
    INF,
    ONE,
    TWO,
    NormTag,
    SpdMat,
    induced_norm,
    min_eig,
    spd_sqrt,
    sym_eig,
    vec_norm,
    weighted,
)
from .models import (
    BlockmodelParams,
    ObserverSpec,
    SirParams,
    Trajectory,
    adjacent_pair,
    blockmodel_calibrate,
    blockmodel_gain_window,
    generate_synthetic,
    simulate,
    sir_pipeline,
    theta_estimate,
)
from .privacy import (
    AdjacencyParams,
    NoiseCalibration,
    PrivacyBudget,
    SensitivityBound,
    calibrate_gaussian,
    calibrate_laplace,
    gaussian_series_factor,
    identity_sensitivity,
    kappa,
    observer_l1_sensitivity,
    observer_l2_sensitivity,
    q_function,
    q_inverse,
    sample_noise,
    squaring_bias_demo,
)
from .synthesis import (
    InfeasibleProblem,
    SynthesisProblem,
    SynthesisResult,
    assemble_contraction_lmi,
    assemble_perf1_lmi,
    assemble_perf2_lmi,
    reverify,
    solver_phase1,
    synthesize,
)

__version__ = "0.1.0"
