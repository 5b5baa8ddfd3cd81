"""Approximate inverse iteration for the minimum eigenvalue of a generalized
symmetric eigenproblem, with per-step certification of its convergence bounds."""

from .bounds import (
    BoundInputs,
    VerificationReport,
    kn_optimal_rate,
    lemma31_bound,
    lemma32_bound,
    lemma33_bound,
    lemma34_constant,
    q_derivative,
    q_factor,
    q_limit,
    q_monotonicity_check,
    thm32_bound,
    verify_records,
    verify_trajectory,
)
from .correction import (
    CorrectionResult,
    PerturbationPolicy,
    exact_correction,
    perturbed_correction,
    solution_operator,
    truncated_cg_correction,
)
from .forms import (
    Eigenproblem,
    SpectralMetadata,
    SymmetricForm,
    complement_project,
    energy_inner,
    energy_norm,
    m_normalize,
    mass_inner,
    mass_norm,
    project_e1,
    rayleigh_quotient,
)
from .iteration import RunConfig, StepRecord, Trajectory, cauchy_tail_check, run, step
from .problems import (
    GeneratorSpec,
    admissible_start,
    diagonal_problem,
    fem1d_problem,
    laplacian_1d,
    laplacian_2d,
    spectral_oracle,
)

__version__ = "0.1.0"
