"""Hidden-variable models of the spin singlet and their admissibility checks.

The package builds lambda-conditional outcome tables P(sigma, tau | a, b,
lambda) for a family of hidden-variable models of two-spin singlet
measurements, averages them against a setting-independent measure, and
checks the structural constraints any such model must satisfy: exact
quantum statistics on average, trivial per-lambda marginals, positivity,
and the endpoint decay of the excess-correlation function C(lambda, a, b).

Entry points:

* :func:`builtin_model` / :func:`model_from_spec` construct models,
* :func:`run_full_suite` runs every admissibility check,
* :func:`chsh` and :func:`run_experiment` estimate correlations,
* the ``hvsinglet`` console script wraps all of the above.
"""

from .geometry import (
    GeometryError,
    RandomStream,
    SphereGrid,
    dot,
    rotate_towards,
    sample_uniform_sphere,
    sphere_quadrature,
    unit,
    with_dot,
)
from .models import (
    CFunction,
    HiddenVariableModel,
    LambdaBatch,
    LambdaPoint,
    LambdaShape,
    LambdaSpace,
    MeasureZeroError,
    ModelSpecError,
    NegativeProbabilityError,
    OUTCOMES,
    RECIPE_REGISTRY,
    build_recipe_model,
    builtin_model,
    canonical_prob,
    canonical_table,
    frobenius_bound,
    hv_correlator,
    load_model,
    model_from_spec,
    qm_singlet_prob,
    qm_table,
    sample_valid_tables,
)
from .simulator import (
    CHSH_SIGNS,
    ChshResult,
    CorrelationEstimate,
    ExperimentConfig,
    MalusReport,
    OPTIMAL_CHSH_SETTINGS,
    chsh,
    estimate_correlation,
    find_chsh_witness,
    hv_chsh_values,
    malus_gap_report,
    malus_marginal,
    run_experiment,
    write_chsh_csv,
    write_correlations_csv,
)
from .validator import (
    CheckStatus,
    ConstraintReport,
    DeltaDecomposition,
    ExponentEstimate,
    SuiteResult,
    ValidatorConfig,
    Witness,
    decompose_delta,
    estimate_exponents,
    run_full_suite,
)

__version__ = "0.1.0"

__all__ = [
    "CFunction",
    "CHSH_SIGNS",
    "CheckStatus",
    "ChshResult",
    "ConstraintReport",
    "CorrelationEstimate",
    "DeltaDecomposition",
    "ExperimentConfig",
    "ExponentEstimate",
    "GeometryError",
    "HiddenVariableModel",
    "LambdaBatch",
    "LambdaPoint",
    "LambdaShape",
    "LambdaSpace",
    "MalusReport",
    "MeasureZeroError",
    "ModelSpecError",
    "NegativeProbabilityError",
    "OPTIMAL_CHSH_SETTINGS",
    "OUTCOMES",
    "RECIPE_REGISTRY",
    "RandomStream",
    "SphereGrid",
    "SuiteResult",
    "ValidatorConfig",
    "Witness",
    "build_recipe_model",
    "builtin_model",
    "canonical_prob",
    "canonical_table",
    "chsh",
    "decompose_delta",
    "dot",
    "estimate_correlation",
    "estimate_exponents",
    "find_chsh_witness",
    "frobenius_bound",
    "hv_chsh_values",
    "hv_correlator",
    "load_model",
    "malus_gap_report",
    "malus_marginal",
    "model_from_spec",
    "qm_singlet_prob",
    "qm_table",
    "rotate_towards",
    "run_experiment",
    "run_full_suite",
    "sample_uniform_sphere",
    "sample_valid_tables",
    "sphere_quadrature",
    "unit",
    "with_dot",
    "write_chsh_csv",
    "write_correlations_csv",
]
