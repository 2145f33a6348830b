"""Instrumental-variable policy learning for individualized treatment rules.

The package learns treatment regimes from observational data in which the
treatment may be confounded by unmeasured factors, using a binary
instrument: classification weights built from instrument-based
identification, a regularized weighted hinge-loss learner, multiply robust
value estimation, partial-identification bounds for binary outcomes, and a
simulation benchmark harness.
"""

from .data import (
    AffineRule,
    Dataset,
    DecisionRule,
    Diagnostics,
    KernelRule,
    LatentDataset,
    Observation,
    ParseError,
    decide,
    load_csv,
    load_latent_csv,
    load_rule,
    save_rule,
    validate,
    write_csv,
    write_latent_csv,
)
from .synth import ScenarioSpec, generate_scenario, oracle_value, sample_bridge, true_rule
from .nuisance import (
    LinearFit,
    LogisticFit,
    NuisanceSet,
    RankDeficientError,
    fit_linear_ols,
    fit_logistic_irls,
    g_estimate_delta,
    g_estimate_gamma,
)
from .weights import SCHEMES, WeightVector, compute_weights, flip_transform
from .learn import (
    ConvergenceError,
    LearnConfig,
    SolveReport,
    cross_validate,
    fit_weighted_hinge,
    gaussian_kernel,
    learn_policy,
    median_pairwise_distance,
)
from .evaluation import (
    BoundsReport,
    ProbTable,
    ValueReport,
    bp_bounds,
    classification_agreement,
    complier_value,
    eif_value,
    fit_mr_components,
    value_mr,
    value_plugin,
)
from .bench import BenchConfig, BenchResult, render_table, run_bench
from .seeding import derive_seed, rng_from

__version__ = "0.1.0"
