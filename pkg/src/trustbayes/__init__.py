"""Meta-training of Gaussian process priors with certified interval coverage.

The package fits a three-parameter GP prior (constant mean, scaled
squared-exponential kernel) across a distribution of tasks so that the
prior and posterior prediction intervals capture true function values
with at least a prescribed probability, and certifies that guarantee
through maximized Hoeffding-style lower bounds on the capture
probability.
"""

from .bounds import (
    BoundSpec,
    FeasibilityResult,
    GammaOpt,
    InclusionStats,
    compute_inclusion_stats,
    coverage_trial,
    feasibility_check,
    inclusion_loss,
    maximize_gamma,
    min_certifiable_mean,
    min_tasks_for_delta,
    p_bound,
)
from .errors import FeasibilityError, InputError, NumericalError, TrustBayesError
from .evaluation import (
    EvalConfig,
    EvalReport,
    emit_function_fixture,
    fixture_to_csv,
    monte_carlo_eval,
)
from .gp import (
    JITTER_LADDER,
    HyperParams,
    Interval,
    Posterior,
    fit_posterior,
    kernel_eval,
    kernel_matrix,
    neg_mll,
    posterior_interval,
    prior_interval,
)
from .tasks import (
    MetaDataset,
    Task,
    TaskData,
    eval_task,
    gen_meta_dataset,
    load_dataset,
    sample_task,
    save_dataset,
    task_rng,
)
from .training import (
    StepRecord,
    TrainConfig,
    TrainLog,
    fd_gradient,
    inclusion_penalty,
    mean_neg_mll,
    smoothed_inclusion,
    train_meta_prior,
    train_trust_bayes,
    trust_bayes_objective,
)

__version__ = "0.1.0"

__all__ = [
    "BoundSpec",
    "EvalConfig",
    "EvalReport",
    "FeasibilityError",
    "FeasibilityResult",
    "GammaOpt",
    "HyperParams",
    "InclusionStats",
    "InputError",
    "Interval",
    "JITTER_LADDER",
    "MetaDataset",
    "NumericalError",
    "Posterior",
    "StepRecord",
    "Task",
    "TaskData",
    "TrainConfig",
    "TrainLog",
    "TrustBayesError",
    "compute_inclusion_stats",
    "coverage_trial",
    "emit_function_fixture",
    "eval_task",
    "fd_gradient",
    "feasibility_check",
    "fit_posterior",
    "fixture_to_csv",
    "gen_meta_dataset",
    "inclusion_loss",
    "inclusion_penalty",
    "kernel_eval",
    "kernel_matrix",
    "load_dataset",
    "maximize_gamma",
    "mean_neg_mll",
    "min_certifiable_mean",
    "min_tasks_for_delta",
    "monte_carlo_eval",
    "neg_mll",
    "p_bound",
    "posterior_interval",
    "prior_interval",
    "sample_task",
    "save_dataset",
    "smoothed_inclusion",
    "task_rng",
    "train_meta_prior",
    "train_trust_bayes",
    "trust_bayes_objective",
    "__version__",
]
