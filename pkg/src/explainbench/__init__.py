"""Benchmark local feature-attribution explainers on synthetic tabular data."""

__version__ = "0.1.0"

from .distributions import (  # noqa: F401
    ConditionalQuery,
    GaussianSpec,
    MixtureSpec,
    MultinomialSpec,
    PointMass,
    condition,
    equicorrelation_sigma,
    log_density,
    mean,
    sample,
)
from .explainers import Attribution, ExplainerConfig, explain, explain_batch  # noqa: F401
from .labelers import (  # noqa: F401
    Dataset,
    LabelFunction,
    NormalizationStats,
    fit_normalization,
    generate_dataset,
    raw_label,
    raw_labels,
)
from .metrics import (  # noqa: F401
    CondExpectationEngine,
    MetricResult,
    cond_expectation,
    faithfulness,
    gt_shapley,
    infidelity,
    monotonicity,
    roar,
    shapley_values,
)
from .models import ModelSpec, fit, predict  # noqa: F401
from .simulation import (  # noqa: F401
    RealDataset,
    explanation_mse,
    jsd_marginals,
    load_real_csv,
    simulate_from_real,
)
