"""Native feature-attribution explainers.

Five explainers spanning the usual method families:

* ``random``        -- standard-normal weights, the calibration baseline
* ``exact_shapley`` -- full 2^D enumeration with engine-backed conditional
                       expectations (observational or interventional)
* ``kernel_shap``   -- Shapley-kernel weighted least squares over coalitions,
                       absent features imputed at their marginal expectation
* ``lime``          -- locally weighted ridge surrogate around the datapoint
* ``breakdown``     -- greedy sequential marginal contributions

All explainers are deterministic functions of (config, model, dist, x,
datapoint index); distinct datapoints use independently derived streams, so
batches may be explained in parallel.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .distributions import Distribution
from .metrics import CondExpectationEngine, shapley_values
from .seeding import derive_rng

EXPLAINER_IDS = ("random", "exact_shapley", "kernel_shap", "lime", "breakdown")

FULL_ENUMERATION_CAP = 4096


class ExplainerError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Attribution:
    """Per-datapoint attribution weights, one entry per feature."""

    weights: np.ndarray
    explainer_id: str
    datapoint_index: int
    baseline: float | None = None

    def __post_init__(self):
        object.__setattr__(
            self, "weights", np.asarray(self.weights, dtype=np.float64).reshape(-1)
        )
        if not np.all(np.isfinite(self.weights)):
            raise ExplainerError("attribution weights must be finite")


@dataclass(frozen=True)
class ExplainerConfig:
    id: str
    expectation_mode: str = "observational"
    mc_samples: int = 1000
    coalition_samples: int | None = None
    perturbation_count: int = 5000
    kernel_width: float | None = None
    lime_ridge: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.id not in EXPLAINER_IDS:
            raise ValueError(f"unknown explainer {self.id!r}")
        if self.mc_samples < 1 or self.perturbation_count < 1:
            raise ValueError("sample counts must be >= 1")
        if self.coalition_samples is not None and self.coalition_samples < 1:
            raise ValueError("coalition_samples must be >= 1")
        if self.kernel_width is not None and self.kernel_width <= 0:
            raise ValueError("kernel width must be positive")

    def make_engine(self, mode: str | None = None) -> CondExpectationEngine:
        return CondExpectationEngine(
            mode or self.expectation_mode, max(self.mc_samples, 100), self.seed
        )


def explain_random(cfg, model, dist, x, index: int = 0) -> Attribution:
    """Standard-normal weights; ignores the model and the datapoint."""
    rng = derive_rng(cfg.seed, "random", index)
    return Attribution(rng.standard_normal(dist.dim), "random", index)


def explain_exact_shapley(
    cfg, model, dist, x, index: int = 0, engine: CondExpectationEngine | None = None
) -> Attribution:
    """Exact Shapley weights via full subset enumeration (D <= 20)."""
    engine = engine or cfg.make_engine()
    try:
        vec = shapley_values(engine, model, dist, x)
    except ValueError as exc:
        raise ExplainerError(str(exc)) from exc
    baseline = engine.expectation(model, dist, np.asarray(x, dtype=np.float64), ())
    return Attribution(vec.values, "exact_shapley", index, baseline)


def _shapley_kernel_weight(dim: int, size: int) -> float:
    from math import comb

    return (dim - 1) / (comb(dim, size) * size * (dim - size))


def _enumerate_coalitions(dim: int):
    import itertools

    for size in range(1, dim):
        for subset in itertools.combinations(range(dim), size):
            yield subset


def explain_kernel_shap(cfg, model, dist, x, index: int = 0) -> Attribution:
    """Shapley-kernel weighted least squares with the efficiency constraint.

    The value of a coalition S is the model at x with the features outside
    S imputed at their marginal expectation (the independence reading), so
    on a linear model the solution reproduces interventional Shapley values
    exactly.
    """
    x = np.asarray(x, dtype=np.float64)
    dim = dist.dim
    engine = cfg.make_engine("interventional")
    v_empty = engine.expectation(model, dist, x, ())
    v_full = engine.expectation(model, dist, x, tuple(range(dim)))
    if dim == 1:
        return Attribution([v_full - v_empty], "kernel_shap", index, v_empty)

    budget = cfg.coalition_samples
    n_proper = 2**dim - 2
    if budget is None:
        budget = n_proper if n_proper <= FULL_ENUMERATION_CAP else FULL_ENUMERATION_CAP
    if budget < dim + 2 and budget < n_proper:
        raise ExplainerError("coalition_samples must be >= D + 2 for the regression")

    if n_proper <= budget:
        coalitions = list(_enumerate_coalitions(dim))
        kernel = np.array([_shapley_kernel_weight(dim, len(s)) for s in coalitions])
    else:
        sizes = np.arange(1, dim)
        size_p = (dim - 1) / (sizes * (dim - sizes))
        size_p = size_p / size_p.sum()
        rng = derive_rng(cfg.seed, "kshap", index)
        counts: dict[tuple, int] = {}
        for _ in range(budget):
            size = int(rng.choice(sizes, p=size_p))
            subset = tuple(sorted(rng.choice(dim, size=size, replace=False)))
            counts[subset] = counts.get(subset, 0) + 1
        coalitions = sorted(counts, key=lambda s: (len(s), s))
        kernel = np.array([counts[s] for s in coalitions], dtype=np.float64)

    z = np.zeros((len(coalitions), dim))
    for row, subset in enumerate(coalitions):
        z[row, list(subset)] = 1.0
    y = np.array(
        [engine.expectation(model, dist, x, s) for s in coalitions]
    ) - v_empty

    # constrained WLS via the KKT system: minimize the kernel-weighted
    # residual subject to sum(phi) = f(x) - v_empty
    zw = z.T * kernel
    kkt = np.zeros((dim + 1, dim + 1))
    kkt[:dim, :dim] = 2.0 * zw @ z
    kkt[:dim, dim] = 1.0
    kkt[dim, :dim] = 1.0
    rhs = np.concatenate([2.0 * zw @ y, [v_full - v_empty]])
    try:
        solution = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError as exc:
        raise ExplainerError(
            "singular kernel SHAP regression; increase coalition_samples"
        ) from exc
    return Attribution(solution[:dim], "kernel_shap", index, v_empty)


def lime_surrogate(cfg, model, dist, x, index: int = 0) -> tuple[np.ndarray, float]:
    """Fit the locally weighted ridge surrogate around x.

    Returns (coefficients, intercept) of the surrogate in offset
    coordinates; on a globally linear model the coefficients recover the
    model's own, up to ridge shrinkage.
    """
    x = np.asarray(x, dtype=np.float64)
    dim = dist.dim
    if cfg.perturbation_count < 10 * dim:
        raise ExplainerError("perturbation_count must be >= 10 * D")
    width = cfg.kernel_width if cfg.kernel_width is not None else 0.75 * np.sqrt(dim)
    stds = np.sqrt(dist.marginal_variance())
    stds = np.where(stds > 0, stds, 1.0)
    rng = derive_rng(cfg.seed, "lime", index)
    offsets = rng.standard_normal((cfg.perturbation_count, dim)) * (width * stds)
    preds = model.predict(x + offsets)
    dist_sq = ((offsets / stds) ** 2).sum(axis=1)
    sample_w = np.exp(-dist_sq / width**2)

    design = np.column_stack([offsets, np.ones(cfg.perturbation_count)])
    weighted = design.T * sample_w
    gram = weighted @ design
    penalty = cfg.lime_ridge * np.eye(dim + 1)
    penalty[dim, dim] = 0.0
    beta = np.linalg.solve(gram + penalty, weighted @ preds)
    return beta[:dim], float(beta[dim])


def explain_lime(cfg, model, dist, x, index: int = 0) -> Attribution:
    """Local-surrogate attribution: coefficient times deviation from the mean.

    The surrogate slope alone is nearly constant across datapoints, so the
    reported weight for feature i is its surrogate contribution
    ``coef_i * (x_i - E[x_i])`` relative to the background; the baseline is
    the surrogate evaluated at the background point.
    """
    x = np.asarray(x, dtype=np.float64)
    coef, intercept = lime_surrogate(cfg, model, dist, x, index)
    weights = coef * (x - dist.mean())
    return Attribution(weights, "lime", index, float(intercept - weights.sum()))


def explain_breakdown(
    cfg, model, dist, x, index: int = 0, engine: CondExpectationEngine | None = None
) -> Attribution:
    """Greedy sequential contributions, largest effect first.

    At each step the unfixed feature whose fixing most changes the expected
    model output is fixed at its datapoint value; its contribution is that
    sequential change. Contributions telescope to f(x) minus the baseline.
    """
    x = np.asarray(x, dtype=np.float64)
    dim = dist.dim
    engine = engine or cfg.make_engine()
    contributions = np.zeros(dim)
    fixed: tuple[int, ...] = ()
    current = engine.expectation(model, dist, x, fixed)
    unfixed = list(range(dim))
    baseline = current
    for _ in range(dim):
        candidates = np.array(
            [
                engine.expectation(model, dist, x, tuple(sorted(fixed + (j,))))
                for j in unfixed
            ]
        )
        pick = int(np.argmax(np.abs(candidates - current)))
        j = unfixed.pop(pick)
        contributions[j] = candidates[pick] - current
        current = candidates[pick]
        fixed = tuple(sorted(fixed + (j,)))
    return Attribution(contributions, "breakdown", index, baseline)


_DISPATCH = {
    "random": explain_random,
    "exact_shapley": explain_exact_shapley,
    "kernel_shap": explain_kernel_shap,
    "lime": explain_lime,
    "breakdown": explain_breakdown,
}


def explain(cfg: ExplainerConfig, model, dist: Distribution, x, index: int = 0, **kwargs) -> Attribution:
    return _DISPATCH[cfg.id](cfg, model, dist, x, index, **kwargs)


def explain_batch(
    cfg: ExplainerConfig,
    model,
    dist: Distribution,
    features: np.ndarray,
    engine: CondExpectationEngine | None = None,
) -> list[Attribution]:
    """Explain every row; row i uses streams derived from (cfg.seed, i)."""
    features = np.asarray(features, dtype=np.float64)
    out = []
    kwargs = {}
    if cfg.id in ("exact_shapley", "breakdown") and engine is not None:
        kwargs["engine"] = engine
    for i in range(features.shape[0]):
        out.append(explain(cfg, model, dist, features[i], index=i, **kwargs))
    return out


def attribution_matrix(batch: list[Attribution]) -> np.ndarray:
    return np.vstack([a.weights for a in batch])


def save_attributions_csv(batch: list[Attribution], path) -> None:
    rows = ["datapoint_index,feature_index,weight"]
    for attr in batch:
        for j, w in enumerate(attr.weights):
            rows.append(f"{attr.datapoint_index},{j},{w:.17g}")
    Path(path).write_text("\n".join(rows) + "\n")


def save_attributions_json(batch: list[Attribution], path) -> None:
    payload = [
        {
            "datapoint_index": a.datapoint_index,
            "explainer_id": a.explainer_id,
            "weights": a.weights.tolist(),
            "baseline": a.baseline,
        }
        for a in batch
    ]
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")
