"""Attribution evaluation metrics backed by exact conditional distributions.

The central object is :class:`CondExpectationEngine`, which estimates
``E[f(x') | x'_S = x_S]`` in one of two modes:

* ``observational`` -- Monte Carlo over the exact conditional distribution
  of the unfixed coordinates, merged with the fixed values. The sample
  stream for every ``(x, S)`` pair is derived deterministically from the
  engine seed, so two engines with the same seed produce bit-identical
  estimates with or without caching.
* ``interventional`` -- the unfixed coordinates are imputed by their
  unconditional expectation and the model is evaluated at that single
  point. This is exact for linear models and mirrors the independence
  assumption of marginal-expectation Shapley estimators.

On top of the engine sit five metrics: faithfulness, monotonicity,
ground-truth Shapley correlation, remove-and-retrain (ROAR), and
infidelity.
"""

from __future__ import annotations

import itertools
import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .distributions import ConditionalQuery, Distribution, condition
from .labelers import Dataset
from .models import ModelSpec, fit
from .seeding import derive_rng

MODES = ("observational", "interventional")

POINTWISE_METRICS = ("faithfulness", "monotonicity", "gt_shapley", "infidelity")
ALL_METRICS = POINTWISE_METRICS + ("roar",)

METRIC_DIRECTIONS = {
    "faithfulness": "higher_better",
    "monotonicity": "higher_better",
    "gt_shapley": "higher_better",
    "roar": "higher_better",
    "infidelity": "lower_better",
}

DEFAULT_INFIDELITY_SIGMA = 0.1
DEFAULT_ROAR_CLIP = 2.0
MAX_EXACT_SHAPLEY_DIM = 20


def pearson(u: np.ndarray, v: np.ndarray) -> float:
    """Pearson correlation; NaN when either vector is constant."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    du = u - u.mean()
    dv = v - v.mean()
    su = math.sqrt(float(du @ du))
    sv = math.sqrt(float(dv @ dv))
    if su == 0.0 or sv == 0.0:
        return float("nan")
    return float(np.clip(float(du @ dv) / (su * sv), -1.0, 1.0))


def importance_ranking(weights: np.ndarray) -> np.ndarray:
    """Feature indices by descending |weight|, ties broken by ascending index."""
    w = np.asarray(weights, dtype=np.float64)
    return np.lexsort((np.arange(w.shape[0]), -np.abs(w)))


@dataclass
class CondExpectationEngine:
    mode: str = "observational"
    mc_samples: int = 1000
    seed: int = 0
    cache: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.mc_samples < 100:
            raise ValueError("mc_samples must be >= 100")

    def expectation(self, model, dist: Distribution, x: np.ndarray, subset) -> float:
        """E[f(x') | x'_S = x_S] for S = subset, per the engine mode."""
        x = np.asarray(x, dtype=np.float64)
        dim = dist.dim
        s = tuple(sorted(int(i) for i in subset))
        if len(s) == dim:
            return float(model.predict(x[None, :])[0])
        key = (id(model), id(dist), s, x.tobytes() if s else b"")
        with self._lock:
            if key in self.cache:
                return self.cache[key]
        value = self._compute(model, dist, x, s)
        with self._lock:
            self.cache.setdefault(key, value)
            return self.cache[key]

    def _compute(self, model, dist: Distribution, x: np.ndarray, s: tuple) -> float:
        if self.mode == "interventional":
            imputed = dist.mean()
            if s:
                imputed = imputed.copy()
                imputed[list(s)] = x[list(s)]
            return float(model.predict(imputed[None, :])[0])
        if not s:
            rng = derive_rng(self.seed, "uncond")
            rows = dist.sample(self.mc_samples, rng)
            return float(model.predict(rows).mean())
        fixed = np.asarray(s, dtype=np.intp)
        remaining = np.setdiff1d(np.arange(dist.dim), fixed)
        cond = condition(dist, ConditionalQuery(fixed, x[fixed]))
        rng = derive_rng(self.seed, "cond", s, x[fixed])
        draws = cond.sample(self.mc_samples, rng)
        rows = np.empty((self.mc_samples, dist.dim))
        rows[:, fixed] = x[fixed]
        rows[:, remaining] = draws
        return float(model.predict(rows).mean())


def cond_expectation(engine: CondExpectationEngine, model, dist, x, subset) -> float:
    return engine.expectation(model, dist, x, subset)


@dataclass(frozen=True, eq=False)
class ShapleyVector:
    values: np.ndarray
    mc_samples: int
    seed: int
    efficiency_residual: float


def shapley_values(
    engine: CondExpectationEngine, model, dist: Distribution, x: np.ndarray
) -> ShapleyVector:
    """Ground-truth Shapley values by full subset enumeration.

    Subsets are visited by increasing size, lexicographically within each
    size; every subset's conditional expectation comes from the engine, so
    the values are shared bit-for-bit with any explainer driven by an
    engine with the same seed.
    """
    dim = dist.dim
    if dim > MAX_EXACT_SHAPLEY_DIM:
        raise ValueError(
            f"exact Shapley enumeration needs 2^D expectations; D={dim} > "
            f"{MAX_EXACT_SHAPLEY_DIM}. Reduce the dimension or use a sampled explainer."
        )
    x = np.asarray(x, dtype=np.float64)
    values = {}
    for size in range(dim + 1):
        for subset in itertools.combinations(range(dim), size):
            values[subset] = engine.expectation(model, dist, x, subset)

    fact = [math.factorial(k) for k in range(dim + 1)]
    coeff = [fact[s] * fact[dim - s - 1] / fact[dim] for s in range(dim)]
    shap = np.zeros(dim)
    for subset, base in values.items():
        for i in range(dim):
            if i in subset:
                continue
            with_i = tuple(sorted(subset + (i,)))
            shap[i] += coeff[len(subset)] * (values[with_i] - base)

    full = values[tuple(range(dim))]
    empty = values[()]
    residual = float(abs(shap.sum() - (full - empty)))
    return ShapleyVector(shap, engine.mc_samples, engine.seed, residual)


# ----------------------------------------------------------------- the metrics


def faithfulness(
    engine: CondExpectationEngine, model, dist: Distribution, x, weights
) -> float:
    """Correlation between attribution weights and single-feature effects.

    The effect of feature i is the signed change in model output when only
    feature i is resampled from its conditional distribution:
    ``f(x) - E[f(x') | x'_j = x_j for j != i]``. An attribution that tracks
    these per-feature effects scores 1.
    """
    x = np.asarray(x, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    dim = dist.dim
    fx = float(model.predict(x[None, :])[0])
    drops = np.array(
        [
            fx - engine.expectation(model, dist, x, tuple(j for j in range(dim) if j != i))
            for i in range(dim)
        ]
    )
    return pearson(weights, drops)


def monotonicity(
    engine: CondExpectationEngine, model, dist: Distribution, x, weights
) -> tuple[float, np.ndarray]:
    """Fraction of adjacent importance-ranked marginal deltas with
    non-decreasing magnitude; returns (value, delta trace)."""
    x = np.asarray(x, dtype=np.float64)
    dim = dist.dim
    ranking = importance_ranking(weights)
    expectations = [engine.expectation(model, dist, x, ())]
    for i in range(1, dim + 1):
        subset = tuple(sorted(ranking[:i]))
        expectations.append(engine.expectation(model, dist, x, subset))
    deltas = np.diff(np.asarray(expectations))
    hits = np.abs(deltas[:-1]) <= np.abs(deltas[1:])
    return float(hits.mean()), deltas


def gt_shapley(
    engine: CondExpectationEngine, model, dist: Distribution, x, weights
) -> tuple[float, ShapleyVector]:
    """Pearson correlation between weights and exact Shapley values."""
    vec = shapley_values(engine, model, dist, x)
    return pearson(np.asarray(weights, dtype=np.float64), vec.values), vec


def infidelity(
    engine: CondExpectationEngine,
    model,
    dist: Distribution,
    x,
    weights,
    sigma: float = DEFAULT_INFIDELITY_SIGMA,
) -> float:
    """Expected squared gap between the attribution-predicted and actual
    output change under Gaussian input perturbations; lower is better."""
    x = np.asarray(x, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    scale = sigma * np.sqrt(dist.marginal_variance())
    rng = derive_rng(engine.seed, "infidelity", x)
    noise = rng.standard_normal((engine.mc_samples, dist.dim)) * scale
    fx = float(model.predict(x[None, :])[0])
    f_shift = model.predict(x[None, :] - noise)
    gap = noise @ weights - (fx - f_shift)
    return float(np.mean(gap**2))


def ablated_features(
    dist: Distribution, features: np.ndarray, weight_rows: np.ndarray, k: int, mode: str
) -> np.ndarray:
    """Replace each row's top-k features with their expectation given the rest.

    Observational mode uses the exact conditional mean given the kept
    coordinates; interventional mode uses the unconditional mean.
    """
    if k == 0:
        return features.copy()
    dim = features.shape[1]
    out = features.copy()
    base_mean = dist.mean()
    for row in range(features.shape[0]):
        removed = importance_ranking(weight_rows[row])[:k]
        kept = np.setdiff1d(np.arange(dim), removed)
        if mode == "interventional" or kept.size == 0:
            out[row, removed] = base_mean[removed]
        else:
            cond = condition(dist, ConditionalQuery(kept, features[row, kept]))
            out[row, removed] = cond.mean()
    return out


def roar(
    engine: CondExpectationEngine,
    model_spec: ModelSpec,
    train: Dataset,
    test: Dataset,
    train_weights: np.ndarray,
    test_weights: np.ndarray,
    mse_clip: float = DEFAULT_ROAR_CLIP,
) -> tuple[float, np.ndarray]:
    """Remove-and-retrain degradation, scalarized as a normalized AUC.

    For k = 0..D the top-k features of every train and test row (by that
    row's own ranking) are replaced by their expected value given the
    remaining features, the model is retrained from spec on the ablated
    train set, and the test MSE e_k is recorded. Returns
    ``(mean_{k=1..D} min(e_k, clip) / clip, e-curve)`` so faster
    degradation scores higher; the curve has length D + 1.
    """
    dim = train.dim
    if train_weights.shape != train.features.shape or test_weights.shape != test.features.shape:
        raise ValueError("attributions must align with the train/test rows")
    curve = np.empty(dim + 1)
    for k in range(dim + 1):
        try:
            ablated_train = train.replace_features(
                ablated_features(train.distribution, train.features, train_weights, k, engine.mode)
            )
            model_k = fit(model_spec, ablated_train)
            ablated_test = ablated_features(
                test.distribution, test.features, test_weights, k, engine.mode
            )
            preds = model_k.predict(ablated_test)
        except Exception as exc:
            raise RuntimeError(f"ROAR retraining failed at k={k}: {exc}") from exc
        curve[k] = float(np.mean((preds - test.labels) ** 2))
    auc = float(np.mean(np.minimum(curve[1:], mse_clip)) / mse_clip)
    return auc, curve


# -------------------------------------------------------------------- results


@dataclass(eq=False)
class MetricResult:
    metric_id: str
    per_point: np.ndarray
    mean: float
    std: float
    direction: str
    n_missing: int
    trace: list | None = None

    @classmethod
    def from_per_point(cls, metric_id, values, trace=None) -> "MetricResult":
        values = np.asarray(values, dtype=np.float64)
        finite = values[np.isfinite(values)]
        mean = float(finite.mean()) if finite.size else float("nan")
        std = float(finite.std()) if finite.size else float("nan")
        return cls(
            metric_id,
            values,
            mean,
            std,
            METRIC_DIRECTIONS[metric_id],
            int(values.shape[0] - finite.size),
            trace,
        )

    def to_json_dict(self) -> dict:
        return {
            "metric_id": self.metric_id,
            "per_point": [None if not np.isfinite(v) else v for v in self.per_point],
            "mean": self.mean,
            "std": self.std,
            "direction": self.direction,
            "n_missing": self.n_missing,
            "trace": self.trace,
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "MetricResult":
        per_point = np.array(
            [np.nan if v is None else v for v in payload["per_point"]], dtype=np.float64
        )
        return cls(
            payload["metric_id"],
            per_point,
            payload["mean"],
            payload["std"],
            payload["direction"],
            payload["n_missing"],
            payload.get("trace"),
        )


def evaluate_pointwise(
    metric_id: str,
    engine: CondExpectationEngine,
    model,
    dist: Distribution,
    features: np.ndarray,
    weight_rows: np.ndarray,
    infidelity_sigma: float = DEFAULT_INFIDELITY_SIGMA,
) -> MetricResult:
    """Run one pointwise metric over a matrix of test points."""
    if metric_id not in POINTWISE_METRICS:
        raise ValueError(f"unknown pointwise metric {metric_id!r}")
    values = np.empty(features.shape[0])
    traces = [] if metric_id == "monotonicity" else None
    for row in range(features.shape[0]):
        x = features[row]
        w = weight_rows[row]
        if metric_id == "faithfulness":
            values[row] = faithfulness(engine, model, dist, x, w)
        elif metric_id == "monotonicity":
            values[row], deltas = monotonicity(engine, model, dist, x, w)
            traces.append(deltas.tolist())
        elif metric_id == "gt_shapley":
            values[row], _ = gt_shapley(engine, model, dist, x, w)
        else:
            values[row] = infidelity(engine, model, dist, x, w, sigma=infidelity_sigma)
    return MetricResult.from_per_point(metric_id, values, traces)


def evaluate_roar(
    engine: CondExpectationEngine,
    model_spec: ModelSpec,
    train: Dataset,
    test: Dataset,
    train_weights: np.ndarray,
    test_weights: np.ndarray,
    mse_clip: float = DEFAULT_ROAR_CLIP,
) -> MetricResult:
    auc, curve = roar(engine, model_spec, train, test, train_weights, test_weights, mse_clip)
    return MetricResult.from_per_point("roar", [auc], trace=curve.tolist())
