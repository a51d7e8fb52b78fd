"""Configure, execute, and aggregate benchmark experiments.

An experiment is a grid over (rho values x explainers x metrics) evaluated
for a fixed dataset family, label kind, and model, repeated over seeded
trials. Every stochastic stage draws from a stream derived solely from the
base seed and the stage's tokens, so rerunning a config reproduces the
summary byte for byte. Failures are isolated per (rho, explainer, metric)
cell; surviving cells are unaffected.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .distributions import (
    Distribution,
    GaussianSpec,
    MixtureSpec,
    MultinomialSpec,
    distribution_from_json_dict,
    equicorrelation_sigma,
)
from .explainers import ExplainerConfig, attribution_matrix, explain_batch
from .labelers import LabelFunction, fit_normalization, generate_dataset
from .metrics import (
    ALL_METRICS,
    CondExpectationEngine,
    MetricResult,
    evaluate_pointwise,
    evaluate_roar,
)
from .models import ModelSpec, fit
from .seeding import derive_seed

WORKERS_ENV = "EXPLAINBENCH_WORKERS"

DEFAULT_RHO = 0.0
ENGINE_EXPLAINERS = ("exact_shapley", "breakdown")


class ConfigError(ValueError):
    pass


def _normalize_explainers(entries) -> list[dict]:
    normalized = []
    for entry in entries:
        if isinstance(entry, str):
            entry = {"id": entry}
        entry = dict(entry)
        entry.setdefault("kind", "native")
        if "id" not in entry:
            raise ConfigError("explainer entries need an 'id'")
        normalized.append(entry)
    if not any(e["id"] == "random" for e in normalized):
        normalized.append({"id": "random", "kind": "native"})
    ids = [e["id"] for e in normalized]
    if len(ids) != len(set(ids)):
        raise ConfigError("explainer ids must be unique")
    return normalized


@dataclass
class ExperimentConfig:
    dataset_family: str = "gaussian"
    label_kind: str = "linear"
    dim: int = 5
    rho_values: tuple[float, ...] = (DEFAULT_RHO,)
    train_size: int = 1000
    test_size: int = 100
    model: ModelSpec = field(default_factory=lambda: ModelSpec("linear"))
    explainers: list = field(default_factory=lambda: [{"id": "random", "kind": "native"}])
    metrics: tuple[str, ...] = ("faithfulness",)
    mode: str = "observational"
    trials: int = 10
    base_seed: int = 0
    mc_samples: int = 1000
    normalization_count: int = 1_000_000
    label_weights: list | None = None
    distribution_override: dict | None = None
    out_dir: str = "results"

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if isinstance(self.rho_values, (int, float)):
            self.rho_values = (float(self.rho_values),)
        self.rho_values = tuple(float(r) for r in self.rho_values)
        self.explainers = _normalize_explainers(self.explainers)
        self.metrics = tuple(self.metrics)
        for metric in self.metrics:
            if metric not in ALL_METRICS:
                raise ConfigError(f"unknown metric {metric!r}")
        if self.mode not in ("observational", "interventional"):
            raise ConfigError("mode must be observational or interventional")
        if not isinstance(self.model, ModelSpec):
            self.model = ModelSpec.from_json_dict(self.model)

    def to_json_dict(self) -> dict:
        return {
            "dataset_family": self.dataset_family,
            "label_kind": self.label_kind,
            "dim": self.dim,
            "rho_values": list(self.rho_values),
            "train_size": self.train_size,
            "test_size": self.test_size,
            "model": self.model.to_json_dict(),
            "explainers": self.explainers,
            "metrics": list(self.metrics),
            "mode": self.mode,
            "trials": self.trials,
            "base_seed": self.base_seed,
            "mc_samples": self.mc_samples,
            "normalization_count": self.normalization_count,
            "label_weights": self.label_weights,
            "distribution_override": self.distribution_override,
            "out_dir": self.out_dir,
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "ExperimentConfig":
        payload = dict(payload)
        if "rho_values" in payload:
            payload["rho_values"] = tuple(payload["rho_values"])
        return cls(**payload)

    def fingerprint(self) -> str:
        canonical = json.dumps(self.to_json_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()


def build_distribution(config: ExperimentConfig, rho: float) -> Distribution:
    if config.distribution_override is not None:
        return distribution_from_json_dict(config.distribution_override)
    if config.dataset_family == "gaussian":
        return GaussianSpec(np.zeros(config.dim), equicorrelation_sigma(config.dim, rho))
    if config.dataset_family == "mixture":
        sigma = equicorrelation_sigma(config.dim, rho)
        return MixtureSpec(
            [
                (0.5, GaussianSpec(-np.ones(config.dim), sigma)),
                (0.5, GaussianSpec(np.ones(config.dim), sigma)),
            ]
        )
    if config.dataset_family == "multinomial":
        return MultinomialSpec(3 * config.dim, np.full(config.dim, 1.0 / config.dim))
    raise ConfigError(f"unknown dataset family {config.dataset_family!r}")


@dataclass(eq=False)
class RunResult:
    config: dict
    fingerprint: str
    rows: list  # aggregated cells, one per (rho, explainer, metric)
    trial_details: list  # per (rho, trial, explainer, metric) MetricResult dicts
    failures: list
    seconds: dict
    version: str = __version__

    def to_json_dict(self) -> dict:
        return {
            "config": self.config,
            "fingerprint": self.fingerprint,
            "rows": self.rows,
            "trial_details": self.trial_details,
            "failures": self.failures,
            "seconds": self.seconds,
            "version": self.version,
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "RunResult":
        return cls(
            payload["config"],
            payload["fingerprint"],
            payload["rows"],
            payload["trial_details"],
            payload["failures"],
            payload["seconds"],
            payload["version"],
        )


def _native_attributions(entry, config, engine_seed, shared_engine, model, dist, features):
    cfg = ExplainerConfig(
        entry["id"],
        expectation_mode=config.mode,
        mc_samples=config.mc_samples,
        coalition_samples=entry.get("coalition_samples"),
        perturbation_count=entry.get("perturbation_count", 5000),
        kernel_width=entry.get("kernel_width"),
        seed=engine_seed if entry["id"] in ENGINE_EXPLAINERS else entry["seed"],
    )
    engine = shared_engine if entry["id"] in ENGINE_EXPLAINERS else None
    return attribution_matrix(explain_batch(cfg, model, dist, features, engine=engine))


def _bridge_attributions(entry, model, train, test):
    from explainbench_bridge.host import invoke_bridge_explainer

    return invoke_bridge_explainer(
        command=entry["command"],
        train_features=train.features,
        train_labels=train.labels,
        test_features=test.features,
        predict_fn=lambda rows: model.predict(rows),
        options=entry.get("options", {}),
        timeout=entry.get("timeout", 600.0),
    )


def _run_trial(config: ExperimentConfig, rho: float, trial: int, dist, lf, stats):
    trial_seed = derive_seed(config.base_seed, "trial", rho, trial)
    timings = {}
    t0 = time.perf_counter()
    train = generate_dataset(dist, lf, config.train_size, stats, derive_seed(trial_seed, "train"))
    test = generate_dataset(dist, lf, config.test_size, stats, derive_seed(trial_seed, "test"))
    timings["generate"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    model_spec = config.model
    if model_spec.kind == "mlp":
        model_spec = ModelSpec(
            "mlp",
            hidden_sizes=model_spec.hidden_sizes,
            learning_rate=model_spec.learning_rate,
            epochs=model_spec.epochs,
            batch_size=model_spec.batch_size,
            seed=derive_seed(trial_seed, "model"),
        )
    model = fit(model_spec, train)
    timings["fit"] = time.perf_counter() - t0

    engine_seed = derive_seed(trial_seed, "engine")
    engine = CondExpectationEngine(config.mode, config.mc_samples, engine_seed)
    needs_train_attrs = "roar" in config.metrics

    attributions = {}
    failures = []
    for entry in config.explainers:
        entry = dict(entry)
        entry["seed"] = derive_seed(trial_seed, "explainer", entry["id"])
        t0 = time.perf_counter()
        try:
            if entry["kind"] == "bridge":
                test_w = _bridge_attributions(entry, model, train, test)
                train_w = (
                    _bridge_attributions(entry, model, train, train) if needs_train_attrs else None
                )
            else:
                test_w = _native_attributions(
                    entry, config, engine_seed, engine, model, dist, test.features
                )
                train_w = (
                    _native_attributions(
                        entry, config, engine_seed, engine, model, dist, train.features
                    )
                    if needs_train_attrs
                    else None
                )
            attributions[entry["id"]] = (test_w, train_w)
        except Exception as exc:
            failures.append(
                {"rho": rho, "trial": trial, "explainer": entry["id"], "error": repr(exc)}
            )
        timings[f"explain:{entry['id']}"] = time.perf_counter() - t0

    cells = {}
    for metric in config.metrics:
        for entry in config.explainers:
            name = entry["id"]
            if name not in attributions:
                continue
            test_w, train_w = attributions[name]
            t0 = time.perf_counter()
            try:
                if metric == "roar":
                    result = evaluate_roar(engine, model_spec, train, test, train_w, test_w)
                else:
                    result = evaluate_pointwise(
                        metric, engine, model, dist, test.features, test_w
                    )
                cells[(name, metric)] = result
            except Exception as exc:
                failures.append(
                    {
                        "rho": rho,
                        "trial": trial,
                        "explainer": name,
                        "metric": metric,
                        "error": repr(exc),
                    }
                )
            timings[f"metric:{name}:{metric}"] = time.perf_counter() - t0
    return cells, failures, timings


def run_experiment(config: ExperimentConfig) -> RunResult:
    """Execute the full grid and aggregate per-trial means into summary rows."""
    all_rows = []
    trial_details = []
    failures = []
    seconds: dict = {"trials": {}}
    started = time.perf_counter()

    workers = int(os.environ.get(WORKERS_ENV, "1"))
    for rho in config.rho_values:
        dist = build_distribution(config, rho)
        lf = LabelFunction(config.label_kind, config.dim, config.label_weights)
        stats = fit_normalization(
            lf,
            dist,
            config.normalization_count,
            derive_seed(config.base_seed, "normalization", rho),
        )

        def one_trial(trial, _rho=rho, _dist=dist, _lf=lf, _stats=stats):
            return _run_trial(config, _rho, trial, _dist, _lf, _stats)

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                outcomes = list(pool.map(one_trial, range(config.trials)))
        else:
            outcomes = [one_trial(t) for t in range(config.trials)]

        per_cell: dict = {}
        for trial, (cells, trial_failures, timings) in enumerate(outcomes):
            failures.extend(trial_failures)
            seconds["trials"][f"rho={rho}/trial={trial}"] = timings
            for (explainer, metric), result in cells.items():
                per_cell.setdefault((explainer, metric), {})[trial] = result
                trial_details.append(
                    {
                        "rho": rho,
                        "trial": trial,
                        "explainer": explainer,
                        "metric": metric,
                        "result": result.to_json_dict(),
                    }
                )

        for (explainer, metric), by_trial in sorted(per_cell.items()):
            means = np.array([by_trial[t].mean for t in sorted(by_trial)])
            std = float(means.std(ddof=1)) if means.size > 1 else 0.0
            all_rows.append(
                {
                    "dataset": config.dataset_family,
                    "label_kind": config.label_kind,
                    "rho": rho,
                    "model": config.model.kind,
                    "explainer": explainer,
                    "metric": metric,
                    "mode": config.mode,
                    "mean": float(means.mean()),
                    "std": std,
                    "n_missing": int(sum(by_trial[t].n_missing for t in by_trial)),
                    "n_trials": int(means.size),
                }
            )

    seconds["total"] = time.perf_counter() - started
    all_rows.sort(key=lambda r: (r["rho"], r["explainer"], r["metric"]))
    return RunResult(
        config.to_json_dict(), config.fingerprint(), all_rows, trial_details, failures, seconds
    )


SUMMARY_COLUMNS = (
    "dataset",
    "label_kind",
    "rho",
    "model",
    "explainer",
    "metric",
    "mode",
    "mean",
    "std",
    "n_missing",
)


def _format_cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def emit_results(result: RunResult, out_dir, formats=("csv", "json", "plot")) -> dict:
    """Write summary CSV, full JSON, and plot-ready sweep data.

    The CSV contains only deterministic fields, so identical configs rerun
    with the same base seed produce byte-identical files; wall-clock timings
    live in the JSON document.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    if "csv" in formats:
        lines = [",".join(SUMMARY_COLUMNS)]
        for row in result.rows:
            lines.append(",".join(_format_cell(row[c]) for c in SUMMARY_COLUMNS))
        path = out / "summary.csv"
        path.write_text("\n".join(lines) + "\n")
        paths["csv"] = path
    if "json" in formats:
        path = out / "result.json"
        path.write_text(json.dumps(result.to_json_dict(), indent=2) + "\n")
        paths["json"] = path
    if "plot" in formats:
        series: dict = {}
        for row in result.rows:
            key = f"{row['explainer']}/{row['metric']}"
            series.setdefault(key, []).append(
                {"rho": row["rho"], "mean": row["mean"], "std": row["std"]}
            )
        for points in series.values():
            points.sort(key=lambda p: p["rho"])
        path = out / "plot_data.json"
        path.write_text(json.dumps(series, indent=2, sort_keys=True) + "\n")
        paths["plot"] = path
    return paths
