"""Turn a real tabular dataset into a synthetic Gaussian twin.

The twin keeps the real data's correlation structure (empirical covariance
of the standardized features) and approximates its labels with a k-nearest
neighbor lookup into the real rows. Because the twin's feature law is an
explicit Gaussian, every metric that needs exact conditionals runs on it
unchanged. Fit quality is quantified with histogram Jensen-Shannon
divergence and between-explanation mean squared error.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .distributions import GaussianSpec, InvalidParameterError
from .labelers import Dataset, NormalizationStats
from .seeding import derive_rng, derive_seed

JSD_BINS = 120
JSD_RANGE = (-6.0, 6.0)
COVARIANCE_RIDGE = 1e-8


class SimulationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RealDataset:
    features: np.ndarray
    labels: np.ndarray
    column_names: tuple[str, ...]
    n_dropped: int = 0

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.float64)
        if x.ndim != 2 or y.shape != (x.shape[0],):
            raise SimulationError("features must be (n, D) with matching labels")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise SimulationError("real data must be free of missing values")
        if x.shape[0] < x.shape[1] + 1:
            raise SimulationError("need at least D + 1 rows to fit a covariance")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)


def load_real_csv(path, label_column: str | int = -1) -> RealDataset:
    """Read a delimited text file with a header row.

    The delimiter (semicolon or comma) is auto-detected; rows containing
    non-numeric or missing entries are dropped and counted.
    """
    text = Path(path).read_text().strip()
    lines = text.splitlines()
    delimiter = ";" if lines[0].count(";") >= lines[0].count(",") else ","
    header = [c.strip().strip('"') for c in lines[0].split(delimiter)]
    rows = []
    dropped = 0
    for line in lines[1:]:
        cells = line.split(delimiter)
        if len(cells) != len(header):
            dropped += 1
            continue
        try:
            rows.append([float(c) for c in cells])
        except ValueError:
            dropped += 1
    data = np.asarray(rows, dtype=np.float64)
    if np.any(~np.isfinite(data)):
        keep = np.all(np.isfinite(data), axis=1)
        dropped += int((~keep).sum())
        data = data[keep]
    label_idx = header.index(label_column) if isinstance(label_column, str) else (
        label_column if label_column >= 0 else len(header) + label_column
    )
    feature_idx = [i for i in range(len(header)) if i != label_idx]
    return RealDataset(
        data[:, feature_idx],
        data[:, label_idx],
        tuple(header[i] for i in feature_idx),
        dropped,
    )


@dataclass(frozen=True, eq=False)
class SimulationSpec:
    gaussian: GaussianSpec
    knn_k: int
    feature_means: np.ndarray
    feature_stds: np.ndarray
    reference_features: np.ndarray  # normalized real rows used by the labeler
    reference_labels: np.ndarray
    warnings: tuple[str, ...] = ()

    def to_json_dict(self) -> dict:
        return {
            "gaussian": self.gaussian.to_json_dict(),
            "knn_k": self.knn_k,
            "feature_means": self.feature_means.tolist(),
            "feature_stds": self.feature_stds.tolist(),
            "n_reference_rows": int(self.reference_features.shape[0]),
            "warnings": list(self.warnings),
        }


def knn_labels(
    reference_features: np.ndarray,
    reference_labels: np.ndarray,
    queries: np.ndarray,
    k: int,
    chunk: int = 1024,
) -> np.ndarray:
    """Mean label of the k Euclidean-nearest reference rows, per query."""
    out = np.empty(queries.shape[0])
    ref_sq = (reference_features**2).sum(axis=1)
    for start in range(0, queries.shape[0], chunk):
        block = queries[start : start + chunk]
        d_sq = ref_sq - 2.0 * block @ reference_features.T + (block**2).sum(axis=1)[:, None]
        if k == 1:
            nearest = np.argmin(d_sq, axis=1)[:, None]
        else:
            nearest = np.argpartition(d_sq, k - 1, axis=1)[:, :k]
        out[start : start + chunk] = reference_labels[nearest].mean(axis=1)
    return out


def fit_simulation_spec(real: RealDataset, knn_k: int = 5) -> SimulationSpec:
    if knn_k < 1:
        raise SimulationError("knn_k must be >= 1")
    means = real.features.mean(axis=0)
    stds = real.features.std(axis=0)
    if np.any(stds == 0.0):
        raise SimulationError("constant real feature column; cannot standardize")
    normalized = (real.features - means) / stds
    cov = np.cov(normalized, rowvar=False, ddof=0)
    cov = 0.5 * (cov + cov.T)
    warnings = []
    if np.min(np.linalg.eigvalsh(cov)) < 1e-10:
        cov = cov + COVARIANCE_RIDGE * np.eye(cov.shape[0])
        warnings.append(f"singular empirical covariance; ridge {COVARIANCE_RIDGE} applied")
    try:
        gaussian = GaussianSpec(np.zeros(real.features.shape[1]), cov)
    except InvalidParameterError:
        cov = cov + COVARIANCE_RIDGE * np.eye(cov.shape[0])
        gaussian = GaussianSpec(np.zeros(real.features.shape[1]), cov)
        warnings.append(f"still singular; ridge {COVARIANCE_RIDGE} applied twice")
    return SimulationSpec(
        gaussian, knn_k, means, stds, normalized, real.labels.copy(), tuple(warnings)
    )


def simulate_from_real(
    real: RealDataset,
    knn_k: int = 5,
    n: int = 1000,
    seed: int = 0,
    normalization_count: int = 10_000,
) -> tuple[Dataset, SimulationSpec]:
    """Synthesize ``n`` rows from the Gaussian twin of ``real``.

    Labels come from a knn_k-nearest-neighbor average over the real rows and
    are then standardized (on a fresh sample) so the usual baseline-MSE
    calibration holds. The returned dataset carries the fitted Gaussian, so
    exact conditioning is available to every metric.
    """
    spec = fit_simulation_spec(real, knn_k)
    calib = spec.gaussian.sample(normalization_count, derive_rng(seed, "sim-normalization"))
    calib_raw = knn_labels(spec.reference_features, spec.reference_labels, calib, knn_k)
    std = float(calib_raw.std())
    if std == 0.0:
        raise SimulationError("knn labels are constant; cannot normalize")
    stats = NormalizationStats(float(calib_raw.mean()), std, normalization_count, int(seed))

    features = spec.gaussian.sample(n, derive_rng(seed, "sim-features"))
    raw = knn_labels(spec.reference_features, spec.reference_labels, features, knn_k)
    dataset = Dataset(features, stats.apply(raw), spec.gaussian, None, stats, int(seed))
    return dataset, spec


def save_simulation(dataset: Dataset, spec: SimulationSpec, csv_path, spec_path) -> None:
    header = ",".join([f"x{i + 1}" for i in range(dataset.dim)] + ["y"])
    rows = [header]
    for x, y in zip(dataset.features, dataset.labels):
        rows.append(",".join(f"{v:.17g}" for v in (*x, y)))
    Path(csv_path).write_text("\n".join(rows) + "\n")
    Path(spec_path).write_text(json.dumps(spec.to_json_dict(), indent=2) + "\n")


# ------------------------------------------------------------------------ jsd


def _histogram(values: np.ndarray) -> np.ndarray:
    lo, hi = JSD_RANGE
    clipped = np.clip(values, lo, hi)
    counts, _ = np.histogram(clipped, bins=JSD_BINS, range=JSD_RANGE)
    return counts / values.shape[0]


def _jsd_base2(p: np.ndarray, q: np.ndarray) -> float:
    m = 0.5 * (p + q)
    with np.errstate(divide="ignore", invalid="ignore"):
        kl_p = np.where(p > 0, p * np.log2(p / m), 0.0).sum()
        kl_q = np.where(q > 0, q * np.log2(q / m), 0.0).sum()
    return float(0.5 * kl_p + 0.5 * kl_q)


def jsd_marginals(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-column base-2 Jensen-Shannon divergence of histogrammed samples.

    Histograms use 120 equal bins on [-6, 6]; values outside are clipped
    into the edge bins. Returns (per-column JSD, mean).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape[1] != b.shape[1]:
        raise SimulationError("samples must have the same number of columns")
    per_column = np.array(
        [_jsd_base2(_histogram(a[:, j]), _histogram(b[:, j])) for j in range(a.shape[1])]
    )
    return per_column, float(per_column.mean())


def explanation_mse(a, b) -> float:
    """Mean over datapoints of the mean squared weight difference.

    Accepts aligned Attribution batches or plain (n, D) weight arrays.
    """
    mat_a = _weights_matrix(a)
    mat_b = _weights_matrix(b)
    if mat_a.shape != mat_b.shape:
        raise SimulationError(
            f"explanation batches misaligned: {mat_a.shape} vs {mat_b.shape}"
        )
    return float(np.mean((mat_a - mat_b) ** 2))


def _weights_matrix(batch) -> np.ndarray:
    if isinstance(batch, np.ndarray):
        return np.atleast_2d(np.asarray(batch, dtype=np.float64))
    return np.vstack([np.asarray(attr.weights, dtype=np.float64) for attr in batch])
