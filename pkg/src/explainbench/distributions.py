"""Joint feature distributions with exact conditioning, sampling, and densities.

Three synthetic families are supported: multivariate Gaussian, mixture of
Gaussians, and multinomial counts. Each family knows how to produce the
exact conditional distribution of the unfixed coordinates given a subset of
fixed coordinates, which is what makes exact evaluation of attribution
metrics possible downstream.

Conventions
-----------
* Feature indices are 0-based everywhere.
* Conditioning returns a distribution over the *remaining* coordinates in
  ascending original-index order; fully conditioning all coordinates yields
  a :class:`PointMass`.
* The Gaussian conditional covariance is the Schur complement
  ``S11 - S12 S22^-1 S21`` (the subtractive form; the additive variant is
  not positive semidefinite in general).
* All sampling takes an explicit seed and is bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.special import gammaln, logsumexp

from .seeding import derive_rng

SYMMETRY_TOL = 1e-10
WEIGHT_TOL = 1e-10
RIDGE = 1e-10
MIN_PIVOT = 1e-12


class InvalidParameterError(ValueError):
    """Distribution parameters violate an invariant."""


class InvalidQueryError(ValueError):
    """A conditioning query is inconsistent with the distribution."""


class ConditioningError(RuntimeError):
    """Exact conditioning failed numerically (singular conditioned block)."""


def _as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return derive_rng(int(seed))


def _robust_cholesky(sigma: np.ndarray, what: str) -> np.ndarray:
    """Lower Cholesky factor, retrying once with a small ridge.

    The ridge path keeps conditioning usable for nearly singular blocks
    (e.g. equicorrelation rho close to its boundary).
    """
    try:
        low = cholesky(sigma, lower=True)
        if np.min(np.diag(low)) > MIN_PIVOT:
            return low
    except np.linalg.LinAlgError:
        pass
    try:
        return cholesky(sigma + RIDGE * np.eye(sigma.shape[0]), lower=True)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError(f"{what} is numerically singular") from exc


def equicorrelation_sigma(dim: int, rho: float) -> np.ndarray:
    """Covariance with unit diagonal and constant off-diagonal ``rho``.

    Positive definiteness requires ``-1/(dim-1) < rho < 1`` (eigenvalues are
    ``1 - rho`` and ``1 + (dim-1) rho``).
    """
    if dim < 1:
        raise InvalidParameterError("dim must be a positive integer")
    if dim == 1:
        return np.ones((1, 1))
    lo = -1.0 / (dim - 1)
    if not (lo < rho < 1.0):
        raise InvalidParameterError(
            f"rho={rho} outside the positive-definite range ({lo}, 1) for dim={dim}"
        )
    sigma = np.full((dim, dim), float(rho))
    np.fill_diagonal(sigma, 1.0)
    return sigma


@dataclass(frozen=True, eq=False)
class ConditionalQuery:
    """Fix coordinates ``fixed_indices`` at ``fixed_values``.

    Indices are 0-based, distinct, and within the distribution dimension;
    values are finite and aligned with the indices as given.
    """

    fixed_indices: tuple[int, ...]
    fixed_values: np.ndarray

    def __init__(self, fixed_indices, fixed_values):
        idx = tuple(int(i) for i in fixed_indices)
        vals = np.asarray(fixed_values, dtype=np.float64).reshape(-1)
        if len(idx) != len(set(idx)):
            raise InvalidQueryError("fixed indices must be distinct")
        if any(i < 0 for i in idx):
            raise InvalidQueryError("fixed indices must be nonnegative")
        if vals.shape[0] != len(idx):
            raise InvalidQueryError("fixed_values length must match fixed_indices")
        if not np.all(np.isfinite(vals)):
            raise InvalidQueryError("fixed values must be finite")
        object.__setattr__(self, "fixed_indices", idx)
        object.__setattr__(self, "fixed_values", vals)

    def validate_dim(self, dim: int) -> None:
        if any(i >= dim for i in self.fixed_indices):
            raise InvalidQueryError(f"fixed index out of range for dimension {dim}")

    def sorted_parts(self, dim: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (fixed idx ascending, values in that order, remaining idx)."""
        self.validate_dim(dim)
        order = np.argsort(self.fixed_indices, kind="stable")
        fixed = np.asarray(self.fixed_indices, dtype=np.intp)[order]
        values = self.fixed_values[order]
        remaining = np.setdiff1d(np.arange(dim), fixed)
        return fixed, values, remaining


class Distribution:
    """Common interface for the synthetic feature families."""

    dim: int

    def sample(self, n: int, seed) -> np.ndarray:
        raise NotImplementedError

    def condition(self, query: ConditionalQuery) -> "Distribution":
        raise NotImplementedError

    def mean(self) -> np.ndarray:
        raise NotImplementedError

    def marginal_variance(self) -> np.ndarray:
        raise NotImplementedError

    def log_density(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def to_json_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class PointMass(Distribution):
    """Distribution concentrated at a single point (full conditioning)."""

    point: np.ndarray

    def __init__(self, point):
        object.__setattr__(
            self, "point", np.asarray(point, dtype=np.float64).reshape(-1)
        )

    @property
    def dim(self) -> int:
        return self.point.shape[0]

    def sample(self, n: int, seed=0) -> np.ndarray:
        if n < 1:
            raise InvalidParameterError("n must be >= 1")
        return np.tile(self.point, (n, 1))

    def condition(self, query: ConditionalQuery) -> "Distribution":
        fixed, values, remaining = query.sorted_parts(self.dim)
        if fixed.size and not np.array_equal(values, self.point[fixed]):
            raise InvalidQueryError("query fixes a point-mass coordinate elsewhere")
        if remaining.size == 0:
            return self
        return PointMass(self.point[remaining])

    def mean(self) -> np.ndarray:
        return self.point.copy()

    def marginal_variance(self) -> np.ndarray:
        return np.zeros(self.dim)

    def log_density(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        return float(np.inf) if np.array_equal(x, self.point) else float(-np.inf)

    def to_json_dict(self) -> dict:
        return {"family": "point_mass", "point": self.point.tolist()}


@dataclass(frozen=True, eq=False)
class GaussianSpec(Distribution):
    """Multivariate normal N(mu, sigma) with sigma symmetric positive definite."""

    mu: np.ndarray
    sigma: np.ndarray
    _chol: np.ndarray = field(repr=False, compare=False, default=None)

    def __init__(self, mu, sigma):
        mu = np.asarray(mu, dtype=np.float64).reshape(-1)
        sigma = np.asarray(sigma, dtype=np.float64)
        if not np.all(np.isfinite(mu)):
            raise InvalidParameterError("mu must be finite")
        if sigma.shape != (mu.shape[0], mu.shape[0]):
            raise InvalidParameterError("sigma must be D x D matching mu")
        if not np.all(np.isfinite(sigma)):
            raise InvalidParameterError("sigma must be finite")
        if np.max(np.abs(sigma - sigma.T)) > SYMMETRY_TOL:
            raise InvalidParameterError("sigma must be symmetric within 1e-10")
        sigma = 0.5 * (sigma + sigma.T)
        try:
            low = cholesky(sigma, lower=True)
        except np.linalg.LinAlgError as exc:
            raise InvalidParameterError("sigma must be positive definite") from exc
        if np.min(np.diag(low)) <= 0.0:
            raise InvalidParameterError("sigma must be positive definite")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "_chol", low)

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    def sample(self, n: int, seed=0) -> np.ndarray:
        if n < 1:
            raise InvalidParameterError("n must be >= 1")
        rng = _as_generator(seed)
        z = rng.standard_normal((int(n), self.dim))
        return self.mu + z @ self._chol.T

    def condition(self, query: ConditionalQuery) -> Distribution:
        fixed, values, remaining = query.sorted_parts(self.dim)
        if fixed.size == 0:
            return self
        if remaining.size == 0:
            full = np.empty(self.dim)
            full[fixed] = values
            return PointMass(full)
        s11 = self.sigma[np.ix_(remaining, remaining)]
        s12 = self.sigma[np.ix_(remaining, fixed)]
        s22 = self.sigma[np.ix_(fixed, fixed)]
        low22 = _robust_cholesky(s22, "conditioned block sigma_22")
        # A = S12 S22^-1 via two triangular solves on S22 = L L^T
        a = cho_solve((low22, True), s12.T).T
        mu_star = self.mu[remaining] + a @ (values - self.mu[fixed])
        sigma_star = s11 - a @ s12.T
        sigma_star = 0.5 * (sigma_star + sigma_star.T)
        return GaussianSpec(mu_star, sigma_star)

    def marginal(self, indices: np.ndarray) -> "GaussianSpec":
        idx = np.asarray(indices, dtype=np.intp)
        return GaussianSpec(self.mu[idx], self.sigma[np.ix_(idx, idx)])

    def mean(self) -> np.ndarray:
        return self.mu.copy()

    def marginal_variance(self) -> np.ndarray:
        return np.diag(self.sigma).copy()

    def log_density(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.shape[0] != self.dim:
            raise InvalidParameterError("x has wrong dimension")
        v = solve_triangular(self._chol, x - self.mu, lower=True)
        log_det = 2.0 * np.sum(np.log(np.diag(self._chol)))
        return float(-0.5 * (self.dim * np.log(2.0 * np.pi) + log_det + v @ v))

    def to_json_dict(self) -> dict:
        return {
            "family": "gaussian",
            "mu": self.mu.tolist(),
            "sigma": self.sigma.tolist(),
        }


@dataclass(frozen=True, eq=False)
class MixtureSpec(Distribution):
    """Finite mixture of Gaussians with weights summing to 1."""

    weights: np.ndarray
    components: tuple[GaussianSpec, ...]

    def __init__(self, components):
        comps = []
        weights = []
        for weight, gaussian in components:
            if not isinstance(gaussian, GaussianSpec):
                gaussian = GaussianSpec(*gaussian)
            if not (0.0 < weight <= 1.0):
                raise InvalidParameterError("component weights must lie in (0, 1]")
            comps.append(gaussian)
            weights.append(float(weight))
        if not comps:
            raise InvalidParameterError("mixture needs at least one component")
        dims = {c.dim for c in comps}
        if len(dims) != 1:
            raise InvalidParameterError("all components must share one dimension")
        weights = np.asarray(weights, dtype=np.float64)
        if abs(weights.sum() - 1.0) > WEIGHT_TOL:
            raise InvalidParameterError("component weights must sum to 1 within 1e-10")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "components", tuple(comps))

    @property
    def dim(self) -> int:
        return self.components[0].dim

    def sample(self, n: int, seed=0) -> np.ndarray:
        if n < 1:
            raise InvalidParameterError("n must be >= 1")
        rng = _as_generator(seed)
        n = int(n)
        idx = rng.choice(len(self.components), size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        out = np.empty((n, self.dim))
        for j, comp in enumerate(self.components):
            rows = idx == j
            if np.any(rows):
                out[rows] = comp.mu + z[rows] @ comp._chol.T
        return out

    def condition(self, query: ConditionalQuery) -> Distribution:
        fixed, values, remaining = query.sorted_parts(self.dim)
        if fixed.size == 0:
            return self
        if remaining.size == 0:
            full = np.empty(self.dim)
            full[fixed] = values
            return PointMass(full)
        log_w = np.empty(len(self.components))
        conds = []
        for j, comp in enumerate(self.components):
            marg = comp.marginal(fixed)
            log_w[j] = np.log(self.weights[j]) + marg.log_density(values)
            conds.append(comp.condition(query))
        norm = logsumexp(log_w)
        if not np.isfinite(norm):
            raise ConditioningError("all mixture components vanish at the query point")
        new_w = np.exp(log_w - norm)
        new_w = new_w / new_w.sum()
        return MixtureSpec(list(zip(new_w, conds)))

    def mean(self) -> np.ndarray:
        return sum(w * c.mu for w, c in zip(self.weights, self.components))

    def marginal_variance(self) -> np.ndarray:
        m = self.mean()
        second = sum(
            w * (np.diag(c.sigma) + c.mu**2)
            for w, c in zip(self.weights, self.components)
        )
        return second - m**2

    def log_density(self, x: np.ndarray) -> float:
        parts = [
            np.log(w) + c.log_density(x)
            for w, c in zip(self.weights, self.components)
        ]
        return float(logsumexp(parts))

    def to_json_dict(self) -> dict:
        return {
            "family": "mixture",
            "components": [
                {"weight": float(w), "mu": c.mu.tolist(), "sigma": c.sigma.tolist()}
                for w, c in zip(self.weights, self.components)
            ],
        }


@dataclass(frozen=True, eq=False)
class MultinomialSpec(Distribution):
    """Multinomial counts over D categories: m trials, event probabilities p."""

    trials: int
    probs: np.ndarray

    def __init__(self, trials, probs):
        trials = int(trials)
        probs = np.asarray(probs, dtype=np.float64).reshape(-1)
        if trials < 0:
            raise InvalidParameterError("trials must be >= 0")
        if np.any(probs < 0.0):
            raise InvalidParameterError("probs must be nonnegative")
        if abs(probs.sum() - 1.0) > WEIGHT_TOL:
            raise InvalidParameterError("probs must sum to 1 within 1e-10")
        object.__setattr__(self, "trials", trials)
        object.__setattr__(self, "probs", probs)

    @property
    def dim(self) -> int:
        return self.probs.shape[0]

    def sample(self, n: int, seed=0) -> np.ndarray:
        if n < 1:
            raise InvalidParameterError("n must be >= 1")
        rng = _as_generator(seed)
        return rng.multinomial(self.trials, self.probs, size=int(n)).astype(np.float64)

    def _validate_counts(self, values: np.ndarray) -> np.ndarray:
        counts = np.rint(values)
        if np.max(np.abs(counts - values), initial=0.0) > 1e-9 or np.any(counts < 0):
            raise InvalidQueryError("multinomial query values must be counts >= 0")
        return counts

    def condition(self, query: ConditionalQuery) -> Distribution:
        fixed, values, remaining = query.sorted_parts(self.dim)
        if fixed.size == 0:
            return self
        counts = self._validate_counts(values)
        used = counts.sum()
        if used > self.trials:
            raise InvalidQueryError(
                f"fixed counts sum to {int(used)} > trials {self.trials}"
            )
        m_star = int(self.trials - used)
        if remaining.size == 0:
            if m_star != 0:
                raise InvalidQueryError("full conditioning must use all trials")
            return PointMass(counts)
        denom = 1.0 - self.probs[fixed].sum()
        if denom <= 0.0:
            if m_star == 0:
                p_star = np.full(remaining.size, 1.0 / remaining.size)
                return MultinomialSpec(0, p_star)
            raise InvalidQueryError("remaining categories have zero probability")
        p_star = self.probs[remaining] / denom
        p_star = p_star / p_star.sum()
        return MultinomialSpec(m_star, p_star)

    def mean(self) -> np.ndarray:
        return self.trials * self.probs

    def marginal_variance(self) -> np.ndarray:
        return self.trials * self.probs * (1.0 - self.probs)

    def log_density(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.shape[0] != self.dim:
            raise InvalidParameterError("x has wrong dimension")
        counts = self._validate_counts(x)
        if counts.sum() != self.trials:
            return float(-np.inf)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(counts > 0, counts * np.log(self.probs), 0.0)
        if np.any(np.isnan(terms)) or np.any((counts > 0) & (self.probs == 0.0)):
            return float(-np.inf)
        return float(
            gammaln(self.trials + 1) - gammaln(counts + 1).sum() + terms.sum()
        )

    def to_json_dict(self) -> dict:
        return {
            "family": "multinomial",
            "trials": self.trials,
            "probs": self.probs.tolist(),
        }


def distribution_from_json_dict(payload: dict) -> Distribution:
    family = payload.get("family")
    if family == "gaussian":
        return GaussianSpec(payload["mu"], payload["sigma"])
    if family == "mixture":
        return MixtureSpec(
            [(c["weight"], GaussianSpec(c["mu"], c["sigma"]))
             for c in payload["components"]]
        )
    if family == "multinomial":
        return MultinomialSpec(payload["trials"], payload["probs"])
    if family == "point_mass":
        return PointMass(payload["point"])
    raise InvalidParameterError(f"unknown distribution family {family!r}")


def sample(dist: Distribution, n: int, seed) -> np.ndarray:
    """Draw ``n`` i.i.d. rows; identical (dist, n, seed) is bit-reproducible."""
    return dist.sample(n, seed)


def condition(dist: Distribution, query: ConditionalQuery) -> Distribution:
    """Exact conditional distribution of the unfixed coordinates."""
    return dist.condition(query)


def mean(dist: Distribution) -> np.ndarray:
    return dist.mean()


def log_density(dist: Distribution, x) -> float:
    return dist.log_density(np.asarray(x, dtype=np.float64))
