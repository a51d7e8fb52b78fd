import itertools
import math

import numpy as np
import pytest

from explainbench.distributions import (
    ConditionalQuery,
    ConditioningError,
    GaussianSpec,
    InvalidParameterError,
    InvalidQueryError,
    MixtureSpec,
    MultinomialSpec,
    PointMass,
    condition,
    distribution_from_json_dict,
    equicorrelation_sigma,
    log_density,
    mean,
    sample,
)


def make_mixture():
    return MixtureSpec(
        [
            (0.3, GaussianSpec([-2.0, 0.5], [[1.0, 0.3], [0.3, 0.8]])),
            (0.7, GaussianSpec([1.5, -1.0], [[0.5, -0.1], [-0.1, 1.2]])),
        ]
    )


# ---------------------------------------------------------------- equicorrelation


def test_equicorrelation_zero_rho_is_identity():
    assert np.array_equal(equicorrelation_sigma(3, 0.0), np.eye(3))


def test_equicorrelation_direct_construction():
    assert np.array_equal(
        equicorrelation_sigma(2, 0.5), np.array([[1.0, 0.5], [0.5, 1.0]])
    )


def test_equicorrelation_invalid_rho_names_interval():
    with pytest.raises(InvalidParameterError, match=r"\(-0.25, 1\)"):
        equicorrelation_sigma(5, -0.3)
    with pytest.raises(InvalidParameterError):
        equicorrelation_sigma(4, 1.0)


def test_equicorrelation_results_are_valid_covariances():
    for dim, rho in [(2, -0.9), (5, 0.99), (8, -0.1), (3, 0.5)]:
        GaussianSpec(np.zeros(dim), equicorrelation_sigma(dim, rho))


# ------------------------------------------------------------------------ sample


def test_gaussian_sample_law_of_large_numbers():
    dist = GaussianSpec(np.zeros(5), np.eye(5))
    draws = sample(dist, 100_000, seed=11)
    assert np.all(np.abs(draws.mean(axis=0)) < 0.02)


def test_multinomial_rows_sum_to_trials():
    dist = MultinomialSpec(10, np.full(4, 0.25))
    draws = sample(dist, 2_000, seed=3)
    assert np.all(draws.sum(axis=1) == 10)
    assert np.all(draws >= 0)


def test_symmetric_mixture_sample_mean_near_zero():
    dist = MixtureSpec(
        [(0.5, GaussianSpec([-3.0], [[1.0]])), (0.5, GaussianSpec([3.0], [[1.0]]))]
    )
    draws = sample(dist, 100_000, seed=5)
    assert abs(draws.mean()) < 0.05


def test_sampling_is_deterministic_per_seed():
    for dist in [
        GaussianSpec([1.0, 2.0], equicorrelation_sigma(2, 0.4)),
        make_mixture(),
        MultinomialSpec(6, [0.2, 0.3, 0.5]),
    ]:
        assert np.array_equal(sample(dist, 50, seed=123), sample(dist, 50, seed=123))
        assert not np.array_equal(sample(dist, 50, seed=123), sample(dist, 50, seed=124))


def test_sample_rejects_nonpositive_n():
    with pytest.raises(InvalidParameterError):
        sample(GaussianSpec([0.0], [[1.0]]), 0, seed=0)


# --------------------------------------------------------------------- condition


def test_bivariate_gaussian_conditional_by_hand():
    dist = GaussianSpec([0.0, 0.0], [[1.0, 0.5], [0.5, 1.0]])
    cond = condition(dist, ConditionalQuery([1], [1.0]))
    assert np.allclose(cond.mu, [0.5], atol=1e-12)
    assert np.allclose(cond.sigma, [[0.75]], atol=1e-12)


def test_independent_coordinates_conditional_equals_marginal():
    dist = GaussianSpec([1.0, -2.0, 0.5], np.diag([1.0, 4.0, 0.25]))
    cond = condition(dist, ConditionalQuery([1], [10.0]))
    assert np.allclose(cond.mu, [1.0, 0.5])
    assert np.allclose(cond.sigma, np.diag([1.0, 0.25]))

    multi = MultinomialSpec(8, [0.25, 0.25, 0.5])
    cond = condition(multi, ConditionalQuery([0], [2.0]))
    assert cond.trials == 6
    assert np.allclose(cond.probs, [1.0 / 3.0, 2.0 / 3.0])


def test_empty_query_returns_bit_equal_distribution():
    gauss = GaussianSpec([1.0, 2.0], equicorrelation_sigma(2, 0.3))
    cond = condition(gauss, ConditionalQuery([], []))
    assert np.array_equal(cond.mu, gauss.mu)
    assert np.array_equal(cond.sigma, gauss.sigma)

    mix = make_mixture()
    cond = condition(mix, ConditionalQuery([], []))
    assert np.array_equal(cond.weights, mix.weights)

    multi = MultinomialSpec(5, [0.4, 0.6])
    cond = condition(multi, ConditionalQuery([], []))
    assert cond.trials == multi.trials
    assert np.array_equal(cond.probs, multi.probs)


def test_full_conditioning_gives_point_mass():
    dist = GaussianSpec(np.zeros(3), equicorrelation_sigma(3, 0.2))
    x = np.array([0.3, -1.2, 0.8])
    cond = condition(dist, ConditionalQuery([0, 1, 2], x))
    assert isinstance(cond, PointMass)
    assert np.array_equal(cond.mean(), x)
    assert np.array_equal(cond.sample(4), np.tile(x, (4, 1)))


def rejection_conditional_moments(dist, fixed_idx, fixed_vals, window, n, seed):
    """Monte Carlo oracle: empirical moments of the unfixed coordinates among
    joint draws whose fixed coordinates land within +/- window of the target."""
    draws = dist.sample(n, seed)
    keep = np.all(np.abs(draws[:, fixed_idx] - fixed_vals) <= window, axis=1)
    remaining = np.setdiff1d(np.arange(dist.dim), fixed_idx)
    selected = draws[np.ix_(keep, remaining)]
    assert selected.shape[0] > 500, "rejection window too tight for the oracle"
    return selected.mean(axis=0), np.cov(selected, rowvar=False)


def test_equicorrelated_conditional_matches_rejection_oracle():
    dist = GaussianSpec(np.zeros(5), equicorrelation_sigma(5, 0.8))
    fixed_idx = [0, 2, 4]
    fixed_vals = np.array([0.1, -0.05, 0.2])
    cond = condition(dist, ConditionalQuery(fixed_idx, fixed_vals))
    emp_mean, emp_cov = rejection_conditional_moments(
        dist, fixed_idx, fixed_vals, window=0.12, n=1_000_000, seed=77
    )
    assert np.all(np.abs(cond.mu - emp_mean) < 0.03)
    assert np.all(np.abs(cond.sigma - emp_cov) < 0.03)


def test_mixture_conditional_matches_rejection_oracle():
    dist = make_mixture()
    query = ConditionalQuery([1], [0.0])
    cond = condition(dist, query)
    assert abs(cond.weights.sum() - 1.0) < 1e-10
    draws = dist.sample(1_000_000, seed=21)
    keep = np.abs(draws[:, 1] - 0.0) <= 0.05
    selected = draws[keep, 0]
    cond_mean = cond.mean()[0]
    assert abs(cond_mean - selected.mean()) < 0.03


def test_conditional_covariance_symmetric_psd():
    rng = np.random.default_rng(9)
    dist = GaussianSpec(np.zeros(6), equicorrelation_sigma(6, 0.7))
    for _ in range(25):
        k = rng.integers(1, 6)
        idx = rng.choice(6, size=k, replace=False)
        vals = rng.normal(size=k)
        cond = condition(dist, ConditionalQuery(idx, vals))
        assert np.array_equal(cond.sigma, cond.sigma.T)
        assert np.min(np.linalg.eigvalsh(cond.sigma)) > -1e-10


def test_mixture_conditional_weights_sum_to_one():
    dist = make_mixture()
    for v in [-4.0, -1.0, 0.0, 2.5, 6.0]:
        cond = condition(dist, ConditionalQuery([0], [v]))
        assert abs(cond.weights.sum() - 1.0) < 1e-10


def brute_force_multinomial_conditional(trials, probs, fixed_idx, fixed_vals):
    """Enumerate the joint support, restrict to the query, renormalize."""
    dim = len(probs)
    remaining = [i for i in range(dim) if i not in fixed_idx]
    table = {}
    for counts in itertools.product(range(trials + 1), repeat=dim):
        if sum(counts) != trials:
            continue
        if any(counts[i] != fixed_vals[j] for j, i in enumerate(fixed_idx)):
            continue
        pmf = math.factorial(trials)
        for c, p in zip(counts, probs):
            pmf = pmf * p**c / math.factorial(c)
        table[tuple(counts[i] for i in remaining)] = pmf
    total = sum(table.values())
    return {k: v / total for k, v in table.items()}


def test_multinomial_conditional_matches_brute_force():
    cases = [
        (4, [0.1, 0.2, 0.3, 0.4], [1], [2]),
        (6, [0.5, 0.25, 0.25], [0], [3]),
        (5, [0.15, 0.35, 0.5], [2], [0]),
        (6, [0.1, 0.4, 0.2, 0.3], [0, 3], [1, 2]),
    ]
    for trials, probs, fixed_idx, fixed_vals in cases:
        dist = MultinomialSpec(trials, probs)
        cond = condition(dist, ConditionalQuery(fixed_idx, fixed_vals))
        oracle = brute_force_multinomial_conditional(trials, probs, fixed_idx, fixed_vals)
        for counts, pmf in oracle.items():
            ours = math.exp(cond.log_density(np.array(counts, dtype=float)))
            assert abs(ours - pmf) < 1e-12
        draws = cond.sample(500, seed=1)
        assert np.all(draws.sum(axis=1) == trials - sum(fixed_vals))


def test_multinomial_invalid_query_counts():
    dist = MultinomialSpec(4, [0.3, 0.3, 0.4])
    with pytest.raises(InvalidQueryError):
        condition(dist, ConditionalQuery([0], [5.0]))
    with pytest.raises(InvalidQueryError):
        condition(dist, ConditionalQuery([0], [1.5]))
    with pytest.raises(InvalidQueryError):
        condition(dist, ConditionalQuery([0, 1, 2], [1.0, 1.0, 1.0]))


def test_tower_property_linear_and_product():
    dist = GaussianSpec(np.zeros(4), equicorrelation_sigma(4, 0.5))
    fixed_idx = np.array([0, 2])
    remaining = np.array([1, 3])

    def run(f):
        joint = dist.sample(200_000, seed=101)
        direct = f(joint).mean()
        direct_se = f(joint).std() / math.sqrt(joint.shape[0])

        marg = GaussianSpec(dist.mu[fixed_idx], dist.sigma[np.ix_(fixed_idx, fixed_idx)])
        outer = marg.sample(400, seed=102)
        inner_means = []
        for row_i, xs in enumerate(outer):
            cond = condition(dist, ConditionalQuery(fixed_idx, xs))
            inner = cond.sample(400, seed=1000 + row_i)
            full = np.empty((400, 4))
            full[:, fixed_idx] = xs
            full[:, remaining] = inner
            inner_means.append(f(full).mean())
        nested = np.mean(inner_means)
        nested_se = np.std(inner_means) / math.sqrt(len(inner_means))
        tol = 3.0 * math.hypot(direct_se, nested_se)
        assert abs(direct - nested) < tol

    run(lambda rows: rows @ np.array([1.0, -2.0, 0.5, 3.0]))
    run(lambda rows: rows[:, 1] * rows[:, 3])


# -------------------------------------------------------------------------- mean


def test_means_are_exact():
    assert np.array_equal(mean(GaussianSpec([1.0, 2.0], np.eye(2))), [1.0, 2.0])
    sym = MixtureSpec(
        [(0.5, GaussianSpec([-1.0], [[1.0]])), (0.5, GaussianSpec([1.0], [[2.0]]))]
    )
    assert abs(mean(sym)[0]) < 1e-15
    assert np.allclose(mean(MultinomialSpec(10, [0.1, 0.9])), [1.0, 9.0])


def test_marginal_variance():
    gauss = GaussianSpec([0.0, 0.0], [[2.0, 0.5], [0.5, 1.0]])
    assert np.allclose(gauss.marginal_variance(), [2.0, 1.0])
    multi = MultinomialSpec(10, [0.1, 0.9])
    assert np.allclose(multi.marginal_variance(), [0.9, 0.9])
    mix = MixtureSpec(
        [(0.5, GaussianSpec([-1.0], [[1.0]])), (0.5, GaussianSpec([1.0], [[1.0]]))]
    )
    # Var = E[sigma^2] + Var(mu) = 1 + 1
    assert np.allclose(mix.marginal_variance(), [2.0])


# ------------------------------------------------------------------- log_density


def test_standard_normal_log_density():
    dist = GaussianSpec([0.0], [[1.0]])
    assert abs(log_density(dist, [0.0]) - (-0.5 * math.log(2 * math.pi))) < 1e-12


def test_gaussian_log_density_at_mean():
    dist = GaussianSpec([3.0, -1.0], np.eye(2))
    assert abs(log_density(dist, [3.0, -1.0]) - (-math.log(2 * math.pi))) < 1e-12


def test_mixture_density_integrates_to_one_quadrature():
    dist = MixtureSpec(
        [(0.4, GaussianSpec([-2.0], [[0.5]])), (0.6, GaussianSpec([1.0], [[2.0]]))]
    )
    grid = np.linspace(-15.0, 15.0, 20_001)
    dens = np.array([math.exp(log_density(dist, [g])) for g in grid])
    integral = np.trapezoid(dens, grid)
    assert abs(integral - 1.0) < 1e-3


def test_mixture_conditional_density_integrates_to_one():
    dist = make_mixture()
    cond = condition(dist, ConditionalQuery([0], [0.5]))
    grid = np.linspace(-15.0, 15.0, 20_001)
    dens = np.array([math.exp(cond.log_density([g])) for g in grid])
    assert abs(np.trapezoid(dens, grid) - 1.0) < 1e-3


def test_multinomial_pmf_sums_to_one():
    dist = MultinomialSpec(5, [0.2, 0.3, 0.5])
    total = 0.0
    for counts in itertools.product(range(6), repeat=3):
        if sum(counts) == 5:
            total += math.exp(log_density(dist, np.array(counts, dtype=float)))
    assert abs(total - 1.0) < 1e-12


def test_multinomial_log_density_outside_support():
    dist = MultinomialSpec(5, [0.5, 0.5])
    assert log_density(dist, [1.0, 1.0]) == -np.inf


# ------------------------------------------------------------------- validation


def test_gaussian_invariants_enforced():
    with pytest.raises(InvalidParameterError):
        GaussianSpec([0.0, 0.0], [[1.0, 0.5], [0.4, 1.0]])  # asymmetric
    with pytest.raises(InvalidParameterError):
        GaussianSpec([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])  # not PD
    with pytest.raises(InvalidParameterError):
        GaussianSpec([np.nan, 0.0], np.eye(2))


def test_mixture_invariants_enforced():
    good = GaussianSpec([0.0], [[1.0]])
    with pytest.raises(InvalidParameterError):
        MixtureSpec([(0.5, good), (0.6, good)])
    with pytest.raises(InvalidParameterError):
        MixtureSpec([(0.5, good), (0.5, GaussianSpec([0.0, 0.0], np.eye(2)))])


def test_multinomial_invariants_enforced():
    with pytest.raises(InvalidParameterError):
        MultinomialSpec(-1, [0.5, 0.5])
    with pytest.raises(InvalidParameterError):
        MultinomialSpec(3, [0.5, 0.6])
    with pytest.raises(InvalidParameterError):
        MultinomialSpec(3, [-0.1, 1.1])


def test_query_validation():
    with pytest.raises(InvalidQueryError):
        ConditionalQuery([0, 0], [1.0, 2.0])
    with pytest.raises(InvalidQueryError):
        ConditionalQuery([0], [np.inf])
    dist = GaussianSpec(np.zeros(2), np.eye(2))
    with pytest.raises(InvalidQueryError):
        condition(dist, ConditionalQuery([5], [0.0]))


# ---------------------------------------------------------------- serialization


def test_json_round_trip():
    for dist in [
        GaussianSpec([1.0, -0.5], equicorrelation_sigma(2, 0.25)),
        make_mixture(),
        MultinomialSpec(7, [0.2, 0.5, 0.3]),
    ]:
        clone = distribution_from_json_dict(dist.to_json_dict())
        assert type(clone) is type(dist)
        assert np.allclose(clone.mean(), dist.mean())
        assert np.array_equal(clone.sample(10, seed=4), dist.sample(10, seed=4))
