import numpy as np
import pytest

from explainbench.distributions import GaussianSpec, equicorrelation_sigma
from explainbench.labelers import Dataset, LabelFunction, NormalizationStats, fit_normalization, generate_dataset
from explainbench.models import (
    LinearModel,
    ModelSpec,
    TrainingError,
    fit,
    mlp_loss_and_grads,
    predict,
    predict_one,
)

STATS = NormalizationStats(0.0, 1.0, 10_000, 0)


def make_dataset(x, y):
    lf = LabelFunction("linear", x.shape[1])
    dist = GaussianSpec(np.zeros(x.shape[1]), np.eye(x.shape[1]))
    return Dataset(np.asarray(x, float), np.asarray(y, float), dist, lf, STATS)


# ---------------------------------------------------------------------- linear


def test_linear_recovers_noiseless_coefficients():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(100, 2))
    y = 2.0 * x[:, 0]
    model = fit(ModelSpec("linear"), make_dataset(x, y))
    assert np.allclose(model.coef, [2.0, 0.0], atol=1e-6)
    assert abs(model.intercept) < 1e-6


def test_linear_predict_is_dot_product():
    model = LinearModel(ModelSpec("linear"), np.array([2.0, 0.0]), 0.0)
    assert predict_one(model, np.array([3.0, 7.0])) == pytest.approx(6.0)


def test_ridge_limit_matches_pseudo_inverse():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(60, 4))
    y = x @ np.array([1.0, -2.0, 0.5, 0.0]) + 3.0
    small = fit(ModelSpec("linear", ridge_lambda=1e-10), make_dataset(x, y))
    smaller = fit(ModelSpec("linear", ridge_lambda=1e-12), make_dataset(x, y))
    assert np.max(np.abs(small.coef - smaller.coef)) <= 1e-6
    design = np.column_stack([x, np.ones(60)])
    pinv_beta = np.linalg.pinv(design) @ y
    assert np.allclose(small.coef, pinv_beta[:4], atol=1e-6)


# ------------------------------------------------------------------------ tree


def test_depth_one_tree_splits_on_signal_feature():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(400, 3))
    y = np.sign(x[:, 0])
    model = fit(ModelSpec("tree", max_depth=1), make_dataset(x, y))
    assert model.root.feature == 0
    assert abs(model.root.threshold) < 0.1
    leaves = sorted([model.root.left.value, model.root.right.value])
    assert leaves[0] == pytest.approx(-1.0, abs=0.1)
    assert leaves[1] == pytest.approx(1.0, abs=0.1)


def test_depth_zero_tree_predicts_mean():
    x = np.random.default_rng(3).normal(size=(50, 2))
    y = np.arange(50, dtype=float)
    model = fit(ModelSpec("tree", max_depth=0), make_dataset(x, y))
    assert np.allclose(predict(model, x), y.mean())


def test_tree_respects_max_depth():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(500, 3))
    y = rng.normal(size=500)
    for depth in (1, 2, 4):
        model = fit(ModelSpec("tree", max_depth=depth, min_samples_split=2), make_dataset(x, y))
        assert model.depth() <= depth


def test_tree_prediction_constant_within_leaf():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(300, 2))
    y = np.where(x[:, 0] > 0, 1.0, -1.0) + 0.01 * rng.normal(size=300)
    model = fit(ModelSpec("tree", max_depth=3), make_dataset(x, y))

    def thresholds(node, acc):
        if not node.is_leaf:
            acc.append(node.threshold)
            thresholds(node.left, acc)
            thresholds(node.right, acc)
        return acc

    cuts = thresholds(model.root, [])
    probe = rng.normal(size=(50, 2))
    base = predict(model, probe)
    # nudges too small to cross any split threshold keep the leaf assignment
    eps = min(
        1e-9,
        min(
            (abs(p - t) for p in probe.ravel() for t in cuts if abs(p - t) > 0),
            default=1e-9,
        )
        / 2,
    )
    assert np.array_equal(predict(model, probe + eps), base)


# ------------------------------------------------------------------------- mlp


def test_mlp_fits_noiseless_linear_target():
    dist = GaussianSpec(np.zeros(5), np.eye(5))
    lf = LabelFunction("linear", 5)
    stats = fit_normalization(lf, dist, sample_count=100_000, seed=0)
    train = generate_dataset(dist, lf, 1000, stats, seed=1)
    test = generate_dataset(dist, lf, 500, stats, seed=2)
    model = fit(ModelSpec("mlp", seed=7), train)
    mse = float(np.mean((predict(model, test.features) - test.labels) ** 2))
    assert mse <= 0.05


def test_mlp_training_is_deterministic():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(200, 3))
    y = x[:, 0] - x[:, 1]
    spec = ModelSpec("mlp", hidden_sizes=(16,), epochs=20, seed=11)
    a = fit(spec, make_dataset(x, y))
    b = fit(spec, make_dataset(x, y))
    for wa, wb in zip(a.weights, b.weights):
        assert np.array_equal(wa, wb)


def test_mlp_gradient_check_against_finite_differences():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(40, 4))
    y = rng.normal(size=40)
    spec = ModelSpec("mlp", hidden_sizes=(12, 8), seed=3)
    from explainbench.models import _mlp_init

    weights, biases = _mlp_init(spec, 4)
    _, grad_w, grad_b = mlp_loss_and_grads(weights, biases, x, y)

    params = weights + biases
    grads = grad_w + grad_b
    step = 1e-5
    checked = 0
    failures = []
    for p_idx in range(len(params)):
        flat = params[p_idx].reshape(-1)
        take = min(40, flat.shape[0])
        coords = rng.choice(flat.shape[0], size=take, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + step
            up, _, _ = mlp_loss_and_grads(weights, biases, x, y)
            flat[c] = orig - step
            down, _, _ = mlp_loss_and_grads(weights, biases, x, y)
            flat[c] = orig
            numeric = (up - down) / (2 * step)
            analytic = grads[p_idx].reshape(-1)[c]
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            checked += 1
            if rel > 1e-4:
                failures.append((p_idx, int(c), rel))
    assert checked >= 100
    assert not failures, failures


# -------------------------------------------------------------------- generic


def test_batch_predict_matches_per_row():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(120, 3))
    y = np.sin(x[:, 0]) + x[:, 1]
    data = make_dataset(x, y)
    probes = rng.normal(size=(20, 3))
    for kind in ("linear", "tree", "mlp"):
        spec = ModelSpec(kind, epochs=10, hidden_sizes=(8,))
        model = fit(spec, data)
        batch = predict(model, probes)
        rows = np.array([predict_one(model, p) for p in probes])
        # BLAS matrix-vector and matrix-matrix kernels may differ in the last ulp
        assert np.allclose(batch, rows, rtol=0.0, atol=1e-12)


def test_baseline_mean_predictor_mse_calibration():
    dist = GaussianSpec(np.zeros(5), equicorrelation_sigma(5, 0.5))
    for kind in ("linear", "nonlinear_additive"):
        lf = LabelFunction(kind, 5)
        stats = fit_normalization(lf, dist, sample_count=1_000_000, seed=4)
        train = generate_dataset(dist, lf, 1000, stats, seed=20)
        test = generate_dataset(dist, lf, 10_000, stats, seed=21)
        constant = train.labels.mean()
        mse = float(np.mean((test.labels - constant) ** 2))
        assert abs(mse - 1.0) <= 0.15


def test_predict_dimension_mismatch():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(60, 3))
    data = make_dataset(x, x[:, 0])
    for kind in ("linear", "tree", "mlp"):
        model = fit(ModelSpec(kind, epochs=3, hidden_sizes=(4,)), data)
        with pytest.raises(ValueError, match="dimension"):
            predict(model, np.ones((5, 4)))


def test_nonfinite_inputs_raise():
    x = np.ones((10, 2))
    y = np.ones(10)
    y[3] = np.nan
    with pytest.raises(TrainingError):
        fit(ModelSpec("linear"), make_dataset(x, y))


def test_model_spec_validation():
    with pytest.raises(ValueError):
        ModelSpec("forest")
    with pytest.raises(ValueError):
        ModelSpec("mlp", hidden_sizes=())
    with pytest.raises(ValueError):
        ModelSpec("tree", min_samples_split=1)


def test_model_json_serialization():
    rng = np.random.default_rng(10)
    x = rng.normal(size=(80, 2))
    y = x[:, 0]
    data = make_dataset(x, y)
    for kind in ("linear", "tree", "mlp"):
        model = fit(ModelSpec(kind, epochs=5, hidden_sizes=(4,)), data)
        payload = model.to_json_dict()
        assert payload["kind"] == kind
        assert "training_mse" in payload
