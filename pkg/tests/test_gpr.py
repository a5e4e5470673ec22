import json
import math

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from drivefuel import gpr
from drivefuel.stats_analysis import DcorrResult


def _prior_draw(n=30, d=2, sigma_f=1.0, sigma_l=0.7, beta=3.0, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1.5, 1.5, (n, d))
    K = gpr.kernel_matrix(X, sigma_f, sigma_l, 1e-10)
    return X, beta + np.linalg.cholesky(K) @ rng.standard_normal(n)


def test_matern_values():
    assert gpr.matern52([0.3, 1.0], [0.3, 1.0], 2.0, 0.5) == pytest.approx(4.0)
    assert gpr.matern52([0.0], [1.0], 1.0, 1.0) == pytest.approx(
        (1 + math.sqrt(5) + 5 / 3) * math.exp(-math.sqrt(5)), rel=1e-12)
    assert gpr.matern52([0.0], [1.0], 1.0, 1.0) == pytest.approx(0.52399, abs=1e-5)
    vals = [gpr.matern52([0.0], [r], 1.0, 1.0) for r in (0.5, 1, 2, 4, 8, 30)]
    assert all(b < a for a, b in zip(vals, vals[1:])) and vals[-1] < 1e-10
    with pytest.raises(gpr.GPRError):
        gpr.matern52([0.0, 1.0], [1.0], 1.0, 1.0)


def test_kernel_matrix_properties():
    X = np.random.default_rng(1).uniform(size=(50, 3))
    K = gpr.kernel_matrix(X, 1.3, 0.8, jitter=1e-8)
    np.testing.assert_allclose(np.diag(K), 1.3**2 + 1e-8)
    assert np.max(np.abs(K - K.T)) == 0.0
    assert np.linalg.eigvalsh(K).min() > 0


def test_lml_single_point_is_univariate_gaussian():
    got = gpr.log_marginal_likelihood([[0.2]], [1.7], 1.0, (math.log(0.5), 0.0), 0.3, jitter=0.0)
    var = 0.25 + 0.09
    assert got == pytest.approx(-0.5 * math.log(2 * math.pi * var) - 0.49 / (2 * var), rel=1e-12)


def test_lml_matches_dense_gaussian_density():
    rng = np.random.default_rng(3)
    X, Y = rng.normal(size=(5, 2)), rng.normal(size=5)
    theta, sigma, beta, jitter = (math.log(1.4), math.log(0.9)), 0.2, 0.3, 1e-8
    cov = gpr.kernel_matrix(X, 1.4, 0.9, jitter) + sigma**2 * np.eye(5)
    oracle = multivariate_normal(mean=np.full(5, beta), cov=cov).logpdf(Y)
    assert gpr.log_marginal_likelihood(X, Y, beta, theta, sigma, jitter) == pytest.approx(oracle, abs=1e-8)


def test_lml_translation_invariance():
    X, Y = _prior_draw(n=12, seed=4)
    theta = (0.1, -0.3)
    base = gpr.log_marginal_likelihood(X, Y, 3.0, theta, 0.05)
    assert gpr.log_marginal_likelihood(X, Y + 7.5, 10.5, theta, 0.05) == pytest.approx(base, abs=1e-9)


def test_trained_likelihood_beats_random_probes():
    X, Y = _prior_draw(seed=5)
    model = gpr.train(X, Y, gpr.TrainOptions(seed=1))
    Xs = model.train_inputs
    rng = np.random.default_rng(77)
    for _ in range(10):
        theta = (rng.uniform(-2, 2), rng.uniform(math.log(0.05), math.log(20)))
        sigma = math.exp(rng.uniform(-8, 0))
        beta = gpr.gls_beta(Xs, Y, theta, sigma)
        assert model.log_ml >= gpr.log_marginal_likelihood(Xs, Y, beta, theta, sigma) - 1e-9


def test_training_is_deterministic():
    X, Y = _prior_draw(seed=6)
    m1, m2 = gpr.train(X, Y), gpr.train(X, Y)
    assert (m1.theta1, m1.theta2, m1.noise_var, m1.beta) == (m2.theta1, m2.theta2, m2.noise_var, m2.beta)
    np.testing.assert_array_equal(m1.alpha_vec, m2.alpha_vec)


def test_constant_targets_give_constant_predictions():
    X = np.random.default_rng(0).uniform(size=(20, 2))
    model = gpr.train(X, np.full(20, 2.5))
    assert model.beta == pytest.approx(2.5, abs=1e-9)
    np.testing.assert_allclose(model.predict(np.random.default_rng(1).uniform(size=(7, 2))), 2.5, atol=1e-6)


def test_noise_free_model_interpolates_training_targets():
    X, Y = _prior_draw(n=25, seed=7)
    model = gpr.fit_fixed(X, Y, (0.0, math.log(0.7)), noise_var=0.0)
    np.testing.assert_allclose(model.predict(X), Y, atol=1e-6)


def test_far_prediction_reverts_to_mean():
    X, Y = _prior_draw(seed=8)
    model = gpr.train(X, Y)
    assert model.predict([[1e4, -1e4]])[0] == pytest.approx(model.beta, abs=1e-9)


def test_predictions_ignore_affine_rescaling_of_inputs():
    X, Y = _prior_draw(seed=13)
    scale, shift = np.array([3.0, 0.2]), np.array([-5.0, 40.0])
    Xn = np.random.default_rng(3).uniform(-1, 1, (8, 2))
    base = gpr.train(X, Y, gpr.TrainOptions(seed=2))
    moved = gpr.train(X * scale + shift, Y, gpr.TrainOptions(seed=2))
    np.testing.assert_allclose(moved.predict(Xn * scale + shift), base.predict(Xn), atol=1e-8)


def test_batch_equals_loop_and_checks_dimension():
    X, Y = _prior_draw(seed=9)
    model = gpr.train(X, Y)
    Xn = np.random.default_rng(2).uniform(-1, 1, (6, 2))
    batch = model.predict(Xn)
    np.testing.assert_allclose(batch, [model.predict(x[None, :])[0] for x in Xn], rtol=1e-12)
    with pytest.raises(gpr.GPRError):
        model.predict(np.ones((2, 3)))


def test_training_needs_enough_points():
    with pytest.raises(gpr.GPRError):
        gpr.train(np.ones((3, 1)), np.ones(3))


def _table(ps, rs=(0.8, 0.1, 0.3, 0.05)):
    return {k: DcorrResult(r, p, 1000) for k, r, p in zip(("a", "b", "T", "s0"), rs, ps)}


def test_select_features_rules():
    assert gpr.select_features(_table((0.2, 0.3, 0.4, 0.9))) == ["a"]
    assert gpr.select_features(_table((0.001, 0.01, 0.001, 0.4))) == ["a", "b", "T"]
    assert gpr.select_features(_table((0.2, 0.3, 0.4, 0.9)), threshold=1.0) == ["a", "b", "T", "s0"]
    assert gpr.select_features(_table((0.9, 0.01, 0.9, 0.9), rs=(0.2, 0.1, 0.5, 0.1))) == ["b", "T"]


def test_kfold_partition():
    folds = gpr.kfold_indices(23, 5, seed=3)
    assert sorted(np.concatenate(folds).tolist()) == list(range(23))
    assert [f.size for f in folds] == [5, 5, 5, 4, 4]


def test_leave_one_out_runs():
    X, Y = _prior_draw(n=10, seed=10)
    rep = gpr.cross_validate(X, Y, k=10, seed=0, opts=gpr.TrainOptions(restarts=3))
    assert rep.folds == 10 and all(math.isnan(r) for r in rep.fold_r_square)
    assert np.isfinite(rep.r_square) and rep.rmse > 0


def test_cross_validation_is_deterministic_and_validated():
    X, Y = _prior_draw(n=40, seed=11)
    r1 = gpr.cross_validate(X, Y, k=5, seed=4)
    r2 = gpr.cross_validate(X, Y, k=5, seed=4)
    assert (r1.r_square, r1.rmse, r1.fold_rmse) == (r2.r_square, r2.rmse, r2.fold_rmse)
    assert r1.r_square > 0.8
    with pytest.raises(gpr.GPRError):
        gpr.cross_validate(X, Y, k=1)
    with pytest.raises(gpr.GPRError):
        gpr.cross_validate(X[:3], Y[:3], k=5)


def test_model_round_trip(tmp_path):
    X, Y = _prior_draw(seed=12)
    model = gpr.train(X, Y, feature_names=["a", "T"])
    path = tmp_path / "m.json"
    gpr.save_model(model, path)
    back = gpr.load_model(path)
    assert back.feature_names == ("a", "T")
    np.testing.assert_array_equal(back.predict(X), model.predict(X))
    doc = json.loads(path.read_text())
    doc["format"] = "other/9"
    path.write_text(json.dumps(doc))
    with pytest.raises(gpr.GPRError):
        gpr.load_model(path)
