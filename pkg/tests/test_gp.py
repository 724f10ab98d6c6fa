import math

import numpy as np
import pytest
from scipy.optimize import approx_fprime

from flatmpc import gp, plant
from flatmpc.harness.oracles import generic_gp_posterior

HP = gp.Hyperparams(4.0, (0.7, 0.9, 1.3), 900.0, (1.1, 0.8, 1.6), 1e-3)


def _data(rng, n=30, noise=0.01):
    Z = rng.normal(0.0, 0.5, size=(n, 3))
    U = rng.uniform(-0.5, 0.5, size=n)
    y = np.array([plant.true_psi(z, u, clamp=True) for z, u in zip(Z, U)]) + noise * rng.normal(size=n)
    return Z, U, y


def test_gamma_form_matches_generic_posterior(rng):
    Z, U, y = _data(rng)
    model = gp.AffineGP(Z, U, y, HP)
    for _ in range(100):
        z, u = rng.normal(0.0, 0.5, size=3), rng.uniform(-0.6, 0.6)
        g = model.gamma_coeffs(z, clamp=False)
        m, v = generic_gp_posterior(Z, U, y, HP, z, u, jitter=model.jitter)
        assert abs(g.mean(u) - m) <= 1e-8
        assert abs(g.variance(u) - v) <= 1e-8


def test_jitter_is_part_of_the_posterior(rng):
    # duplicated inputs with negligible noise make the Gram matrix singular
    Z, U, y = _data(rng, n=10)
    Z, U, y = np.vstack((Z, Z)), np.concatenate((U, U)), np.concatenate((y, y))
    hp = gp.Hyperparams(4.0, (0.7, 0.9, 1.3), 900.0, (1.1, 0.8, 1.6), 1e-12)
    model = gp.AffineGP(Z, U, y, hp)
    assert gp.JITTER_START <= model.jitter <= gp.JITTER_MAX
    z, u = rng.normal(0.0, 0.5, size=3), 0.2
    m, v = generic_gp_posterior(Z, U, y, hp, z, u, jitter=model.jitter)
    g = model.gamma_coeffs(z, clamp=False)
    assert abs(g.mean(u) - m) <= 1e-6 * max(1.0, abs(m))


def test_gram_is_psd(rng):
    Z = rng.normal(size=(40, 3))
    U = rng.uniform(-1.0, 1.0, size=40)
    K = gp.gram(Z, U, HP, noise=False)
    np.testing.assert_allclose(K, K.T, atol=1e-12)
    assert np.linalg.eigvalsh(K).min() >= -1e-10 * np.abs(K).max()


def test_kernel_eval_matches_gram(rng):
    Z = rng.normal(size=(5, 3))
    U = rng.uniform(-1.0, 1.0, size=5)
    K = gp.gram(Z, U, HP)
    assert gp.kernel_eval((Z[1], U[1]), (Z[3], U[3]), HP) == pytest.approx(K[1, 3], rel=1e-12)
    assert gp.kernel_eval((Z[2], U[2]), (Z[2], U[2]), HP, same_index=True) == pytest.approx(K[2, 2], rel=1e-12)


def test_lml_gradient(rng):
    Z, U, y = _data(rng, n=25)
    p = HP.to_log()
    _, grad = gp.log_marginal_likelihood(p, Z, U, y, with_grad=True)
    fd = approx_fprime(p, lambda q: gp.log_marginal_likelihood(q, Z, U, y), 1e-6)
    np.testing.assert_allclose(grad, fd, rtol=1e-4, atol=1e-4 * np.abs(fd).max())


def test_hyperparameter_recovery():
    rng = np.random.default_rng(7)
    truth = gp.Hyperparams(2.0, (0.8, 1.2, 1.5), 50.0, (1.0, 1.5, 2.0), 1e-2)
    n = 200
    Z = rng.uniform(-2.0, 2.0, size=(n, 3))
    U = rng.uniform(-0.5, 0.5, size=n)
    y = np.linalg.cholesky(gp.gram(Z, U, truth) + 1e-10 * np.eye(n)) @ rng.standard_normal(n)
    fitted = gp.fit(Z, U, y, n_restarts=5, seed=0)
    assert np.all(np.abs(fitted.hp.to_log() - truth.to_log()) <= math.log(1.3))


def test_identical_inputs_average():
    Z = np.zeros((2, 3))
    U = np.array([0.1, 0.1])
    y = np.array([1.0, 2.0])
    model = gp.fit(Z, U, y, n_restarts=3)
    mean, var = model.predict(Z[0], 0.1)
    assert model.hp.noise_var > 1e-3
    assert abs(mean - 1.5) <= math.sqrt(var + model.hp.noise_var)


def test_interpolates_training_points(rng):
    Z, U, y = _data(rng, n=60, noise=1e-3)
    model = gp.fit(Z, U, y, n_restarts=3)
    sigma = math.sqrt(model.hp.noise_var)
    for i in range(10):
        assert abs(model.predict(Z[i], U[i])[0] - y[i]) <= 3.0 * (sigma + 1e-6)


def test_variance_contracts_near_data(rng):
    Z, U, y = _data(rng, n=60)
    model = gp.fit(Z, U, y, n_restarts=3)
    near = model.predict(Z[0], U[0])[1]
    far = model.predict(Z[0] + 50.0, U[0])[1]
    assert near <= far


def test_empty_model_is_prior():
    model = gp.AffineGP(np.zeros((0, 3)), np.zeros(0), np.zeros(0), HP)
    g = model.gamma_coeffs(np.zeros(3))
    assert (g.g1, g.g2, g.g3, g.g4, g.g5) == (0.0, 0.0, HP.var_alpha, 0.0, HP.var_beta)


def test_std_affine_identity(rng):
    for _ in range(50):
        r, b, c = rng.uniform(0.1, 2.0), rng.normal(), rng.uniform(0.0, 1.0)
        g = gp.GammaCoeffs(0.0, 1.0, b * b + c * c, 2.0 * r * b, r * r)
        a0, b0, c0 = g.std_affine()
        for u in rng.uniform(-1.0, 1.0, size=5):
            assert math.hypot(a0 * u + b0, c0) == pytest.approx(g.std(u), abs=1e-12)


def test_clamped_variance_nonnegative(rng):
    for _ in range(100):
        g = gp.GammaCoeffs(0.0, 1.0, rng.normal(0.0, 0.1), rng.normal(0.0, 1.0), rng.normal(0.0, 1.0)).clamped()
        u = np.linspace(-3.0, 3.0, 61)
        assert np.all(g.g3 + g.g4 * u + g.g5 * u * u >= -1e-7)


def test_exact_model_has_no_variance():
    m = gp.ExactModel()
    mean, var = m.predict(np.zeros(3), 0.1)
    assert mean == pytest.approx(5.0)
    assert var == 0.0


def test_model_file_round_trip(tmp_path, rng):
    Z, U, y = _data(rng, n=20)
    model = gp.AffineGP(Z, U, y, HP)
    gp.save_dataset(tmp_path / "d.csv", Z, U, y)
    assert (tmp_path / "d.csv").read_text().splitlines()[0] == "z1,z2,z3,u,v"
    gp.save_model(tmp_path / "m.txt", model, tmp_path / "d.csv")
    back = gp.load_model(tmp_path / "m.txt")
    assert back.hp == model.hp
    z = rng.normal(size=3)
    assert back.gamma_coeffs(z) == model.gamma_coeffs(z)


def test_dataset_header_checked(tmp_path):
    (tmp_path / "bad.csv").write_text("a,b,c,d,e\n1,2,3,4,5\n")
    with pytest.raises(ValueError):
        gp.load_dataset(tmp_path / "bad.csv")


def test_bad_inputs():
    with pytest.raises(ValueError):
        gp.fit(np.zeros((1, 3)), np.zeros(1), np.zeros(1))
    with pytest.raises(ValueError):
        gp.AffineGP(np.zeros((2, 3)), np.zeros(2), np.array([0.0, np.nan]), HP)
    with pytest.raises(ValueError):
        gp.Hyperparams(-1.0, (1, 1, 1), 1.0, (1, 1, 1), 1.0)
