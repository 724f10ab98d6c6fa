import math

import numpy as np
import pytest

from flatmpc import fmpc
from flatmpc.harness.config import ExperimentConfig
from flatmpc.harness.oracles import dare_scalar_fixed_point, ocp_grid_oracle

GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0


@pytest.fixture(scope="module")
def setup():
    cfg = ExperimentConfig()
    dyn = fmpc.brunovsky_discretize(3, cfg.dt)
    return cfg.ocp_config(), dyn


def chain_window(dyn, z0, v):
    Z = [np.asarray(z0, dtype=float)]
    for vi in v:
        Z.append(dyn.Ad @ Z[-1] + dyn.Bd[:, 0] * vi)
    return np.array(Z)


def test_discretization():
    dyn = fmpc.brunovsky_discretize(3, 0.1)
    np.testing.assert_array_equal(dyn.Ad, [[1, 0.1, 0], [0, 1, 0.1], [0, 0, 1]])
    np.testing.assert_array_equal(dyn.Bd, [[0], [0], [0.1]])
    with pytest.raises(ValueError):
        fmpc.brunovsky_discretize(0, 0.1)


def test_prediction_matrices(setup, rng):
    ocp, dyn = setup
    Phi, Gam = fmpc.prediction_matrices(dyn, ocp.N)
    z0 = rng.normal(size=3)
    v = rng.normal(size=ocp.N)
    np.testing.assert_allclose((Phi @ z0 + Gam @ v).reshape(ocp.N, 3), chain_window(dyn, z0, v)[1:], atol=1e-12)


def test_unconstrained_first_input_is_linear_feedback(setup, rng):
    ocp, dyn = setup
    mpc = fmpc.FlatMPC(ocp, dyn)
    K = fmpc.equivalent_gain(ocp, dyn)
    for _ in range(100):
        z0 = rng.normal(size=3)
        vr = rng.normal(size=ocp.N)
        Zr = chain_window(dyn, rng.normal(size=3), vr)
        sol = mpc.solve(z0, Zr, vr, constrained=False)
        assert sol.v_star == pytest.approx(float(-(K @ (z0 - Zr[0]))[0]) + vr[0], abs=1e-6)


def test_small_instance_matches_grid():
    dyn = fmpc.brunovsky_discretize(1, 1.0)
    ocp = fmpc.OcpConfig(np.eye(1), 1.0, 2)
    sol = fmpc.FlatMPC(ocp, dyn).solve(np.ones(1), np.zeros((3, 1)), np.zeros(2))
    best, (v0, v1) = ocp_grid_oracle(lambda a, b: (1 + a) ** 2 + (1 + a + b) ** 2 + a * a + b * b)
    assert sol.cost == pytest.approx(best, abs=1e-4)
    np.testing.assert_allclose(sol.v_seq, [v0, v1], atol=2e-3)


def test_zero_reference_at_origin(setup):
    ocp, dyn = setup
    sol = fmpc.FlatMPC(ocp, dyn).solve(np.zeros(3), np.zeros((ocp.N + 1, 3)), np.zeros(ocp.N))
    assert sol.v_star == pytest.approx(0.0, abs=1e-9)


def test_closed_loop_is_stable(setup):
    ocp, dyn = setup
    K = fmpc.equivalent_gain(ocp, dyn)
    assert np.max(np.abs(np.linalg.eigvals(dyn.Ad - dyn.Bd @ K))) < 1.0


def test_cost_matches_direct_evaluation(setup, rng):
    ocp, dyn = setup
    z0 = rng.normal(size=3)
    vr = rng.normal(size=ocp.N)
    Zr = chain_window(dyn, np.zeros(3), vr)
    sol = fmpc.FlatMPC(ocp, dyn).solve(z0, Zr, vr)
    Z = chain_window(dyn, z0, sol.v_seq)
    direct = sum((Z[i + 1] - Zr[i + 1]) @ ocp.Q @ (Z[i + 1] - Zr[i + 1]) + ocp.R * (sol.v_seq[i] - vr[i]) ** 2
                 for i in range(ocp.N))
    assert sol.cost == pytest.approx(direct, rel=1e-7)
    np.testing.assert_allclose(sol.z_seq, Z, atol=1e-9)


def test_halfspaces_hold_on_prediction(setup):
    ocp, dyn = setup
    cfg = fmpc.OcpConfig(ocp.Q, ocp.R, ocp.N, [(np.array([1.0, 0.0, 0.0]), 0.51)])
    Zr = np.tile([1.0, 0.0, 0.0], (ocp.N + 1, 1))
    sol = fmpc.FlatMPC(cfg, dyn).solve(np.zeros(3), Zr, np.zeros(ocp.N))
    assert sol.status == fmpc.OPTIMAL
    assert np.max(sol.z_seq[1:, 0]) <= 0.51 + 1e-7
    assert np.max(sol.z_seq[1:, 0]) >= 0.51 - 1e-3


def test_infeasible_then_relaxed(setup):
    ocp, dyn = setup
    cfg = fmpc.OcpConfig(ocp.Q, ocp.R, ocp.N, [(np.array([0.0, 1.0, 0.0]), 1.0)])
    mpc = fmpc.FlatMPC(cfg, dyn)
    z0 = np.array([0.0, 1.05, 2.0])  # moving too fast and still accelerating
    Zr = np.zeros((ocp.N + 1, 3))
    assert mpc.solve(z0, Zr, np.zeros(ocp.N)).status == fmpc.INFEASIBLE
    s = mpc.min_violation(z0, Zr, np.zeros(ocp.N))
    # z2 at step 1 is fixed by z0: 1.05 + 0.02 * 2.0
    assert s == pytest.approx(0.09, abs=1e-6)
    sol, slack = mpc.solve_relaxed(z0, Zr, np.zeros(ocp.N))
    assert sol.status == fmpc.OPTIMAL
    assert slack >= s
    assert np.max(sol.z_seq[1:, 1]) <= 1.0 + slack + 1e-7


def test_min_violation_zero_when_feasible(setup):
    ocp, dyn = setup
    cfg = fmpc.OcpConfig(ocp.Q, ocp.R, ocp.N, [(np.array([1.0, 0.0, 0.0]), 0.51)])
    s = fmpc.FlatMPC(cfg, dyn).min_violation(np.zeros(3), np.zeros((ocp.N + 1, 3)), np.zeros(ocp.N))
    assert s <= 1e-6


def test_dare_scalar():
    P, K = fmpc.dare_solve(1.0, 1.0, 1.0, 1.0)
    assert P[0, 0] == pytest.approx(GOLDEN, abs=1e-9)
    assert dare_scalar_fixed_point() == pytest.approx(GOLDEN, abs=1e-12)
    assert K[0, 0] == pytest.approx(GOLDEN / (1.0 + GOLDEN), abs=1e-9)


def test_dare_default_configuration(setup):
    ocp, dyn = setup
    P, K = fmpc.dare_solve(ocp.Q, ocp.R, dyn.Ad, dyn.Bd)
    assert fmpc.dare_residual(P, ocp.Q, ocp.R, dyn.Ad, dyn.Bd) <= 1e-8
    np.testing.assert_allclose(P, P.T, rtol=0, atol=0)
    assert np.linalg.eigvalsh(P).min() > 0


def test_dare_not_stabilizable():
    with pytest.raises(fmpc.DareError):
        fmpc.dare_solve(1.0, 1.0, 2.0, 0.0, max_iter=500)


def test_config_validation():
    with pytest.raises(ValueError):
        fmpc.OcpConfig(np.diag([1.0, -1.0, 1.0]), 1.0, 5)
    with pytest.raises(ValueError):
        fmpc.OcpConfig(np.eye(3), 0.0, 5)
    with pytest.raises(ValueError):
        fmpc.OcpConfig(np.eye(3), 1.0, 0)


def test_window_shape_checked(setup):
    ocp, dyn = setup
    mpc = fmpc.FlatMPC(ocp, dyn)
    with pytest.raises(ValueError):
        mpc.solve(np.zeros(3), np.zeros((ocp.N, 3)), np.zeros(ocp.N))
    with pytest.raises(ValueError):
        mpc.solve(np.zeros(3), np.zeros((ocp.N + 1, 3)), np.zeros(ocp.N - 1))
