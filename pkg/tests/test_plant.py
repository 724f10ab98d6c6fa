import math

import numpy as np
import pytest

from flatmpc import plant
from flatmpc.harness.oracles import fine_integration, flat_input_by_differences

P = plant.TRUE_PARAMS

# DOP853 at rtol 1e-13 from (0, 0, 0) with u = 0.1 held for 0.02 s
STEP_FROM_REST = np.array([6.493456907168422e-06, 0.0009655281707917368, 0.009516258196404044])


def test_equilibrium_is_fixed():
    s = plant.step_truth(plant.PhysState(0.0, 0.0, 0.0), 0.0, 0.02)
    assert s == plant.PhysState(0.0, 0.0, 0.0)


def test_pitch_fixed_point():
    s = plant.step_truth(plant.PhysState(0.0, 0.0, 0.3), 0.3, 0.5)
    assert s.theta == 0.3


def test_rk4_step_matches_fine_integration():
    s = plant.step_truth(plant.PhysState(0.0, 0.0, 0.0), 0.1, 0.02, P)
    assert np.max(np.abs(s.as_array() - STEP_FROM_REST)) <= 1e-8
    # pitch has the closed form u (1 - exp(-t / tau))
    assert abs(STEP_FROM_REST[2] - 0.1 * (1.0 - math.exp(-0.1))) < 1e-15


def test_rk4_step_random_states(rng):
    for _ in range(20):
        s0 = plant.PhysState(*rng.normal(0.0, 0.5, size=3))
        u = rng.uniform(-0.7, 0.7)
        got = plant.step_truth(s0, u, 0.02, P).as_array()
        assert np.max(np.abs(got - fine_integration(s0, u, 0.02, P))) <= 1e-8


def test_step_rejects_bad_input():
    with pytest.raises(ValueError):
        plant.step_truth(plant.PhysState(0.0, 0.0, 0.0), 0.0, 0.0)
    with pytest.raises(plant.IntegrationError):
        plant.step_truth(plant.PhysState(0.0, 0.0, 0.0), float("nan"), 0.02)


def test_phys_to_flat_known_value():
    z = plant.phys_to_flat(plant.PhysState(1.0, 2.0, math.pi / 2), P)
    np.testing.assert_allclose(z, [1.0, 2.0, 9.4], atol=1e-12)


def test_pitch_round_trip(rng):
    for _ in range(100):
        s = plant.PhysState(rng.normal(), rng.normal(), rng.uniform(-1.4, 1.4))
        assert abs(plant.flat_to_pitch(plant.phys_to_flat(s, P), P) - s.theta) <= 1e-12


def test_flat_domain():
    z = np.array([0.0, 0.0, 10.5])
    assert not plant.in_domain(z, P)
    with pytest.raises(plant.FlatDomainError):
        plant.flat_to_pitch(z, P)
    assert plant.flat_to_pitch(z, P, clamp=True) == pytest.approx(math.pi / 2, abs=1e-4)


def test_flat_input_at_hover():
    assert plant.true_psi(np.zeros(3), 0.1) == pytest.approx(5.0, abs=1e-12)
    assert plant.true_psi_inverse(np.zeros(3), 5.0) == pytest.approx(0.1, abs=1e-12)
    assert plant.prior_psi(np.zeros(3), 0.1) == pytest.approx(40.0, abs=1e-12)
    assert plant.affine_terms(np.zeros(3))[1] == pytest.approx(50.0)


def test_flat_input_matches_differences(rng):
    for _ in range(10):
        s = plant.PhysState(rng.normal(), rng.normal(), rng.uniform(-0.8, 0.8))
        u = rng.uniform(-0.5, 0.5)
        v = plant.true_psi(plant.phys_to_flat(s, P), u)
        assert abs(v - flat_input_by_differences(s, u, P)) <= 1e-4


def test_inverse_round_trip(rng):
    for _ in range(50):
        z = np.array([rng.normal(), rng.normal(), rng.uniform(-5.0, 5.0)])
        u = rng.uniform(-0.5, 0.5)
        assert plant.psi_inverse(z, plant.psi(z, u)) == pytest.approx(u, abs=1e-12)


def test_inverse_singular_at_vertical_pitch():
    z = plant.phys_to_flat(plant.PhysState(0.0, 0.0, math.pi / 2), P)
    with pytest.raises(plant.FlatDomainError):
        plant.psi_inverse(z, 1.0, P)


def test_invalid_params():
    with pytest.raises(ValueError):
        plant.PlantParams(Gamma=-1.0, gamma=0.0, tau=0.1)
