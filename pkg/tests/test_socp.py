import numpy as np
import pytest

from flatmpc import _backend, _pykernels, socp
from flatmpc.harness.oracles import filter_grid_oracle, random_filter_instance


def test_scalar_qp():
    # 0.5 * 2 x^2 - 4 x is stationary at x = 2
    sol = socp.solve(socp.qp_as_socp([[2.0]], [-4.0]))
    assert sol.status == socp.OPTIMAL
    assert sol.x[0] == pytest.approx(2.0, abs=1e-6)
    assert sol.objective == pytest.approx(-4.0, abs=1e-6)


def test_box_qp_at_center():
    sol = socp.solve(socp.qp_as_socp(np.eye(2), np.zeros(2), lb=[-1, -1], ub=[1, 1]))
    np.testing.assert_allclose(sol.x[:2], 0.0, atol=1e-6)


def test_unconstrained_qp_matches_linear_solve(rng):
    for _ in range(20):
        M = rng.normal(size=(5, 5))
        H = M @ M.T + 0.5 * np.eye(5)
        g = rng.normal(size=5)
        sol = socp.solve(socp.qp_as_socp(H, g))
        np.testing.assert_allclose(sol.x[:5], -np.linalg.solve(H, g), atol=1e-6)


def test_constrained_qp_matches_grid(rng):
    g1 = np.linspace(-3.0, 3.0, 1201)
    X, Y = np.meshgrid(g1, g1, indexing="ij")
    for _ in range(10):
        M = rng.normal(size=(2, 2))
        H = M @ M.T + 0.2 * np.eye(2)
        g = rng.normal(size=2) * 3.0
        a = rng.normal(size=2)
        beta = rng.uniform(-0.5, 0.5)
        sol = socp.solve(socp.qp_as_socp(H, g, [(a, beta)], lb=[-3, -3], ub=[3, 3]))
        vals = 0.5 * (H[0, 0] * X * X + 2 * H[0, 1] * X * Y + H[1, 1] * Y * Y) + g[0] * X + g[1] * Y
        vals = np.where(a[0] * X + a[1] * Y <= beta, vals, np.inf)
        x = sol.x[:2]
        got = 0.5 * x @ H @ x + g @ x
        assert got <= vals.min() + 1e-6
        assert a @ x <= beta + 1e-7


def test_filter_problems_match_grid_oracle():
    rng = np.random.default_rng(99)
    for _ in range(100):
        inst = random_filter_instance(rng)
        prob = inst.problem()
        sol = socp.solve(prob)
        ref, _ = filter_grid_oracle(inst)
        assert ref is not None
        assert sol.status == socp.OPTIMAL
        got = float(inst.objective(sol.x[0]))
        assert got - ref <= 1e-5 * max(1.0, abs(ref))
        assert prob.max_violation(sol.x) <= 1e-7


def test_infeasible_flagged():
    rng = np.random.default_rng(7)
    for _ in range(30):
        inst = random_filter_instance(rng, infeasible=True)
        assert filter_grid_oracle(inst)[0] is None
        assert socp.solve(inst.problem()).status == socp.INFEASIBLE


def test_infeasible_halfspaces():
    prob = socp.qp_as_socp(np.eye(2), np.zeros(2), [([1.0, 0.0], -1.0), ([-1.0, 0.0], -1.0)])
    assert socp.solve(prob).status == socp.INFEASIBLE


def test_unbounded():
    assert socp.solve(socp.SocpProblem(np.array([1.0]))).status == socp.UNBOUNDED
    prob = socp.SocpProblem(np.array([1.0, 0.0]), lb=np.array([-np.inf, 0.0]), ub=np.array([np.inf, 1.0]))
    assert socp.solve(prob).status == socp.UNBOUNDED
    # ray inside a cone: maximize x subject to |y| <= x
    cone = socp.Cone(np.array([[0.0, 1.0]]), np.zeros(1), np.array([1.0, 0.0]), 0.0)
    assert socp.solve(socp.SocpProblem(np.array([-1.0, 0.0]), [cone])).status == socp.UNBOUNDED


def test_second_order_cone_projection():
    # nearest point to (2, 2) in the disc of radius 1: minimize -x - y
    cone = socp.Cone(np.eye(2), np.zeros(2), np.zeros(2), 1.0)
    sol = socp.solve(socp.SocpProblem(np.array([-1.0, -1.0]), [cone]))
    np.testing.assert_allclose(sol.x, [np.sqrt(0.5)] * 2, atol=1e-7)


def test_hint_outside_interior_ignored():
    prob = socp.qp_as_socp([[2.0]], [-4.0], [([1.0], 1.0)])
    sol = socp.solve(prob, x0=np.array([5.0, 0.0]))
    assert sol.x[0] == pytest.approx(1.0, abs=1e-6)


def test_dump_round_trip(tmp_path, rng):
    inst = random_filter_instance(rng)
    prob = inst.problem()
    socp.dump(prob, tmp_path / "p.txt")
    back = socp.load(tmp_path / "p.txt")
    assert socp.dumps(back) == socp.dumps(prob)
    a, b = socp.solve(prob), socp.solve(back)
    np.testing.assert_array_equal(a.x, b.x)


def test_dump_format():
    prob = socp.qp_as_socp([[2.0]], [-4.0])
    text = socp.dumps(prob)
    assert text.splitlines()[:2] == ["m 2", "f -4.0 1.0"]
    assert socp.loads("# comment\n" + text + "\n").n_vars == 2
    with pytest.raises(socp.SocpError):
        socp.loads("A 1 2\n")


def test_problem_validation():
    with pytest.raises(socp.SocpError):
        socp.SocpProblem(np.zeros(2), lb=np.zeros(3))
    with pytest.raises(socp.SocpError):
        socp.SocpProblem(np.zeros(2), lb=np.ones(2), ub=np.zeros(2))
    with pytest.raises(socp.SocpError):
        socp.SocpProblem(np.zeros(2), [socp.Cone(np.zeros((1, 3)), np.zeros(1), np.zeros(3), 0.0)])
    with pytest.raises(socp.SocpError):
        socp.solve(socp.SocpProblem(np.zeros(1), lb=np.zeros(1), ub=np.zeros(1)))


def test_psd_factor_singular():
    M = np.array([[1.0, 1.0], [1.0, 1.0]])
    L = socp.psd_factor(M)
    np.testing.assert_allclose(L @ L.T, M, atol=1e-12)
    with pytest.raises(np.linalg.LinAlgError):
        socp.psd_factor(-np.eye(2))


@pytest.mark.skipif("cython" not in _backend.available_backends(), reason="compiled kernels not built")
def test_backends_agree(rng):
    cy = _backend.available_backends()["cython"]
    X1, X2 = rng.normal(size=(4, 3)), rng.normal(size=(6, 3))
    inv = np.array([0.5, 1.0, 2.0])
    np.testing.assert_allclose(cy.se_ard(X1, X2, inv, 2.0), _pykernels.se_ard(X1, X2, inv, 2.0), rtol=1e-14)
    for _ in range(20):
        prob = random_filter_instance(rng).problem()
        cp = socp._Compiled(prob)
        x = socp._box_center(prob.lb, prob.ub)
        x[1] = 10.0
        args = (cp.G, cp.h, cp.A, cp.b, cp.C, cp.d, cp.offs)
        assert cy.barrier(x, *args) == pytest.approx(_pykernels.barrier(x, *args), rel=1e-12)
        if not np.isfinite(_pykernels.barrier(x, *args)):
            continue
        out_c = cy.center(x, 1.0, prob.f, *args, cp.AtA, 1e-9, 100, -1, 0.0)
        out_p = _pykernels.center(x, 1.0, prob.f, *args, cp.AtA, 1e-9, 100, -1, 0.0)
        assert out_c[2] == out_p[2]
        np.testing.assert_allclose(out_c[0], out_p[0], rtol=1e-7, atol=1e-9)
