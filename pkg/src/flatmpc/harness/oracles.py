"""Independent reference computations for derived values, and the checks built on them.

Each oracle recomputes a quantity by a route that does not share code with
the implementation it checks: a high-order adaptive integrator for the
plant step, the full composite-kernel GP for the gamma form, nested grid
search for the optimizers, the scalar inequalities for the cones.
`run_checks` drives the ``oracle-check`` CLI subcommand.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .. import fmpc, gp, plant, safety, socp
from .config import ExperimentConfig
from .reference import ReferenceSpec, gen_reference, reference_at

GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0


# -- plant ----------------------------------------------------------------

def fine_integration(s: plant.PhysState, u: float, dt: float, params: plant.PlantParams) -> np.ndarray:
    """Held-input step by an adaptive 8th-order Runge-Kutta at tight tolerance."""
    G, g, tau = params.Gamma, params.gamma, params.tau

    def rhs(_, y):
        return [y[1], G * math.sin(y[2]) - g * y[1], (u - y[2]) / tau]

    sol = solve_ivp(rhs, (0.0, dt), s.as_array(), method="DOP853", rtol=1e-13, atol=1e-15)
    return sol.y[:, -1]


def flat_input_by_differences(s: plant.PhysState, u: float, params: plant.PlantParams, h: float = 1e-4) -> float:
    """``dz3/dt`` at ``s`` by central differences of the integrated trajectory."""
    fwd = fine_integration(s, u, h, params)
    # integrate backwards in time with the same held input
    G, g, tau = params.Gamma, params.gamma, params.tau
    back = solve_ivp(lambda _, y: [y[1], G * math.sin(y[2]) - g * y[1], (u - y[2]) / tau],
                     (0.0, -h), s.as_array(), method="DOP853", rtol=1e-13, atol=1e-15).y[:, -1]

    def z3(y):
        return G * math.sin(y[2]) - g * y[1]

    return (z3(fwd) - z3(back)) / (2.0 * h)


# -- GP -------------------------------------------------------------------

def composite_kernel(a, b, hp: gp.Hyperparams) -> float:
    """``k((z,u),(z',u'))`` written out term by term."""
    za, ua = np.asarray(a[:3]), a[3]
    zb, ub = np.asarray(b[:3]), b[3]
    da = (za - zb) / np.asarray(hp.ls_alpha)
    db = (za - zb) / np.asarray(hp.ls_beta)
    return hp.var_alpha * math.exp(-0.5 * float(da @ da)) + ua * ub * hp.var_beta * math.exp(-0.5 * float(db @ db))


class GenericGP:
    """Standard GP regression on the 4-d features ``(z, u)`` with the composite kernel.

    ``jitter`` is the diagonal jitter the model under test added to its Gram matrix.
    """

    def __init__(self, Z, U, y, hp: gp.Hyperparams, jitter: float = 0.0):
        self.A = np.column_stack((np.asarray(Z, dtype=float), np.asarray(U, dtype=float)))
        self.hp = hp
        n = self.A.shape[0]
        K = np.array([[composite_kernel(self.A[i], self.A[j], hp) for j in range(n)] for i in range(n)])
        self.K = K + (hp.noise_var + jitter) * np.eye(n)
        self.alpha = np.linalg.solve(self.K, np.asarray(y, dtype=float))

    def posterior(self, z, u):
        q = np.append(np.asarray(z, dtype=float), u)
        k = np.array([composite_kernel(q, a, self.hp) for a in self.A])
        mean = float(k @ self.alpha)
        var = float(composite_kernel(q, q, self.hp) - k @ np.linalg.solve(self.K, k))
        return mean, var


def generic_gp_posterior(Z, U, y, hp: gp.Hyperparams, z, u, jitter: float = 0.0):
    """One-off `GenericGP` posterior ``(mean, variance)`` at ``(z, u)``."""
    return GenericGP(Z, U, y, hp, jitter).posterior(z, u)


# -- optimization ---------------------------------------------------------

def dare_scalar_fixed_point(a=1.0, b=1.0, q=1.0, r=1.0, iters=200) -> float:
    """Iterate the scalar Riccati map to its fixed point."""
    p = q
    for _ in range(iters):
        p = q + a * a * p - (a * b * p) ** 2 / (r + b * b * p)
    return p


def ocp_grid_oracle(cost, lo=-10.0, hi=10.0, pitch=1e-3):
    """Minimize a 2-input cost over a square grid; returns ``(value, (v0, v1))``."""
    g = np.arange(lo, hi + 0.5 * pitch, pitch)
    best = (math.inf, None)
    for v0 in g:
        vals = cost(v0, g)
        i = int(np.argmin(vals))
        if vals[i] < best[0]:
            best = (float(vals[i]), (float(v0), float(g[i])))
    return best


@dataclass
class FilterInstance:
    """A single-tick filter problem in scalar form.

    The feasible inputs are those with ``stab(u) <= 0`` (when ``w`` is set)
    and ``state_i(u) <= 0`` for every half-space, inside ``[u_min, u_max]``.
    The objective over ``u`` is ``E[(v - v*)^2]`` up to a constant.
    """

    gamma: gp.GammaCoeffs
    v_star: float
    v_nom: float
    w: safety.WTerms | None
    beta_sqrt: float
    halfspaces: list
    z_star: np.ndarray
    p_level: float
    u_min: float
    u_max: float
    dt: float

    def sigma(self, u):
        g = self.gamma
        return np.sqrt(np.maximum(g.g3 + g.g4 * u + g.g5 * u * u, 0.0))

    def mu(self, u):
        return self.gamma.g1 + self.gamma.g2 * u

    def stab(self, u):
        w = self.w
        return w.w1 * (self.mu(u) - self.v_nom) + abs(w.w1) * self.beta_sqrt * self.sigma(u) - (w.w3 - w.w2)

    def state(self, i, u):
        H, b = self.halfspaces[i]
        Ad = np.eye(3) + self.dt * np.eye(3, k=1)
        hb = H[2] * self.dt
        qp = statistics.NormalDist().inv_cdf(self.p_level)
        return float(H @ Ad @ self.z_star) + hb * self.mu(u) + qp * abs(hb) * self.sigma(u) - b

    def slack(self, u):
        """Largest scalar constraint value at each ``u`` (feasible where ``<= 0``)."""
        u = np.asarray(u, dtype=float)
        out = np.full(u.shape, -np.inf)
        if self.w is not None:
            out = np.maximum(out, self.stab(u))
        for i in range(len(self.halfspaces)):
            out = np.maximum(out, self.state(i, u))
        return out

    def objective(self, u):
        g = self.gamma
        return (g.g2 ** 2 + g.g5) * u * u + (2.0 * g.g1 * g.g2 - 2.0 * g.g2 * self.v_star + g.g4) * u

    def problem(self):
        """The same instance as an SOCP in ``[u, q]`` built by the filter module."""
        dyn = fmpc.brunovsky_discretize(3, self.dt)
        cones = [safety.epigraph_cone(self.gamma)]
        if self.w is not None:
            cones.append(safety.stability_cone(self.gamma, self.w, self.v_nom, self.beta_sqrt))
        for H, b in self.halfspaces:
            cones.append(safety.tighten_halfspace(H, b, self.gamma, self.z_star, self.p_level, dyn))
        return socp.SocpProblem(safety.objective(self.gamma, self.v_star), cones,
                                lb=np.array([self.u_min, 0.0]), ub=np.array([self.u_max, np.inf]))


def random_filter_instance(rng: np.random.Generator, infeasible: bool = False) -> FilterInstance:
    """Draw an instance with the structure of the per-tick filter.

    With ``infeasible`` the state half-space is placed so that no input in
    the box satisfies it.
    """
    r, b0, c0 = rng.uniform(0.05, 2.0), rng.normal(0.0, 1.0), rng.uniform(0.01, 1.0)
    gamma = gp.GammaCoeffs(rng.normal(0.0, 5.0), rng.uniform(5.0, 80.0) * rng.choice([-1.0, 1.0]),
                           b0 * b0 + c0 * c0, 2.0 * r * b0, r * r)
    u_max = math.radians(rng.uniform(5.0, 45.0))
    inst = FilterInstance(
        gamma=gamma, v_star=rng.normal(0.0, 20.0), v_nom=rng.normal(0.0, 20.0), w=None,
        beta_sqrt=rng.uniform(0.5, 3.0), halfspaces=[], z_star=rng.normal(0.0, 0.5, size=3),
        p_level=rng.uniform(0.5, 0.99), u_min=-u_max, u_max=u_max, dt=0.02,
    )
    # Stability: pick the threshold so a random interior input is feasible (or not).
    u_pick = rng.uniform(-u_max, u_max)
    w1 = rng.normal(0.0, 1.0)
    w2 = rng.uniform(0.0, 1.0)
    inst.w = safety.WTerms(w1, w2, 0.0)
    margin = rng.uniform(0.0, 2.0)
    w3 = float(inst.stab(u_pick)) + w2 + margin
    inst.w = safety.WTerms(w1, w2, w3)
    H = np.zeros(3)
    H[rng.integers(0, 3)] = rng.choice([-1.0, 1.0])
    inst.halfspaces = [(H, 0.0)]
    if infeasible:
        # Bound below the smallest reachable value over the box.
        grid = np.linspace(inst.u_min, inst.u_max, 2001)
        lowest = min(inst.state(0, u) for u in grid)
        inst.halfspaces = [(H, lowest - rng.uniform(0.05, 1.0))]
    else:
        inst.halfspaces = [(H, inst.state(0, u_pick) + rng.uniform(0.0, 0.5))]
    return inst


def filter_grid_oracle(inst: FilterInstance, pitch: float = 1e-3, levels: int = 8):
    """Nested grid search for the minimizing input.

    Returns ``(objective, u)``, or ``(None, None)`` when no grid point is feasible.
    """
    lo, hi = inst.u_min, inst.u_max
    n = max(int(math.ceil((hi - lo) / pitch)), 2) + 1
    grid = np.linspace(lo, hi, n)
    best = None
    for _ in range(levels):
        ok = inst.slack(grid) <= 0.0
        if not np.any(ok):
            if best is None:
                return None, None
            break
        vals = np.where(ok, inst.objective(grid), np.inf)
        i = int(np.argmin(vals))
        if best is None or vals[i] <= best[0]:
            best = (float(vals[i]), float(grid[i]))
        step = grid[1] - grid[0]
        grid = np.linspace(max(lo, best[1] - 2 * step), min(hi, best[1] + 2 * step), 201)
    return best


# -- checks ---------------------------------------------------------------

@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _check(name, err, tol):
    return CheckResult(name, bool(err <= tol), f"err={err:.3g} tol={tol:g}")


def check_rk4_step():
    s = plant.PhysState(0.0, 0.0, 0.0)
    got = plant.step_truth(s, 0.1, 0.02, plant.TRUE_PARAMS).as_array()
    return _check("rk4 step vs adaptive integrator", float(np.max(np.abs(got - fine_integration(s, 0.1, 0.02, plant.TRUE_PARAMS)))), 1e-8)


def check_flat_map():
    z = plant.phys_to_flat(plant.PhysState(1.0, 2.0, math.pi / 2), plant.TRUE_PARAMS)
    return _check("flat map at (1, 2, pi/2)", float(np.max(np.abs(z - [1.0, 2.0, 9.4]))), 1e-12)


def check_pitch_roundtrip():
    rng = np.random.default_rng(1)
    err = 0.0
    for _ in range(200):
        s = plant.PhysState(rng.normal(), rng.normal(), rng.uniform(-1.2, 1.2))
        err = max(err, abs(plant.flat_to_pitch(plant.phys_to_flat(s)) - s.theta))
    return _check("pitch recovery round trip", err, 1e-12)


def check_flat_input():
    v = plant.true_psi(np.zeros(3), 0.1)
    vp = plant.prior_psi(np.zeros(3), 0.1)
    u = plant.true_psi_inverse(np.zeros(3), 5.0)
    err = max(abs(v - 5.0), abs(vp - 40.0), abs(u - 0.1))
    return _check("flat input at hover (5, 40, inverse 0.1)", err, 1e-12)


def check_flat_input_differences():
    rng = np.random.default_rng(2)
    err = 0.0
    for _ in range(20):
        s = plant.PhysState(rng.normal(), rng.normal(), rng.uniform(-0.6, 0.6))
        u = rng.uniform(-0.5, 0.5)
        err = max(err, abs(plant.true_psi(plant.phys_to_flat(s), u) - flat_input_by_differences(s, u, plant.TRUE_PARAMS)))
    return _check("flat input vs central differences of z3", err, 1e-4)


def check_gamma_form(points: int = 200):
    rng = np.random.default_rng(3)
    Z = rng.normal(0.0, 0.5, size=(30, 3))
    U = rng.uniform(-0.5, 0.5, size=30)
    y = np.array([plant.true_psi(z, u, clamp=True) for z, u in zip(Z, U)]) + 0.01 * rng.normal(size=30)
    hp = gp.Hyperparams(4.0, (0.7, 0.9, 1.3), 900.0, (1.1, 0.8, 1.6), 1e-3)
    model = gp.AffineGP(Z, U, y, hp)
    ref = GenericGP(Z, U, y, hp, jitter=model.jitter)
    err = 0.0
    for _ in range(points):
        z, u = rng.normal(0.0, 0.5, size=3), rng.uniform(-0.6, 0.6)
        g = model.gamma_coeffs(z, clamp=False)
        m, v = ref.posterior(z, u)
        err = max(err, abs(g.mean(u) - m), abs(g.variance(u) - v))
    return _check("GP gamma form vs full-kernel posterior", err, 1e-8)


def check_dare_scalar():
    P, _ = fmpc.dare_solve(1.0, 1.0, 1.0, 1.0)
    err = max(abs(float(P[0, 0]) - GOLDEN), abs(dare_scalar_fixed_point() - GOLDEN))
    return _check("scalar DARE golden ratio", err, 1e-9)


def check_equivalent_gain(states: int = 100):
    cfg = ExperimentConfig()
    ctx_dyn = fmpc.brunovsky_discretize(3, cfg.dt)
    ocp = cfg.ocp_config()
    mpc = fmpc.FlatMPC(ocp, ctx_dyn)
    K = fmpc.equivalent_gain(ocp, ctx_dyn)
    rng = np.random.default_rng(4)
    err = 0.0
    for _ in range(states):
        z0 = rng.normal(0.0, 1.0, size=3)
        vr = rng.normal(0.0, 1.0, size=ocp.N)
        Zr = np.empty((ocp.N + 1, 3))
        Zr[0] = rng.normal(0.0, 1.0, size=3)
        for i in range(ocp.N):
            Zr[i + 1] = ctx_dyn.Ad @ Zr[i] + ctx_dyn.Bd[:, 0] * vr[i]
        sol = mpc.solve(z0, Zr, vr, constrained=False)
        err = max(err, abs(sol.v_star - (float(-(K @ (z0 - Zr[0]))[0]) + vr[0])))
    return _check("unconstrained OCP first input vs -K e + vref", err, 1e-6)


def check_small_ocp():
    dyn = fmpc.brunovsky_discretize(1, 1.0)
    ocp = fmpc.OcpConfig(np.eye(1), 1.0, 2)
    sol = fmpc.FlatMPC(ocp, dyn).solve(np.ones(1), np.zeros((3, 1)), np.zeros(2))

    def cost(v0, v1):
        z1 = 1.0 + v0
        z2 = z1 + v1
        return z1 ** 2 + z2 ** 2 + v0 ** 2 + v1 ** 2

    best, _ = ocp_grid_oracle(cost)
    return _check("n=1 N=2 OCP vs grid search", abs(sol.cost - best), 1e-4)


def check_closed_loop_spectrum():
    cfg = ExperimentConfig()
    dyn = fmpc.brunovsky_discretize(3, cfg.dt)
    K = fmpc.equivalent_gain(cfg.ocp_config(), dyn)
    rho = float(np.max(np.abs(np.linalg.eigvals(dyn.Ad - dyn.Bd @ K))))
    return CheckResult("equivalent gain is stabilizing", rho < 1.0, f"spectral radius={rho:.6f}")


def check_qp_scalar():
    # 0.5 * 2 x^2 - 4 x is stationary at x = -g / H = 2
    sol = socp.solve(socp.qp_as_socp([[2.0]], [-4.0]))
    return _check("scalar QP minimizer -g/H", abs(sol.x[0] - 2.0), 1e-6)


def check_normal_quantile():
    err = max(abs(safety.normal_quantile(p) - statistics.NormalDist().inv_cdf(p)) for p in (0.5, 0.9, 0.95, 0.975, 0.999))
    return _check("normal quantile vs inverse CDF", err, 1e-9)


def check_filter_vs_grid(instances: int = 100):
    rng = np.random.default_rng(5)
    worst_obj = worst_viol = 0.0
    missed = 0
    for i in range(instances):
        bad = i % 10 == 9
        inst = random_filter_instance(rng, infeasible=bad)
        prob = inst.problem()
        sol = socp.solve(prob)
        if bad:
            missed += sol.status != socp.INFEASIBLE
            continue
        ref, _ = filter_grid_oracle(inst)
        if ref is None or sol.status != socp.OPTIMAL:
            missed += 1
            continue
        got = float(inst.objective(sol.x[0]))
        worst_obj = max(worst_obj, (got - ref) / max(1.0, abs(ref)))
        worst_viol = max(worst_viol, prob.max_violation(sol.x))
    ok = worst_obj <= 1e-5 and worst_viol <= 1e-7 and missed == 0
    return CheckResult("filter SOCP vs nested grid search", ok,
                       f"objective gap={worst_obj:.3g} violation={worst_viol:.3g} mismatched status={missed}")


def check_reference():
    spec = ReferenceSpec("sine-ramp")
    z, _ = reference_at(spec, 0.0)
    h = 1e-4
    err = float(np.max(np.abs(z - [0.0, 0.0, 0.36])))
    for t in (0.5, 3.0, 7.2):
        zp, vp = reference_at(spec, t + h)
        zm, vm = reference_at(spec, t - h)
        z0, v0 = reference_at(spec, t)
        fd = np.append((zp - zm) / (2 * h), 0.0)
        exact = np.append(z0[1:], v0)
        err = max(err, float(np.max(np.abs(fd[:3] - exact))))
    return _check("sine-ramp derivatives vs central differences", err, 1e-6)


def check_oracle_tracking():
    from .episode import run_episode
    from .metrics import rmse
    log = run_episode(ExperimentConfig(), gp.ExactModel(), "fmpc_socp")
    return _check("exact-model E1 tracking RMSE", rmse(log.column("x") - log.column("zref1")), 1e-3)


CHECKS = [
    check_rk4_step, check_flat_map, check_pitch_roundtrip, check_flat_input, check_flat_input_differences,
    check_reference, check_gamma_form, check_dare_scalar, check_equivalent_gain, check_small_ocp,
    check_closed_loop_spectrum, check_qp_scalar, check_normal_quantile, check_filter_vs_grid,
    check_oracle_tracking,
]


def run_checks(emit=print) -> bool:
    ok = True
    for fn in CHECKS:
        res = fn()
        ok &= res.passed
        emit(f"{'PASS' if res.passed else 'FAIL'}  {res.name}: {res.detail}")
    return ok
