"""Per-tick SOCP safety filter between the flat MPC and the plant.

Given the MPC's desired flat input ``v*`` and a model exposing gamma
coefficients of ``v ~ N(g1 + g2 u, g3 + g4 u + g5 u^2)``, the filter picks
the input ``u`` minimizing ``E[(v - v*)^2]`` subject to

* a robust decrease condition on ``V(e) = e'Pe`` (the stability cone),
* chance-constrained half-spaces on the predicted next flat state,
* the input box.

Decision variables are ``[u, q]`` with ``q`` the epigraph of the quadratic
part of the objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import socp
from .fmpc import BrunovskyDiscrete
from .gp import GAMMA5_FLOOR, GammaCoeffs

OPTIMAL = "optimal"
RELAXED = "relaxed"
INFEASIBLE = "infeasible"

ON_INFEASIBLE = ("relax", "clamp", "halt")


class FilterInfeasible(RuntimeError):
    """Raised when the filter is infeasible and the policy is ``halt``."""


def normal_quantile(p: float, tol: float = 1e-15) -> float:
    """Inverse standard-normal CDF by bisection on the complementary error function."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    if p < 0.5:
        return -normal_quantile(1.0 - p, tol)
    # Upper tail: solve 0.5*erfc(x/sqrt2) = 1 - p, accurate for p near 1.
    target = 1.0 - p
    lo, hi = 0.0, 40.0
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if 0.5 * math.erfc(mid / math.sqrt(2.0)) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class FilterConfig:
    P: np.ndarray
    K: np.ndarray
    Q: np.ndarray
    R: float
    u_min: float
    u_max: float
    beta_sqrt: float = 2.0
    epsilon: float = 1e-6
    p_level: float = 0.95
    delta: float = 0.05
    halfspaces: list = field(default_factory=list)
    stability: bool = True
    on_infeasible: str = "relax"

    def __post_init__(self):
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        self.K = np.asarray(self.K, dtype=float).reshape(1, -1)
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.halfspaces = [(np.asarray(H, dtype=float).reshape(-1), float(b)) for H, b in self.halfspaces]
        if not self.u_min < self.u_max:
            raise ValueError("need u_min < u_max")
        if not 0.5 <= self.p_level < 1.0:
            raise ValueError("p_level must lie in [0.5, 1) for the state cone to be convex")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if not self.beta_sqrt > 0 or not self.epsilon > 0:
            raise ValueError("beta_sqrt and epsilon must be positive")
        if np.linalg.eigvalsh(0.5 * (self.P + self.P.T)).min() <= 0:
            raise ValueError("P must be positive definite")
        if self.on_infeasible not in ON_INFEASIBLE:
            raise ValueError(f"on_infeasible must be one of {ON_INFEASIBLE}")


@dataclass(frozen=True)
class WTerms:
    w1: float
    w2: float
    w3: float


@dataclass
class FilterResult:
    u_star: float
    q: float
    status: str
    mu_v: float
    sigma_v: float
    w: WTerms
    gamma: GammaCoeffs
    solve_time: float = 0.0
    stability_active: bool = False
    tightening: list = field(default_factory=list)


def w_terms(e, gamma: GammaCoeffs, v_nom: float, cfg: FilterConfig, dyn: BrunovskyDiscrete) -> WTerms:
    """Coefficients of the scalar decrease condition ``w1 (v - v_nom) <= w3 - w2``."""
    e = np.asarray(e, dtype=float)
    PB = cfg.P @ dyn.Bd[:, 0]
    Acl = dyn.Ad - dyn.Bd @ cfg.K
    w1 = 2.0 * float(e @ Acl.T @ PB)
    btpb = float(dyn.Bd[:, 0] @ PB)
    worst = max((gamma.mean(s) - v_nom) ** 2 for s in (cfg.u_min, cfg.u_max))
    w2 = btpb * worst
    w3 = float(e @ (cfg.Q + cfg.R * cfg.K.T @ cfg.K) @ e) - cfg.epsilon
    return WTerms(w1, w2, w3)


def _std_cone_rows(gamma: GammaCoeffs, scale: float):
    """``(A, b)`` in ``[u, q]`` with ``||A [u, q] + b|| = scale * sigma(u)``."""
    r, b0, c0 = gamma.std_affine()
    A = np.array([[scale * r, 0.0], [0.0, 0.0]])
    b = np.array([scale * b0, scale * c0])
    return A, b


def stability_cone(gamma: GammaCoeffs, w: WTerms, v_nom: float, beta_sqrt: float) -> socp.Cone:
    """``w1 (mu(u) - v_nom) + |w1| beta_sqrt sigma(u) <= w3 - w2``, divided by beta_sqrt."""
    A, b = _std_cone_rows(gamma, abs(w.w1))
    c = np.array([-w.w1 * gamma.g2 / beta_sqrt, 0.0])
    d = (w.w3 - w.w2 - w.w1 * (gamma.g1 - v_nom)) / beta_sqrt
    return socp.Cone(A, b, c, d)


def tighten_halfspace(H, b, gamma: GammaCoeffs, z_star, p_level: float, dyn: BrunovskyDiscrete) -> socp.Cone:
    """Chance constraint on the mean next state, tightened by the input-dependent std.

    Encodes ``H'Ad z* + H'Bd mu(u) <= b - q_p |H'Bd| sigma(u)`` with ``q_p`` the
    standard-normal quantile at ``p_level``.
    """
    H = np.asarray(H, dtype=float)
    hb = float(H @ dyn.Bd[:, 0])
    ws = normal_quantile(p_level) * abs(hb) if p_level != 0.5 else 0.0
    A, bb = _std_cone_rows(gamma, ws)
    c = np.array([-hb * gamma.g2, 0.0])
    d = float(b - H @ dyn.Ad @ np.asarray(z_star, dtype=float) - hb * gamma.g1)
    return socp.Cone(A, bb, c, d)


def epigraph_cone(gamma: GammaCoeffs) -> socp.Cone:
    """``q >= (g2^2 + g5) u^2`` as ``||[2 sqrt(a) u; 1 - q]|| <= 1 + q``."""
    a = gamma.g2 ** 2 + max(gamma.g5, 0.0)
    A = np.array([[2.0 * math.sqrt(a), 0.0], [0.0, -1.0]])
    return socp.Cone(A, np.array([0.0, 1.0]), np.array([0.0, 1.0]), 1.0)


def objective(gamma: GammaCoeffs, v_star: float) -> np.ndarray:
    return np.array([2.0 * gamma.g1 * gamma.g2 - 2.0 * gamma.g2 * v_star + gamma.g4, 1.0])


def build_filter_socp(gamma: GammaCoeffs, z_star, v_star: float, e, v_nom: float,
                      cfg: FilterConfig, dyn: BrunovskyDiscrete, with_stability: bool = True):
    """Return ``(problem, w_terms)`` for one tick."""
    w = w_terms(e, gamma, v_nom, cfg, dyn)
    cones = [epigraph_cone(gamma)]
    if with_stability:
        cones.append(stability_cone(gamma, w, v_nom, cfg.beta_sqrt))
    for H, b in cfg.halfspaces:
        cones.append(tighten_halfspace(H, b, gamma, z_star, cfg.p_level, dyn))
    prob = socp.SocpProblem(objective(gamma, v_star), cones,
                            lb=np.array([cfg.u_min, 0.0]), ub=np.array([cfg.u_max, np.inf]))
    return prob, w


def mean_inversion(gamma: GammaCoeffs, v_star: float, u_min: float, u_max: float) -> float:
    """Clamped ``(v* - g1) / g2``; the best-effort input when the filter is infeasible."""
    if abs(gamma.g2) < 1e-12:
        return min(max(0.0, u_min), u_max)
    return min(max((v_star - gamma.g1) / gamma.g2, u_min), u_max)


def safety_filter(model, z_hat, z_star, v_star: float, zref, vref: float,
                  cfg: FilterConfig, dyn: BrunovskyDiscrete, solver_opts=None) -> FilterResult:
    """Filter ``v_star`` into an admissible input.

    On infeasibility the policy ``cfg.on_infeasible`` applies: ``relax``
    retries without the stability cone (status ``relaxed``) and otherwise
    clamps the mean inversion (status ``infeasible``); ``clamp`` goes
    straight to the clamped inversion; ``halt`` raises `FilterInfeasible`.
    """
    gamma = model.gamma_coeffs(np.asarray(z_star, dtype=float))
    e = np.asarray(z_hat, dtype=float) - np.asarray(zref, dtype=float)
    v_nom = float(-(cfg.K @ e)[0] + vref)
    attempts = [(cfg.stability, OPTIMAL)]
    if cfg.stability and cfg.on_infeasible == "relax":
        attempts.append((False, RELAXED))
    elapsed = 0.0
    w = None
    for with_stab, label in attempts:
        prob, w = build_filter_socp(gamma, z_star, v_star, e, v_nom, cfg, dyn, with_stab)
        sol = socp.solve(prob, opts=solver_opts)
        elapsed += sol.solve_time
        if sol.ok:
            u = min(max(float(sol.x[0]), cfg.u_min), cfg.u_max)
            active = with_stab and prob.cones[1].residual(sol.x) > -1e-6
            return FilterResult(u, float(sol.x[1]), label, gamma.mean(u), gamma.std(u), w, gamma,
                                elapsed, bool(active), _tightening(gamma, u, cfg, dyn))
        if sol.status != socp.INFEASIBLE:
            raise socp.SocpError(f"filter SOCP ended with status {sol.status}")
    if cfg.on_infeasible == "halt":
        raise FilterInfeasible("safety filter SOCP is infeasible")
    u = mean_inversion(gamma, v_star, cfg.u_min, cfg.u_max)
    return FilterResult(u, float("nan"), INFEASIBLE, gamma.mean(u), gamma.std(u), w, gamma,
                        elapsed, False, _tightening(gamma, u, cfg, dyn))


def _tightening(gamma, u, cfg, dyn):
    qp = normal_quantile(cfg.p_level) if cfg.p_level != 0.5 else 0.0
    return [qp * abs(float(H @ dyn.Bd[:, 0])) * gamma.std(u) for H, _ in cfg.halfspaces]


__all__ = [
    "FilterConfig", "FilterResult", "FilterInfeasible", "WTerms", "w_terms", "stability_cone",
    "tighten_halfspace", "epigraph_cone", "build_filter_socp", "safety_filter",
    "mean_inversion", "normal_quantile", "GAMMA5_FLOOR",
]
