"""Flat MPC over the Euler-discretized integrator chain.

The OCP is condensed into a dense QP in the flat inputs and solved by the
SOCP solver through its epigraph form. `equivalent_gain` gives the
feedback law the unconstrained OCP reduces to, and `dare_solve` the
infinite-horizon Riccati matrix used for the Lyapunov function.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import socp

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"

# Proximal weight of the minimum-violation problem (per unit mean-square input).
_PROX_WEIGHT = 1e-9
# Extra loosening on top of the minimum violation, relative to it.
RELAX_MARGIN = 1e-6


@dataclass(frozen=True)
class BrunovskyDiscrete:
    Ad: np.ndarray
    Bd: np.ndarray
    dt: float
    n: int


def brunovsky_discretize(n: int, dt: float) -> BrunovskyDiscrete:
    if n < 1 or not dt > 0:
        raise ValueError("need n >= 1 and dt > 0")
    Ad = np.eye(n) + dt * np.eye(n, k=1)
    Bd = np.zeros((n, 1))
    Bd[-1, 0] = dt
    return BrunovskyDiscrete(Ad, Bd, float(dt), n)


@dataclass
class OcpConfig:
    Q: np.ndarray
    R: float
    N: int
    halfspaces: list = field(default_factory=list)

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.R = float(self.R)
        self.halfspaces = [(np.asarray(H, dtype=float).reshape(-1), float(b)) for H, b in self.halfspaces]
        if not np.allclose(self.Q, self.Q.T):
            raise ValueError("Q must be symmetric")
        if np.linalg.eigvalsh(self.Q).min() <= 0:
            raise ValueError("Q must be positive definite")
        if not self.R > 0:
            raise ValueError("R must be positive")
        if self.N < 1:
            raise ValueError("horizon N must be at least 1")


@dataclass
class OcpSolution:
    z_seq: np.ndarray
    v_seq: np.ndarray
    status: str
    cost: float
    solve_time: float = 0.0

    @property
    def z_star(self):
        return self.z_seq[0]

    @property
    def v_star(self):
        return float(self.v_seq[0])


def prediction_matrices(dyn: BrunovskyDiscrete, N: int):
    """``Phi`` ((N*n)×n) and ``Gam`` ((N*n)×N) with ``[z_1..z_N] = Phi z_0 + Gam v``."""
    n = dyn.n
    Phi = np.zeros((N * n, n))
    Gam = np.zeros((N * n, N))
    Ak = np.eye(n)
    powers = []
    for i in range(N):
        powers.append(Ak)
        Ak = dyn.Ad @ Ak
        Phi[i * n:(i + 1) * n] = Ak
    b = dyn.Bd[:, 0]
    for i in range(N):
        for j in range(i + 1):
            Gam[i * n:(i + 1) * n, j] = powers[i - j] @ b
    return Phi, Gam


class FlatMPC:
    """Condensed OCP for a fixed configuration; reuse one instance per control loop."""

    def __init__(self, cfg: OcpConfig, dyn: BrunovskyDiscrete, solver_opts: socp.SolverOptions | None = None):
        self.cfg = cfg
        self.dyn = dyn
        self.opts = solver_opts
        N, n = cfg.N, dyn.n
        self.Phi, self.Gam = prediction_matrices(dyn, N)
        self.Qbar = np.kron(np.eye(N), cfg.Q)
        GtQ = self.Gam.T @ self.Qbar
        self.H = 2.0 * (GtQ @ self.Gam + cfg.R * np.eye(N))
        self._GtQ2 = 2.0 * GtQ
        # Half-space rows for steps 1..N: H' z_i <= b.
        self._hs_rows = []
        for Hh, b in cfg.halfspaces:
            for i in range(N):
                blk = slice(i * n, (i + 1) * n)
                self._hs_rows.append((i + 1, Hh @ self.Gam[blk], Hh @ self.Phi[blk], b))

    def _linear_term(self, z0, Zr, Vr):
        return self._GtQ2 @ (self.Phi @ z0 - Zr) - 2.0 * self.cfg.R * Vr

    def build(self, z_hat, ref_window, vref_window, slack: float = 0.0):
        """QP data ``(H, g, halfspaces, const)`` for the OCP at ``z_hat``.

        Every half-space bound is loosened by ``slack``.
        """
        N, n = self.cfg.N, self.dyn.n
        z0 = np.asarray(z_hat, dtype=float)
        refs = np.asarray(ref_window, dtype=float)
        if refs.shape != (N + 1, n):
            raise ValueError(f"reference window must be {(N + 1, n)}, got {refs.shape}")
        Zr = refs[1:].reshape(-1)
        Vr = np.asarray(vref_window, dtype=float).reshape(-1)[:N]
        if Vr.shape[0] != N:
            raise ValueError("vref window must hold at least N values")
        g = self._linear_term(z0, Zr, Vr)
        r = self.Phi @ z0 - Zr
        const = float(r @ self.Qbar @ r + self.cfg.R * Vr @ Vr)
        hs = [(row, b + slack - pz @ z0) for _, row, pz, b in self._hs_rows]
        return self.H, g, hs, const

    def solve(self, z_hat, ref_window, vref_window, constrained: bool = True,
              slack: float = 0.0) -> OcpSolution:
        H, g, hs, const = self.build(z_hat, ref_window, vref_window, slack)
        if not constrained:
            hs = []
        # The unconstrained minimizer warm-starts the barrier method when it
        # satisfies the half-spaces strictly; the solver falls back to phase I otherwise.
        v0 = np.linalg.solve(H, -g)
        hint = np.append(v0, 0.5 * v0 @ H @ v0 + 1.0)
        sol = socp.solve(socp.qp_as_socp(H, g, hs), x0=hint, opts=self.opts)
        if sol.status == socp.INFEASIBLE:
            return self._pack(z_hat, np.full(self.cfg.N, np.nan), INFEASIBLE, np.inf, sol.solve_time)
        if sol.status != socp.OPTIMAL:
            raise socp.SocpError(f"OCP solve ended with status {sol.status}")
        v = sol.x[:-1]
        cost = float(0.5 * v @ H @ v + g @ v + const)
        return self._pack(z_hat, v, OPTIMAL, cost, sol.solve_time)

    def min_violation(self, z_hat, ref_window, vref_window) -> float:
        """Smallest ``s >= 0`` such that the OCP is feasible with every bound loosened by ``s``.

        Solved as ``min s`` plus a vanishing proximal term towards the
        unconstrained minimizer, which keeps the problem bounded.
        """
        H, g, hs, _ = self.build(z_hat, ref_window, vref_window)
        N = self.cfg.N
        if not hs:
            return 0.0
        v0 = np.linalg.solve(H, -g)
        eps = _PROX_WEIGHT / max(1.0, float(v0 @ v0) / N)
        Hs = np.zeros((N + 1, N + 1))
        Hs[:N, :N] = eps * np.eye(N)
        gs = np.append(-eps * v0, 1.0)
        rows = [(np.append(a, -1.0), b) for a, b in hs]
        lb = np.full(N + 1, -np.inf)
        lb[N] = 0.0
        s0 = max(0.0, max(float(a @ v0) - b for a, b in hs)) + 1.0
        hint = np.concatenate((v0, [s0, 1.0]))
        sol = socp.solve(socp.qp_as_socp(Hs, gs, rows, lb=lb), x0=hint, opts=self.opts)
        if sol.status != socp.OPTIMAL:
            raise socp.SocpError(f"minimum-violation solve ended with status {sol.status}")
        return max(float(sol.x[N]), 0.0)

    def solve_relaxed(self, z_hat, ref_window, vref_window):
        """Solve with all half-spaces loosened just enough to be feasible.

        Returns ``(solution, slack)``.
        """
        s = self.min_violation(z_hat, ref_window, vref_window)
        s += RELAX_MARGIN * max(1.0, s)
        return self.solve(z_hat, ref_window, vref_window, slack=s), s

    def _pack(self, z_hat, v, status, cost, elapsed):
        z0 = np.asarray(z_hat, dtype=float)
        if status == OPTIMAL:
            Z = (self.Phi @ z0 + self.Gam @ v).reshape(self.cfg.N, self.dyn.n)
            z_seq = np.vstack((z0, Z))
        else:
            z_seq = np.vstack((z0, np.full((self.cfg.N, self.dyn.n), np.nan)))
        return OcpSolution(z_seq, np.asarray(v, dtype=float), status, cost, elapsed)

    def gain(self) -> np.ndarray:
        """First row of ``H^-1 * 2 Gam' Qbar Phi``: the unconstrained feedback gain."""
        M = np.linalg.solve(self.H, self._GtQ2 @ self.Phi)
        return M[:1]


def solve_ocp(cfg: OcpConfig, dyn: BrunovskyDiscrete, z_hat, ref_window, vref_window) -> OcpSolution:
    return FlatMPC(cfg, dyn).solve(z_hat, ref_window, vref_window)


def equivalent_gain(cfg: OcpConfig, dyn: BrunovskyDiscrete) -> np.ndarray:
    """``K`` (1×n) with unconstrained first input ``-K (z - zref_0) + vref_0``.

    Exact when the reference window is a trajectory of the discrete chain
    under the reference inputs.
    """
    return FlatMPC(cfg, dyn).gain()


# Riccati updates below this relative size are roundoff.
_DARE_STEP_TOL = 1e-15
_DARE_FLAT_STEPS = 20


class DareError(RuntimeError):
    """Riccati recursion failed to converge."""


def dare_residual(P, Q, R, Ad, Bd):
    Ad = np.atleast_2d(Ad)
    Bd = np.atleast_2d(Bd).reshape(Ad.shape[0], -1)
    R = np.atleast_2d(R)
    S = R + Bd.T @ P @ Bd
    return float(np.max(np.abs(Ad.T @ P @ Ad - P - Ad.T @ P @ Bd @ np.linalg.solve(S, Bd.T @ P @ Ad) + Q)))


def dare_solve(Q, R, Ad, Bd, tol: float = 1e-8, max_iter: int = 1_000_000):
    """Solve the DARE by Riccati iteration from ``P = Q``.

    Iterates until ``P`` stops changing at working precision, then checks
    that the residual is within ``tol``. Returns ``(P, K)`` with
    ``K = (R + B'PB)^-1 B'PA``.
    """
    Ad = np.atleast_2d(np.asarray(Ad, dtype=float))
    Bd = np.asarray(Bd, dtype=float).reshape(Ad.shape[0], -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    P = Q.copy()
    best = np.inf
    flat = 0
    for _ in range(max_iter):
        BtP = Bd.T @ P
        K = np.linalg.solve(R + BtP @ Bd, BtP @ Ad)
        Pn = Q + Ad.T @ P @ Ad - Ad.T @ P @ Bd @ K
        Pn = 0.5 * (Pn + Pn.T)
        change = float(np.max(np.abs(Pn - P)))
        P = Pn
        if not np.all(np.isfinite(P)):
            break
        # Converged once the update is at roundoff level or stops shrinking.
        if change <= _DARE_STEP_TOL * max(1.0, float(np.max(np.abs(P)))):
            break
        if change < best:
            best, flat = change, 0
        else:
            flat += 1
            if flat >= _DARE_FLAT_STEPS and dare_residual(P, Q, R, Ad, Bd) <= tol:
                break
    else:
        raise DareError("Riccati iteration did not converge")
    if not np.all(np.isfinite(P)) or dare_residual(P, Q, R, Ad, Bd) > tol:
        raise DareError("Riccati iteration did not converge")
    BtP = Bd.T @ P
    return P, np.linalg.solve(R + BtP @ Bd, BtP @ Ad)
