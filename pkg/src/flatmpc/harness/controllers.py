"""Per-tick control laws: the proposed FMPC + safety filter and the baselines."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .. import fmpc, plant, safety
from .config import ExperimentConfig
from .reference import gen_reference

UNFILTERED = "unfiltered"


@dataclass
class Tick:
    u: float
    v_star: float
    status: str
    mu_v: float = float("nan")
    sigma_v: float = float("nan")
    t_ocp: float = 0.0
    t_socp: float = 0.0
    # perf_counter stamps: start, OCP done, filter done
    stamps: tuple = (0.0, 0.0, 0.0)


class ControlContext:
    """Quantities shared by all controllers of one experiment configuration."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.dyn = fmpc.brunovsky_discretize(3, cfg.dt)
        self.ocp_cfg = cfg.ocp_config()
        self.P, self.K_lqr = fmpc.dare_solve(self.ocp_cfg.Q, self.ocp_cfg.R, self.dyn.Ad, self.dyn.Bd)
        self.zref, self.vref = gen_reference(cfg.ref_spec, cfg.T, cfg.dt, cfg.horizon)
        self.filter_cfg = safety.FilterConfig(
            P=self.P, K=self.K_lqr, Q=self.ocp_cfg.Q, R=self.ocp_cfg.R,
            u_min=cfg.u_min, u_max=cfg.u_max, beta_sqrt=cfg.beta_sqrt, epsilon=cfg.epsilon,
            p_level=cfg.p_level, delta=cfg.delta, halfspaces=cfg.halfspaces,
            stability=cfg.stability, on_infeasible=cfg.on_infeasible,
        )

    def clip(self, u):
        return min(max(float(u), self.cfg.u_min), self.cfg.u_max)

    def lqr_input(self, k, z):
        return float(-(self.K_lqr @ (z - self.zref[k]))[0] + self.vref[k])

    def window(self, k):
        """MPC reference window ``(zref, vref)`` starting at tick ``k``.

        ``chain`` rolls the current reference state through the prediction
        model with the analytic ``vref``, so the window is a trajectory of the
        model; ``samples`` uses the sampled reference directly.
        """
        N = self.cfg.horizon
        vr = self.vref[k:k + N]
        if self.cfg.ref_window == "samples":
            return self.zref[k:k + N + 1], vr
        Z = np.empty((N + 1, 3))
        Z[0] = self.zref[k]
        Ad, b = self.dyn.Ad, self.dyn.Bd[:, 0]
        for i in range(N):
            Z[i + 1] = Ad @ Z[i] + b * vr[i]
        return Z, vr

    def V(self, k, z):
        e = z - self.zref[k]
        return float(e @ self.P @ e)


class _MpcMixin:
    def _plan(self, k, z):
        """Solve the OCP; when infeasible, loosen all half-spaces by the least feasible amount."""
        mpc = self.mpc
        window = self.ctx.window(k)
        sol = mpc.solve(z, *window)
        if sol.status == fmpc.OPTIMAL:
            return sol, ""
        sol, _ = mpc.solve_relaxed(z, *window)
        if sol.status == fmpc.OPTIMAL:
            return sol, "/ocp-relaxed"
        return mpc.solve(z, *window, constrained=False), "/ocp-free"


class FmpcSocp(_MpcMixin):
    name = "fmpc_socp"
    needs_model = True

    def __init__(self, ctx: ControlContext, model):
        self.ctx, self.model = ctx, model
        self.mpc = fmpc.FlatMPC(ctx.ocp_cfg, ctx.dyn)

    def act(self, k, z):
        t0 = time.perf_counter()
        sol, flag = self._plan(k, z)
        t1 = time.perf_counter()
        res = safety.safety_filter(self.model, z, sol.z_star, sol.v_star, self.ctx.zref[k],
                                   self.ctx.vref[k], self.ctx.filter_cfg, self.ctx.dyn)
        t2 = time.perf_counter()
        return Tick(self.ctx.clip(res.u_star), sol.v_star, res.status + flag, res.mu_v, res.sigma_v,
                    t1 - t0, t2 - t1, (t0, t1, t2))


class DlqrSocp:
    name = "dlqr_socp"
    needs_model = True

    def __init__(self, ctx: ControlContext, model):
        self.ctx, self.model = ctx, model

    def act(self, k, z):
        t0 = time.perf_counter()
        v = self.ctx.lqr_input(k, z)
        t1 = time.perf_counter()
        res = safety.safety_filter(self.model, z, z, v, self.ctx.zref[k], self.ctx.vref[k],
                                   self.ctx.filter_cfg, self.ctx.dyn)
        t2 = time.perf_counter()
        return Tick(self.ctx.clip(res.u_star), v, res.status, res.mu_v, res.sigma_v,
                    t1 - t0, t2 - t1, (t0, t1, t2))


class _InversionController:
    needs_model = False
    params_attr = "true_params"

    def __init__(self, ctx: ControlContext, model=None):
        self.ctx = ctx
        self.params = getattr(ctx.cfg, self.params_attr)

    def _invert(self, z, v):
        try:
            return plant.psi_inverse(z, v, self.params, clamp=True)
        except plant.FlatDomainError:
            return 0.0


class DlqrClipped(_InversionController):
    name = "dlqr_clipped"

    def act(self, k, z):
        t0 = time.perf_counter()
        v = self.ctx.lqr_input(k, z)
        u = self.ctx.clip(self._invert(z, v))
        t1 = time.perf_counter()
        return Tick(u, v, UNFILTERED, t_ocp=t1 - t0, stamps=(t0, t1, t1))


class DlqrPrior(DlqrClipped):
    name = "dlqr_prior"
    params_attr = "prior_params"


class MpcPrior(_InversionController, _MpcMixin):
    name = "mpc_prior"
    params_attr = "prior_params"

    def __init__(self, ctx: ControlContext, model=None):
        super().__init__(ctx, model)
        self.mpc = fmpc.FlatMPC(ctx.ocp_cfg, ctx.dyn)

    def act(self, k, z):
        t0 = time.perf_counter()
        sol, flag = self._plan(k, z)
        u = self.ctx.clip(self._invert(z, sol.v_star))
        t1 = time.perf_counter()
        return Tick(u, sol.v_star, UNFILTERED + flag, t_ocp=t1 - t0, stamps=(t0, t1, t1))


REGISTRY = {c.name: c for c in (FmpcSocp, DlqrSocp, DlqrClipped, DlqrPrior, MpcPrior)}


def make_controller(ctx: ControlContext, name: str, model=None):
    cls = REGISTRY[name]
    if cls.needs_model and model is None:
        raise ValueError(f"controller '{name}' needs a GP model")
    return cls(ctx, model)
