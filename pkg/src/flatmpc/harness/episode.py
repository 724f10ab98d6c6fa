"""Closed-loop episodes and their per-tick log."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .. import plant
from .config import ExperimentConfig
from .controllers import ControlContext, make_controller

COLUMNS = ["k", "t", "x", "xdot", "theta", "z1", "z2", "z3", "zref1", "zref2", "zref3",
           "vstar", "u", "status", "mu_v", "sigma_v", "V", "t_ocp", "t_socp"]
TIMING_COLUMNS = ("t_ocp", "t_socp")


@dataclass
class RunLog:
    rows: list = field(default_factory=list)
    # (tick start, OCP done, filter done, plant step done) per tick
    stamps: list = field(default_factory=list)
    aborted: bool = False
    halfspaces: list = field(default_factory=list)
    u_bounds: tuple = (-math.inf, math.inf)

    def column(self, name):
        if name == "status":
            return [r["status"] for r in self.rows]
        return np.array([r[name] for r in self.rows], dtype=float)

    def __len__(self):
        return len(self.rows)

    def write_csv(self, path, timing: bool = True):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(COLUMNS)
            for r in self.rows:
                out = []
                for c in COLUMNS:
                    v = r[c]
                    if c in TIMING_COLUMNS and not timing:
                        v = 0.0
                    out.append(v if isinstance(v, (str, int)) else repr(float(v)))
                w.writerow(out)

    @classmethod
    def read_csv(cls, path):
        log = cls()
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != COLUMNS:
                raise ValueError(f"{path}: unexpected RunLog header {reader.fieldnames}")
            for rec in reader:
                row = {c: (rec[c] if c == "status" else float(rec[c])) for c in COLUMNS}
                row["k"] = int(row["k"])
                log.rows.append(row)
        return log


def initial_state(ctx: ControlContext) -> plant.PhysState:
    """Hover at the origin, or sit exactly on the reference's initial flat state."""
    if ctx.cfg.start == "reference":
        return plant.flat_to_phys(ctx.zref[0], ctx.cfg.true_params, clamp=True)
    return plant.PhysState(0.0, 0.0, 0.0)


def run_episode(cfg: ExperimentConfig, model=None, controller: str | None = None,
                ctx: ControlContext | None = None) -> RunLog:
    """Simulate one episode: measure, plan, filter, hold, integrate, log."""
    if cfg.online_training:
        raise NotImplementedError("online GP updates during an episode are not supported")
    ctx = ctx or ControlContext(cfg)
    ctrl = make_controller(ctx, controller or cfg.controller, model)
    params = cfg.true_params
    s = initial_state(ctx)
    log = RunLog(halfspaces=cfg.halfspaces, u_bounds=(cfg.u_min, cfg.u_max))
    for k in range(cfg.steps):
        z = plant.phys_to_flat(s, params)
        tick = ctrl.act(k, z)
        zr = ctx.zref[k]
        log.rows.append({
            "k": k, "t": k * cfg.dt, "x": s.x, "xdot": s.xdot, "theta": s.theta,
            "z1": z[0], "z2": z[1], "z3": z[2], "zref1": zr[0], "zref2": zr[1], "zref3": zr[2],
            "vstar": tick.v_star, "u": tick.u, "status": tick.status, "mu_v": tick.mu_v,
            "sigma_v": tick.sigma_v, "V": ctx.V(k, z), "t_ocp": tick.t_ocp, "t_socp": tick.t_socp,
        })
        try:
            s = plant.step_truth(s, tick.u, cfg.dt, params)
        except plant.IntegrationError:
            log.aborted = True
            log.stamps.append((*tick.stamps, time.perf_counter()))
            break
        log.stamps.append((*tick.stamps, time.perf_counter()))
    return log
