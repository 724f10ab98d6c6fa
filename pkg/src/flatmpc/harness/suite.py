"""The default experiment suite and its comparison table.

Four experiments, each with its own training set and GP:

* ``E1`` sine-ramp tracking with the proposed controller and the prior-model baselines,
* ``E2`` a position step under a tight input box,
* ``E3`` a position step under a position limit, repeated over several seeds,
* ``E4`` the sine-ramp under a velocity limit and a moderate input box.

All deterministic outputs (comparison table, per-episode logs with timing
columns zeroed) depend only on the configuration and seed. Wall-clock
timings go to a separate summary file.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import gp
from . import config as config_io
from .config import ExperimentConfig
from .controllers import ControlContext
from .data import collect_training_data
from .episode import run_episode
from .metrics import summarize

E3_SEEDS = 20
# T for the step experiments, long enough to show settling.
STEP_T = 8.0
TABLE_COLUMNS = ["experiment", "controller", "seed", "ticks", "aborted", "rmse", "max_abs_u", "max_du",
                 "violations", "input_violations", "infeasible", "relaxed", "settling_time"]


@dataclass(frozen=True)
class Experiment:
    name: str
    cfg: ExperimentConfig
    controllers: tuple
    seeds: tuple
    step_time: float | None = None


def default_experiments(base: ExperimentConfig | None = None, e3_seeds: int = E3_SEEDS) -> list:
    """The four suite experiments derived from ``base`` (defaults if omitted)."""
    base = base or ExperimentConfig()
    seed = base.seed
    sine = base.with_(reference="sine-ramp", ref_window="chain", state_constraints=())
    step = base.with_(reference="step", ref_window="samples", T=STEP_T, state_constraints=())
    return [
        Experiment("E1", sine, ("fmpc_socp", "mpc_prior", "dlqr_prior"), (seed,)),
        Experiment("E2", step.with_(u_min_deg=-10.0, u_max_deg=10.0),
                   ("fmpc_socp", "dlqr_clipped"), (seed,), step.step_time),
        Experiment("E3", step.with_(state_constraints=("z1 <= 0.51",), p_level=0.95),
                   ("fmpc_socp", "dlqr_socp"), tuple(range(seed, seed + e3_seeds)), step.step_time),
        Experiment("E4", sine.with_(state_constraints=("z2 <= 1.0",), u_min_deg=-30.0, u_max_deg=30.0),
                   ("fmpc_socp", "dlqr_socp"), (seed,)),
    ]


def train_model(cfg: ExperimentConfig, seed: int):
    Z, U, v = collect_training_data(cfg, seed)
    return gp.fit(Z, U, v, n_restarts=cfg.n_restarts, seed=seed), (Z, U, v)


@dataclass
class SuiteResult:
    rows: list = field(default_factory=list)
    # (experiment, controller) -> per-tick OCP+filter times in seconds
    tick_times: dict = field(default_factory=dict)

    def timing_summary(self) -> dict:
        """Mean and std of per-tick solve time, per controller and overall for ``fmpc_socp``."""
        out = {}
        for (exp, ctrl), t in sorted(self.tick_times.items()):
            t = np.asarray(t)
            out[f"{exp}.{ctrl}.time_tick_mean"] = float(np.mean(t))
            out[f"{exp}.{ctrl}.time_tick_std"] = float(np.std(t))
        fm = [np.asarray(t) for (_, c), t in self.tick_times.items() if c == "fmpc_socp"]
        if fm:
            allt = np.concatenate(fm)
            out["fmpc_socp.time_tick_mean"] = float(np.mean(allt))
            out["fmpc_socp.time_tick_std"] = float(np.std(allt))
            out["fmpc_socp.time_tick_max"] = float(np.max(allt))
        return out

    def select(self, experiment, controller=None):
        return [r for r in self.rows if r["experiment"] == experiment
                and (controller is None or r["controller"] == controller)]


def run_suite(base: ExperimentConfig | None = None, out_dir=None, experiments=None, progress=None) -> SuiteResult:
    """Run every experiment; write outputs under ``out_dir`` when given.

    ``progress`` is an optional callable receiving one line per finished episode.
    """
    experiments = experiments if experiments is not None else default_experiments(base)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "logs").mkdir(parents=True, exist_ok=True)
    result = SuiteResult()
    for exp in experiments:
        if out is not None:
            config_io.dump(exp.cfg, out / f"{exp.name}.ini")
        for seed in exp.seeds:
            cfg = exp.cfg.with_(seed=seed)
            ctx = ControlContext(cfg)
            needs_model = any(c in ("fmpc_socp", "dlqr_socp") for c in exp.controllers)
            model = train_model(cfg, seed)[0] if needs_model else None
            for ctrl in exp.controllers:
                log = run_episode(cfg, model, ctrl, ctx)
                s = summarize(log, exp.step_time)
                row = {"experiment": exp.name, "controller": ctrl, "seed": seed}
                row.update({k: s.get(k, "") for k in TABLE_COLUMNS[3:]})
                result.rows.append(row)
                result.tick_times.setdefault((exp.name, ctrl), []).extend(
                    log.column("t_ocp") + log.column("t_socp"))
                if out is not None:
                    log.write_csv(out / "logs" / f"{exp.name}_{ctrl}_seed{seed}.csv", timing=False)
                if progress:
                    progress(f"{exp.name} {ctrl} seed={seed} rmse={s['rmse']:.4g} "
                             f"violations={s['violations']} infeasible={s['infeasible']}")
    if out is not None:
        write_table(result.rows, out / "comparison.csv")
        write_timing(result.timing_summary(), out / "timing.txt")
    return result


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_table(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TABLE_COLUMNS)
        for r in rows:
            w.writerow([_cell(r[c]) for c in TABLE_COLUMNS])


def write_timing(summary: dict, path):
    lines = ["# wall-clock solve times in seconds; not deterministic"]
    lines += [f"{k} = {v!r}" for k, v in summary.items()]
    Path(path).write_text("\n".join(lines) + "\n")
