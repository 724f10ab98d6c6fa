"""Episode summaries."""

from __future__ import annotations

import numpy as np

from .episode import RunLog

# Position band for settling, metres.
SETTLE_BAND = 0.02
# Constraint violations smaller than this are rounding, not violations.
VIOLATION_TOL = 1e-9


def rmse(err) -> float:
    err = np.asarray(err, dtype=float)
    return float(np.sqrt(np.mean(err * err))) if err.size else 0.0


def settling_time(log: RunLog, after: float = 0.0, band: float = SETTLE_BAND) -> float:
    """Time from ``after`` until ``|x - ref|`` last leaves ``band``; 0 if it never does."""
    t = log.column("t")
    err = np.abs(log.column("x") - log.column("zref1"))
    idx = np.nonzero((t >= after) & (err > band))[0]
    if idx.size == 0:
        return 0.0
    return float(t[idx[-1]] + (t[1] - t[0] if t.size > 1 else 0.0) - after)


def violation_count(log: RunLog) -> int:
    if not log.halfspaces:
        return 0
    Z = np.column_stack([log.column(c) for c in ("z1", "z2", "z3")])
    bad = np.zeros(len(log), dtype=bool)
    for H, b in log.halfspaces:
        bad |= Z @ H - b > VIOLATION_TOL
    return int(bad.sum())


def infeasible_count(log: RunLog) -> int:
    return sum(1 for s in log.column("status") if "infeasible" in s or "ocp-" in s)


def relaxed_count(log: RunLog) -> int:
    return sum(1 for s in log.column("status") if s.startswith("relaxed"))


def input_violations(log: RunLog) -> int:
    u = log.column("u")
    lo, hi = log.u_bounds
    return int(np.sum((u < lo) | (u > hi)))


def lyapunov_decrease_fraction(log: RunLog, after: float, floor: float, factor: float = 10.0):
    """Fraction of ticks with ``V_{k+1} < V_k`` among those with ``||e_k|| > factor * floor``.

    Returns ``(fraction, count)``; the fraction is NaN when no tick qualifies.
    """
    t = log.column("t")
    V = log.column("V")
    E = np.column_stack([log.column(a) - log.column(b) for a, b in
                         (("z1", "zref1"), ("z2", "zref2"), ("z3", "zref3"))])
    norm = np.linalg.norm(E, axis=1)
    sel = np.nonzero((t[:-1] >= after) & (norm[:-1] > factor * floor))[0]
    if sel.size == 0:
        return float("nan"), 0
    return float(np.mean(V[sel + 1] < V[sel])), int(sel.size)


def summarize(log: RunLog, step_time: float | None = None) -> dict:
    """Deterministic metrics plus timing statistics (keys prefixed ``time_``)."""
    u = log.column("u")
    t_ocp = log.column("t_ocp")
    t_socp = log.column("t_socp")
    total = t_ocp + t_socp
    out = {
        "ticks": len(log),
        "aborted": int(log.aborted),
        "rmse": rmse(log.column("x") - log.column("zref1")),
        "max_abs_u": float(np.max(np.abs(u))) if u.size else 0.0,
        "max_du": float(np.max(np.abs(np.diff(u)))) if u.size > 1 else 0.0,
        "violations": violation_count(log),
        "input_violations": input_violations(log),
        "infeasible": infeasible_count(log),
        "relaxed": relaxed_count(log),
    }
    if step_time is not None:
        out["settling_time"] = settling_time(log, after=step_time)
    out.update({
        "time_ocp_mean": float(np.mean(t_ocp)) if t_ocp.size else 0.0,
        "time_ocp_std": float(np.std(t_ocp)) if t_ocp.size else 0.0,
        "time_socp_mean": float(np.mean(t_socp)) if t_socp.size else 0.0,
        "time_socp_std": float(np.std(t_socp)) if t_socp.size else 0.0,
        "time_tick_mean": float(np.mean(total)) if total.size else 0.0,
        "time_tick_std": float(np.std(total)) if total.size else 0.0,
    })
    return out


def format_summary(summary: dict) -> str:
    return "\n".join(f"{k} = {v!r}" if isinstance(v, float) else f"{k} = {v}" for k, v in summary.items()) + "\n"
