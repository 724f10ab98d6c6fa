"""Small dense second-order cone programs solved by a primal barrier method.

Problems have the form::

    minimize    f'x
    subject to  ||A_i x + b_i|| <= c_i'x + d_i      for every cone i
                lb <= x <= ub

Cones whose ``A_i`` is identically zero are linear inequalities and are
handled as such. Infeasibility is detected by a phase-I slack minimization.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import _backend, _pykernels
from ._backend import kernels

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max-iter"
UNBOUNDED = "unbounded"


class SocpError(ValueError):
    """Malformed problem data."""


@dataclass
class Cone:
    """``||A x + b|| <= c'x + d``."""

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: float

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.b = np.atleast_1d(np.asarray(self.b, dtype=float))
        self.c = np.atleast_1d(np.asarray(self.c, dtype=float))
        self.d = float(self.d)

    def residual(self, x):
        """Constraint violation at ``x`` (positive means violated)."""
        return float(np.linalg.norm(self.A @ x + self.b) - (self.c @ x + self.d))


@dataclass
class SocpProblem:
    f: np.ndarray
    cones: list = field(default_factory=list)
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        self.f = np.atleast_1d(np.asarray(self.f, dtype=float))
        m = self.f.shape[0]
        self.lb = np.full(m, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float)
        self.ub = np.full(m, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float)
        if self.lb.shape != (m,) or self.ub.shape != (m,):
            raise SocpError("box bounds must have the same length as f")
        if np.any(self.lb > self.ub):
            raise SocpError("lb must not exceed ub")
        for i, cone in enumerate(self.cones):
            if cone.A.shape[1] != m or cone.c.shape[0] != m:
                raise SocpError(f"cone {i} has wrong column count")
            if cone.A.shape[0] != cone.b.shape[0]:
                raise SocpError(f"cone {i}: A and b row counts differ")

    @property
    def n_vars(self):
        return self.f.shape[0]

    def max_violation(self, x):
        """Largest constraint violation at ``x`` over cones and box."""
        viol = [0.0]
        viol += [cone.residual(x) for cone in self.cones]
        viol.append(float(np.max(self.lb - x, initial=-np.inf)))
        viol.append(float(np.max(x - self.ub, initial=-np.inf)))
        return max(viol)


@dataclass
class SocpSolution:
    x: np.ndarray
    objective: float
    status: str
    iterations: int
    solve_time: float

    @property
    def ok(self):
        return self.status == OPTIMAL


@dataclass
class SolverOptions:
    gap_tol: float = 1e-9
    # When roundoff stops the last centerings, a point whose duality gap is
    # within this relative bound is still reported optimal.
    acceptable_gap_tol: float = 1e-6
    feas_tol: float = 1e-7
    mu: float = 20.0
    newton_tol: float = 1e-7
    max_newton: int = 150
    max_outer: int = 80


class _Compiled:
    """Problem data split into linear rows and true cones for the kernels."""

    def __init__(self, problem: SocpProblem):
        m = problem.n_vars
        rows, rhs = [], []
        box_rows = 0
        for j in range(m):
            if np.isfinite(problem.ub[j]):
                e = np.zeros(m)
                e[j] = 1.0
                rows.append(e)
                rhs.append(problem.ub[j])
            if np.isfinite(problem.lb[j]):
                e = np.zeros(m)
                e[j] = -1.0
                rows.append(e)
                rhs.append(-problem.lb[j])
        box_rows = len(rows)
        cones = []
        for cone in problem.cones:
            if not np.any(cone.A):
                # ||b|| <= c'x + d is linear
                rows.append(-cone.c)
                rhs.append(cone.d - float(np.linalg.norm(cone.b)))
            else:
                cones.append(cone)
        self.m = m
        self.n_box = box_rows
        self.G = np.array(rows, dtype=float).reshape(len(rows), m)
        self.h = np.array(rhs, dtype=float)
        if cones:
            self.A = np.ascontiguousarray(np.vstack([c.A for c in cones]))
            self.b = np.concatenate([c.b for c in cones])
            self.C = np.ascontiguousarray(np.vstack([c.c for c in cones]))
            self.d = np.array([c.d for c in cones])
            sizes = [c.A.shape[0] for c in cones]
            self.offs = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
            self.AtA = np.ascontiguousarray(np.stack([c.A.T @ c.A for c in cones]))
        else:
            self.A = np.zeros((0, m))
            self.b = np.zeros(0)
            self.C = np.zeros((0, m))
            self.d = np.zeros(0)
            self.offs = np.zeros(1, dtype=np.int64)
            self.AtA = np.zeros((0, m, m))
        self.theta = self.G.shape[0] + 2 * self.C.shape[0]

    def barrier(self, x):
        return kernels.barrier(x, self.G, self.h, self.A, self.b, self.C, self.d, self.offs)

    def violations(self, x):
        lin = self.G @ x - self.h if self.G.shape[0] else np.zeros(0)
        cone = np.array([
            np.linalg.norm(self.A[self.offs[i]:self.offs[i + 1]] @ x + self.b[self.offs[i]:self.offs[i + 1]])
            - (self.C[i] @ x + self.d[i])
            for i in range(self.C.shape[0])
        ])
        return lin, cone


def _box_center(lb, ub):
    x = np.zeros(lb.shape[0])
    for j, (lo, hi) in enumerate(zip(lb, ub)):
        if np.isfinite(lo) and np.isfinite(hi):
            x[j] = 0.5 * (lo + hi)
        elif np.isfinite(lo):
            x[j] = max(lo + 1.0, 0.0)
        elif np.isfinite(hi):
            x[j] = min(hi - 1.0, 0.0)
    return x


# A first centering that needs more Newton steps than this restarts from
# its current iterate with the barrier weight cut by 100.
FIRST_CENTERING_CAP = 50
FIRST_CENTERING_RETRIES = 3


def _barrier_path(cp, f, x, t, opts):
    """Run the outer barrier loop from a strictly feasible ``x``.

    Returns (x, t, status, newton_iterations) where status is one of
    'converged', 'max-iter', 'unbounded'.
    """
    total = 0
    last = None
    retries = FIRST_CENTERING_RETRIES
    for _ in range(opts.max_outer):
        cap = min(FIRST_CENTERING_CAP, opts.max_newton) if last is None and retries else opts.max_newton
        xn, its, code = kernels.center(
            x, t, f, cp.G, cp.h, cp.A, cp.b, cp.C, cp.d, cp.offs, cp.AtA,
            opts.newton_tol, cap, -1, 0.0,
        )
        total += its
        if code == _backend.UNBOUNDED:
            return xn, t, "unbounded", total
        if code == _backend.MAX_ITER and last is None and retries:
            # The start was too far from the path for this t: keep the
            # progress made and retry with a much smaller weight.
            retries -= 1
            x, t = xn, max(t * 1e-2, 1e-12)
            continue
        if code in (_backend.MAX_ITER, _backend.STALLED):
            if last is not None and cp.theta / last[1] <= opts.acceptable_gap_tol * max(1.0, abs(float(f @ last[0]))):
                return last[0], last[1], "converged", total
            return xn, t, "max-iter", total
        x = xn
        if cp.theta / t <= opts.gap_tol * max(1.0, abs(float(f @ x))):
            return x, t, "converged", total
        last = (x, t)
        t *= opts.mu
    return x, t, "max-iter", total


def _initial_t(cp, f, x):
    """Initial barrier weight ``1 / ||f||`` in the local norm of the barrier at ``x``.

    The feasible set lies inside a fixed multiple of the Dikin ellipsoid, so
    this bounds the first centering's merit gap by a constant independent
    of the scale of ``f``.
    """
    _, hess = _pykernels._grad_hess(x, 0.0, f, cp.G, cp.h, cp.A, cp.b, cp.C, cp.d, cp.offs, cp.AtA)
    try:
        L = np.linalg.cholesky(hess)
    except np.linalg.LinAlgError:
        return 1.0
    w = np.linalg.solve(L, f)
    nrm = math.sqrt(float(w @ w))
    if not nrm > 0 or not math.isfinite(nrm):
        return 1.0
    return min(max(1.0 / nrm, 1e-8), 1e8)


# Phase I bounds every variable without a finite box to this many times
# max(1, ||x_start||_inf) around the start, so that cones with recession
# directions cannot drive the barrier to minus infinity.
PHASE_ONE_RADIUS = 1e6


def _phase_one(cp, x_start, opts):
    """Find a strictly feasible point.

    Returns (x, status, slack, iterations) with status one of 'feasible',
    'infeasible', 'marginal' (optimal slack within feas_tol of zero) or
    'failed' (the centering did not converge, feasibility unknown).
    """
    m = cp.m
    nb = cp.n_box
    radius = PHASE_ONE_RADIUS * max(1.0, float(np.max(np.abs(x_start), initial=0.0)))
    # (column, sign) pairs already bounded by a box row
    bounded = {(j, cp.G[i, j]) for i, j in zip(*np.nonzero(cp.G[:nb]))} if nb else set()
    extra, extra_h = [], []
    for j in range(m):
        for sign in (1.0, -1.0):
            if (j, sign) in bounded:
                continue
            row = np.zeros(m)
            row[j] = sign
            extra.append(row)
            extra_h.append(sign * x_start[j] + radius)
    nx = len(extra)
    rows = np.vstack([cp.G[:nb]] + ([np.array(extra)] if nx else []) + [cp.G[nb:]])
    h = np.concatenate((cp.h[:nb], extra_h, cp.h[nb:]))
    G = np.zeros((rows.shape[0], m + 1))
    G[:, :m] = rows
    G[nb + nx:, m] = -1.0
    C = np.zeros((cp.C.shape[0], m + 1))
    C[:, :m] = cp.C
    C[:, m] = 1.0
    A = np.zeros((cp.A.shape[0], m + 1))
    A[:, :m] = cp.A
    AtA = np.zeros((cp.AtA.shape[0], m + 1, m + 1))
    AtA[:, :m, :m] = cp.AtA

    lin, cone = cp.violations(x_start)
    worst = max(float(np.max(lin[nb:], initial=0.0)), float(np.max(cone, initial=0.0)), 0.0)
    s0 = worst + 1.0
    z = np.append(x_start, s0)

    aug = _Compiled.__new__(_Compiled)
    aug.m, aug.n_box = m + 1, nb + nx
    aug.G, aug.h = np.ascontiguousarray(G), np.ascontiguousarray(h, dtype=float)
    aug.A, aug.b = np.ascontiguousarray(A), cp.b
    aug.C, aug.d = np.ascontiguousarray(C), cp.d
    aug.offs, aug.AtA = cp.offs, np.ascontiguousarray(AtA)
    aug.theta = cp.theta + nx
    f = np.zeros(m + 1)
    f[m] = 1.0

    t = 1.0
    total = 0
    for _ in range(opts.max_outer):
        z, its, code = kernels.center(
            z, t, f, aug.G, aug.h, aug.A, aug.b, aug.C, aug.d, aug.offs, aug.AtA,
            opts.newton_tol, opts.max_newton, m, 0.0,
        )
        total += its
        if code == _backend.STOPPED:
            return z[:m], "feasible", float(z[m]), total
        if code in (_backend.MAX_ITER, _backend.STALLED, _backend.UNBOUNDED):
            return z[:m], "failed", float(z[m]), total
        gap = aug.theta / t
        s = float(z[m])
        if s - gap > opts.feas_tol:
            return z[:m], "infeasible", s, total
        if gap < 1e-12 * max(1.0, abs(s)):
            break
        t *= opts.mu
    s = float(z[m])
    if s > opts.feas_tol:
        return z[:m], "infeasible", s, total
    return z[:m], "marginal", s, total


def solve(problem: SocpProblem, x0=None, opts: SolverOptions | None = None) -> SocpSolution:
    """Solve ``problem``; ``x0`` is an optional strictly feasible hint."""
    opts = opts or SolverOptions()
    start = time.perf_counter()
    cp = _Compiled(problem)
    m = cp.m
    if np.any(problem.ub - problem.lb <= 0.0):
        raise SocpError("box has empty interior; fix such variables before solving")

    def done(x, status, its):
        x = np.asarray(x, dtype=float)
        return SocpSolution(x, float(problem.f @ x), status, its, time.perf_counter() - start)

    # A variable no constraint touches is free; any cost on it is unbounded.
    used = np.any(cp.G != 0.0, axis=0) | np.any(cp.A != 0.0, axis=0) | np.any(cp.C != 0.0, axis=0)
    if np.any(~used & (problem.f != 0.0)):
        return done(np.zeros(m), UNBOUNDED, 0)
    if cp.theta == 0:
        return done(np.zeros(m), OPTIMAL, 0)

    x = None
    if x0 is not None:
        x0 = np.asarray(x0, dtype=float)
        if math.isfinite(cp.barrier(x0)):
            x = x0.copy()
    iterations = 0
    if x is None:
        xc = _box_center(problem.lb, problem.ub)
        if math.isfinite(cp.barrier(xc)):
            x = xc
        else:
            x, state, slack, its = _phase_one(cp, xc, opts)
            iterations += its
            if state == "infeasible":
                return done(x, INFEASIBLE, iterations)
            if state == "failed":
                return done(x, MAX_ITER, iterations)
            if state == "marginal":
                # No strict interior within feas_tol: relax by the phase-I slack.
                shift = max(slack, 0.0) + 1e-12
                cp.h = cp.h.copy()
                cp.h[cp.n_box:] += shift
                cp.d = cp.d + shift
                if not math.isfinite(cp.barrier(x)):
                    return done(x, INFEASIBLE, iterations)

    x, _, state, its = _barrier_path(cp, problem.f, x, _initial_t(cp, problem.f, x), opts)
    iterations += its
    status = {"converged": OPTIMAL, "unbounded": UNBOUNDED}.get(state, MAX_ITER)
    return done(x, status, iterations)


def qp_as_socp(H, g, halfspaces=(), lb=None, ub=None):
    """Epigraph form of ``min 0.5 x'Hx + g'x`` over half-spaces and a box.

    The returned problem has variables ``[x, t]`` with the cone
    ``||[2 L'x; 1 - t]|| <= 1 + t`` where ``L L' = H / 2``, which is
    ``t >= 0.5 x'Hx``. Each half-space ``(a, beta)`` means ``a'x <= beta``.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    g = np.atleast_1d(np.asarray(g, dtype=float))
    m = g.shape[0]
    L = psd_factor(0.5 * (H + H.T) * 0.5)
    k = L.shape[1]
    A = np.zeros((k + 1, m + 1))
    A[:k, :m] = 2.0 * L.T
    A[k, m] = -1.0
    b = np.zeros(k + 1)
    b[k] = 1.0
    c = np.zeros(m + 1)
    c[m] = 1.0
    cones = [Cone(A, b, c, 1.0)]
    for a, beta in halfspaces:
        a = np.asarray(a, dtype=float)
        cones.append(Cone(np.zeros((1, m + 1)), np.zeros(1), -np.append(a, 0.0), float(beta)))
    lo = np.full(m + 1, -np.inf)
    hi = np.full(m + 1, np.inf)
    if lb is not None:
        lo[:m] = lb
    if ub is not None:
        hi[:m] = ub
    return SocpProblem(np.append(g, 1.0), cones, lo, hi)


def psd_factor(M, tol=1e-10):
    """Return ``L`` with ``L L' = M`` for symmetric PSD ``M``.

    Tries Cholesky with growing jitter first; falls back to an eigen
    factorization for singular matrices.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    scale = max(float(np.max(np.abs(np.diag(M)))), 1e-300)
    jitter = 0.0
    for _ in range(4):
        try:
            return np.linalg.cholesky(M + jitter * np.eye(M.shape[0]))
        except np.linalg.LinAlgError:
            jitter = 1e-14 * scale if jitter == 0.0 else jitter * 100.0
    w, V = np.linalg.eigh(M)
    if w.min() < -tol * scale:
        raise np.linalg.LinAlgError("matrix is not positive semidefinite")
    return V * np.sqrt(np.clip(w, 0.0, None))


# -- plain-text problem dump ---------------------------------------------

def _fmt(v):
    return " ".join(repr(float(x)) for x in np.atleast_1d(v))


def dumps(problem: SocpProblem) -> str:
    """Serialize to a line-oriented text format (see `loads`)."""
    lines = [f"m {problem.n_vars}", f"f {_fmt(problem.f)}",
             f"lb {_fmt(problem.lb)}", f"ub {_fmt(problem.ub)}"]
    for cone in problem.cones:
        lines.append(f"cone {cone.A.shape[0]}")
        for row in cone.A:
            lines.append(f"A {_fmt(row)}")
        lines.append(f"b {_fmt(cone.b)}")
        lines.append(f"c {_fmt(cone.c)}")
        lines.append(f"d {_fmt(cone.d)}")
    return "\n".join(lines) + "\n"


def loads(text: str) -> SocpProblem:
    """Parse the format written by `dumps`. Blank lines and ``#`` comments are ignored."""
    f = lb = ub = None
    cones = []
    cur = None
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, rest = line.partition(" ")
        vals = np.array([float(tok) for tok in rest.split()]) if rest else np.zeros(0)
        if key == "m":
            continue
        if key == "f":
            f = vals
        elif key == "lb":
            lb = vals
        elif key == "ub":
            ub = vals
        elif key == "cone":
            cur = {"A": []}
            cones.append(cur)
        elif key in ("A", "b", "c", "d"):
            if cur is None:
                raise SocpError(f"'{key}' line outside a cone block")
            if key == "A":
                cur["A"].append(vals)
            else:
                cur[key] = vals
        else:
            raise SocpError(f"unknown record '{key}'")
    if f is None:
        raise SocpError("missing objective line")
    out = [Cone(np.array(c["A"]), c["b"], c["c"], float(c["d"][0])) for c in cones]
    return SocpProblem(f, out, lb, ub)


def dump(problem: SocpProblem, path):
    with open(path, "w") as fh:
        fh.write(dumps(problem))


def load(path) -> SocpProblem:
    with open(path) as fh:
        return loads(fh.read())
