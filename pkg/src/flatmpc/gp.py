"""Gaussian-process regression of the flat input map with a control-affine kernel.

The kernel on features ``a = (z, u)`` is::

    k(a_i, a_j) = k_alpha(z_i, z_j) + u_i * k_beta(z_i, z_j) * u_j + [i == j] * noise_var

with squared-exponential ARD kernels ``k_alpha`` and ``k_beta``. Under this
kernel the posterior mean is affine in ``u`` and the posterior variance is
quadratic in ``u``; `AffineGP.gamma_coeffs` returns the five coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize

from . import plant
from ._backend import kernels

DATASET_HEADER = "z1,z2,z3,u,v"
JITTER_START = 1e-10
JITTER_MAX = 1e-4
# gamma5 below this is treated as zero (variance independent of u).
GAMMA5_FLOOR = 1e-12
DISCRIMINANT_TOL = 1e-8

_LOG_BOUNDS = (
    [(math.log(1e-6), math.log(1e8))]
    + [(math.log(1e-3), math.log(1e4))] * 3
    + [(math.log(1e-6), math.log(1e8))]
    + [(math.log(1e-3), math.log(1e4))] * 3
    + [(math.log(1e-10), math.log(1e4))]
)


class GPFitError(RuntimeError):
    """Gram matrix could not be factorized even with maximal jitter."""


@dataclass(frozen=True)
class Hyperparams:
    var_alpha: float
    ls_alpha: tuple
    var_beta: float
    ls_beta: tuple
    noise_var: float

    def __post_init__(self):
        for name in ("var_alpha", "var_beta", "noise_var"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "ls_alpha", tuple(float(v) for v in self.ls_alpha))
        object.__setattr__(self, "ls_beta", tuple(float(v) for v in self.ls_beta))
        values = [self.var_alpha, self.var_beta, self.noise_var, *self.ls_alpha, *self.ls_beta]
        if not all(v > 0 and math.isfinite(v) for v in values):
            raise ValueError(f"hyperparameters must be positive and finite: {self}")

    def to_log(self) -> np.ndarray:
        return np.log([self.var_alpha, *self.ls_alpha, self.var_beta, *self.ls_beta, self.noise_var])

    @classmethod
    def from_log(cls, p) -> "Hyperparams":
        e = np.exp(np.asarray(p, dtype=float))
        return cls(e[0], tuple(e[1:4]), e[4], tuple(e[5:8]), e[8])


@dataclass(frozen=True)
class GammaCoeffs:
    g1: float
    g2: float
    g3: float
    g4: float
    g5: float

    def mean(self, u):
        return self.g1 + self.g2 * u

    def variance(self, u):
        return self.g3 + self.g4 * u + self.g5 * u * u

    def std(self, u):
        return math.sqrt(max(self.variance(u), 0.0))

    def std_affine(self):
        """``(a, b, c)`` with ``std(u) = ||[a*u + b, c]||``.

        For ``g5 < GAMMA5_FLOOR`` the variance is taken as the constant ``g3``.
        """
        if self.g5 < GAMMA5_FLOOR:
            return 0.0, 0.0, math.sqrt(max(self.g3, 0.0))
        r = math.sqrt(self.g5)
        return r, self.g4 / (2.0 * r), math.sqrt(max(self.g3 - self.g4 ** 2 / (4.0 * self.g5), 0.0))

    def clamped(self) -> "GammaCoeffs":
        """Clip the variance coefficients so ``g3 + g4 u + g5 u^2 >= 0`` for all u."""
        g3 = max(self.g3, 0.0)
        g5 = max(self.g5, 0.0)
        g4 = self.g4
        if g4 * g4 - 4.0 * g3 * g5 > DISCRIMINANT_TOL:
            g4 = math.copysign(2.0 * math.sqrt(g3 * g5), g4)
        return GammaCoeffs(self.g1, self.g2, g3, g4, g5)


def se_kernel(Z1, Z2, variance, lengthscales):
    ls = np.asarray(lengthscales, dtype=float)
    return kernels.se_ard(np.atleast_2d(Z1), np.atleast_2d(Z2), 1.0 / (ls * ls), float(variance))


def kernel_eval(a_i, a_j, hp: Hyperparams, same_index: bool = False) -> float:
    """Composite kernel between features ``a = (z, u)``."""
    (zi, ui), (zj, uj) = a_i, a_j
    ka = se_kernel(np.atleast_2d(zi), np.atleast_2d(zj), hp.var_alpha, hp.ls_alpha)[0, 0]
    kb = se_kernel(np.atleast_2d(zi), np.atleast_2d(zj), hp.var_beta, hp.ls_beta)[0, 0]
    return float(ka + ui * kb * uj + (hp.noise_var if same_index else 0.0))


def gram(Z, U, hp: Hyperparams, noise: bool = True) -> np.ndarray:
    Ka = se_kernel(Z, Z, hp.var_alpha, hp.ls_alpha)
    Kb = se_kernel(Z, Z, hp.var_beta, hp.ls_beta)
    K = Ka + np.outer(U, U) * Kb
    if noise:
        K[np.diag_indices_from(K)] += hp.noise_var
    return K


def jittered_cholesky(K):
    """Cholesky of ``K + jitter*I`` with jitter doubling from 1e-10 to 1e-4."""
    jitter = JITTER_START
    eye = np.eye(K.shape[0])
    while jitter <= JITTER_MAX:
        try:
            return np.linalg.cholesky(K + jitter * eye), jitter
        except np.linalg.LinAlgError:
            jitter *= 2.0
    raise GPFitError("Gram matrix is not positive definite after maximal jitter")


def log_marginal_likelihood(log_params, Z, U, y, with_grad: bool = False):
    """Log marginal likelihood and optionally its gradient w.r.t. log-parameters."""
    hp = Hyperparams.from_log(log_params)
    Z = np.asarray(Z, dtype=float)
    U = np.asarray(U, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    Ka = se_kernel(Z, Z, hp.var_alpha, hp.ls_alpha)
    Kb = se_kernel(Z, Z, hp.var_beta, hp.ls_beta)
    UU = np.outer(U, U)
    K = Ka + UU * Kb
    K[np.diag_indices_from(K)] += hp.noise_var
    L, _ = jittered_cholesky(K)
    w = cho_solve((L, True), y)
    lml = -0.5 * y @ w - np.log(np.diag(L)).sum() - 0.5 * n * math.log(2.0 * math.pi)
    if not with_grad:
        return lml
    W = np.outer(w, w) - cho_solve((L, True), np.eye(n))
    KbU = UU * Kb
    grad = np.empty(9)
    grad[0] = 0.5 * np.sum(W * Ka)
    grad[4] = 0.5 * np.sum(W * KbU)
    for d in range(3):
        diff2 = (Z[:, None, d] - Z[None, :, d]) ** 2
        grad[1 + d] = 0.5 * np.sum(W * Ka * diff2) / hp.ls_alpha[d] ** 2
        grad[5 + d] = 0.5 * np.sum(W * KbU * diff2) / hp.ls_beta[d] ** 2
    grad[8] = 0.5 * hp.noise_var * np.trace(W)
    return lml, grad


class AffineGP:
    """GP posterior conditioned on a dataset, immutable after construction."""

    def __init__(self, Z, U, y, hp: Hyperparams):
        self.Z = np.ascontiguousarray(np.asarray(Z, dtype=float).reshape(-1, 3))
        self.U = np.asarray(U, dtype=float).reshape(-1)
        self.y = np.asarray(y, dtype=float).reshape(-1)
        if not (self.Z.shape[0] == self.U.shape[0] == self.y.shape[0]):
            raise ValueError("Z, U and y must have matching lengths")
        if not (np.all(np.isfinite(self.Z)) and np.all(np.isfinite(self.U)) and np.all(np.isfinite(self.y))):
            raise ValueError("training data must be finite")
        self.hp = hp
        self._inv_ls2_a = 1.0 / np.square(hp.ls_alpha)
        self._inv_ls2_b = 1.0 / np.square(hp.ls_beta)
        if self.n:
            self.K = gram(self.Z, self.U, hp)
            self.L, self.jitter = jittered_cholesky(self.K)
            self.w = cho_solve((self.L, True), self.y)
        else:
            self.K = np.zeros((0, 0))
            self.L = np.zeros((0, 0))
            self.jitter = 0.0
            self.w = np.zeros(0)

    @property
    def n(self):
        return self.y.shape[0]

    def log_marginal_likelihood(self):
        return log_marginal_likelihood(self.hp.to_log(), self.Z, self.U, self.y)

    def gamma_coeffs(self, z, clamp: bool = True) -> GammaCoeffs:
        hp = self.hp
        if self.n == 0:
            g = GammaCoeffs(0.0, 0.0, hp.var_alpha, 0.0, hp.var_beta)
            return g.clamped() if clamp else g
        zq = np.asarray(z, dtype=float).reshape(1, 3)
        ka = kernels.se_ard(zq, self.Z, self._inv_ls2_a, hp.var_alpha)[0]
        kbu = kernels.se_ard(zq, self.Z, self._inv_ls2_b, hp.var_beta)[0] * self.U
        V = solve_triangular(self.L, np.column_stack((ka, kbu)), lower=True, check_finite=False)
        va, vb = V[:, 0], V[:, 1]
        g = GammaCoeffs(
            float(ka @ self.w),
            float(kbu @ self.w),
            float(hp.var_alpha - va @ va),
            float(-2.0 * (va @ vb)),
            float(hp.var_beta - vb @ vb),
        )
        return g.clamped() if clamp else g

    def predict(self, z, u):
        """Posterior ``(mean, variance)`` of the latent map at ``(z, u)``."""
        g = self.gamma_coeffs(z)
        return g.mean(u), max(g.variance(u), 0.0)


class ExactModel:
    """Zero-variance stand-in exposing the known map of a plant as gamma coefficients."""

    def __init__(self, params: plant.PlantParams = plant.TRUE_PARAMS):
        self.params = params

    def gamma_coeffs(self, z, clamp: bool = True) -> GammaCoeffs:
        a, b = plant.affine_terms(z, self.params, clamp=True)
        return GammaCoeffs(a, b, 0.0, 0.0, 0.0)

    def predict(self, z, u):
        g = self.gamma_coeffs(z)
        return g.mean(u), 0.0


def default_init(Z, U, y) -> Hyperparams:
    """Data-scaled starting hyperparameters."""
    Z = np.asarray(Z, dtype=float).reshape(-1, 3)
    U = np.asarray(U, dtype=float)
    y = np.asarray(y, dtype=float)
    spread = np.ptp(Z, axis=0) if Z.shape[0] > 1 else np.ones(3)
    ls = tuple(np.maximum(spread, 1e-2))
    vy = float(np.var(y)) if y.size > 1 else 1.0
    vy = max(vy, 1e-4)
    u2 = max(float(np.mean(U ** 2)) if U.size else 1.0, 1e-6)
    return Hyperparams(vy, ls, vy / u2, ls, 1e-2 * vy)


def fit(Z, U, y, init: Hyperparams | None = None, n_restarts: int = 5, seed: int = 0,
        maxiter: int = 300) -> AffineGP:
    """Maximize the log marginal likelihood over log-hyperparameters.

    Runs L-BFGS-B with analytic gradients from ``init`` and from
    ``n_restarts - 1`` perturbed starts; the best candidate (including
    ``init`` itself) wins.
    """
    Z = np.asarray(Z, dtype=float).reshape(-1, 3)
    U = np.asarray(U, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape[0] < 2:
        raise ValueError("need at least two samples to fit hyperparameters")
    init = init or default_init(Z, U, y)
    p0 = np.clip(init.to_log(), [b[0] for b in _LOG_BOUNDS], [b[1] for b in _LOG_BOUNDS])

    def objective(p):
        try:
            lml, g = log_marginal_likelihood(p, Z, U, y, with_grad=True)
        except GPFitError:
            return 1e25, np.zeros_like(p)
        return -lml, -g

    rng = np.random.default_rng(seed)
    starts = [p0] + [p0 + rng.normal(0.0, 1.0, size=p0.shape) for _ in range(max(n_restarts, 1) - 1)]
    lo = np.array([b[0] for b in _LOG_BOUNDS])
    hi = np.array([b[1] for b in _LOG_BOUNDS])
    best_p, best_val = init.to_log(), objective(init.to_log())[0]
    for s in starts:
        s = np.clip(s, lo, hi)
        res = minimize(objective, s, jac=True, method="L-BFGS-B", bounds=_LOG_BOUNDS,
                       options={"maxiter": maxiter})
        if np.isfinite(res.fun) and res.fun < best_val:
            best_p, best_val = res.x, res.fun
    return AffineGP(Z, U, y, Hyperparams.from_log(best_p))


# -- files ----------------------------------------------------------------

def save_dataset(path, Z, U, y):
    data = np.column_stack((np.asarray(Z).reshape(-1, 3), np.asarray(U).reshape(-1), np.asarray(y).reshape(-1)))
    np.savetxt(path, data, delimiter=",", header=DATASET_HEADER, comments="", fmt="%.17g")


def load_dataset(path):
    with open(path) as fh:
        header = fh.readline().strip().replace(" ", "")
    if header != DATASET_HEADER:
        raise ValueError(f"{path}: expected header '{DATASET_HEADER}', got '{header}'")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, :3], data[:, 3], data[:, 4]


def save_model(path, gp: AffineGP, dataset_path):
    """Write hyperparameters and the dataset location as ``key = value`` lines."""
    path = Path(path)
    hp = gp.hp
    ds = Path(dataset_path)
    try:
        ds = ds.resolve().relative_to(path.resolve().parent)
    except ValueError:
        ds = ds.resolve()
    lines = [
        "# affine-kernel GP model; Gram factor is rebuilt on load",
        f"dataset = {ds}",
        f"var_alpha = {hp.var_alpha!r}",
        f"ls_alpha = {', '.join(repr(v) for v in hp.ls_alpha)}",
        f"var_beta = {hp.var_beta!r}",
        f"ls_beta = {', '.join(repr(v) for v in hp.ls_beta)}",
        f"noise_var = {hp.noise_var!r}",
    ]
    path.write_text("\n".join(lines) + "\n")


def load_model(path) -> AffineGP:
    path = Path(path)
    kv = {}
    for raw in path.read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            key, _, value = line.partition("=")
            kv[key.strip()] = value.strip()
    ds = Path(kv["dataset"])
    if not ds.is_absolute():
        ds = path.parent / ds
    hp = Hyperparams(
        float(kv["var_alpha"]),
        tuple(float(v) for v in kv["ls_alpha"].split(",")),
        float(kv["var_beta"]),
        tuple(float(v) for v in kv["ls_beta"].split(",")),
        float(kv["noise_var"]),
    )
    Z, U, y = load_dataset(ds)
    return AffineGP(Z, U, y, hp)
