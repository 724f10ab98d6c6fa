"""Training-data collection by Latin hypercube sampling over flat states and inputs."""

from __future__ import annotations

import numpy as np
from scipy.stats import qmc

from .. import fmpc, plant
from .config import ExperimentConfig
from .reference import gen_reference

# Minimum half-width of a sampling range, so constant reference components still get spread.
MIN_HALF_WIDTH = 0.05


def prior_rollout(cfg: ExperimentConfig):
    """Closed-loop DLQR with the prior model's inversion on the true plant.

    Returns the visited flat states ``(K, 3)`` and applied inputs ``(K,)``.
    """
    dyn = fmpc.brunovsky_discretize(3, cfg.dt)
    _, K = fmpc.dare_solve(np.diag(cfg.q_diag), cfg.r, dyn.Ad, dyn.Bd)
    zref, vref = gen_reference(cfg.ref_spec, cfg.T, cfg.dt)
    s = plant.flat_to_phys(zref[0], cfg.true_params, clamp=True)
    Z, U = [], []
    for k in range(cfg.steps):
        z = plant.phys_to_flat(s, cfg.true_params)
        v = float(-(K @ (z - zref[k]))[0] + vref[k])
        try:
            u = plant.psi_inverse(z, v, cfg.prior_params, clamp=True)
        except plant.FlatDomainError:
            u = 0.0
        u = min(max(u, cfg.u_min), cfg.u_max)
        Z.append(z)
        U.append(u)
        try:
            s = plant.step_truth(s, u, cfg.dt, cfg.true_params)
        except plant.IntegrationError:
            break
    return np.array(Z), np.array(U)


def sampling_ranges(cfg: ExperimentConfig):
    """Per-coordinate ``(lo, hi)`` for ``(z1, z2, z3, u)``.

    The union of the reference and a prior-model rollout, widened by
    ``range_margin`` of the span on each side; the input range is kept
    inside the input box.
    """
    zref, _ = gen_reference(cfg.ref_spec, cfg.T, cfg.dt)
    Zr, Ur = prior_rollout(cfg)
    pts = np.vstack((zref, Zr))
    lo = np.concatenate((pts.min(axis=0), [Ur.min()]))
    hi = np.concatenate((pts.max(axis=0), [Ur.max()]))
    span = hi - lo
    lo = lo - cfg.range_margin * span
    hi = hi + cfg.range_margin * span
    center = 0.5 * (lo + hi)
    half = np.maximum(0.5 * (hi - lo), MIN_HALF_WIDTH)
    lo, hi = center - half, center + half
    lo[3] = max(lo[3], cfg.u_min)
    hi[3] = min(hi[3], cfg.u_max)
    return lo, hi


def latin_hypercube(n: int, lo, hi, seed: int) -> np.ndarray:
    """Centered Latin hypercube: one sample per equal-width bin and coordinate."""
    if n < 1:
        raise ValueError("need at least one sample")
    unit = qmc.LatinHypercube(d=len(lo), scramble=False, seed=np.random.default_rng(seed)).random(n)
    return qmc.scale(unit, lo, hi)


def collect_training_data(cfg: ExperimentConfig, seed: int, ranges=None):
    """Sample ``n_data`` points and label them with the true map plus noise.

    Samples whose pitch cannot be recovered are redrawn uniformly inside the
    ranges until they lie in the domain.
    """
    lo, hi = ranges if ranges is not None else sampling_ranges(cfg)
    rng = np.random.default_rng([seed, 1])
    S = latin_hypercube(cfg.n_data, np.asarray(lo), np.asarray(hi), seed)
    params = cfg.true_params
    for i in range(S.shape[0]):
        tries = 0
        while abs(plant.sin_pitch(S[i, :3], params)) >= 1.0 - 1e-6:
            S[i] = rng.uniform(lo, hi)
            tries += 1
            if tries > 1000:
                raise ValueError("sampling ranges lie outside the flat domain")
    Z, U = S[:, :3], S[:, 3]
    v = np.array([plant.psi(z, u, params) for z, u in zip(Z, U)])
    v = v + cfg.noise_std * rng.standard_normal(v.shape[0])
    return Z, U, v
