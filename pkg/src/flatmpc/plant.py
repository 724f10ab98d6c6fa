"""Horizontal 1-D quadrotor: truth dynamics, prior model, and flatness maps.

Dynamics::

    x''     = Gamma * sin(theta) - gamma * x'
    theta'  = (u - theta) / tau

The flat output is the position, so the flat state is ``z = [x, x', x'']``
and the flat input is ``v = x'''``. Differentiating the acceleration once
gives ``v = alpha(z) + beta(z) * u`` with::

    alpha(z) = -Gamma * cos(theta) * theta / tau - gamma * z3
    beta(z)  =  Gamma * cos(theta) / tau
    theta    =  asin((z3 + gamma * z2) / Gamma)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# RK4 steps per call of `step_truth`; one step of 0.02 s is accurate to
# about 2e-8, four to about 1e-10.
TRUTH_SUBSTEPS = 4
# Clamp margin for the pitch-recovery arcsin when running in lenient mode.
ASIN_MARGIN = 1e-9


class FlatDomainError(ValueError):
    """Flat state outside the region where pitch can be recovered."""


class IntegrationError(RuntimeError):
    """The plant integration produced a non-finite state."""


@dataclass(frozen=True)
class PlantParams:
    Gamma: float
    gamma: float
    tau: float

    def __post_init__(self):
        if not self.Gamma > 0 or not self.tau > 0 or not self.gamma >= 0:
            raise ValueError(f"invalid plant parameters {self}")


TRUE_PARAMS = PlantParams(Gamma=10.0, gamma=0.3, tau=0.2)
PRIOR_PARAMS = PlantParams(Gamma=20.0, gamma=0.0, tau=0.05)


@dataclass(frozen=True)
class PhysState:
    x: float
    xdot: float
    theta: float

    def as_array(self):
        return np.array([self.x, self.xdot, self.theta])

    @classmethod
    def from_array(cls, a):
        return cls(float(a[0]), float(a[1]), float(a[2]))


def dynamics(s, u, params: PlantParams):
    """Time derivative of the physical state array ``[x, xdot, theta]``."""
    return np.array([
        s[1],
        params.Gamma * math.sin(s[2]) - params.gamma * s[1],
        (u - s[2]) / params.tau,
    ])


def step_truth(s: PhysState, u: float, dt: float, params: PlantParams = TRUE_PARAMS,
               substeps: int = TRUTH_SUBSTEPS) -> PhysState:
    """Advance ``dt`` seconds with ``u`` held constant, using ``substeps`` classical RK4 steps."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    y = s.as_array()
    h = dt / substeps
    for _ in range(substeps):
        k1 = dynamics(y, u, params)
        k2 = dynamics(y + 0.5 * h * k1, u, params)
        k3 = dynamics(y + 0.5 * h * k2, u, params)
        k4 = dynamics(y + h * k3, u, params)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(y)):
        raise IntegrationError(f"non-finite state after step: {y}")
    return PhysState.from_array(y)


def phys_to_flat(s: PhysState, params: PlantParams = TRUE_PARAMS) -> np.ndarray:
    return np.array([s.x, s.xdot, params.Gamma * math.sin(s.theta) - params.gamma * s.xdot])


def sin_pitch(z, params: PlantParams) -> float:
    """Argument of the pitch-recovery arcsin, ``(z3 + gamma*z2) / Gamma``."""
    return (z[2] + params.gamma * z[1]) / params.Gamma


def flat_to_pitch(z, params: PlantParams = TRUE_PARAMS, clamp: bool = False) -> float:
    """Recover the pitch angle from a flat state.

    With ``clamp=False`` an argument outside [-1, 1] raises `FlatDomainError`;
    with ``clamp=True`` it is clipped to ``[-1 + ASIN_MARGIN, 1 - ASIN_MARGIN]``.
    Callers that clamp should count the event themselves (see `in_domain`).
    """
    arg = sin_pitch(z, params)
    if clamp:
        arg = min(max(arg, -1.0 + ASIN_MARGIN), 1.0 - ASIN_MARGIN)
    elif abs(arg) > 1.0:
        raise FlatDomainError(f"|(z3 + gamma z2)/Gamma| = {abs(arg):.6g} > 1")
    return math.asin(arg)


def in_domain(z, params: PlantParams) -> bool:
    return abs(sin_pitch(z, params)) <= 1.0


def flat_to_phys(z, params: PlantParams = TRUE_PARAMS, clamp: bool = False) -> PhysState:
    return PhysState(float(z[0]), float(z[1]), flat_to_pitch(z, params, clamp))


def affine_terms(z, params: PlantParams = TRUE_PARAMS, clamp: bool = False):
    """Return ``(alpha(z), beta(z))`` of the flat input map."""
    theta = flat_to_pitch(z, params, clamp)
    gain = params.Gamma * math.cos(theta) / params.tau
    return -gain * theta - params.gamma * z[2], gain


def psi(z, u, params: PlantParams = TRUE_PARAMS, clamp: bool = False) -> float:
    """Flat input ``v = alpha(z) + beta(z) u`` produced by input ``u`` at ``z``."""
    a, b = affine_terms(z, params, clamp)
    return a + b * u


def psi_inverse(z, v, params: PlantParams = TRUE_PARAMS, clamp: bool = False) -> float:
    """Input ``u`` that realizes flat input ``v`` at ``z``."""
    a, b = affine_terms(z, params, clamp)
    if abs(b) < 1e-12 * params.Gamma / params.tau:
        raise FlatDomainError("input map is singular at |theta| = pi/2")
    return (v - a) / b


def true_psi(z, u, params: PlantParams = TRUE_PARAMS, clamp: bool = False) -> float:
    return psi(z, u, params, clamp)


def true_psi_inverse(z, v, params: PlantParams = TRUE_PARAMS, clamp: bool = False) -> float:
    return psi_inverse(z, v, params, clamp)


def prior_psi(z, u, params: PlantParams = PRIOR_PARAMS, clamp: bool = False) -> float:
    return psi(z, u, params, clamp)


def prior_psi_inverse(z, v, params: PlantParams = PRIOR_PARAMS, clamp: bool = False) -> float:
    return psi_inverse(z, v, params, clamp)
