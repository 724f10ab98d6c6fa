"""Reference trajectories with closed-form flat derivatives."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ReferenceSpec:
    kind: str = "sine-ramp"
    slope: float = 0.2
    omega: float = 0.9
    height: float = 0.5
    t_step: float = 1.0

    def __post_init__(self):
        if self.kind not in ("sine-ramp", "step"):
            raise ValueError(f"unknown reference kind '{self.kind}'")


def reference_at(spec: ReferenceSpec, t: float):
    """Return ``(z, v)``: ``z = [y, y', y'']`` and ``v = y'''`` at time ``t``."""
    if spec.kind == "step":
        y = spec.height if t >= spec.t_step else 0.0
        return np.array([y, 0.0, 0.0]), 0.0
    a, w = spec.slope, spec.omega
    s, c = math.sin(w * t), math.cos(w * t)
    y = a * t * s
    y1 = a * s + a * w * t * c
    y2 = 2.0 * a * w * c - a * w * w * t * s
    y3 = -3.0 * a * w * w * s - a * w ** 3 * t * c
    return np.array([y, y1, y2]), y3


def gen_reference(spec: ReferenceSpec, T: float, dt: float, horizon: int = 0):
    """Sample the reference on ``k = 0 .. K + horizon`` with ``K = round(T / dt)``.

    Samples past ``T`` are held at the final value so MPC windows near the end
    of an episode see a constant reference.
    """
    if not T > 0 or not dt > 0:
        raise ValueError("T and dt must be positive")
    steps = int(round(T / dt))
    zref = np.empty((steps + horizon + 1, 3))
    vref = np.empty(steps + horizon + 1)
    for k in range(steps + horizon + 1):
        if k <= steps:
            zref[k], vref[k] = reference_at(spec, k * dt)
        else:
            zref[k], vref[k] = zref[steps], 0.0
    return zref, vref
