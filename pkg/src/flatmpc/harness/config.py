"""Experiment configuration and its INI-style text file.

Every value that is a tuning choice of this implementation, rather than a
property of the modelled system or task, is written with a
``# non-paper default`` comment.
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .. import plant
from ..fmpc import OcpConfig
from .reference import ReferenceSpec

CONTROLLERS = ("fmpc_socp", "dlqr_socp", "dlqr_clipped", "mpc_prior", "dlqr_prior")
STARTS = ("rest", "reference")
NON_PAPER = "# non-paper default"
_CONSTRAINT_RE = re.compile(r"^\s*(z[123])\s*(<=|>=)\s*([-+0-9.eE]+)\s*$")


@dataclass
class ExperimentConfig:
    # plant
    Gamma: float = plant.TRUE_PARAMS.Gamma
    gamma: float = plant.TRUE_PARAMS.gamma
    tau: float = plant.TRUE_PARAMS.tau
    prior_Gamma: float = plant.PRIOR_PARAMS.Gamma
    prior_gamma: float = plant.PRIOR_PARAMS.gamma
    prior_tau: float = plant.PRIOR_PARAMS.tau
    # run
    dt: float = 0.02
    T: float = 20.0
    controller: str = "fmpc_socp"
    seed: int = 0
    start: str = "rest"
    # reference
    reference: str = "sine-ramp"
    slope: float = 0.2
    omega: float = 0.9
    step_height: float = 0.5
    step_time: float = 1.0
    # ocp
    q_diag: tuple = (10000.0, 100.0, 10.0)
    r: float = 0.1
    horizon: int = 25
    state_constraints: tuple = ()
    ref_window: str = "chain"
    # filter
    u_min_deg: float = -45.0
    u_max_deg: float = 45.0
    beta_sqrt: float = 2.0
    epsilon: float = 1e-6
    p_level: float = 0.95
    delta: float = 0.05
    stability: bool = True
    on_infeasible: str = "relax"
    # gp
    n_data: int = 120
    noise_std: float = 0.01
    range_margin: float = 0.2
    n_restarts: int = 5
    online_training: bool = False

    def __post_init__(self):
        self.q_diag = tuple(float(v) for v in self.q_diag)
        self.state_constraints = tuple(self.state_constraints)
        if not self.dt > 0 or not self.T > 0:
            raise ValueError("dt and T must be positive")
        if self.controller not in CONTROLLERS:
            raise ValueError(f"controller must be one of {CONTROLLERS}")
        for c in self.state_constraints:
            parse_constraint(c)
        ReferenceSpec(self.reference)
        if self.start not in STARTS:
            raise ValueError(f"start must be one of {STARTS}")
        if self.ref_window not in ("chain", "samples"):
            raise ValueError("ref_window must be 'chain' or 'samples'")

    @property
    def true_params(self):
        return plant.PlantParams(self.Gamma, self.gamma, self.tau)

    @property
    def prior_params(self):
        return plant.PlantParams(self.prior_Gamma, self.prior_gamma, self.prior_tau)

    @property
    def ref_spec(self):
        return ReferenceSpec(self.reference, self.slope, self.omega, self.step_height, self.step_time)

    @property
    def u_min(self):
        return math.radians(self.u_min_deg)

    @property
    def u_max(self):
        return math.radians(self.u_max_deg)

    @property
    def halfspaces(self):
        return [parse_constraint(c) for c in self.state_constraints]

    @property
    def steps(self):
        return int(round(self.T / self.dt))

    def ocp_config(self) -> OcpConfig:
        return OcpConfig(np.diag(self.q_diag), self.r, self.horizon, self.halfspaces)

    def with_(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)


def parse_constraint(text: str):
    """``"z1 <= 0.51"`` -> ``(H, b)`` meaning ``H'z <= b``."""
    m = _CONSTRAINT_RE.match(text)
    if not m:
        raise ValueError(f"cannot parse state constraint '{text}' (expected e.g. 'z1 <= 0.51')")
    H = np.zeros(3)
    sign = 1.0 if m.group(2) == "<=" else -1.0
    H[int(m.group(1)[1]) - 1] = sign
    return H, sign * float(m.group(3))


# Section layout of the file and which keys carry the non-paper marker.
_SECTIONS = {
    "plant": ["Gamma", "gamma", "tau", "prior_Gamma", "prior_gamma", "prior_tau"],
    "run": ["dt", "T", "controller", "seed", "start"],
    "reference": ["reference", "slope", "omega", "step_height", "step_time"],
    "ocp": ["q_diag", "r", "horizon", "state_constraints", "ref_window"],
    "filter": ["u_min_deg", "u_max_deg", "beta_sqrt", "epsilon", "p_level", "delta",
               "stability", "on_infeasible"],
    "gp": ["n_data", "noise_std", "range_margin", "n_restarts", "online_training"],
}
_NON_PAPER_KEYS = {
    "T", "seed", "start", "ref_window", "step_height", "step_time", "q_diag", "r", "horizon", "beta_sqrt", "epsilon",
    "p_level", "delta", "on_infeasible", "n_data", "noise_std", "range_margin", "n_restarts",
    "u_min_deg", "u_max_deg",
}


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    return str(value)


def dumps(cfg: ExperimentConfig, mark_defaults: bool = True) -> str:
    defaults = ExperimentConfig()
    out = []
    for section, keys in _SECTIONS.items():
        out.append(f"[{section}]")
        for key in keys:
            value = getattr(cfg, key)
            line = f"{key} = {_fmt(value)}"
            if mark_defaults and key in _NON_PAPER_KEYS and value == getattr(defaults, key):
                line += f"  {NON_PAPER}"
            out.append(line)
        out.append("")
    return "\n".join(out)


def dump(cfg: ExperimentConfig, path):
    with open(path, "w") as fh:
        fh.write(dumps(cfg))


def _convert(name, raw, ftype):
    raw = raw.strip()
    if name in ("q_diag",):
        return tuple(float(v) for v in raw.split(","))
    if name == "state_constraints":
        return tuple(v.strip() for v in raw.split(",") if v.strip())
    if ftype in (bool, "bool"):
        if raw.lower() in ("true", "yes", "1", "on"):
            return True
        if raw.lower() in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got '{raw}'")
    if ftype in (int, "int"):
        return int(raw)
    if ftype in (float, "float"):
        return float(raw)
    return raw


def loads(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.optionxform = str
    parser.read_string(text)
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    kw = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ValueError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SECTIONS[section]:
                raise ValueError(f"unknown key '{key}' in [{section}]")
            kw[key] = _convert(key, raw, types[key])
    return replace(base or ExperimentConfig(), **kw)


def load(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    with open(path) as fh:
        return loads(fh.read(), base)
