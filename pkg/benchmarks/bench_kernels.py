"""Compare the compiled and pure-numpy kernels.

Times the kernel functions directly and then whole solves with each
backend swapped into the solver and GP modules::

    python benchmarks/bench_kernels.py [--repeat 200]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from flatmpc import _backend, fmpc, gp, socp
from flatmpc.harness import oracles
from flatmpc.harness.config import ExperimentConfig


def _filter_problems(n=50, seed=0):
    rng = np.random.default_rng(seed)
    return [oracles.random_filter_instance(rng).problem() for _ in range(n)]


def _ocp_problem():
    cfg = ExperimentConfig(state_constraints=("z1 <= 0.51",))
    dyn = fmpc.brunovsky_discretize(3, cfg.dt)
    mpc = fmpc.FlatMPC(cfg.ocp_config(), dyn)
    Zr = np.tile([0.5, 0.0, 0.0], (cfg.horizon + 1, 1))
    H, g, hs, _ = mpc.build(np.zeros(3), Zr, np.zeros(cfg.horizon))
    return socp.qp_as_socp(H, g, hs)


def _use(mod):
    socp.kernels = mod
    gp.kernels = mod


def bench(repeat: int):
    rng = np.random.default_rng(1)
    X1 = rng.normal(size=(1, 3))
    X2 = rng.normal(size=(120, 3))
    inv_ls2 = np.array([0.5, 1.0, 2.0])
    filters = _filter_problems()
    ocp = _ocp_problem()
    rows = []
    backends = _backend.available_backends()
    for name, mod in backends.items():
        _use(mod)
        t_se = min(timeit.repeat(lambda: mod.se_ard(X1, X2, inv_ls2, 1.0), number=repeat, repeat=3)) / repeat
        t_filter = min(timeit.repeat(lambda: [socp.solve(p) for p in filters], number=1, repeat=3)) / len(filters)
        t_ocp = min(timeit.repeat(lambda: socp.solve(ocp), number=5, repeat=3)) / 5
        rows.append((name, t_se, t_filter, t_ocp))
    _use(_backend.kernels)
    print(f"{'backend':<8} {'se_ard 1x120':>14} {'filter SOCP':>14} {'OCP (N=25)':>14}")
    for name, a, b, c in rows:
        print(f"{name:<8} {a * 1e6:>11.1f} us {b * 1e3:>11.3f} ms {c * 1e3:>11.3f} ms")
    if len(rows) == 2:
        py, cy = rows[0], rows[1]
        print("speedup  " + "  ".join(f"{p / c:>13.1f}x" for p, c in zip(py[1:], cy[1:])))
    else:
        print("compiled kernels not available; only the numpy backend was timed")


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=200)
    bench(p.parse_args(argv).repeat)


if __name__ == "__main__":
    main()
