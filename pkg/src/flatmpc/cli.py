"""Command-line entry point: ``flatmpc {train,run,suite,oracle-check}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import _backend, gp
from .harness import config as config_io
from .harness import metrics, oracles, suite
from .harness.config import CONTROLLERS, ExperimentConfig
from .harness.data import collect_training_data
from .harness.episode import run_episode

log = logging.getLogger("flatmpc")


def _load_config(args) -> ExperimentConfig:
    cfg = config_io.load(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_(seed=args.seed)
    return cfg


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    dataset = Path(args.dataset) if args.dataset else out.with_suffix(".csv")
    Z, U, v = collect_training_data(cfg, cfg.seed)
    gp.save_dataset(dataset, Z, U, v)
    model = gp.fit(Z, U, v, n_restarts=cfg.n_restarts, seed=cfg.seed)
    gp.save_model(out, model, dataset)
    log.info("wrote %s (%d samples, log marginal likelihood %.3f)", out, model.n, model.log_marginal_likelihood())
    return 0


def cmd_run(args) -> int:
    cfg = _load_config(args)
    if args.controller:
        cfg = cfg.with_(controller=args.controller)
    model = None
    if args.exact_model:
        model = gp.ExactModel(cfg.true_params)
    elif args.model:
        model = gp.load_model(args.model)
    elif cfg.controller in ("fmpc_socp", "dlqr_socp"):
        log.info("no model given; training one for seed %d", cfg.seed)
        model = suite.train_model(cfg, cfg.seed)[0]
    runlog = run_episode(cfg, model)
    runlog.write_csv(args.out)
    text = metrics.format_summary(metrics.summarize(runlog, cfg.step_time if cfg.reference == "step" else None))
    if args.summary:
        Path(args.summary).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_suite(args) -> int:
    base = _load_config(args)
    exps = suite.default_experiments(base, e3_seeds=args.e3_seeds)
    res = suite.run_suite(base, args.out, exps, progress=log.info)
    timing = res.timing_summary()
    print(f"suite written to {args.out} ({len(res.rows)} episodes, backend {_backend.NAME})")
    print(f"fmpc_socp mean tick solve time: {1e3 * timing['fmpc_socp.time_tick_mean']:.2f} ms "
          f"(std {1e3 * timing['fmpc_socp.time_tick_std']:.2f} ms)")
    return 0


def cmd_oracle_check(args) -> int:
    return 0 if oracles.run_checks() else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flatmpc", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="collect training data and fit the GP")
    t.add_argument("--config", help="experiment INI file (defaults when omitted)")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True, help="model file to write")
    t.add_argument("--dataset", help="dataset CSV to write (default: model path with .csv)")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("run", help="simulate one episode")
    r.add_argument("--config")
    r.add_argument("--seed", type=int)
    r.add_argument("--controller", choices=CONTROLLERS)
    g = r.add_mutually_exclusive_group()
    g.add_argument("--model", help="model file written by 'train'")
    g.add_argument("--exact-model", action="store_true", help="use the true flat map with zero variance")
    r.add_argument("--out", required=True, help="RunLog CSV to write")
    r.add_argument("--summary", help="also write the summary text here")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("suite", help="run the E1-E4 experiment suite")
    s.add_argument("--config", help="base configuration the experiments are derived from")
    s.add_argument("--seed", type=int)
    s.add_argument("--e3-seeds", type=int, default=suite.E3_SEEDS)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_suite)

    o = sub.add_parser("oracle-check", help="check derived values against independent oracles")
    o.set_defaults(func=cmd_oracle_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
