"""Command line entry point: ``masfs <command> <config> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ExperimentConfig
from .errors import ConfigError, MasfsError

log = logging.getLogger("masfs")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="base seed (overrides sim.seed / trace.seed / train.seed)")
    common.add_argument("--out", help="output directory (overrides out)")
    common.add_argument("--quiet", action="store_true", help="only errors on stderr")

    p = argparse.ArgumentParser(prog="masfs", description="Multi-tenant multi-accelerator scheduling experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("simulate", "run the configured scheduler"),
                        ("train", "train an RL policy and write a checkpoint"),
                        ("gen-trace", "write the generated request trace as CSV"),
                        ("gen-costs", "write the cost table as CSV")):
        s = sub.add_parser(name, parents=[common], help=help_)
        s.add_argument("config")
    s = sub.add_parser("evaluate", parents=[common], help="run a trained policy")
    s.add_argument("config")
    s.add_argument("--checkpoint", required=True)
    s = sub.add_parser("compare", parents=[common], help="run several schedulers on identical traces")
    s.add_argument("config")
    s.add_argument("--schedulers", required=True, help="comma separated names, e.g. fcfs-h,edf-h")
    s.add_argument("--checkpoint", action="append", default=[], metavar="NAME=PATH",
                   help="checkpoint for an RL scheduler name (repeatable)")
    return p


def _load(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    over = {}
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed", "must be non-negative")
        over["sim.seed"] = args.seed
        if not cfg.has("trace"):
            over["trace.seed"] = args.seed
        over["train.seed"] = args.seed
    if args.out is not None:
        over["out"] = args.out
    return cfg.with_overrides(**over) if over else cfg


def _out(cfg: ExperimentConfig) -> Path:
    p = cfg.path("out", must_exist=False)
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_simulate(cfg, args) -> dict:
    from .experiment import run_experiment
    return run_experiment(cfg, _out(cfg))


def cmd_evaluate(cfg, args) -> dict:
    from .experiment import build_scheduler, run_experiment
    name = cfg.get("scheduler")
    if not name.startswith("rl-"):
        name = "rl-sla"
    sched = build_scheduler(cfg, name, Path(args.checkpoint))
    return run_experiment(cfg, _out(cfg), scheduler=sched)


def cmd_compare(cfg, args) -> dict:
    from .experiment import compare_schedulers
    names = [s.strip() for s in args.schedulers.split(",") if s.strip()]
    ckpts = {}
    for item in args.checkpoint:
        name, sep, path = item.partition("=")
        if not sep:
            raise ConfigError("--checkpoint", f"expected NAME=PATH, got {item!r}")
        ckpts[name] = Path(path)
    return compare_schedulers(cfg, names, _out(cfg), ckpts)


def cmd_train(cfg, args) -> dict:
    from .experiment import build_workload
    from .rl.ddpg import EnvSpec, TrainConfig, train_policy
    from .rl.policy import save_checkpoint
    from .workload import pareto_xmin_for_mean

    work = build_workload(cfg)
    if cfg.has("trace"):
        fixed = work.trace(cfg.int("trace.seed"))
        trace_fn = lambda seed: fixed  # noqa: E731
    else:
        trace_fn = work.trace
    try:
        tcfg = TrainConfig(**cfg.train_kwargs())
    except (TypeError, ValueError) as exc:
        raise ConfigError("train", str(exc)) from None
    mode = cfg.get("train.mode", "sla")
    env = EnvSpec(work.profiles, work.tenants, work.mas, work.epoch_ts, 0, (2.5, 1.0),
                  cfg.float("trace.medium_factor"), cfg.int("sla.window"), cfg.float("sim.horizon"), trace_fn)
    out = _out(cfg)
    try:
        res = train_policy(env, tcfg, mode, quiet=args.quiet)
    except ValueError as exc:
        raise ConfigError("train.mode", str(exc)) from None
    ckpt = out / "policy.bin"
    save_checkpoint(ckpt, res.agent.actor, res.agent.critic, res.agent.spec)
    (out / "learning_curve.csv").write_text(res.curve_csv())
    return {"checkpoint": str(ckpt), "episodes": len(res.curve),
            "final_return": res.curve[-1]["return"] if res.curve else None}


def cmd_gen_trace(cfg, args) -> dict:
    from .experiment import build_workload
    from .workload import write_trace
    work = build_workload(cfg)
    trace = work.trace(cfg.int("trace.seed"))
    path = _out(cfg) / "trace.csv"
    write_trace(trace, path)
    return {"trace": str(path), "requests": len(trace)}


def cmd_gen_costs(cfg, args) -> dict:
    from .experiment import build_workload
    from .workload import write_cost_table
    work = build_workload(cfg)
    path = _out(cfg) / "costs.csv"
    write_cost_table(work.profiles, path)
    return {"cost_table": str(path), "models": len(work.profiles)}


COMMANDS = {"simulate": cmd_simulate, "evaluate": cmd_evaluate, "compare": cmd_compare, "train": cmd_train,
            "gen-trace": cmd_gen_trace, "gen-costs": cmd_gen_costs}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg = _load(args)
        summary = COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MasfsError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if not args.quiet:
        brief = {k: v for k, v in summary.items() if k in ("scheduler", "schedulers", "checkpoint", "trace",
                                                              "cost_table", "requests", "models", "episodes")}
        print(json.dumps(brief, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
