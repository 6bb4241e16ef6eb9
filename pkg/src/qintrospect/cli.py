"""Command-line entry point: ``qintrospect {train,aggregate,export,explain,oracle}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .agents import QFunctionFormatError, load_qfunction
from .env import Action, dist_bin
from .explain import contrastive_explanation, standalone_explanation
from .harness import (
    ConfigError,
    ExperimentConfig,
    aggregate_runs,
    aggregate_to_csv,
    compute_probabilities,
    config_to_dict,
    export,
    load_config,
    read_probe_log,
    run_experiment,
    window_stats,
)
from .introspection import IntrospectionConfig, state_probabilities
from .oracle import write_oracle


class CliError(Exception):
    pass


def _pair(text: str, cast=float) -> tuple:
    try:
        a, b = (cast(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'x,y', got {text!r}") from None
    return (a, b)


def _int_pair(text):
    return _pair(text, int)


def _seeds(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None


def _introspection_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--r-max", type=float, default=100.0)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--b", type=float, default=None, help="normalization floor (default r_max/1000)")


def _introspection(args) -> IntrospectionConfig:
    return IntrospectionConfig(r_max=args.r_max, sigma=args.sigma, b=args.b)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qintrospect", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train agents over several seeds and log probe Q-values")
    p.add_argument("--config", type=Path)
    p.add_argument("--mode", choices=["episodic", "non-episodic"])
    p.add_argument("--agent", choices=["tabular-q", "sarsa", "dqn"])
    p.add_argument("--seeds", type=_seeds)
    p.add_argument("--steps", type=int, help="override total_steps")
    p.add_argument("--workers", type=int)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("aggregate", help="seed mean/std of probabilities per step bucket")
    p.add_argument("--log", type=Path, required=True)
    p.add_argument("--bucket", type=int, default=500)
    p.add_argument("--start-step", type=int, default=0, help="drop rows before this step (DQN warm-up)")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("export", help="recompute probabilities and write CSV or JSON")
    p.add_argument("--log", type=Path, required=True)
    p.add_argument("--format", choices=["csv", "json"], required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--bucket", type=int, default=500)
    p.add_argument("--start-step", type=int, default=0)
    p.add_argument("--window", choices=["cumulative", "per-episode"], default="cumulative")
    _introspection_args(p)

    p = sub.add_parser("explain", help="explain an action at a probe position")
    p.add_argument("--qfunc", type=Path, required=True)
    p.add_argument("--probe", type=_int_pair, required=True, metavar="X,Y")
    p.add_argument("--mailbox", type=_pair, required=True, metavar="X,Y")
    p.add_argument("--chosen", required=True)
    p.add_argument("--contrast")
    p.add_argument("--log", type=Path, help="probe log supplying the normalization window")
    p.add_argument("--label", help="probe label in the log (needed when the log holds several)")
    p.add_argument("--seed", type=int, help="restrict the window to one seed")
    _introspection_args(p)

    p = sub.add_parser("oracle", help="write value-iteration Q* for a small fixed-mailbox grid")
    p.add_argument("--grid", type=int, default=10)
    p.add_argument("--gamma", type=float, default=0.99)
    p.add_argument("--out", type=Path, required=True)
    return parser


def cmd_train(args) -> int:
    config = load_config(args.config) if args.config else None
    if config is None:
        config = ExperimentConfig.preset(args.mode or "episodic", args.agent or "tabular-q")
    else:
        updates = {}
        if args.mode:
            updates["mode"] = args.mode
        if args.agent:
            updates["agent"] = args.agent
        if updates:
            config = dataclasses.replace(config, **updates)
    updates = {}
    if args.seeds is not None:
        updates["seeds"] = args.seeds
    if args.steps is not None:
        updates["total_steps"] = args.steps
        updates["learner"] = dataclasses.replace(config.learner, total_steps=args.steps)
    if args.workers is not None:
        updates["workers"] = args.workers
    if args.out is not None:
        updates["output_dir"] = str(args.out)
    if updates:
        config = dataclasses.replace(config, **updates)
    if config.output_dir is None:
        raise CliError("no output directory: pass --out or set output_dir in the config")
    _, plog = run_experiment(config)
    print(json.dumps({"output_dir": config.output_dir, "seeds": list(config.seeds),
                      "rows": len(plog), "agent": config_to_dict(config)["agent"]}))
    return 0


def cmd_aggregate(args) -> int:
    plog = read_probe_log(args.log)
    stats = aggregate_runs(plog, args.bucket, args.start_step)
    args.out.write_text(aggregate_to_csv(stats))
    return 0


def cmd_export(args) -> int:
    plog = read_probe_log(args.log)
    compute_probabilities(plog, _introspection(args), args.window)
    stats = aggregate_runs(plog, args.bucket, args.start_step)
    export(plog, stats, args.format, args.out)
    return 0


def cmd_explain(args) -> int:
    config = _introspection(args)
    chosen = Action.parse(args.chosen)
    contrast = Action.parse(args.contrast) if args.contrast else None
    qf = load_qfunction(args.qfunc)
    obs = (args.probe[0], args.probe[1], dist_bin(args.probe, args.mailbox))
    q = qf.q_values(obs)

    if args.log is None:
        raise CliError("normalization stats missing: supply a probe log with --log")
    plog = read_probe_log(args.log)
    label = args.label
    if label is None:
        labels = plog.labels()
        if len(labels) != 1:
            raise CliError(f"log holds probes {labels}; choose one with --label")
        label = labels[0]
    stats = window_stats(plog, args.seed, label)
    if stats.empty:
        raise CliError(f"no logged Q-values for probe {label!r} in {args.log}; supply a ProbeLog window")
    stats.update(q)  # the queried values join the window so they are always covered

    probs = state_probabilities(qf, obs, stats, config)
    if contrast is None:
        expl = standalone_explanation(chosen, probs)
    else:
        expl = contrastive_explanation(chosen, contrast, probs)
    print(expl.text)
    return 0


def cmd_oracle(args) -> int:
    data = write_oracle(args.out, args.grid, args.gamma)
    print(json.dumps({"grid": data["grid"], "states": len(data["entries"]), "sweeps": data["sweeps"]}))
    return 0


COMMANDS = {
    "train": cmd_train,
    "aggregate": cmd_aggregate,
    "export": cmd_export,
    "explain": cmd_explain,
    "oracle": cmd_oracle,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (CliError, ConfigError, QFunctionFormatError, OSError, ValueError, RuntimeError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"qintrospect {args.command}: error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
