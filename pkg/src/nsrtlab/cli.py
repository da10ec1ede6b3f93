"""Command-line entry point: ``nsrtlab {collect,train,evaluate,curve,constants}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from nsrtlab import harness
from nsrtlab.envs import ENVS, make_env
from nsrtlab.learn import LearnConfig
from nsrtlab.plan import METHODS, PlannerConfig


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nsrtlab", description=__doc__)
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help):
        sp.add_argument("--env", choices=sorted(ENVS), default="pickplace1d")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", type=Path, help=out_help)
        sp.add_argument("--config", type=Path,
                        help="JSON file whose keys override the flags")
        return sp

    sp = common(sub.add_parser("collect", help="run the behavior prior and log data"),
                "dataset JSONL path")
    sp.add_argument("--episodes", type=int, default=500)

    sp = common(sub.add_parser("train", help="learn NSRTs and the failure predictor"),
                "bundle JSON path")
    sp.add_argument("--episodes", type=int, default=500)
    sp.add_argument("--data", type=Path, help="dataset JSONL; collected fresh if absent")
    sp.add_argument("--epoch-scale", type=float, default=0.1)

    sp = common(sub.add_parser("evaluate", help="solve test tasks with one method"),
                "CSV path (appended; stdout if absent)")
    sp.add_argument("--method", choices=METHODS, default="ours")
    sp.add_argument("--bundle", type=Path)
    sp.add_argument("--split", default="test_easy")
    sp.add_argument("--tasks", type=int, default=100)
    sp.add_argument("--episodes", type=int, default=0,
                    help="recorded in the train_episodes column")
    sp.add_argument("--timeout", type=float, default=3.0)

    sp = common(sub.add_parser("curve", help="learning-curve sweep to CSV"), "CSV path")
    sp.add_argument("--method", choices=METHODS, action="append")
    sp.add_argument("--episodes", type=int, action="append")
    sp.add_argument("--seeds", type=int, default=8, help="seeds 0..N-1")
    sp.add_argument("--tasks", type=int, default=100)
    sp.add_argument("--timeout", type=float, default=3.0)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--bundle-dir", type=Path, help="keep each trained bundle here")

    sp = sub.add_parser("constants", help="print an environment's constants")
    sp.add_argument("--env", choices=sorted(ENVS), default="pickplace1d")
    return p


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    if getattr(args, "config", None) is None:
        return {}
    raw = json.loads(Path(args.config).read_text())
    if not isinstance(raw, dict):
        raise SystemExit("config file must hold a JSON object")
    return raw


def _apply(args: argparse.Namespace, raw: Dict[str, Any], keys) -> None:
    for key in keys:
        if key in raw:
            setattr(args, key, raw[key])


def cmd_collect(args) -> int:
    _apply(args, _overrides(args), ("env", "seed", "episodes", "out"))
    env = make_env(args.env)
    data = harness.collect_data(env, args.episodes, args.seed)
    out = Path(args.out or f"{args.env}_s{args.seed}_{args.episodes}.jsonl")
    harness.save_dataset(data, out)
    print(f"{len(data.transitions)} transitions, {len(data.failures)} failures -> {out}")
    return 0


def cmd_train(args) -> int:
    raw = _overrides(args)
    _apply(args, raw, ("env", "seed", "episodes", "out", "data", "epoch_scale"))
    env = make_env(args.env)
    if args.data:
        data = harness.load_dataset(Path(args.data))
        if data.env != env.name:
            raise SystemExit(f"dataset is for {data.env}, not {env.name}")
    else:
        data = harness.collect_data(env, args.episodes, args.seed)
    learn_raw = {k: v for k, v in raw.get("learn", {}).items()}
    learn_raw.setdefault("epoch_scale", args.epoch_scale)
    config = LearnConfig(**learn_raw)
    bundle = harness.train_pipeline(env, data, config, args.seed)
    out = Path(args.out or f"{args.env}_s{args.seed}.bundle.json")
    bundle.save(out)
    for nsrt in bundle.nsrts:
        print(nsrt.describe())
    print(f"timings: {json.dumps({k: round(v, 2) for k, v in bundle.timings.items()})}")
    print(f"bundle -> {out}")
    return 0


def cmd_evaluate(args) -> int:
    _apply(args, _overrides(args), ("env", "seed", "method", "bundle", "split", "tasks",
                                    "timeout", "out", "episodes"))
    env = make_env(args.env)
    if args.split not in env.splits or args.split == "train":
        raise SystemExit(f"unknown test split {args.split!r}")
    bundle = None
    if args.method != "b5":
        if args.bundle is None:
            raise SystemExit(f"--bundle is required for method {args.method}")
        bundle = harness.ModelBundle.load(Path(args.bundle))
        if bundle.env != env.name:
            raise SystemExit(f"bundle is for {bundle.env}, not {env.name}")
    row = harness.evaluate(bundle, env, args.split, args.tasks, args.method,
                           PlannerConfig(timeout=args.timeout), args.seed, args.episodes)
    if args.out:
        out = Path(args.out)
        fresh = not out.exists()
        with open(out, "a", newline="") as fh:
            writer = csv.writer(fh)
            if fresh:
                writer.writerow(harness.CSV_COLUMNS)
            writer.writerow(row.as_csv())
    writer = csv.writer(sys.stdout)
    writer.writerow(harness.CSV_COLUMNS)
    writer.writerow(row.as_csv())
    return 0


def cmd_curve(args) -> int:
    raw = _overrides(args)
    fields: Dict[str, Any] = {"env": args.env, "seeds": list(range(args.seeds)),
                              "n_test_tasks": args.tasks, "timeout": args.timeout,
                              "workers": args.workers}
    if args.bundle_dir is not None:
        fields["bundle_dir"] = str(args.bundle_dir)
    if args.method:
        fields["methods"] = args.method
    if args.episodes:
        fields["train_episodes"] = args.episodes
    out = raw.pop("out", None) or args.out
    fields.update(raw)
    config = harness.ExperimentConfig.from_dict(fields)
    out = Path(out or f"{config.env}_curve.csv")
    rows = harness.learning_curve(config, out)
    print(f"{len(rows)} rows -> {out}")
    return 0


def cmd_constants(args) -> int:
    print(make_env(args.env).constants_config())
    return 0


COMMANDS = {"collect": cmd_collect, "train": cmd_train, "evaluate": cmd_evaluate,
            "curve": cmd_curve, "constants": cmd_constants}


def main(argv: Optional[List[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
