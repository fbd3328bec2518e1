"""Command-line entry points: train, eval, trace.

Every long option has a config-file equivalent: a plain text file of
`key = value` lines passed with --config, with command-line flags taking
precedence over file values.  All commands honour --seed and write
byte-identical outputs for identical invocations.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import figures, model, tasks, trace
from .trainer import (CheckpointError, RunConfig, evaluate, load_checkpoint,
                      run_training)


def _parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("on", "true", "1", "yes"):
        return True
    if value in ("off", "false", "0", "no"):
        return False
    raise ValueError(f"expected on/off, got {text!r}")


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip())


@dataclass(frozen=True)
class Option:
    name: str                 # long flag without the leading dashes
    parse: type | object      # callable str -> value
    default: object
    help: str


TRAIN_OPTIONS = [
    Option("task", str, None, "task name: " + ", ".join(sorted(tasks.TASKS))),
    Option("maps", int, 96, "state maps m"),
    Option("bins", _parse_ints, (9, 17, 25, 33, 41), "comma-separated bin lengths"),
    Option("kernel-width", int, 3, "convolution filter length (odd)"),
    Option("cell", str, "dcgru", "cell kind: dcgru or cgru"),
    Option("nonlinearity", str, "hard", "hard or soft"),
    Option("saturation", _parse_bool, True, "charge saturation cost (hard mode)"),
    Option("s-limit", float, 0.9, "linear-range limit for the saturation cost"),
    Option("dropout", float, 0.1, "candidate-vector dropout probability"),
    Option("precision", str, "float32", "float32 or float64"),
    Option("lr", float, None, "learning rate (default 0.005 scaled by 96/maps)"),
    Option("clip-ratio", float, 1.0, "gradient clip as a multiple of the decayed max"),
    Option("noise", float, 0.01, "gradient noise stddev as a multiple of lr"),
    Option("patience", int, 600, "stalled steps before an lr decay"),
    Option("lr-decay", float, 0.7, "lr multiplier on stall"),
    Option("batch", int, 32, "examples per bin per step"),
    Option("steps", int, 4000, "training step budget"),
    Option("max-seconds", float, None, "optional wall-clock budget"),
    Option("seed", int, 1, "master seed"),
    Option("per-length", int, 10000, "training examples per achievable length"),
    Option("eval-length", int, None, "evaluation input length"),
    Option("eval-count", int, 1024, "evaluation examples per measurement"),
    Option("eval-interval", int, 100, "steps between evaluations"),
    Option("checkpoint-interval", int, 1000, "steps between checkpoints"),
    Option("target-acc", float, 0.99, "early-stop evaluation accuracy"),
    Option("timing", str, "none", "'wall' records real seconds (non-deterministic)"),
    Option("figures", _parse_bool, True, "render PNG figures next to the CSVs"),
]

EVAL_OPTIONS = [
    Option("ckpt", str, None, "checkpoint file"),
    Option("length", int, None, "evaluation input length"),
    Option("count", int, 1024, "number of evaluation examples"),
    Option("seed", int, 1, "seed for evaluation data"),
    Option("curve", _parse_ints, None, "comma-separated lengths for a sweep CSV"),
    Option("out", str, ".", "directory for sweep CSV and figures"),
    Option("figures", _parse_bool, True, "render PNG figures next to the CSVs"),
]

TRACE_OPTIONS = [
    Option("ckpt", str, None, "checkpoint file"),
    Option("input", str, None, "input as glyphs in the task alphabet"),
    Option("random-length", int, None, "draw a random input of this length"),
    Option("seed", int, 1, "seed for the random input"),
    Option("out", str, "trace_out", "output directory for the map images"),
    Option("figures", _parse_bool, True, "also render a PNG contact sheet"),
]


def _add_options(parser: argparse.ArgumentParser, options: list[Option]) -> None:
    parser.add_argument("--config", type=str, default=None,
                        help="config file of 'key = value' lines; flags win")
    for opt in options:
        parser.add_argument(f"--{opt.name}", type=str, default=None, help=opt.help)


def load_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for line_no, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{line_no}: expected 'key = value'")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _merge(parser: argparse.ArgumentParser, args: argparse.Namespace,
           options: list[Option]) -> dict[str, object]:
    file_values: dict[str, str] = {}
    if args.config is not None:
        try:
            file_values = load_config_file(args.config)
        except (OSError, ValueError) as exc:
            parser.error(str(exc))
    merged: dict[str, object] = {}
    for opt in options:
        key = opt.name.replace("-", "_")
        raw = getattr(args, key)
        if raw is None and key in file_values:
            raw = file_values[key]
        if raw is None:
            merged[key] = opt.default
            continue
        try:
            merged[key] = opt.parse(raw)
        except ValueError as exc:
            parser.error(f"--{opt.name}: {exc}")
    return merged


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_train(parser: argparse.ArgumentParser, args: argparse.Namespace) -> int:
    opts = _merge(parser, args, TRAIN_OPTIONS)
    if args.out is None:
        parser.error("--out is required")
    resume_path = args.resume
    if resume_path is not None:
        state = load_checkpoint(resume_path)
        if opts["steps"] is not None and args.steps is not None:
            state.config.steps = opts["steps"]
        state, records = run_training(state.config, args.out, resume=state)
    else:
        if opts["task"] is None:
            parser.error("--task is required (flag or config file)")
        if opts["task"] not in tasks.TASKS:
            parser.error(f"unknown task {opts['task']!r}; choose from {sorted(tasks.TASKS)}")
        config = RunConfig(
            task=opts["task"], maps=opts["maps"], bins=opts["bins"],
            kernel_width=opts["kernel_width"], cell=opts["cell"],
            nonlinearity=opts["nonlinearity"], saturation=opts["saturation"],
            s_limit=opts["s_limit"], dropout=opts["dropout"],
            precision=opts["precision"], lr=opts["lr"],
            clip_ratio=opts["clip_ratio"], noise=opts["noise"],
            patience=opts["patience"], lr_decay=opts["lr_decay"],
            batch=opts["batch"], steps=opts["steps"], max_seconds=opts["max_seconds"],
            seed=opts["seed"], per_length=opts["per_length"],
            eval_length=opts["eval_length"], eval_count=opts["eval_count"],
            eval_interval=opts["eval_interval"],
            checkpoint_interval=opts["checkpoint_interval"],
            target_acc=opts["target_acc"], timing=opts["timing"],
            figures=opts["figures"])
        state, records = run_training(config, args.out)
    if records:
        last = records[-1]
        print(f"step {last.step}: eval_bit_acc {last.eval_bit_acc:.6g} "
              f"whole_errors {last.eval_whole_errors}")
    print(f"final checkpoint: {Path(args.out) / 'ckpt_final.dngpu'}")
    return 0


def cmd_eval(parser: argparse.ArgumentParser, args: argparse.Namespace) -> int:
    opts = _merge(parser, args, EVAL_OPTIONS)
    if opts["ckpt"] is None:
        parser.error("--ckpt is required")
    if opts["count"] < 1:
        parser.error("--count must be at least 1")
    state = load_checkpoint(opts["ckpt"])
    config = state.config.model_config()
    task = tasks.get_task(state.config.task)

    if opts["curve"] is not None:
        out = Path(opts["out"])
        out.mkdir(parents=True, exist_ok=True)
        rows = []
        for length in opts["curve"]:
            if length < 1:
                parser.error("--curve lengths must be positive")
            rng = np.random.default_rng(np.random.SeedSequence(entropy=opts["seed"],
                                                               spawn_key=(length,)))
            acc, errors = evaluate(state.params, config, task, length,
                                   opts["count"], rng=rng)
            rows.append((length, acc, errors))
            print(f"{length},{acc:.6g},{errors}")
        csv_path = out / "curve.csv"
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write("length,bit_acc,whole_errors\n")
            for length, acc, errors in rows:
                fh.write(f"{length},{acc:.6g},{errors}\n")
        if opts["figures"]:
            figures.render_curve(csv_path, out / "curve.png",
                                 train_max=max(state.config.bins))
        return 0

    if opts["length"] is None:
        parser.error("--length is required unless --curve is given")
    if opts["length"] < 1:
        parser.error("--length must be positive")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=opts["seed"],
                                                       spawn_key=(opts["length"],)))
    acc, errors = evaluate(state.params, config, task, opts["length"],
                           opts["count"], rng=rng)
    print(f"{acc:.6g} {errors}")
    return 0


def cmd_trace(parser: argparse.ArgumentParser, args: argparse.Namespace) -> int:
    opts = _merge(parser, args, TRACE_OPTIONS)
    if opts["ckpt"] is None:
        parser.error("--ckpt is required")
    if (opts["input"] is None) == (opts["random_length"] is None):
        parser.error("exactly one of --input or --random-length is required")
    state = load_checkpoint(opts["ckpt"])
    config = state.config.model_config()
    task = tasks.get_task(state.config.task)

    if opts["input"] is not None:
        tokens = task.alphabet.from_text(opts["input"])
    else:
        rng = np.random.default_rng(opts["seed"])
        tokens = task.sample(opts["random_length"], rng).input

    with ad.no_grad():
        result = model.forward(tokens, state.params, config, want_trace=True)
    names = trace.write_trace_maps(result.trace, config.split, opts["out"])
    print(f"wrote {len(names)} map images to {opts['out']}")
    if opts["figures"]:
        images = trace.trace_to_images(result.trace)
        groups = [config.split.group_of(i) for i in range(images.shape[0])]
        figures.render_trace_sheet(images, groups, Path(opts["out"]) / "trace_sheet.png")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dngpu",
        description="Train, evaluate and visualize diagonal convolutional GRU models "
                    "on algorithmic tasks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model and log metrics")
    _add_options(p_train, TRAIN_OPTIONS)
    p_train.add_argument("--out", type=str, default=None, help="output directory")
    p_train.add_argument("--resume", type=str, default=None,
                         help="checkpoint to continue from")

    p_eval = sub.add_parser("eval", help="measure accuracy at a given input length")
    _add_options(p_eval, EVAL_OPTIONS)

    p_trace = sub.add_parser("trace", help="render per-map execution trace images")
    _add_options(p_trace, TRACE_OPTIONS)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    commands = {"train": cmd_train, "eval": cmd_eval, "trace": cmd_trace}
    sub = {"train": parser, "eval": parser, "trace": parser}[args.command]
    try:
        return commands[args.command](sub, args)
    except (CheckpointError, ad.DataError, ad.UsageError, ad.ShapeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
