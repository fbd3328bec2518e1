"""Canned training configurations for the desk-scale validation runs.

These are the fixed setups the acceptance suite measures: copy and binary
addition at small map counts, binary multiplication at 96 maps, and the
soft-nonlinearity / no-diagonal-gate ablations of the addition setup.  Run
directories live under runs/acceptance (override with DNGPU_RUNS_DIR); a run
is considered complete once its final checkpoint exists, so finished work is
never repeated.  Train them ahead of time with scripts/run_acceptance.py or
let the test suite build missing ones on demand.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .trainer import RunConfig, evaluate, load_checkpoint, run_training

ABLATION_CELLS = ("soft", "cgru")

COPY_SEEDS = (1, 2, 3, 4, 5)
ADD_SEEDS = (1, 2, 3, 4, 5)
MUL2_SEEDS = (1, 2, 3, 4, 5)
ABLATION_SEEDS = (1, 2, 3)

COPY_EVAL_LENGTH = 132    # 4x the largest training bin
ADD_EVAL_LENGTH = 129
MUL2_EVAL_LENGTH = 81     # two 40-bit operands; the CPU-budget fallback length


def runs_root() -> Path:
    return Path(os.environ.get("DNGPU_RUNS_DIR", "runs/acceptance"))


def run_dir(tag: str) -> Path:
    return runs_root() / tag


def copy_config(seed: int) -> RunConfig:
    return RunConfig(task="copy", maps=24, bins=(9, 17, 25, 33), lr=0.02,
                     steps=500, seed=seed, eval_length=COPY_EVAL_LENGTH,
                     eval_count=128, eval_interval=25, target_acc=0.997,
                     checkpoint_interval=100000, figures=False)


def add_config(seed: int) -> RunConfig:
    return RunConfig(task="add", maps=48, bins=(9, 17, 25, 33), lr=0.02,
                     batch=32, steps=2000, seed=seed, eval_length=ADD_EVAL_LENGTH,
                     eval_count=128, eval_interval=50, target_acc=0.997,
                     checkpoint_interval=100000, figures=False)


def mul2_config(seed: int) -> RunConfig:
    return RunConfig(task="mul2", maps=96, bins=(9, 17, 25, 33, 41), lr=0.01,
                     batch=32, steps=4000, seed=seed, eval_length=MUL2_EVAL_LENGTH,
                     eval_count=128, eval_interval=100, target_acc=0.997,
                     checkpoint_interval=100000, figures=False)


def ablation_config(cell_tag: str, seed: int) -> RunConfig:
    """Addition setup with one feature removed; no early stop so every
    interval step stays comparable against the full model's metrics."""
    config = add_config(seed)
    config.target_acc = 2.0
    if cell_tag == "soft":
        config.nonlinearity = "soft"
    elif cell_tag == "cgru":
        config.cell = "cgru"
    else:
        raise ValueError(f"unknown ablation {cell_tag!r}")
    return config


def config_for(tag: str) -> RunConfig:
    kind, _, seed = tag.rpartition("_s")
    seed = int(seed)
    if kind == "copy":
        return copy_config(seed)
    if kind == "add":
        return add_config(seed)
    if kind == "mul2":
        return mul2_config(seed)
    if kind.startswith("abl_"):
        return ablation_config(kind[len("abl_"):], seed)
    raise ValueError(f"unknown benchmark tag {tag!r}")


def train_run(tag: str) -> Path:
    """Train the tagged run unless its final checkpoint already exists."""
    out = run_dir(tag)
    if not (out / "ckpt_final.dngpu").exists():
        run_training(config_for(tag), out)
    return out


def final_eval(tag: str, eval_length: int, count: int = 1024) -> tuple[float, int]:
    """Bit accuracy of the run's final checkpoint on `count` fresh examples.

    Results are cached in the run directory (keyed by length and count);
    delete the JSON or the directory to force recomputation.
    """
    out = train_run(tag)
    cache = out / "final_eval.json"
    cached = json.loads(cache.read_text()) if cache.exists() else {}
    key = f"{eval_length}x{count}"
    if key not in cached:
        state = load_checkpoint(out / "ckpt_final.dngpu")
        rng = np.random.default_rng(np.random.SeedSequence(entropy=state.config.seed,
                                                           spawn_key=(200, eval_length)))
        acc, errors = evaluate(state.params, state.config.model_config(),
                               state.config.task, eval_length, count, rng=rng)
        cached[key] = [acc, errors]
        cache.write_text(json.dumps(cached, sort_keys=True) + "\n")
    acc, errors = cached[key]
    return float(acc), int(errors)


def metrics_rows(tag: str) -> list[dict]:
    """Parsed metrics.csv of the tagged run (trained on demand)."""
    out = train_run(tag)
    lines = (out / "metrics.csv").read_text().strip().splitlines()
    header = lines[0].split(",")
    return [dict(zip(header, line.split(","))) for line in lines[1:]]


def first_step_reaching(rows: list[dict], accuracy: float) -> int | None:
    for row in rows:
        if float(row["eval_bit_acc"]) >= accuracy:
            return int(row["step"])
    return None


def eval_acc_at_step(rows: list[dict], step: int) -> float | None:
    for row in rows:
        if int(row["step"]) == step:
            return float(row["eval_bit_acc"])
    return None
