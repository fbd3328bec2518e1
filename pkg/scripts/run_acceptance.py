#!/usr/bin/env python3
"""Train the acceptance-suite models into runs/acceptance/.

tests/test_acceptance.py trains any missing run itself, but on a small box
that serializes hours of work through pytest.  This driver produces the same
run directories up front, several at a time with single-threaded BLAS, so the
test suite only has to verify them:

    python3 scripts/run_acceptance.py [--jobs 2] [--only add|copy|mul2|ablation]

Safe to re-run: finished runs (ckpt_final.dngpu present) are skipped.
"""

import argparse
import os
import subprocess
import sys
import time
from pathlib import Path

PKG_ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(PKG_ROOT / "src"))

from dngpu import benchmarks  # noqa: E402


def pending_tags(only=None):
    tags = []
    if only in (None, "copy"):
        tags += [f"copy_s{s}" for s in benchmarks.COPY_SEEDS]
    if only in (None, "add"):
        tags += [f"add_s{s}" for s in benchmarks.ADD_SEEDS]
    if only in (None, "mul2"):
        tags += [f"mul2_s{s}" for s in benchmarks.MUL2_SEEDS]
    if only in (None, "ablation"):
        tags += [f"abl_{cell}_s{s}" for cell in benchmarks.ABLATION_CELLS
                 for s in benchmarks.ABLATION_SEEDS]
    return [t for t in tags
            if not (benchmarks.run_dir(t) / "ckpt_final.dngpu").exists()]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--jobs", type=int, default=2)
    ap.add_argument("--only", choices=["add", "copy", "mul2", "ablation"], default=None)
    args = ap.parse_args()

    tags = pending_tags(args.only)
    if not tags:
        print("all acceptance runs already present")
        return
    print(f"{len(tags)} runs to train: {tags}")
    env = dict(os.environ, OPENBLAS_NUM_THREADS="1", OMP_NUM_THREADS="1")
    running = []
    while tags or running:
        while tags and len(running) < args.jobs:
            tag = tags.pop(0)
            benchmarks.runs_root().mkdir(parents=True, exist_ok=True)
            code = (f"import sys; sys.path.insert(0, {str(PKG_ROOT / 'src')!r}); "
                    f"from dngpu import benchmarks; benchmarks.train_run({tag!r})")
            log = open(benchmarks.runs_root() / f"{tag}.log", "w")
            proc = subprocess.Popen([sys.executable, "-c", code], env=env,
                                    cwd=PKG_ROOT, stdout=log, stderr=subprocess.STDOUT)
            running.append((tag, proc, log))
            print(f"started {tag}", flush=True)
        for item in list(running):
            tag, proc, log = item
            if proc.poll() is not None:
                log.close()
                running.remove(item)
                print(f"finished {tag} (exit {proc.returncode})", flush=True)
        time.sleep(5)


if __name__ == "__main__":
    main()
