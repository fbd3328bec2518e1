"""Console-script shim: apply DNGPU_THREADS before numpy loads."""

import os
import sys


def main() -> None:
    threads = os.environ.get("DNGPU_THREADS")
    if threads:
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, threads)
    from .cli import main as cli_main
    sys.exit(cli_main())
