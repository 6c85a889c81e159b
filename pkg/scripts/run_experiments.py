"""Run every desk-scale experiment and collect the CSVs in one directory.

    python3 scripts/run_experiments.py --out-dir runs/ [--jobs 4] [--long]

``--long`` adds the 20x20 and 40x40 concentration runs, which fall back to
the sampled route for log Z and take hours.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from fracbp.cli import main as fracbp

RUNS = [
    ("sweep_grid3", ["sweep", "--topology", "grid", "--size", "3", "--seed", "1"]),
    ("sweep_k9", ["sweep", "--topology", "complete", "--size", "9", "--seed", "7"]),
    ("sweep_grid4_zero_field", ["sweep", "--size", "4", "--field", "zero", "--seed", "2"]),
    ("concentration", ["concentration", "--sizes", "6", "8", "10", "--instances", "4"]),
    ("concentration_small", ["concentration", "--sizes", "3", "--instances", "4"]),
    ("mc_convergence", ["mc-convergence", "--sizes", "3", "6", "--samples", "100000", "--batch-size", "1000"]),
    ("mixed", ["mixed", "--instances", "20"]),
    ("trees_k4", ["validate-trees", "--complete", "4"]),
    ("trees_k6", ["validate-trees", "--complete", "6"]),
]

LONG_RUNS = [
    ("concentration_long", ["concentration", "--sizes", "20", "40", "--instances", "4", "--route", "mc",
                            "--samples", "1000000"]),
]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out-dir", type=Path, default=Path("runs"))
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--long", action="store_true")
    args = parser.parse_args()
    args.out_dir.mkdir(parents=True, exist_ok=True)
    worst = 0
    for name, argv in RUNS + (LONG_RUNS if args.long else []):
        print(f"== {name}", flush=True)
        extra = ["--out", str(args.out_dir / f"{name}.csv")]
        if argv[0] not in ("validate-trees", "sweep", "lambda-star"):
            extra += ["--jobs", str(args.jobs)]
        worst = max(worst, fracbp(argv + extra))
    return worst


if __name__ == "__main__":
    sys.exit(main())
