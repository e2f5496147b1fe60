"""Run every sweep config under configs/ and write CSV plus SVG for each.

    python scripts/run_figures.py                      # all configs, 50 trials each
    python scripts/run_figures.py --only figure2b --trials 10 --parallelism 4
"""

from __future__ import annotations

import argparse
import logging
import time
from pathlib import Path

from vecldp import harness

ROOT = Path(__file__).resolve().parent.parent


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--configs", type=Path, default=ROOT / "configs")
    parser.add_argument("--only", nargs="*", help="config stems to run, e.g. figure2a figure3b")
    parser.add_argument("--trials", type=int)
    parser.add_argument("--parallelism", type=int)
    parser.add_argument("--seed", type=int)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    paths = sorted(args.configs.glob("*.cfg"))
    if args.only:
        paths = [p for p in paths if p.stem in args.only]
    failures = 0
    for path in paths:
        config = harness.load_config(path, trials=args.trials, parallelism=args.parallelism, seed=args.seed)
        start = time.perf_counter()
        result = harness.run_sweep(config)
        written = harness.emit(result, config.format, config.out)
        failures += len(result.errors)
        logging.info("%s: %d rows in %.0fs -> %s", path.stem, len(result.rows), time.perf_counter() - start,
                     ", ".join(map(str, written)))
        for (method, K), (mean, se, n) in harness.summarize(result).items():
            print(f"{path.stem:>9s} {method:>10s} K={K:<4d} {mean:.4f} +/- {se:.4f} (n={n})")
    return 1 if failures else 0


if __name__ == "__main__":
    raise SystemExit(main())
