"""Command line entry point: ``vecldp {run,verify-dp,bounds,plot}``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis, harness, synthetic
from .mechanisms import MechanismKind, MechanismSpec, UnsupportedSizeError, verify_label_dp

log = logging.getLogger("vecldp")


def _config_flags(parser: argparse.ArgumentParser) -> None:
    # every config-file key can be overridden by a flag of the same name
    parser.add_argument("--config", type=Path, help="key = value config file")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--trials", type=int)
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--parallelism", type=int)
    parser.add_argument("--format", choices=("csv", "plot", "both"))
    parser.add_argument("--num-classes", "--num_classes", dest="num_classes", help="comma-separated K grid")
    parser.add_argument("--sigma", help='number or "c/K"')
    parser.add_argument("--n-train", "--n_train", dest="n_train", type=int)
    parser.add_argument("--methods", help="comma-separated method names")
    parser.add_argument("--epsilon", help="privacy budget; 'inf' disables privatization")
    parser.add_argument("--k", type=int, help="neighbor count")
    parser.add_argument("--test-size", "--test_size", dest="test_size", type=int)
    parser.add_argument("--timing", action="store_true", default=None, help="record wall time per row")


def _load(args) -> harness.ExperimentConfig:
    overrides = {}
    for key in ("seed", "trials", "out", "parallelism", "format", "n_train", "k", "test_size", "timing"):
        overrides[key] = getattr(args, key)
    for key in ("num_classes", "sigma", "methods", "epsilon"):
        raw = getattr(args, key)
        overrides[key] = None if raw is None else harness.parse_value(key, raw)
    return harness.load_config(args.config, **overrides)


def cmd_run(args) -> int:
    config = _load(args)
    log.info("running %d cells", len(harness.sweep_cells(config)))
    result = harness.run_sweep(config)
    for path in harness.emit(result, config.format, config.out):
        print(path)
    for (method, K), (mean, se, n) in harness.summarize(result).items():
        print(f"{method:>10s}  K={K:<4d} accuracy={mean:.4f} +/- {se:.4f}  (n={n})")
    for i, msg in result.errors.items():
        print(f"cell {i} failed: {msg}", file=sys.stderr)
    return 1 if result.errors else 0


def cmd_verify_dp(args) -> int:
    Ks = [int(v) for v in args.num_classes.split(",")]
    epsilons = [float(v) for v in args.epsilon.split(",")]
    rows, failed = [], False
    for kind in MechanismKind:
        for K in Ks:
            for eps in epsilons:
                spec = MechanismSpec(kind, eps, K)
                prior = np.full(K, 1.0 / K) if kind is MechanismKind.RR_WITH_PRIOR else None
                try:
                    value = verify_label_dp(spec, prior=prior)
                except UnsupportedSizeError as exc:
                    print(f"{kind.value:>18s} K={K:<3d} eps={eps:<6g} skipped: {exc}")
                    continue
                ok = value <= eps + 1e-9
                failed |= not ok
                method = "analytic" if kind is MechanismKind.ALIBI else "enumerated"
                rows.append((kind.value, K, eps, value, method, ok))
                print(f"{kind.value:>18s} K={K:<3d} eps={eps:<6g} max log-ratio={value:.12f} "
                      f"({method}) {'ok' if ok else 'VIOLATION'}")
    if args.out:
        path = Path(args.out) / "verify_dp.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("mechanism", "K", "epsilon", "max_log_ratio", "method", "within_bound"))
            w.writerows((m, K, repr(e), repr(v), how, int(ok)) for m, K, e, v, how, ok in rows)
        print(path)
    return 1 if failed else 0


def cmd_bounds(args) -> int:
    config = _load(args)
    K = config.num_classes[0]
    sigma = config.sigma_for(K)
    eps = float(config.epsilon)
    task = synthetic.SyntheticTask(K, sigma)
    lipschitz = synthetic.lipschitz_estimate(task)
    print(f"K={K} sigma={sigma:g} epsilon={eps:g} k={config.k} N={config.n_train} probes={config.test_size}")
    print(f"Lipschitz estimate of eta: {lipschitz:.4f}")
    out_rows, failed = [], False
    for trial in range(config.trials):
        summary, _, _, probes, profile = harness.bound_trial(K, sigma, eps, config.k, config.n_train,
                                                             config.test_size, trial, config.seed)
        pts = probes.features[: args.r0_probes]
        r0 = np.array([analysis.r0_radius(task, x, config.k, config.n_train) for x in pts])
        knn_bound = np.array([analysis.knn_delta_bound(config.k, K, args.delta, eps, lipschitz, r) for r in r0])
        covered = float(np.mean(profile.per_point_delta[: len(pts)] <= knn_bound))
        failed |= not summary.holds
        out_rows.append((trial, summary.excess_risk, summary.bound, summary.combined_se, float(np.median(knn_bound)),
                         covered, int(summary.holds)))
        print(f"trial {trial:3d}: excess risk {summary.excess_risk:.5f} <= bound {summary.bound:.5f} "
              f"(+3se {3 * summary.combined_se:.5f}) {'ok' if summary.holds else 'VIOLATED'}; "
              f"kNN delta bound median {np.median(knn_bound):.4f}, covers {covered:.0%} of probes")
    print(f"failure probability of the kNN bound: {analysis.knn_bound_failure_probability(config.k, args.delta):.4g}")
    if config.out:
        path = Path(config.out) / "bounds.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("trial", "excess_risk", "bound", "combined_se", "knn_delta_bound_median", "knn_bound_coverage",
                        "holds"))
            w.writerows(tuple(repr(v) if isinstance(v, float) else v for v in r) for r in out_rows)
        print(path)
    return 1 if failed else 0


def cmd_plot(args) -> int:
    rows = harness.read_csv(args.csv)
    out = args.output or Path(args.csv).with_suffix(".svg")
    print(harness.plot_rows(rows, out, title=args.title))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vecldp", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a sweep from a config file")
    _config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify-dp", help="exact privacy-loss report for every mechanism")
    p.add_argument("--num-classes", "--num_classes", dest="num_classes", default="2,3,4,5,6,7,8,9,10")
    p.add_argument("--epsilon", default="0.5,1,2")
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify_dp)

    p = sub.add_parser("bounds", help="excess risk vs the margin bound, plus the kNN error bound")
    _config_flags(p)
    p.add_argument("--delta", type=float, default=0.05, help="confidence parameter of the kNN bound")
    p.add_argument("--r0-probes", type=int, default=50, help="probes at which r0 and the kNN bound are computed")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("plot", help="render a results CSV as accuracy-vs-K curves")
    p.add_argument("csv", type=Path)
    p.add_argument("--output", type=Path)
    p.add_argument("--title")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
