"""Experiment runner: mechanism x learner sweeps over the synthetic task.

Every cell ``(method, K, trial)`` is seeded from the master seed alone, so a
sweep produces identical rows whatever order or process runs its cells.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import analysis, knn, synthetic
from .mechanisms import (
    InvalidParameterError,
    MechanismKind,
    MechanismSpec,
    alibi_privatize,
    alibi_soft_label,
    rr_privatize,
    rrwithprior_privatize,
    vector_privatize,
)
from .synthetic import SyntheticTask

log = logging.getLogger(__name__)

# Stable ids feed the seed derivation; never renumber.
METHOD_IDS = {"Bayes": 0, "RR": 1, "LP-2ST": 2, "ALIBI": 3, "Vector": 4, "NonPrivate": 5}
PAPER_METHODS = ("RR", "LP-2ST", "ALIBI", "Vector", "Bayes")
DEFAULT_K_GRID = (2, 5, 10, 20, 50, 100)

CSV_HEADER = ("method", "K", "sigma", "epsilon", "k", "trial", "seed", "accuracy", "excess_risk", "wall_time_ms")


# -- configuration -------------------------------------------------------------


@dataclass
class ExperimentConfig:
    num_classes: tuple[int, ...] = DEFAULT_K_GRID
    sigma: str | float = "2/K"
    n_train: int = 10_000
    methods: tuple[str, ...] = PAPER_METHODS
    epsilon: float = 1.0
    k: int = 200
    trials: int = 50
    test_size: int = 2000
    seed: int = 0
    out: str = "results"
    parallelism: int = 1
    format: str = "csv"
    timing: bool = False

    def __post_init__(self):
        self.num_classes = tuple(int(K) for K in self.num_classes)
        self.methods = tuple(self.methods)
        if self.trials < 1:
            raise InvalidParameterError(f"trials must be >= 1, got {self.trials}")
        if any(K < 2 for K in self.num_classes):
            raise InvalidParameterError("every K must be >= 2")
        unknown = [m for m in self.methods if m not in METHOD_IDS]
        if unknown:
            raise InvalidParameterError(f"unknown methods {unknown}; choose from {sorted(METHOD_IDS)}")
        if self.format not in ("csv", "plot", "both"):
            raise InvalidParameterError(f"format must be csv, plot or both, got {self.format!r}")
        for K in self.num_classes:
            self.sigma_for(K)

    def sigma_for(self, K: int) -> float:
        return resolve_sigma(self.sigma, K)


def resolve_sigma(rule: str | float, K: int) -> float:
    """``rule`` is a number or ``"c/K"`` for a constant c."""
    if isinstance(rule, str):
        text = rule.replace(" ", "")
        if text.endswith("/K"):
            value = float(text[:-2]) / K
        else:
            value = float(text)
    else:
        value = float(rule)
    if not (value > 0 and math.isfinite(value)):
        raise InvalidParameterError(f"sigma rule {rule!r} gives {value} at K={K}")
    return value


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def parse_value(key: str, raw: str):
    raw = raw.strip()
    if key not in _FIELD_TYPES:
        raise InvalidParameterError(f"unknown config key {key!r}")
    if key == "num_classes":
        return tuple(int(v) for v in raw.replace(",", " ").split())
    if key == "methods":
        return tuple(v for v in raw.replace(",", " ").split())
    if key == "epsilon":
        return float(raw)
    if key == "sigma":
        try:
            return float(raw)
        except ValueError:
            return raw
    if key == "timing":
        return raw.lower() in ("1", "true", "yes", "on")
    if key in ("out", "format"):
        return raw
    return int(raw)


def read_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidParameterError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        values[key] = parse_value(key, raw)
    return values


def load_config(path: str | os.PathLike | None = None, **overrides) -> ExperimentConfig:
    values = {}
    if path is not None:
        values.update(read_config_text(Path(path).read_text(encoding="utf-8")))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values)


# -- seeding -------------------------------------------------------------------


def _seed_int(*entropy: int) -> int:
    state = np.random.SeedSequence([int(e) for e in entropy]).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 32 | int(state[1])


def data_seed(master_seed: int, K: int, trial: int) -> int:
    """Seed for the train/test draw; shared by every method in a trial."""
    return _seed_int(master_seed, K, trial)


def cell_seed(master_seed: int, method: str, K: int, trial: int) -> int:
    """Seed for the method's own randomness (label privatization)."""
    return _seed_int(master_seed, METHOD_IDS[method], K, trial, 1)


# -- one trial -------------------------------------------------------------------


@dataclass(frozen=True)
class TrialCell:
    method: str
    K: int
    sigma: float
    epsilon: float
    k: int
    n_train: int
    test_size: int
    trial: int
    master_seed: int
    timing: bool = False


@dataclass(frozen=True)
class ResultRow:
    method: str
    K: int
    sigma: float
    epsilon: float
    k: int
    trial: int
    seed: int
    accuracy: float
    excess_risk: float
    wall_time_ms: float = 0.0

    def as_csv_fields(self) -> list[str]:
        return [self.method, str(self.K), repr(self.sigma), repr(self.epsilon), str(self.k), str(self.trial),
                str(self.seed), repr(self.accuracy), repr(self.excess_risk), repr(self.wall_time_ms)]


def _mark(audit: np.ndarray | None, idx) -> None:
    if audit is not None:
        np.add.at(audit, idx, 1)


def two_stage_lp(features, labels, epsilon: float, k: int, num_classes: int, rng: np.random.Generator,
                 audit: np.ndarray | None = None) -> knn.KnnModel:
    """LP-2ST baseline: RR on the first half, RRWithPrior on the second.

    The first-half kNN supplies each second-half point's prior; the returned
    model is fit on the second half only. Each label is privatized once, on
    disjoint halves, so the whole procedure is epsilon-label DP.
    """
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels)
    n = len(labels)
    if n < 2 * k:
        raise InvalidParameterError(f"LP-2ST needs at least 2k = {2 * k} samples, got {n}")
    half = n // 2
    first, second = np.arange(half), np.arange(half, n)

    rr_spec = MechanismSpec(MechanismKind.RR, epsilon, num_classes)
    noisy_first = rr_privatize(labels[first], rr_spec, rng)
    _mark(audit, first)
    stage1 = knn.fit(features[first], noisy_first, k, mode="scalar", num_classes=num_classes)

    priors = stage1.score(features[second])
    priors = priors / priors.sum(axis=1, keepdims=True)
    noisy_second = rrwithprior_privatize(labels[second], priors, epsilon, rng)
    _mark(audit, second)
    return knn.fit(features[second], noisy_second, k, mode="scalar", num_classes=num_classes)


def train_private_model(method: str, features, labels, epsilon: float, k: int, num_classes: int,
                        rng: np.random.Generator, audit: np.ndarray | None = None) -> knn.KnnModel:
    """Privatize ``labels`` with ``method`` and fit kNN in the matching target mode."""
    labels = np.asarray(labels)
    every = np.arange(len(labels))
    if method == "NonPrivate":
        return knn.fit(features, labels, k, mode="scalar", num_classes=num_classes)
    if method == "RR":
        noisy = rr_privatize(labels, MechanismSpec(MechanismKind.RR, epsilon, num_classes), rng)
        _mark(audit, every)
        return knn.fit(features, noisy, k, mode="scalar", num_classes=num_classes)
    if method == "LP-2ST":
        return two_stage_lp(features, labels, epsilon, k, num_classes, rng, audit=audit)
    if method == "ALIBI":
        noisy = alibi_privatize(labels, MechanismSpec(MechanismKind.ALIBI, epsilon, num_classes), rng)
        _mark(audit, every)
        return knn.fit(features, alibi_soft_label(noisy, None, epsilon), k, mode="soft")
    if method == "Vector":
        z = vector_privatize(labels, MechanismSpec(MechanismKind.VECTOR, epsilon, num_classes), rng)
        _mark(audit, every)
        return knn.fit(features, z, k, mode="vector")
    raise InvalidParameterError(f"no learner for method {method!r}")


def trial_data(cell: TrialCell):
    task = SyntheticTask(cell.K, cell.sigma)
    rng = np.random.default_rng(data_seed(cell.master_seed, cell.K, cell.trial))
    train = synthetic.sample(task, cell.n_train, rng)
    test = synthetic.sample(task, cell.test_size, rng)
    return task, train, test


def run_trial(cell: TrialCell, audit: np.ndarray | None = None) -> ResultRow:
    """Train on fresh data, evaluate on a fresh test draw; the Bayes row uses the oracle."""
    start = time.perf_counter()
    task, train, test = trial_data(cell)
    seed = cell_seed(cell.master_seed, cell.method, cell.K, cell.trial)
    if cell.method == "Bayes":
        pred = synthetic.bayes_predict(task, test.features)
    else:
        model = train_private_model(cell.method, train.features, train.labels, cell.epsilon, cell.k, cell.K,
                                    np.random.default_rng(seed), audit=audit)
        pred = model.predict(test.features)
    accuracy = float(np.mean(pred == test.labels))
    excess = analysis.excess_risk_estimate(pred, test.features, task)
    elapsed = (time.perf_counter() - start) * 1000.0 if cell.timing else 0.0
    return ResultRow(cell.method, cell.K, cell.sigma, cell.epsilon, cell.k, cell.trial, seed, accuracy, excess,
                     elapsed)


def _run_cell(cell: TrialCell):
    try:
        return run_trial(cell), None
    except Exception as exc:  # recorded per cell, never fatal to the sweep
        log.warning("cell %s failed: %s", cell, exc)
        row = ResultRow(cell.method, cell.K, cell.sigma, cell.epsilon, cell.k, cell.trial,
                        cell_seed(cell.master_seed, cell.method, cell.K, cell.trial), math.nan, math.nan, 0.0)
        return row, f"{type(exc).__name__}: {exc}"


# -- sweeps --------------------------------------------------------------------


@dataclass
class ExperimentResult:
    rows: list[ResultRow] = field(default_factory=list)
    errors: dict[int, str] = field(default_factory=dict)  # row index -> message

    def filter(self, method: str | None = None, K: int | None = None) -> list[ResultRow]:
        return [r for r in self.rows if (method is None or r.method == method) and (K is None or r.K == K)]

    def accuracies(self, method: str, K: int) -> np.ndarray:
        return np.array([r.accuracy for r in self.filter(method, K)])


def sweep_cells(config: ExperimentConfig) -> list[TrialCell]:
    return [
        TrialCell(method, K, config.sigma_for(K), float(config.epsilon), config.k, config.n_train, config.test_size,
                  trial, config.seed, config.timing)
        for K in config.num_classes
        for method in config.methods
        for trial in range(config.trials)
    ]


def run_sweep(config: ExperimentConfig, parallelism: int | None = None) -> ExperimentResult:
    cells = sweep_cells(config)
    workers = config.parallelism if parallelism is None else parallelism
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_cell, cells, chunksize=max(1, len(cells) // (4 * workers))))
    else:
        outcomes = [_run_cell(c) for c in cells]
    result = ExperimentResult()
    for i, (row, err) in enumerate(outcomes):
        result.rows.append(row)
        if err is not None:
            result.errors[i] = err
    return result


def summarize(result: ExperimentResult) -> dict[tuple[str, int], tuple[float, float, int]]:
    """(method, K) -> (mean accuracy, standard error, trials)."""
    out = {}
    for method in dict.fromkeys(r.method for r in result.rows):
        for K in dict.fromkeys(r.K for r in result.rows):
            acc = result.accuracies(method, K)
            acc = acc[np.isfinite(acc)]
            if acc.size:
                se = float(acc.std(ddof=1) / math.sqrt(acc.size)) if acc.size > 1 else 0.0
                out[method, K] = (float(acc.mean()), se, int(acc.size))
    return out


# -- output --------------------------------------------------------------------


def write_csv(rows: Iterable[ResultRow], path: str | os.PathLike) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            for row in rows:
                writer.writerow(row.as_csv_fields())
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc
    return path


def read_csv(path: str | os.PathLike) -> list[ResultRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise InvalidParameterError(f"{path}: unexpected header {header}")
        return [
            ResultRow(m, int(K), float(s), float(e), int(k), int(t), int(seed), float(a), float(x), float(w))
            for m, K, s, e, k, t, seed, a, x, w in reader
        ]


def plot_rows(rows: Sequence[ResultRow], path: str | os.PathLike, title: str | None = None) -> Path:
    """Mean accuracy vs K, one line per method; Bayes is a purple dashed reference."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    result = ExperimentResult(rows=list(rows))
    stats = summarize(result)
    colors = {"Vector": "tab:red", "RR": "tab:blue", "LP-2ST": "tab:green", "ALIBI": "tab:orange",
              "NonPrivate": "tab:gray", "Bayes": "purple"}
    fig, ax = plt.subplots(figsize=(5.0, 3.75))
    for method in dict.fromkeys(r.method for r in rows):
        Ks = sorted(K for (m, K) in stats if m == method)
        means = [stats[method, K][0] for K in Ks]
        errs = [stats[method, K][1] for K in Ks]
        style = dict(linestyle="--", marker=None) if method == "Bayes" else dict(linestyle="-", marker="o")
        ax.errorbar(Ks, means, yerr=errs, label=method, color=colors.get(method), capsize=2, markersize=3, **style)
    ax.set_xscale("log")
    ax.set_xlabel("number of classes K")
    ax.set_ylabel("accuracy")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, metadata={"Date": None} if path.suffix == ".svg" else None)
    except OSError as exc:
        raise OSError(f"cannot write plot to {path}: {exc}") from exc
    finally:
        plt.close(fig)
    return path


def emit(result: ExperimentResult, fmt: str, out_dir: str | os.PathLike, stem: str = "results") -> list[Path]:
    if not result.rows:
        raise InvalidParameterError("nothing to emit: result has no rows")
    out_dir = Path(out_dir)
    paths = []
    if fmt in ("csv", "both"):
        paths.append(write_csv(result.rows, out_dir / f"{stem}.csv"))
    if fmt in ("plot", "both"):
        paths.append(plot_rows(result.rows, out_dir / f"{stem}.svg"))
    if not paths:
        raise InvalidParameterError(f"format must be csv, plot or both, got {fmt!r}")
    return paths


# -- bound checks ----------------------------------------------------------------


@dataclass(frozen=True)
class BoundTrial:
    trial: int
    excess_risk: float
    bound: float
    combined_se: float
    accuracy: float

    @property
    def holds(self) -> bool:
        return self.excess_risk <= self.bound + 3.0 * self.combined_se


def bound_trial(K: int, sigma: float, epsilon: float, k: int, n_train: int, n_probes: int, trial: int,
                master_seed: int = 0):
    """Fit the vector-mechanism kNN once and compare its excess risk with the margin bound.

    Returns the trial summary plus the fitted model, task and probes for
    further inspection.
    """
    cell = TrialCell("Vector", K, sigma, epsilon, k, n_train, n_probes, trial, master_seed)
    task, train, probes = trial_data(cell)
    rng = np.random.default_rng(cell_seed(master_seed, "Vector", K, trial))
    model = train_private_model("Vector", train.features, train.labels, epsilon, k, K, rng)
    pred = model.predict(probes.features)
    excess_terms = analysis.excess_risk_terms(pred, probes.features, task)
    profile = analysis.empirical_delta(model, task, epsilon, probes.features)
    b_terms = analysis.bound_terms(profile)
    n = len(excess_terms)
    se = math.sqrt(excess_terms.var(ddof=1) / n + b_terms.var(ddof=1) / n)
    summary = BoundTrial(trial, float(excess_terms.mean()), float(b_terms.mean()), se,
                         float(np.mean(pred == probes.labels)))
    return summary, model, task, probes, profile
