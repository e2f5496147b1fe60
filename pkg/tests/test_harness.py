import math

import numpy as np
import pytest

from vecldp import harness, knn, synthetic
from vecldp.harness import ExperimentConfig, TrialCell
from vecldp.mechanisms import INF, InvalidParameterError


def cell(method, K=5, sigma=0.3, epsilon=1.0, k=20, n_train=800, test_size=300, trial=0, seed=0):
    return TrialCell(method, K, sigma, epsilon, k, n_train, test_size, trial, seed)


# -- configuration ---------------------------------------------------------------


def test_sigma_rule():
    assert harness.resolve_sigma("2/K", 10) == pytest.approx(0.2)
    assert harness.resolve_sigma("0.05", 100) == 0.05
    assert harness.resolve_sigma(0.3, 7) == 0.3
    with pytest.raises(InvalidParameterError):
        harness.resolve_sigma("-1", 3)
    with pytest.raises(InvalidParameterError):
        harness.resolve_sigma("0/K", 3)


def test_config_validation():
    with pytest.raises(InvalidParameterError):
        ExperimentConfig(trials=0)
    with pytest.raises(InvalidParameterError):
        ExperimentConfig(num_classes=(1, 5))
    with pytest.raises(InvalidParameterError):
        ExperimentConfig(methods=("Nope",))


def test_config_text_and_overrides(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("# comment\nnum_classes = 10, 20\nsigma = 0.05\nepsilon = inf\nmethods = RR,Vector\ntrials = 3\n")
    config = harness.load_config(path, trials=7, seed=None)
    assert config.num_classes == (10, 20)
    assert config.sigma_for(10) == 0.05
    assert math.isinf(config.epsilon)
    assert config.methods == ("RR", "Vector")
    assert config.trials == 7


def test_unknown_config_key(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("colour = red\n")
    with pytest.raises(InvalidParameterError):
        harness.load_config(path)


def test_seeds_deterministic_and_distinct():
    assert harness.cell_seed(0, "RR", 10, 3) == harness.cell_seed(0, "RR", 10, 3)
    seeds = {harness.cell_seed(s, m, K, t) for s in (0, 1) for m in harness.METHOD_IDS for K in (2, 10) for t in range(5)}
    assert len(seeds) == 2 * len(harness.METHOD_IDS) * 2 * 5
    assert harness.data_seed(0, 10, 1) != harness.data_seed(0, 10, 2)


def test_sweep_cell_order():
    config = ExperimentConfig(num_classes=(5, 10), methods=("RR", "Bayes"), trials=2)
    cells = harness.sweep_cells(config)
    assert [(c.K, c.method, c.trial) for c in cells] == [
        (5, "RR", 0), (5, "RR", 1), (5, "Bayes", 0), (5, "Bayes", 1),
        (10, "RR", 0), (10, "RR", 1), (10, "Bayes", 0), (10, "Bayes", 1),
    ]


# -- trials -------------------------------------------------------------------------


@pytest.mark.parametrize("method", ["RR", "LP-2ST", "ALIBI", "Vector", "Bayes", "NonPrivate"])
def test_run_trial_reproducible(method):
    a, b = harness.run_trial(cell(method)), harness.run_trial(cell(method))
    assert a == b
    assert 0.0 <= a.accuracy <= 1.0
    assert a.excess_risk >= 0.0


def test_bayes_trial_near_perfect():
    row = harness.run_trial(cell("Bayes", K=10, sigma=0.05, test_size=2000))
    assert row.accuracy >= 1.0 - 3 * math.sqrt(0.25 / 2000)
    assert row.excess_risk < 1e-6


def test_vector_at_inf_equals_non_private():
    v = harness.run_trial(cell("Vector", epsilon=INF))
    n = harness.run_trial(cell("NonPrivate", epsilon=INF))
    assert v.accuracy == n.accuracy
    assert v.excess_risk == n.excess_risk


def test_lp2st_at_inf_is_knn_on_second_half():
    c = cell("LP-2ST", epsilon=INF)
    task, train, test = harness.trial_data(c)
    half = c.n_train // 2
    ref = knn.fit(train.features[half:], train.labels[half:], c.k, num_classes=c.K)
    row = harness.run_trial(c)
    assert row.accuracy == float(np.mean(ref.predict(test.features) == test.labels))


def test_lp2st_needs_2k_samples():
    rng = np.random.default_rng(0)
    with pytest.raises(InvalidParameterError):
        harness.two_stage_lp(np.zeros((39, 2)), np.zeros(39, dtype=int), 1.0, 20, 3, rng)


@pytest.mark.parametrize("method", ["RR", "LP-2ST", "ALIBI", "Vector"])
def test_each_label_privatized_once(method):
    c = cell(method)
    audit = np.zeros(c.n_train, dtype=np.int64)
    harness.run_trial(c, audit=audit)
    np.testing.assert_array_equal(audit, 1)


def test_failed_cell_is_recorded_not_fatal():
    # LP-2ST with n < 2k fails; the other method still runs
    config = ExperimentConfig(num_classes=(3,), sigma=0.3, n_train=30, k=20, methods=("LP-2ST", "RR"), trials=1,
                              test_size=50)
    result = harness.run_sweep(config)
    assert len(result.rows) == 2
    assert list(result.errors) == [0]
    assert "InvalidParameterError" in result.errors[0]
    assert math.isnan(result.rows[0].accuracy)
    assert math.isfinite(result.rows[1].accuracy)


def test_single_cell_sweep():
    config = ExperimentConfig(num_classes=(4,), sigma=0.3, n_train=200, k=5, methods=("Vector",), trials=1,
                              test_size=50)
    assert len(harness.run_sweep(config).rows) == 1


def test_timing_off_gives_zero_wall_time():
    assert harness.run_trial(cell("RR")).wall_time_ms == 0.0
    timed = TrialCell("RR", 5, 0.3, 1.0, 20, 800, 300, 0, 0, timing=True)
    assert harness.run_trial(timed).wall_time_ms > 0.0


def test_vector_accuracy_monotone_in_epsilon():
    def mean_acc(eps):
        config = ExperimentConfig(num_classes=(10,), sigma="2/K", n_train=2000, k=50, methods=("Vector",),
                                  trials=50, test_size=500, epsilon=eps)
        acc = harness.run_sweep(config).accuracies("Vector", 10)
        return acc.mean(), acc.std(ddof=1) / math.sqrt(len(acc))

    lo, lo_se = mean_acc(0.5)
    hi, _ = mean_acc(2.0)
    assert hi >= lo - lo_se


# -- output -------------------------------------------------------------------------


def _rows():
    config = ExperimentConfig(num_classes=(3, 6), sigma=0.3, n_train=300, k=10, methods=("RR", "Vector", "Bayes"),
                              trials=2, test_size=100)
    return harness.run_sweep(config)


def test_csv_round_trip(tmp_path):
    result = _rows()
    path = harness.write_csv(result.rows, tmp_path / "r.csv")
    assert harness.read_csv(path) == result.rows
    lines = path.read_bytes().split(b"\n")
    assert lines[0] == b",".join(h.encode() for h in harness.CSV_HEADER)
    assert b"\r" not in path.read_bytes()


def test_emit_one_row(tmp_path):
    result = harness.ExperimentResult(rows=[harness.run_trial(cell("Bayes"))])
    (path,) = harness.emit(result, "csv", tmp_path)
    assert path.read_text().count("\n") == 2


def test_emit_plot(tmp_path):
    paths = harness.emit(_rows(), "both", tmp_path)
    assert [p.suffix for p in paths] == [".csv", ".svg"]
    svg = paths[1].read_text()
    assert svg.lstrip().startswith("<?xml")
    assert "Bayes" in svg and "Vector" in svg


def test_emit_rejects_empty(tmp_path):
    with pytest.raises(InvalidParameterError):
        harness.emit(harness.ExperimentResult(), "csv", tmp_path)


def test_unwritable_path_reports_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    target = blocker / "sub" / "r.csv"
    with pytest.raises(OSError, match="sub"):
        harness.write_csv(_rows().rows[:1], target)


def test_summarize():
    stats = harness.summarize(_rows())
    assert set(stats) == {(m, K) for m in ("RR", "Vector", "Bayes") for K in (3, 6)}
    assert all(n == 2 for _, _, n in stats.values())


def test_parallel_matches_sequential(tmp_path):
    config = ExperimentConfig(num_classes=(3, 5), sigma=0.3, n_train=300, k=10, methods=("LP-2ST", "ALIBI"),
                              trials=2, test_size=100)
    a = harness.write_csv(harness.run_sweep(config, parallelism=1).rows, tmp_path / "a.csv")
    b = harness.write_csv(harness.run_sweep(config, parallelism=2).rows, tmp_path / "b.csv")
    assert a.read_bytes() == b.read_bytes()


def test_bound_trial_summary():
    summary, model, task, probes, profile = harness.bound_trial(5, 0.4, 1.0, 20, 1000, 500, 0)
    assert summary.combined_se > 0
    assert summary.excess_risk >= 0
    assert len(profile.per_point_delta) == 500
    assert model.mode is knn.TargetMode.VECTOR
    assert isinstance(task, synthetic.SyntheticTask)
