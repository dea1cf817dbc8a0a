import csv
import io
import math

import pytest

from lteloc.core import EVENT_COLUMNS
from lteloc.runner import (METRICS_COLUMNS, SWEEP_COLUMNS, RunError, RunMetrics, aggregate, run_batch,
                           run_scenario)
from oracles import sorted_percentile

SEEDS = [1, 2, 3, 4, 5]


def header(text):
    return next(csv.reader(io.StringIO(text)))


def rows(text):
    return list(csv.reader(io.StringIO(text)))[1:]


@pytest.fixture(scope="module")
def lab_batch(scenarios):
    return run_batch(scenarios("e2e_lab"), SEEDS)


def test_batch_row_count(lab_batch):
    assert len(lab_batch.rows) == 9 * len(SEEDS)
    body = rows(lab_batch.csv())
    assert len(body) == 9 * len(SEEDS) + 1
    assert body[-1][0] == "default" and body[-1][3] == "p70"


def test_batch_aggregate_matches_oracle(lab_batch):
    agg = lab_batch.aggregates["default"]
    ms = [m for _, m in lab_batch.rows]
    errs = [m.dist_err_m if m.success else math.inf for m in ms]
    assert agg["dist_err_m"] == pytest.approx(sorted_percentile(errs, 70))
    assert agg["success_rate"] == pytest.approx(sum(m.success for m in ms) / len(ms))
    assert agg["n"] == 45


def test_batch_reproduces_single_runs(lab_batch, scenarios):
    single = run_scenario(scenarios("e2e_lab"), SEEDS[0])
    first = lab_batch.results[0]
    assert single.metrics_csv() == first.metrics_csv()
    assert single.events["main"] == first.events["main"]
    assert single.tables == first.tables


def test_phase_durations_sum_to_total(lab_batch):
    for r in lab_batch.results:
        assert sum(r.details["phases"].values()) == r.details["total_ms"]


def test_csv_headers(lab_batch):
    r = lab_batch.results[0]
    assert tuple(header(r.metrics_csv())) == METRICS_COLUMNS
    assert tuple(header(r.events["main"])) == EVENT_COLUMNS
    assert tuple(header(r.tables["sweep"])) == SWEEP_COLUMNS
    assert tuple(header(lab_batch.csv())) == ("axis",) + METRICS_COLUMNS
    assert len(rows(r.events["main"])) > 3


def test_write_file_names(lab_batch, tmp_path):
    r = lab_batch.results[0]
    written = {p.name for p in r.write(tmp_path)}
    assert written == {"e2e_lab_s1_metrics.csv", "e2e_lab_s1_events_main.csv", "e2e_lab_s1_sweep.csv",
                       "e2e_lab_s1_phases.csv"}
    assert (tmp_path / "e2e_lab_s1_metrics.csv").read_text() == r.metrics_csv()


def test_batch_errors(scenarios):
    scn = scenarios("table1_power_vs_distance")
    with pytest.raises(ValueError):
        run_batch(scn, [])
    with pytest.raises(ValueError):
        run_batch(scn, [1], axis="gravity")


def test_batch_axis_labels(scenarios):
    b = run_batch(scenarios("repeater_table5"), [1, 2], axis="boost")
    assert list(b.aggregates) == ["boost=True", "boost=False"]
    assert len(b.results) == 4


def test_duplicate_seeds_collapsed(scenarios):
    b = run_batch(scenarios("table1_power_vs_distance"), [3, 3, 1])
    assert [r.seed for r in b.results] == [1, 3]


def test_sweep_timeout_is_run_error(scenarios):
    scn = scenarios("e2e_lab")
    short = scn.model_copy(update={"schedule": scn.schedule.model_copy(update={"sweep_timeout_ms": 5})})
    with pytest.raises(RunError):
        run_scenario(short, 1)


def test_aggregate_examples():
    ms = [RunMetrics("x", 1, "a", True, 1.0, 1.0, 0.5), RunMetrics("x", 1, "b", True, 2.0, 2.0, 1.5),
          RunMetrics("x", 1, "c", False, math.inf, math.inf, math.inf)]
    agg = aggregate(ms, 50)
    assert agg["success_rate"] == pytest.approx(2 / 3) and agg["dist_err_m"] == 1.5
    assert math.isinf(aggregate(ms, 70)["dist_err_m"])
    assert math.isnan(aggregate([])["success_rate"])
    with pytest.raises(ValueError):
        RunMetrics("x", 1, "a", True, 1.0, 1.0, math.inf)


@pytest.mark.parametrize("seed", [7, 8])
def test_boost_never_lowers_quality(scenarios, seed):
    scn = scenarios("e2e_lab")
    on = run_scenario(scn, seed, power_boost=True)
    off = run_scenario(scn, seed, power_boost=False)
    for a, b in zip(on.metrics, off.metrics):
        assert a.snr_db >= b.snr_db
        assert a.success >= b.success
