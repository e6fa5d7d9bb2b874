import numpy as np
import pytest

from longicausal import benchmark as bm
from longicausal import longdata as ld
from longicausal import scm
from longicausal.estimators.common import derive_seed

SMALL = bm.BenchmarkGrid(n_values=(150,), g_values=(0.01, 0.04), learner_sets=("set1",), rules=("d1", "d4"),
                         horizons=(2,), reps=2, seed=5, folds=5)


def small_unit(grid, n, rep):
    return bm.ltmle_unit(grid, n, rep, model=scm.build_study_dgp(T=grid.max_horizon))


def oracle_unit(grid, n, rep):
    """Sample mean of Y_T from a dataset simulated directly under the rule."""
    model = scm.build_study_dgp(T=grid.max_horizon)
    out = []
    for rule in grid.rules:
        seed = derive_seed(grid.seed, n, rep, int(rule[1:]))
        mode = scm.Intervened(ld.study_rules()[rule])
        data = scm.simulate(model, scm.SimulationConfig(n=n, T=grid.max_horizon, seed=seed, mode=mode))
        for t in grid.horizons:
            y = data.column(f"Y.{t}")
            se = y.std(ddof=1) / np.sqrt(n)
            for g in grid.g_values:
                out.append(bm.ReplicateRecord(n, rep, "oracle", rule, t, g, float(y.mean()),
                                              float(y.mean() - 1.96 * se), float(y.mean() + 1.96 * se), n, None, None))
    return out


def test_grid_validation():
    with pytest.raises(ValueError):
        bm.BenchmarkGrid(reps=0)
    with pytest.raises(ValueError):
        bm.BenchmarkGrid(rules=())


def test_single_replicate_bias_is_error():
    grid = bm.BenchmarkGrid(**{**SMALL.to_dict(), "reps": 1})
    truth = {("d1", 2): -1.5, ("d4", 2): -2.5}
    cells, records = bm.run_benchmark(grid, truth, unit=small_unit)
    assert len(cells) == 4
    for c in cells:
        (rec,) = [r for r in records if r.key == c.key]
        assert c.bias == rec.psi - truth[(c.key.rule, 2)]
        assert c.sd == 0.0
        assert c.coverage in (0.0, 1.0)


def test_replicate_determinism_and_threads():
    truth = {("d1", 2): -1.5, ("d4", 2): -2.5}
    _, a = bm.run_benchmark(SMALL, truth, unit=small_unit)
    _, b = bm.run_benchmark(SMALL, truth, unit=small_unit)
    _, c = bm.run_benchmark(SMALL, truth, threads=2)
    assert [r.psi for r in a] == [r.psi for r in b] == [r.psi for r in c]


def test_resume_from_done_records():
    truth = {("d1", 2): -1.5, ("d4", 2): -2.5}
    cells, full = bm.run_benchmark(SMALL, truth, unit=small_unit)
    first = [r for r in full if r.rep == 0]
    calls = []

    def counting(grid, n, rep):
        calls.append(rep)
        return small_unit(grid, n, rep)

    cells2, again = bm.run_benchmark(SMALL, truth, unit=counting, done=first)
    assert calls == [1]
    assert [r.psi for r in again] == [r.psi for r in full]


def test_oracle_harness_unbiased():
    grid = bm.BenchmarkGrid(n_values=(400,), g_values=(0.01,), learner_sets=("oracle",), rules=("d1", "d4"),
                            horizons=(3,), reps=60, seed=2)
    model = scm.build_study_dgp(T=3)
    truth, mc = {}, {}
    for r in grid.rules:
        est = scm.true_psi(model, ld.study_rules()[r], 3, n_mc=200_000, seed=9)
        truth[(r, 3)], mc[r] = est.value, est.mc_se
    cells, _ = bm.run_benchmark(grid, truth, unit=oracle_unit)
    for c in cells:
        se = np.hypot(c.sd / np.sqrt(c.replicates), mc[c.key.rule])
        assert abs(c.bias) <= 4 * se
        assert c.coverage >= 0.85


def failing_unit(grid, n, rep):
    recs = oracle_unit(grid, n, rep)
    if rep % 3 == 0:
        for r in recs:
            r.psi = r.ci_low = r.ci_high = None
            r.error = "synthetic failure"
    return recs


def test_cell_aborted_above_failure_rate(caplog):
    grid = bm.BenchmarkGrid(n_values=(100,), g_values=(0.01,), learner_sets=("oracle",), rules=("d1",),
                            horizons=(1,), reps=6, seed=0)
    cells, records = bm.run_benchmark(grid, {("d1", 1): 0.0}, unit=failing_unit)
    (cell,) = cells
    assert cell.failures == 2 and cell.aborted and cell.bias is None
    summary = bm.summarize(cells, records)
    assert summary["ranking"] == {}


def synthetic_cells(biases, n=1000, learners="set2", t=12, g=0.01, coverage=0.95):
    return [bm.CellResult(bm.CellKey(n, learners, rule, t, g), 0.0, 10, 0, False, b, b, 0.1, coverage, 100.0)
            for rule, b in biases.items()]


def test_summarize_ranking_and_checks():
    cells = synthetic_cells({"d1": 0.02, "d2": -0.3, "d3": 0.05, "d4": 0.2})
    s = bm.summarize(cells)
    assert s["ranking"]["n=1000 set2 t=12 g=0.01"] == ["d2", "d4", "d3", "d1"]
    assert s["checks"]["accurate_d1_d3"]["pass"]
    assert s["checks"]["hardest_rules_d2_d4"]["pass"]
    bad = bm.summarize(synthetic_cells({"d1": 0.4, "d2": 0.3, "d3": 0.05, "d4": 0.2}))
    assert not bad["checks"]["accurate_d1_d3"]["pass"]
    assert not bad["checks"]["hardest_rules_d2_d4"]["pass"]


def test_summarize_single_cell_passthrough():
    (cell,) = synthetic_cells({"d1": 0.03})
    s = bm.summarize([cell])
    assert s["ranking"] == {"n=1000 set2 t=12 g=0.01": ["d1"]}
    assert s["coverage"][0]["bias"] == 0.03


def test_truncation_differences():
    recs = []
    for rep in range(3):
        for g, psi in ((0.01, 1.0 + rep), (0.04, 0.9 + rep)):
            recs.append(bm.ReplicateRecord(200, rep, "set2", "d1", 12, g, psi, psi - 1, psi + 1, 10, 1.0, 0.0))
    diffs = bm.truncation_differences(recs)
    assert diffs[(200, "set2", "d1", 12)] == pytest.approx(0.1)
    s = bm.summarize(bm.aggregate(recs, {("d1", 12): 1.0}), recs)
    assert s["checks"]["truncation_insensitive"]["pass"] is False


def test_files_round_trip(tmp_path):
    truth = {("d1", 2): -1.5, ("d4", 2): -2.5}
    cells, records = bm.run_benchmark(SMALL, truth, unit=small_unit)
    bm.write_cells(cells, tmp_path / "a.csv")
    bm.write_records(records, tmp_path / "r.json")
    back = bm.read_records(tmp_path / "r.json")
    assert back == records
    bm.write_cells(bm.aggregate(back, truth), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    header = (tmp_path / "a.csv").read_text().splitlines()[0].split(",")
    assert header == bm.CELL_COLUMNS
