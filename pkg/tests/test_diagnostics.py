import csv
import json

import numpy as np
import pytest

from longicausal import diagnostics as dg
from longicausal import longdata as ld
from longicausal import scm
from longicausal.estimators import CleverCovariateTrace, LtmleConfig, ltmle_estimate

RULES = ld.study_rules()


def four_subject_trace(g=0.05):
    # two blocks; cumulative probabilities by hand
    num = np.array([[1, 1], [1, 1], [1, 0], [0, 0]], dtype=bool)
    raw = np.array([[0.5, 0.25], [0.8, 0.04], [0.5, 0.5], [0.9, 0.9]])
    cum = np.maximum(raw, g)
    H = np.where(num, 1 / cum, 0.0)
    ones = np.ones_like(raw)
    return CleverCovariateTrace([1, 2], num, ones, ones, raw, cum, H, num & (raw < g), g)


def test_cc_summary_hand_computed():
    tr = four_subject_trace()
    s1 = dg.cc_summary(tr, 1)
    assert s1.usable_n == 3
    assert s1.mean_cc == pytest.approx((2 + 1.25 + 2) / 3)
    assert s1.pct_truncated == 0.0
    s2 = dg.cc_summary(tr, 2)
    assert s2.usable_n == 2
    assert s2.mean_cc == pytest.approx((4 + 20) / 2)
    assert s2.pct_truncated == pytest.approx(0.5)
    with pytest.raises(KeyError):
        dg.cc_summary(tr, 7)


def test_cc_summary_empty_and_unit():
    tr = four_subject_trace()
    tr.numerator[:] = False
    assert dg.cc_summary(tr, 2) == dg.CcSummary(2, None, None, 0)
    ones = np.ones((5, 3))
    unit = CleverCovariateTrace([1, 2, 3], ones.astype(bool), ones, ones, ones, ones, ones, ~ones.astype(bool), 0.01)
    assert dg.cc_summary(unit, 3).mean_cc == 1.0


@pytest.fixture(scope="module")
def study_small():
    return scm.simulate(scm.build_study_dgp(T=4), scm.SimulationConfig(n=500, T=4, seed=6))


def test_pct_truncated_non_decreasing_in_g(study_small):
    rows = dg.truncation_sensitivity(study_small, RULES["d4"], 4, LtmleConfig(learners="glm"),
                                     (0.01, 0.025, 0.04, 0.1, 0.5))
    pct = [r.pct_truncated for r in rows]
    assert all(a <= b for a, b in zip(pct, pct[1:]))
    assert rows[-1].pct_truncated >= rows[0].pct_truncated


def test_single_g_matches_direct_call(study_small):
    cfg = LtmleConfig(learners="set2", folds=5, g_bound=0.025)
    (row,) = dg.truncation_sensitivity(study_small, RULES["d2"], 4, cfg, (0.025,))
    direct = ltmle_estimate(study_small, RULES["d2"], 4, cfg)
    assert row.psi == direct.psi
    assert (row.ci_low, row.ci_high) == direct.ci


def test_truncation_sensitivity_rejects_bad_g(study_small):
    with pytest.raises(ValueError):
        dg.truncation_sensitivity(study_small, RULES["d1"], 4, LtmleConfig(learners="glm"), (0.0,))


def test_data_support_permutation_invariant(study_small):
    perm = np.random.default_rng(0).permutation(study_small.n)
    a = dg.estimate_data_support(study_small, RULES["d2"], 4, threshold=0.3)
    b = dg.estimate_data_support(study_small.take(perm), RULES["d2"], 4, threshold=0.3)
    assert a.proportion == pytest.approx(b.proportion, abs=1e-12)
    assert a.denominator == b.denominator
    assert a.convention == dg.SUPPORT_CONVENTION


def test_data_support_full_adherence_is_zero():
    m = scm.build_study_dgp(T=4)
    data = scm.simulate(m, scm.SimulationConfig(n=500, T=4, seed=1, mode=scm.Intervened(RULES["d1"])))
    est = dg.estimate_data_support(data, RULES["d1"], 4)
    assert est.proportion == 0.0 and est.denominator == 500


def test_data_support_threshold_limit(study_small):
    est = dg.estimate_data_support(study_small, RULES["d2"], 4, threshold=1 - 1e-9)
    assert est.proportion > 0.99
    with pytest.raises(ValueError):
        dg.estimate_data_support(study_small, RULES["d2"], 4, threshold=1.0)


@pytest.fixture(scope="module")
def study_5000():
    return scm.simulate(scm.build_study_dgp(), scm.SimulationConfig(n=5000, seed=31))


def test_data_support_tracks_model_truth(study_5000):
    truth = scm.data_support(scm.build_study_dgp(), RULES["d4"], 0.025, n_mc=100_000)
    est = dg.estimate_data_support(study_5000, RULES["d4"], 12)
    print(f"d4 support: estimated {est.proportion:.4f}, model truth {truth:.4f}")
    assert abs(est.proportion - truth) <= 0.015


def test_data_support_d4_example(study_5000):
    # reference value 3.0% with tolerance 1.5pp at n=5000
    est = dg.estimate_data_support(study_5000, RULES["d4"], 12)
    print(f"d4 estimated data support {est.proportion:.4f} (reference 0.030)")
    assert abs(est.proportion - 0.030) <= 0.015


def test_table_writers(study_small, tmp_path):
    cfg = LtmleConfig(learners="glm")
    res = ltmle_estimate(study_small, RULES["d1"], 4, cfg)
    dg.write_estimate_table([("set1", res)], tmp_path / "t1.csv")
    rows = list(csv.DictReader((tmp_path / "t1.csv").open()))
    assert len(rows) == 4 and rows[-1]["t"] == "4" and rows[-1]["learners"] == "set1"
    sens = dg.truncation_sensitivity(study_small, RULES["d1"], 4, cfg, (0.01, 0.04))
    dg.write_truncation_table({"d1": sens}, tmp_path / "t2.csv")
    assert len(list(csv.DictReader((tmp_path / "t2.csv").open()))) == 2
    sup = [dg.estimate_data_support(study_small, r, 4) for r in RULES.values()]
    dg.write_support_table(sup, tmp_path / "t3.csv")
    t3 = list(csv.DictReader((tmp_path / "t3.csv").open()))
    assert [r["rule"] for r in t3] == ["d1", "d2", "d3", "d4"]
    dg.write_bundle(tmp_path / "b.json", estimate=res, support=sup, sensitivity=sens)
    doc = json.loads((tmp_path / "b.json").read_text())
    assert doc["estimate"]["rule"] == "d1" and len(doc["support"]) == 4
