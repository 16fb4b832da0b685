import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from causalfair import dgp
from causalfair.counterfactual import impute_sequential
from causalfair.fairness import (CAUSAL_METRICS, STAT_METRICS, CounterfactualPredictionSet,
                                 PredictionSet, average_reports, causal_accuracy,
                                 causal_calibration, causal_metrics, joint_counts, stat_metrics,
                                 theorem1_residual)
from causalfair.models import fit_logistic, predict_proba
from causalfair.selfcheck import BOUNDARY_TABLES, random_count_tables

from conftest import HIRING_STAGES


def _ps(y, yhat, g):
    return PredictionSet(np.array(y), np.array(yhat, dtype=float), np.array(g))


def test_perfect_predictor_balanced_groups():
    y = [1, 0, 1, 0, 1, 0, 1, 0]
    rep = stat_metrics(_ps(y, y, [0, 0, 0, 0, 1, 1, 1, 1]))
    for name in ("parity", "ppv_parity", "eodds_tp", "eodds_fp"):
        assert rep.value(name) == 0
    assert rep.value("accuracy") == 1


def test_hand_counted_eight_rows():
    # group 1: y=(1,1,0,0) yhat=(1,0,1,1); group 0: y=(1,0,0,0) yhat=(1,1,0,0)
    g = [1, 1, 1, 1, 0, 0, 0, 0]
    y = [1, 1, 0, 0, 1, 0, 0, 0]
    yhat = [1, 0, 1, 1, 1, 1, 0, 0]
    rep = stat_metrics(_ps(y, yhat, g))
    assert rep.value("parity") == pytest.approx(3 / 4 - 2 / 4)
    assert rep.value("ppv_parity") == pytest.approx(1 / 3 - 1 / 2)
    assert rep.value("eodds_tp") == pytest.approx(1 / 2 - 1 / 1)
    assert rep.value("eodds_fp") == pytest.approx(2 / 2 - 1 / 3)
    assert rep.value("accuracy") == pytest.approx(4 / 8)


def test_empty_cell_is_undefined_not_zero():
    rep = stat_metrics(_ps([0, 0, 1, 0], [0, 0, 1, 0], [1, 1, 0, 0]))
    assert rep["eodds_tp"].value is None
    assert "Y=1,A=1" in rep["eodds_tp"].undefined_reason
    assert rep.value("parity") == pytest.approx(0 - 0.5)
    doc = json.loads(rep.to_json())
    assert doc["metrics"]["eodds_tp"]["undefined_reason"]
    assert set(doc) == {"metrics", "n", "arms_present"}


def test_both_groups_required():
    with pytest.raises(ValueError, match="nonempty"):
        stat_metrics(_ps([0, 1], [0, 1], [1, 1]))


def test_prediction_set_threshold_and_override():
    ps = PredictionSet(np.array([0, 1]), np.array([0.49, 0.5]), np.array([0, 1]))
    assert ps.y_pred.tolist() == [0, 1]
    ps = PredictionSet(np.array([0, 1]), np.array([0.49, 0.5]), np.array([0, 1]), y_pred=np.array([1, 0]))
    assert ps.y_pred.tolist() == [1, 0]
    with pytest.raises(ValueError):
        PredictionSet(np.array([0, 1]), np.array([0.2]), np.array([0, 1]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1), st.integers(0, 1)), min_size=4, max_size=60))
def test_group_swap_negates(rows):
    y, yhat, g = map(np.array, zip(*rows))
    if g.min() == g.max():
        return
    a = stat_metrics(_ps(y, yhat, g))
    b = stat_metrics(_ps(y, yhat, 1 - g))
    for name in ("parity", "ppv_parity", "eodds_tp", "eodds_fp"):
        va, vb = a.value(name), b.value(name)
        assert (va is None) == (vb is None)
        if va is not None:
            assert va == pytest.approx(-vb)
            assert -1 <= va <= 1


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_arm_swap_negates(seed):
    rng = np.random.default_rng(seed)
    v = [rng.integers(0, 2, 30) for _ in range(4)]
    cps = CounterfactualPredictionSet(*v)
    a, b = causal_metrics(cps), causal_metrics(cps.swapped())
    for name in CAUSAL_METRICS:
        if a.value(name) is not None:
            assert a.value(name) == pytest.approx(-b.value(name))


def test_pre_treatment_only_predictor_has_zero_causal_parity(small_imputed):
    x = small_imputed.table["x"]
    yhat = (x > 0.3).astype(int)
    y0 = small_imputed.arm("hire", 0)[0]
    y1 = small_imputed.arm("hire", 1)[0]
    rep = causal_metrics(CounterfactualPredictionSet(yhat, yhat, y0, y1))
    assert rep.value("causal_parity") == 0.0
    assert rep.arms_present == (0, 1)


def test_causal_metrics_hand_counts():
    cps = CounterfactualPredictionSet(yhat_0=[1, 0, 0, 1], yhat_1=[1, 1, 0, 1],
                                      y_0=[1, 1, 0, 0], y_1=[1, 1, 1, 0])
    rep = causal_metrics(cps)
    assert rep.value("causal_parity") == pytest.approx(0.75 - 0.5)
    assert rep.value("causal_ppv_parity") == pytest.approx(2 / 3 - 1 / 2)
    assert rep.value("causal_eodds_tp") == pytest.approx(2 / 3 - 1 / 2)
    assert rep.value("causal_eodds_fp") == pytest.approx(1 / 1 - 1 / 2)


def test_average_reports_skips_undefined():
    r1 = stat_metrics(_ps([0, 1, 0, 1], [0, 1, 1, 1], [0, 0, 1, 1]))
    r2 = stat_metrics(_ps([0, 0, 0, 1], [0, 1, 1, 1], [0, 0, 1, 1]))
    avg = average_reports([r1, r2])
    assert avg.value("parity") == pytest.approx((r1.value("parity") + r2.value("parity")) / 2)
    assert avg.value("eodds_tp") == pytest.approx(r1.value("eodds_tp"))


def test_calibration_identical_arms():
    rng = np.random.default_rng(0)
    s = rng.random(200)
    y = rng.integers(0, 2, 200)
    bins = causal_calibration(CounterfactualPredictionSet(s > .5, s > .5, y, y, s, s))
    assert len(bins) == 10
    assert all(b.gap == 0 for b in bins if b.gap is not None)


def test_calibration_two_bins_hand_counts():
    cps = CounterfactualPredictionSet(yhat_0=[0, 0, 1, 1], yhat_1=[0, 0, 1, 1],
                                      y_0=[0, 1, 1, 1], y_1=[0, 0, 1, 0],
                                      score_0=[0.1, 0.2, 0.7, 0.9], score_1=[0.3, 0.4, 0.6, 0.8])
    bins = causal_calibration(cps, n_bins=2)
    assert bins[0].gap == pytest.approx(0 - 0.5)
    assert bins[1].gap == pytest.approx(0.5 - 1)
    empty = causal_calibration(cps, n_bins=10)
    assert empty[5].gap is None and "bin 5" in empty[5].undefined_reason
    with pytest.raises(ValueError, match="scores"):
        causal_calibration(CounterfactualPredictionSet([0], [0], [0], [0]))


def test_calibration_no_effect_cohort():
    c = dgp.generate(dgp.HiringParams(beta=0, gamma=0, n=100_000, seed=12))
    imp = impute_sequential(c.to_table(), HIRING_STAGES, M=1, seed=0)
    model = fit_logistic(np.column_stack([c.x, c.s]), c.y)
    scores = {a: predict_proba(model, np.column_stack([c.x, imp.arm("interview", a)[0]])) for a in (0, 1)}
    ys = {a: imp.arm("hire", a)[0] for a in (0, 1)}
    bins = causal_calibration(CounterfactualPredictionSet(scores[0] > .5, scores[1] > .5, ys[0], ys[1],
                                                          scores[0], scores[1]))
    assert max(abs(b.gap) for b in bins if b.gap is not None) < 0.03


def test_causal_accuracy_bounds():
    y0 = np.array([0, 1, 1, 0])
    acc = causal_accuracy(y0, y0)
    assert acc.agreement == 1 and acc.signed_gap == 0
    acc = causal_accuracy(np.ones(4, int), np.zeros(4, int))
    assert acc.agreement == 0 and acc.signed_gap == 1
    cps = CounterfactualPredictionSet([1, 1], [0, 0], [1, 0], [0, 0])
    assert causal_accuracy(cps, baseline_arm=0).agreement == 0.5
    with pytest.raises(ValueError, match="baseline"):
        causal_accuracy(np.ones(3, int))


def test_identity_trivial_cases():
    r = theorem1_residual(np.array([[40, 0], [0, 60]]))[0]
    assert r.residual == 0 and r.ppv == 1 and r.tpr == 1 and r.fpr_direct == 0
    # PPV = 0.5, base rates 0.5/0.5, TPR = 0.6 forces FPR = 0.6
    r = theorem1_residual({1: np.array([[40, 60], [40, 60]])})[1]
    assert r.ppv == 0.5 and r.tpr == 0.6 and r.fpr_direct == 0.6
    assert abs(r.residual) < 1e-15


def test_identity_random_and_boundary_tables():
    tables = random_count_tables(np.random.default_rng(1), 1000) + list(BOUNDARY_TABLES.values())
    worst = max(abs(theorem1_residual(t)[0].residual) for t in tables)
    assert worst < 1e-12


def test_identity_undefined_cases():
    assert theorem1_residual(np.array([[5, 5], [0, 0]]))[0].undefined_reason == "base rate is 0 or 1"
    assert "PPV" in theorem1_residual(np.array([[5, 5], [3, 0]]))[0].undefined_reason
    with pytest.raises(ValueError, match="negative"):
        theorem1_residual(np.array([[5, -1], [3, 2]]))


def test_joint_counts():
    # (y, yhat) pairs: (1,1) (0,0) (0,1) (1,1)
    np.testing.assert_array_equal(joint_counts([1, 0, 1, 1], [1, 0, 0, 1]), [[1, 1], [0, 2]])
