import math

import numpy as np
import pytest
from scipy.special import expit

from survsc.data import Cohort
from survsc.dgp import CohortDesign, make_cohort
from survsc.estimators import EstimatorKind, build_control_group
from survsc.experiment import (
    EvaluationError,
    Method,
    ResampleConfig,
    RunReport,
    aggregate_reports,
    biased_resample,
    cross_validate_lambda,
    default_methods,
    group_metrics,
    risk_scores,
    run_negative_control_eval,
    stylized_bias,
)
from survsc.solver import SolverConfig

from conftest import make_toy_cohort


@pytest.fixture(scope="module")
def cohort():
    c, _ = make_cohort(600, CohortDesign(), seed=11)
    return c


def pattern_cohort(copies=40):
    # 8 covariate patterns; every subject sharing a pattern shares its outcome
    pats = np.array([[a, b, c] for a in (0, 1) for b in (0, 1) for c in (0, 1)], dtype=float)
    times = 10.0 + 7.0 * np.arange(8)
    events = np.arange(8) % 3 != 0
    idx = np.repeat(np.arange(8), copies)
    return Cohort(
        tuple(str(i) for i in range(idx.size)), pats[idx], times[idx], events[idx], np.zeros(idx.size), ("a", "b", "c")
    )


def test_selection_probabilities():
    assert expit(0.0) == 0.5
    assert expit(3.0 * 1.0) == pytest.approx(0.95257, abs=1e-5)


def test_risk_scores_standardised(cohort):
    s = risk_scores(cohort)
    assert s.z.mean() == pytest.approx(0.0, abs=1e-12)
    assert s.z.std() == pytest.approx(1.0, rel=1e-12)
    assert np.all(np.isfinite(s.raw))
    lp = risk_scores(cohort, "linear_predictor")
    assert np.corrcoef(s.z, lp.z)[0, 1] > 0.9
    with pytest.raises(ValueError):
        risk_scores(cohort, "hazard")


def test_resample_split(cohort):
    r = biased_resample(cohort, ResampleConfig(seed=3))
    assert r.n_removed == 0
    assert len(r.target) + len(r.donors) <= len(cohort)
    assert len(r.donors) == len(cohort) - r.n_target_pool
    assert not set(r.target.ids) & set(r.donors.ids)


def test_resample_selects_long_survivors(cohort):
    s = risk_scores(cohort)
    r = biased_resample(cohort, ResampleConfig(target_pool_prob=0.5, seed=0), s)
    pos = {k: i for i, k in enumerate(cohort.ids)}
    z_target = s.z[[pos[i] for i in r.target.ids]]
    assert z_target.mean() > 0.3


def test_delta_min_removes_close_donors(cohort):
    base = biased_resample(cohort, ResampleConfig(seed=3))
    r = biased_resample(cohort, ResampleConfig(delta_min=0.1, seed=3))
    assert r.target.ids == base.target.ids
    assert r.n_removed > 0 and len(r.donors) == len(base.donors) - r.n_removed


def test_delta_min_empty_pool(cohort):
    with pytest.raises(EvaluationError, match="delta_min"):
        biased_resample(cohort, ResampleConfig(delta_min=1e6, seed=3))


def test_resample_rejects_treated():
    c = make_toy_cohort(treated=np.arange(30) == 0)
    with pytest.raises(ValueError):
        biased_resample(c, ResampleConfig())


def test_config_validation():
    with pytest.raises(ValueError):
        ResampleConfig(target_pool_prob=1.0)
    with pytest.raises(ValueError):
        ResampleConfig(delta_min=-0.1)
    with pytest.raises(ValueError):
        RunReport("x", 0.0, 0, 1.5, 0.0, 1, 1, 0)


def test_self_comparison_is_zero(cohort):
    t = cohort.subset(cohort.event)
    assert group_metrics(t, t.time, t.event) == (0.0, 0.0)


def test_exact_duplicates_nn_equals_sc():
    c = pattern_cohort()
    methods = [Method("nn", EstimatorKind("nn_match")), Method("sc", EstimatorKind("sc_natural"))]
    reps = run_negative_control_eval(c, methods, [0.0], repeats=3, seed=0, include_unadjusted=False)
    by = {(r.repeat, r.method): r for r in reps}
    for k in range(3):
        assert by[(k, "nn")].ks == by[(k, "sc")].ks
        assert by[(k, "nn")].mae_rmst == by[(k, "sc")].mae_rmst


def test_eval_deterministic_and_ordered(cohort):
    methods = default_methods(0.5)
    a = run_negative_control_eval(cohort, methods, [0.0, 0.1], repeats=2, seed=5)
    b = run_negative_control_eval(cohort, methods, [0.0, 0.1], repeats=2, seed=5)
    assert a == b
    assert len(a) == 2 * 2 * (len(methods) + 1)
    assert [r.method for r in a[:5]] == ["unadjusted", "nn", "sc", "sc_log", "sc_pen0.5"]
    assert a[0].seed == 5 and a[-1].seed == 6
    assert math.isnan(a[0].mae_rmst)


def test_uniform_eval_grid(cohort):
    reps = run_negative_control_eval(cohort, default_methods()[:1], [0.0], 1, 0, eval_grid="uniform")
    assert all(0 <= r.ks <= 1 for r in reps)


def test_aggregate():
    reps = [RunReport("m", 0.0, k, ks, 2.0 * k, 10, 20, k) for k, ks in enumerate((0.1, 0.3))]
    [row] = aggregate_reports(reps)
    assert row["ks_mean"] == pytest.approx(0.2)
    assert row["ks_2se"] == pytest.approx(2 * np.std([0.1, 0.3], ddof=1) / math.sqrt(2))
    assert row["mae_rmst_mean"] == pytest.approx(1.0)


def test_cv_single_lambda(cohort):
    best, table = cross_validate_lambda(cohort, [0.3], folds=3, seed=1)
    assert best == 0.3 and len(table) == 1


def test_cv_tie_goes_to_smallest_lambda():
    # nn_match ignores lambda, so every grid point scores the same
    best, table = cross_validate_lambda(pattern_cohort(5), [1.0, 0.0, 0.5], folds=4, kind=EstimatorKind("nn_match"))
    assert len({row["value"] for row in table}) == 1
    assert best == 0.0


def test_cv_degenerate_folds():
    with pytest.raises(ValueError):
        cross_validate_lambda(make_toy_cohort(n=5), [0.0], folds=5)


def test_cv_metrics_both_run(cohort):
    small = cohort.subset(np.arange(200))
    for metric in ("ks", "mae"):
        best, table = cross_validate_lambda(small, [0.0, 0.1, 1.0], folds=4, metric=metric, seed=2)
        assert best in (0.0, 0.1, 1.0)
        assert {row["metric"] for row in table} == {metric}


def test_stylized_noise_free_matches_oracle():
    res = stylized_bias("fig2", 10, seed=0, sigma=0.0)
    for row in res.rows:
        assert row["mc_bias"] == pytest.approx(row["oracle_bias"], abs=1e-12)


def test_stylized_fig3_curves():
    res = stylized_bias("fig3_linear", 200, seed=1)
    assert set(res.curves) == {"true", "sc", "nn"}
    assert {r["estimator"] for r in res.rows} == {"sc", "nn_match"}


def test_stylized_seeded():
    a = stylized_bias("fig2", 500, seed=3, sigma=1.0).rows
    b = stylized_bias("fig2", 500, seed=3, sigma=1.0).rows
    assert a == b
