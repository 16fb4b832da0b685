import numpy as np
import pytest

from causalfair import dgp
from causalfair.counterfactual import (Gate, ImputedCohort, StageSpec, conditional_effect,
                                       impute_sequential, per_imputation_effects,
                                       read_imputed_draws, rubin_pool, total_effect,
                                       write_imputed)
from causalfair.models import ConvergenceError, TrainConfig
from causalfair.tabular import ColumnSpec, DataTable

from conftest import HIRING_STAGES


def _fake_imputed(arm0, arm1):
    n = arm0.shape[1]
    table = DataTable([ColumnSpec("a", "binary", "group"), ColumnSpec("x")],
                      {"a": np.zeros(n), "x": np.arange(n, dtype=float)})
    stage = StageSpec("y", "a", ("x",))
    return ImputedCohort(table, "a", (stage,), arm0.shape[0], 0, {("y", 0): arm0, ("y", 1): arm1})


def test_total_effect_degenerate_cases():
    same = np.random.default_rng(0).integers(0, 2, size=(3, 50))
    est = total_effect(_fake_imputed(same, same))
    assert est.estimate == 0 and est.within_imputation_se == 0
    assert total_effect(_fake_imputed(np.zeros((3, 50)), np.ones((3, 50)))).estimate == 1.0


def test_consistency_override(small_imputed):
    t = small_imputed.table
    for stage in small_imputed.stages:
        obs = t[stage.outcome_col]
        for a in (0, 1):
            rows = t["a"] == a
            np.testing.assert_array_equal(small_imputed.arm(stage.name, a)[:, rows],
                                          np.broadcast_to(obs[rows], (small_imputed.M, rows.sum())))


def test_draws_are_binary_and_deterministic(small_cohort, small_imputed):
    again = impute_sequential(small_cohort.to_table(), HIRING_STAGES, M=5, seed=3)
    for key, arr in small_imputed.draws.items():
        assert set(np.unique(arr)) <= {0, 1}
        np.testing.assert_array_equal(arr, again.draws[key])
    other = impute_sequential(small_cohort.to_table(), HIRING_STAGES, M=5, seed=4)
    assert not np.array_equal(other.draws[("hire", 0)], small_imputed.draws[("hire", 0)])


def test_null_effect_recovered():
    c = dgp.generate(dgp.HiringParams(alpha=0.5, beta=0, gamma=0, n=100_000, seed=21))
    est = total_effect(impute_sequential(c.to_table(), HIRING_STAGES, M=10, seed=1)).estimate
    assert abs(est) < 0.01


@pytest.mark.parametrize("alpha,beta", [(-0.5, 0.5), (0.0, 0.25), (0.5, 1.0)])
def test_imputed_effect_tracks_oracle(alpha, beta):
    c = dgp.generate(dgp.HiringParams(alpha=alpha, beta=beta, gamma=0.2, n=100_000, seed=31))
    est = total_effect(impute_sequential(c.to_table(), HIRING_STAGES, M=10, seed=2)).estimate
    assert abs(est - dgp.oracle_effects(c).causal_parity_pre) < 0.02


def test_conditional_effects_average_to_total(small_imputed):
    ce = conditional_effect(small_imputed, None, "x", n_bins=10)
    assert ce.weighted_total() == pytest.approx(total_effect(small_imputed).estimate, abs=1e-12)
    assert ce.counts.sum() == small_imputed.n
    assert len(ce.edges) == 11


def test_conditional_effects_positive_with_gamma_only():
    c = dgp.generate(dgp.HiringParams(beta=0, gamma=0.2, n=100_000, seed=41))
    ce = conditional_effect(impute_sequential(c.to_table(), HIRING_STAGES, M=10, seed=5), None, "x")
    assert (ce.effects > 0).all()


def test_conditional_effect_flags_small_bins(small_imputed):
    head = ImputedCohort(small_imputed.table.take(np.arange(100)), "a", small_imputed.stages,
                         small_imputed.M, 0, {k: v[:, :100] for k, v in small_imputed.draws.items()})
    ce = conditional_effect(head, None, "x", n_bins=10)
    assert ce.unstable.all()


def test_rubin_pool():
    r = rubin_pool([1.0, 2.0, 3.0], [0.1, 0.2, 0.3])
    assert r.estimate == 2.0 and r.within_variance == pytest.approx(0.2)
    assert r.between_variance == pytest.approx(1.0)
    assert r.total_variance == pytest.approx(0.2 + (4 / 3) * 1.0)


def test_per_imputation_effects_mean(small_imputed):
    assert per_imputation_effects(small_imputed).mean() == pytest.approx(total_effect(small_imputed).estimate)


def _gated_table(n=4000, seed=0):
    rng = np.random.default_rng(seed)
    a = (rng.random(n) < 0.5).astype(float)
    x = rng.normal(size=n)
    search = (rng.random(n) < 1 / (1 + np.exp(-(x + a)))).astype(float)
    found = np.where(search == 1, (rng.random(n) < 0.4).astype(float), 0.0)
    cols = [ColumnSpec("a", "binary", "group"), ColumnSpec("x"),
            ColumnSpec("search", "binary", "post_treatment"), ColumnSpec("found", "binary", "outcome")]
    return DataTable(cols, {"a": a, "x": x, "search": search, "found": found})


def test_gate_forces_outcome():
    stages = [StageSpec("search", "search", ("x",)),
              StageSpec("found", "found", ("x", "search"), gate=Gate("search", 1, 0))]
    imp = impute_sequential(_gated_table(), stages, M=4, seed=0)
    for a in (0, 1):
        closed = imp.arm("search", a) != 1
        assert (imp.arm("found", a)[closed] == 0).all()


def test_stage_order_validation(small_cohort):
    table = small_cohort.to_table()
    with pytest.raises(ValueError, match="later"):
        impute_sequential(table, [StageSpec("hire", "y", ("x", "s")), StageSpec("interview", "s", ("x",))])
    with pytest.raises(ValueError, match="group column"):
        impute_sequential(table, [StageSpec("hire", "y", ("x", "a"))])
    with pytest.raises(ValueError, match="gate column"):
        impute_sequential(table, [StageSpec("hire", "y", ("x",), gate=Gate("s", 1, 0))])


def test_convergence_error_names_stage(small_cohort):
    stages = [StageSpec("interview", "s", ("x",), config=TrainConfig(max_iter=1))]
    with pytest.raises(ConvergenceError, match="interview"):
        impute_sequential(small_cohort.to_table(), stages)


def test_missing_rows_dropped_with_warning():
    t = _gated_table(500)
    x = t["x"].copy()
    x[:7] = np.nan
    t = DataTable(t.columns, {**t.data, "x": x})
    with pytest.warns(UserWarning, match="dropping 7"):
        imp = impute_sequential(t, [StageSpec("search", "search", ("x",))], M=2)
    assert imp.n == 493 and imp.dropped_rows == 7


def test_positivity_warning():
    cols = [ColumnSpec("a", "binary", "group"), ColumnSpec("c", "categorical"), ColumnSpec("y", "binary", "outcome")]
    rng = np.random.default_rng(0)
    c = np.array(["p"] * 100 + ["q"] * 20, dtype=object)
    a = np.concatenate([rng.integers(0, 2, 100), np.ones(20)])
    t = DataTable(cols, {"a": a, "c": c, "y": rng.integers(0, 2, 120)})
    with pytest.warns(UserWarning, match="positivity_filter"):
        impute_sequential(t, [StageSpec("y", "y", ("c",))], M=1)


def test_mlp_stage_and_prefit(small_cohort):
    table = small_cohort.to_table().take(np.arange(3000))
    stages = [StageSpec("hire", "y", ("x", "s"), model_family="mlp", hidden=(4,),
                        config=TrainConfig(max_iter=3))]
    imp = impute_sequential(table, stages, M=2, seed=1)
    reuse = impute_sequential(table, stages, M=2, seed=1, prefit=imp.models)
    np.testing.assert_array_equal(imp.arm("hire", 1), reuse.arm("hire", 1))


def test_persistence_round_trip(tmp_path, small_imputed):
    paths = write_imputed(small_imputed, tmp_path / "imp")
    assert [p.rsplit("/", 1)[-1] for p in paths] == ["arm0.csv", "arm1.csv", "manifest.json"]
    manifest, draws = read_imputed_draws(tmp_path / "imp")
    assert manifest["M"] == 5 and manifest["seed"] == 3
    assert set(manifest["models"]) == {"interview", "hire"}
    for key, arr in small_imputed.draws.items():
        np.testing.assert_array_equal(draws[key], arr)
