"""Sequential multiple imputation of post-treatment counterfactuals.

Stages are processed in causal order. For each stage a model of the stage
outcome given the pre-treatment predictors, earlier stage outcomes and the
group is fitted on observed data; counterfactual draws for arm ``a`` are
then sampled with the group set to ``a`` and earlier stages replaced by
their arm-``a`` draws. Draw ``m`` of one stage feeds draw ``m`` of the next
(chained paths), so every arm carries ``M`` complete imputation paths.
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .dgp import mix_seed
from .models import (ConvergenceError, GlmModel, TrainConfig, fit_logistic, fit_mlp,
                     model_to_dict, predict_proba)
from .tabular import DataTable, encode_features


@dataclass(frozen=True)
class Gate:
    """If the arm's draw of ``gate_col`` differs from ``gate_value`` the
    stage's counterfactual is forced to ``forced_outcome``."""

    gate_col: str
    gate_value: int
    forced_outcome: int


@dataclass(frozen=True)
class StageSpec:
    name: str
    outcome_col: str
    predictor_cols: tuple[str, ...]
    model_family: str = "logistic"
    hidden: tuple[int, ...] = ()
    gate: Gate | None = None
    config: TrainConfig | None = None

    def __post_init__(self):
        object.__setattr__(self, "predictor_cols", tuple(self.predictor_cols))
        object.__setattr__(self, "hidden", tuple(self.hidden))
        if self.model_family not in ("logistic", "mlp"):
            raise ValueError(f"stage {self.name!r}: unknown model family {self.model_family!r}")
        if self.model_family == "mlp" and not self.hidden:
            raise ValueError(f"stage {self.name!r}: mlp family needs hidden layer sizes")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "outcome_col": self.outcome_col,
            "predictor_cols": list(self.predictor_cols),
            "model_family": self.model_family,
            "hidden": list(self.hidden),
            "gate": None if self.gate is None else vars(self.gate),
        }


@dataclass(frozen=True, eq=False)
class ImputedCohort:
    table: DataTable
    group_col: str
    stages: tuple[StageSpec, ...]
    M: int
    seed: int
    draws: Mapping[tuple[str, int], np.ndarray]
    models: Mapping[str, object] = field(default_factory=dict)
    dropped_rows: int = 0

    @property
    def n(self) -> int:
        return self.table.n

    @property
    def stage_names(self) -> list[str]:
        return [s.name for s in self.stages]

    @property
    def final_stage(self) -> str:
        return self.stages[-1].name

    def stage(self, name: str) -> StageSpec:
        for s in self.stages:
            if s.name == name:
                return s
        raise KeyError(f"unknown stage {name!r}; have {self.stage_names}")

    def arm(self, stage: str, a: int) -> np.ndarray:
        """``(M, n)`` binary draws of ``stage`` in the world where the group is ``a``."""
        self.stage(stage)
        return self.draws[(stage, int(a))]

    def stage_for_column(self, col: str) -> StageSpec | None:
        for s in self.stages:
            if s.outcome_col == col:
                return s
        return None


def _validate_stages(table: DataTable, stages: Sequence[StageSpec], group_col: str):
    seen_outcomes: set[str] = set()
    all_outcomes = {s.outcome_col for s in stages}
    names = [s.name for s in stages]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate stage names: {names}")
    for s in stages:
        if s.outcome_col not in table:
            raise ValueError(f"stage {s.name!r}: unknown outcome column {s.outcome_col!r}")
        if table.spec(s.outcome_col).kind != "binary":
            raise ValueError(f"stage {s.name!r}: outcome {s.outcome_col!r} is not binary")
        for col in s.predictor_cols:
            if col not in table:
                raise ValueError(f"stage {s.name!r}: unknown predictor {col!r}")
            if col == group_col:
                raise ValueError(f"stage {s.name!r}: the group column is added automatically")
            if col in all_outcomes and col not in seen_outcomes:
                raise ValueError(f"stage {s.name!r}: predictor {col!r} is the outcome of a "
                                 f"later (or the same) stage")
        if s.gate is not None and s.gate.gate_col not in seen_outcomes:
            raise ValueError(f"stage {s.name!r}: gate column {s.gate.gate_col!r} is not an "
                             f"earlier stage outcome")
        seen_outcomes.add(s.outcome_col)


def _positivity_warning(table: DataTable, cols: Sequence[str], group: np.ndarray):
    cat = [c for c in cols if table.spec(c).kind == "categorical"]
    if not cat:
        return
    cells: dict[tuple, set] = {}
    for key, g in zip(zip(*(table[c] for c in cat)), group):
        cells.setdefault(key, set()).add(int(g))
    bad = sum(1 for v in cells.values() if len(v) < 2)
    if bad:
        warnings.warn(f"{bad} categorical cell(s) over {cat} contain only one group; "
                      f"run positivity_filter before imputing", stacklevel=3)


def _fit_stage(stage: StageSpec, design: np.ndarray, labels: np.ndarray, names, config):
    if stage.model_family == "mlp":
        return replace(fit_mlp(design, labels, stage.hidden, config), feature_names=tuple(names))
    model = fit_logistic(design, labels, config=config)
    if not model.converged:
        raise ConvergenceError(f"stage {stage.name!r}: logistic model did not converge "
                               f"in {model.n_iter} iterations")
    return GlmModel(model.coefficients, model.intercept, names, model.converged,
                    model.n_iter, model.trace, model.config)


def impute_sequential(table: DataTable, stages: Sequence[StageSpec], M: int = 10, seed: int = 0,
                      group_col: str | None = None,
                      config: TrainConfig | None = None,
                      prefit: Mapping[str, object] | None = None) -> ImputedCohort:
    """Impute both arms of every stage, ``M`` chained paths per arm.

    Rows missing a pre-treatment predictor or the group are dropped (with a
    warning). Rows whose observed group equals ``a`` keep their observed
    stage values in arm ``a``.

    ``prefit`` maps stage names to already fitted stage models (for example
    the ``models`` of another imputation over the same rows and predictors);
    those stages skip fitting.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    stages = tuple(stages)
    if not stages:
        raise ValueError("at least one stage is required")
    group_col = group_col or table.group_col
    _validate_stages(table, stages, group_col)
    outcome_cols = [s.outcome_col for s in stages]
    fixed_cols = sorted({c for s in stages for c in s.predictor_cols if c not in outcome_cols})

    needed = [group_col, *fixed_cols]
    missing = np.zeros(table.n, dtype=bool)
    for col in needed:
        missing |= table.missing_mask(col)
    dropped = int(missing.sum())
    if dropped:
        warnings.warn(f"dropping {dropped} row(s) with missing values in {needed}", stacklevel=2)
        table = table.take(np.flatnonzero(~missing))
    n = table.n
    if n == 0:
        raise ValueError("no rows left to impute")
    group = table[group_col].astype(int)
    _positivity_warning(table, fixed_cols, group)
    config = config or TrainConfig()

    draws: dict[tuple[str, int], np.ndarray] = {}
    models: dict[str, object] = {}
    for k, stage in enumerate(stages):
        enc = encode_features(table, stage.predictor_cols)
        base = np.hstack([enc.design, group[:, None].astype(float)])
        names = (*enc.feature_names, group_col)
        observed = table[stage.outcome_col]
        fit_rows = ~np.isnan(observed)
        for col in stage.predictor_cols:
            if col in outcome_cols:
                fit_rows &= ~np.isnan(table[col])
        if stage.gate is not None:
            fit_rows &= table[stage.gate.gate_col] == stage.gate.gate_value
        if not fit_rows.any():
            raise ValueError(f"stage {stage.name!r}: no rows to fit the stage model")
        if prefit and stage.name in prefit:
            model = prefit[stage.name]
            if tuple(model.feature_names) != tuple(names):
                raise ValueError(f"stage {stage.name!r}: prefit model features "
                                 f"{model.feature_names} do not match {names}")
        else:
            model = _fit_stage(stage, base[fit_rows], observed[fit_rows], names,
                               stage.config or config)
        models[stage.name] = model

        stage_slots = [(enc.source_mapping[c][0], c) for c in stage.predictor_cols if c in outcome_cols]
        factual_obs = ~np.isnan(observed)
        for a in (0, 1):
            out = np.empty((M, n), dtype=np.int8)
            design = base.copy()
            design[:, -1] = a
            keep = (group == a) & factual_obs
            for m in range(M):
                for j, col in stage_slots:
                    earlier = stages[outcome_cols.index(col)].name
                    design[:, j] = draws[(earlier, a)][m]
                p = predict_proba(model, design)
                rng = np.random.default_rng(mix_seed(seed, k, a, m))
                d = (rng.random(n) < p).astype(np.int8)
                if stage.gate is not None:
                    gate_stage = stages[outcome_cols.index(stage.gate.gate_col)].name
                    closed = draws[(gate_stage, a)][m] != stage.gate.gate_value
                    d[closed] = stage.gate.forced_outcome
                d[keep] = observed[keep].astype(np.int8)
                out[m] = d
            out.setflags(write=False)
            draws[(stage.name, a)] = out
    return ImputedCohort(table=table, group_col=group_col, stages=stages, M=M, seed=seed,
                         draws=draws, models=models, dropped_rows=dropped)


# ----------------------------------------------------------------------------
# effects
# ----------------------------------------------------------------------------

class EffectEstimate(NamedTuple):
    estimate: float
    within_imputation_se: float


def per_imputation_effects(imputed: ImputedCohort, final_stage: str | None = None) -> np.ndarray:
    final_stage = final_stage or imputed.final_stage
    if imputed.n == 0:
        raise ValueError("empty cohort")
    diff = imputed.arm(final_stage, 1).astype(float) - imputed.arm(final_stage, 0)
    return diff.mean(axis=1)


def total_effect(imputed: ImputedCohort, final_stage: str | None = None) -> EffectEstimate:
    """Average of ``arm1 - arm0`` over rows and imputation paths.

    The standard error is the within-imputation one: the root mean of the
    per-path variances of the mean difference.
    """
    final_stage = final_stage or imputed.final_stage
    if imputed.n == 0:
        raise ValueError("empty cohort")
    diff = imputed.arm(final_stage, 1).astype(float) - imputed.arm(final_stage, 0)
    per_path = diff.mean(axis=1)
    if imputed.n > 1:
        within = diff.var(axis=1, ddof=1) / imputed.n
    else:
        within = np.zeros(imputed.M)
    return EffectEstimate(float(per_path.mean()), float(np.sqrt(within.mean())))


@dataclass(frozen=True)
class RubinPooled:
    estimate: float
    within_variance: float
    between_variance: float
    total_variance: float


def rubin_pool(estimates, variances) -> RubinPooled:
    """Rubin's rules for ``M`` per-imputation estimates and their variances."""
    q = np.asarray(estimates, dtype=float)
    u = np.asarray(variances, dtype=float)
    m = q.size
    if m == 0 or u.size != m:
        raise ValueError("need one variance per estimate")
    within = float(u.mean())
    between = float(q.var(ddof=1)) if m > 1 else 0.0
    return RubinPooled(float(q.mean()), within, between, within + (1 + 1 / m) * between)


@dataclass(frozen=True)
class ConditionalEffects:
    edges: np.ndarray
    effects: np.ndarray
    counts: np.ndarray
    unstable: np.ndarray

    @property
    def weights(self) -> np.ndarray:
        return self.counts / self.counts.sum()

    def weighted_total(self) -> float:
        ok = self.counts > 0
        return float(np.sum(self.weights[ok] * self.effects[ok]))


MIN_BIN_ROWS = 30


def conditional_effect(imputed: ImputedCohort, final_stage: str | None, x_col: str,
                       n_bins: int = 10) -> ConditionalEffects:
    """Per-quantile-bin mean arm difference of ``final_stage`` over ``x_col``.

    Bins with fewer than 30 rows keep their estimate but are flagged
    ``unstable``; empty bins get NaN.
    """
    final_stage = final_stage or imputed.final_stage
    spec = imputed.table.spec(x_col)
    if spec.kind != "numeric":
        raise ValueError(f"{x_col!r} is not numeric")
    x = imputed.table[x_col]
    edges = np.quantile(x, np.linspace(0.0, 1.0, n_bins + 1))
    idx = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, n_bins - 1)
    diff = (imputed.arm(final_stage, 1).astype(float) - imputed.arm(final_stage, 0)).mean(axis=0)
    counts = np.bincount(idx, minlength=n_bins)
    sums = np.bincount(idx, weights=diff, minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        effects = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return ConditionalEffects(edges=edges, effects=effects, counts=counts,
                              unstable=counts < MIN_BIN_ROWS)


# ----------------------------------------------------------------------------
# persistence
# ----------------------------------------------------------------------------

def write_imputed(imputed: ImputedCohort, out_dir) -> list[str]:
    """One CSV per arm (``id,stage,arm,m,value``) plus ``manifest.json``."""
    os.makedirs(out_dir, exist_ok=True)
    ids = imputed.table["id"] if "id" in imputed.table else np.arange(imputed.n)
    ids = [str(int(v)) if float(v).is_integer() else repr(float(v)) for v in ids]
    paths = []
    for a in (0, 1):
        path = os.path.join(out_dir, f"arm{a}.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("id,stage,arm,m,value\n")
            for stage in imputed.stages:
                arr = imputed.arm(stage.name, a)
                for m in range(imputed.M):
                    fh.writelines(f"{i},{stage.name},{a},{m},{v}\n" for i, v in zip(ids, arr[m]))
        paths.append(path)
    manifest = {
        "stages": [s.to_dict() for s in imputed.stages],
        "M": imputed.M,
        "seed": imputed.seed,
        "n": imputed.n,
        "group_col": imputed.group_col,
        "models": {name: model_to_dict(model) for name, model in imputed.models.items()},
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    paths.append(path)
    return paths


def read_imputed_draws(out_dir) -> tuple[dict, dict[tuple[str, int], np.ndarray]]:
    """Load ``(manifest, draws)`` written by :func:`write_imputed`."""
    with open(os.path.join(out_dir, "manifest.json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    n, M = manifest["n"], manifest["M"]
    draws = {}
    for a in (0, 1):
        raw = np.loadtxt(os.path.join(out_dir, f"arm{a}.csv"), delimiter=",", skiprows=1,
                         dtype=str, ndmin=2)
        for stage in manifest["stages"]:
            rows = raw[raw[:, 1] == stage["name"]]
            draws[(stage["name"], a)] = rows[:, 4].astype(np.int8).reshape(M, n)
    return manifest, draws
