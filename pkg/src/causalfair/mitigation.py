"""Mitigation strategies and the train-then-evaluate pipeline.

Three statistical baselines (reweighing, prejudice remover, reject-option
classification) sit next to counterfactual pooling, which rebuilds the
training set in the world where everyone belongs to a baseline group. With
``timing="pre"`` the post-treatment features are replaced by the baseline
arm's draws as well; with ``timing="post"`` the observed post-treatment
values are kept and only the outcome is pooled.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .counterfactual import ImputedCohort, StageSpec, impute_sequential
from .dgp import HiringParams, SyntheticCohort, generate, mix_seed
from .fairness import (CausalAccuracy, CounterfactualPredictionSet, FairnessReport,
                       PredictionSet, average_reports, causal_metrics, stat_metrics)
from .models import GlmModel, TrainConfig, fit_logistic, predict_proba
from .tabular import DataTable, EncodedMatrix, encode_features

METHOD_NAMES = ("none", "rew", "prem", "roc", "causal_pre", "causal_post")
ROC_BAND_GRID = tuple(np.round(np.arange(1, 31) / 100.0, 2))


@dataclass(frozen=True)
class MitigationMethod:
    """One mitigation strategy and its settings.

    ``band=None`` for reject-option classification means the band is
    tuned on a validation split of the training rows.
    """

    kind: str = "none"
    eta: float = 1.0
    band: float | None = None
    favorable_label: int = 1
    unprivileged_group: int = 0
    timing: str = "pre"
    baseline_arm: int = 0
    pooling: str = "baseline"

    def __post_init__(self):
        if self.kind not in ("none", "rew", "prem", "roc", "causal"):
            raise ValueError(f"unknown mitigation kind {self.kind!r}")
        if self.eta < 0:
            raise ValueError(f"eta must be >= 0, got {self.eta}")
        if self.band is not None and not 0.0 < self.band < 0.5:
            raise ValueError(f"band must lie in (0, 0.5), got {self.band}")
        if self.favorable_label not in (0, 1) or self.unprivileged_group not in (0, 1):
            raise ValueError("favorable_label and unprivileged_group must be 0 or 1")
        if self.timing not in ("pre", "post"):
            raise ValueError(f"timing must be 'pre' or 'post', got {self.timing!r}")
        if self.baseline_arm not in (0, 1):
            raise ValueError(f"baseline_arm must be 0 or 1, got {self.baseline_arm}")
        if self.pooling not in ("baseline", "other_arm", "max"):
            raise ValueError(f"unknown pooling {self.pooling!r}")

    @property
    def name(self) -> str:
        return f"causal_{self.timing}" if self.kind == "causal" else self.kind

    @classmethod
    def from_name(cls, name: str, **kwargs) -> "MitigationMethod":
        """Build from one of :data:`METHOD_NAMES` (dashes are accepted)."""
        key = name.replace("-", "_")
        if key not in METHOD_NAMES:
            raise ValueError(f"unknown method {name!r}; valid: {', '.join(METHOD_NAMES)}")
        if key.startswith("causal_"):
            return cls(kind="causal", timing=key.split("_", 1)[1], **kwargs)
        return cls(kind=key, **kwargs)


@dataclass(frozen=True, eq=False)
class FairTrainingSet:
    design: EncodedMatrix
    labels: np.ndarray
    weights: np.ndarray | None = None
    n_paths: int = 1

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.shape != (self.design.shape[0],):
            raise ValueError("labels must have one entry per design row")
        if not np.isin(labels, (0, 1)).all():
            raise ValueError("labels must be binary")
        object.__setattr__(self, "labels", labels.astype(np.int8))
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != labels.shape or (w < 0).any():
                raise ValueError("weights must be nonnegative, one per row")
            object.__setattr__(self, "weights", w)


# ----------------------------------------------------------------------------
# statistical baselines
# ----------------------------------------------------------------------------

def reweigh(table_or_group, group_col_or_labels=None, label_col: str | None = None) -> np.ndarray:
    """Per-row weights ``P(A=a) P(Y=y) / P(A=a, Y=y)``.

    Call as ``reweigh(table, group_col, label_col)`` or ``reweigh(group, labels)``.
    """
    if isinstance(table_or_group, DataTable):
        group = table_or_group[group_col_or_labels]
        labels = table_or_group[label_col]
    else:
        group, labels = table_or_group, group_col_or_labels
    g = np.asarray(group, dtype=float)
    y = np.asarray(labels, dtype=float)
    if g.shape != y.shape:
        raise ValueError("group and labels must have equal length")
    if not (np.isin(g, (0, 1)).all() and np.isin(y, (0, 1)).all()):
        raise ValueError("group and labels must be binary without missing values")
    n = len(g)
    w = np.empty(n)
    for a in (0, 1):
        for v in (0, 1):
            cell = (g == a) & (y == v)
            count = int(cell.sum())
            if count == 0:
                raise ValueError(f"empty cell (A={a}, Y={v}); reweighing is undefined")
            w[cell] = (g == a).sum() * (y == v).sum() / (n * count)
    return w


def prejudice_remover(design, labels, group, eta: float = 1.0,
                      config: TrainConfig | None = None) -> GlmModel:
    """Logistic regression with the prejudice-index penalty scaled by ``eta``.

    The group is expected among the design columns as well.
    """
    config = dataclasses.replace(config or TrainConfig(), pr_eta=float(eta))
    return fit_logistic(design, labels, group=group, config=config)


def reject_option(scores, group, band: float, favorable_label: int = 1,
                  unprivileged_group: int = 0) -> np.ndarray:
    """Threshold at 0.5, except inside ``|score - 0.5| < band`` where the
    unprivileged group gets the favorable label and the privileged one the
    other label."""
    if not 0.0 < band < 0.5:
        raise ValueError(f"band must lie in (0, 0.5), got {band}")
    s = np.asarray(scores, dtype=float)
    if ((s < 0) | (s > 1)).any():
        raise ValueError("scores must lie in [0, 1]")
    g = np.asarray(group).astype(int)
    pred = (s >= 0.5).astype(np.int8)
    inside = np.abs(s - 0.5) < band
    pred[inside & (g == unprivileged_group)] = favorable_label
    pred[inside & (g != unprivileged_group)] = 1 - favorable_label
    return pred


def select_roc_band(scores, group, grid: Sequence[float] = ROC_BAND_GRID, **kwargs) -> float:
    """Band from ``grid`` minimising |statistical parity|; ties go to the narrower band."""
    g = np.asarray(group).astype(int)
    best, best_gap = None, np.inf
    for band in grid:
        pred = reject_option(scores, g, band, **kwargs)
        gap = abs(pred[g == 1].mean() - pred[g == 0].mean())
        if gap < best_gap - 1e-12:
            best, best_gap = float(band), gap
    return best


# ----------------------------------------------------------------------------
# counterfactual pooling
# ----------------------------------------------------------------------------

def _imputed_slots(imputed: ImputedCohort, enc: EncodedMatrix, stage: StageSpec):
    """(design column, earlier stage name) for predictors that are stage outcomes."""
    slots = []
    for col in stage.predictor_cols:
        earlier = imputed.stage_for_column(col)
        if earlier is not None and earlier.name != stage.name:
            slots.append((enc.source_mapping[col][0], earlier.name))
    return slots


def causal_preprocess(imputed: ImputedCohort, method: MitigationMethod,
                      rows=None) -> FairTrainingSet:
    """Pooled counterfactual training set, one block of rows per imputation path.

    Features are the final stage's predictors without the group. Predictors
    that are imputed stage outcomes take the source arm's draws of path
    ``m``; the others keep their observed values. Labels are the final
    stage's draws: the baseline arm (``pooling="baseline"``), the other arm
    (``"other_arm"``, features taken from that arm too), or the larger of
    the two (``"max"``, features from the baseline arm).
    """
    if method.kind != "causal":
        raise ValueError(f"causal_preprocess needs a causal method, got {method.kind!r}")
    final = imputed.stage(imputed.final_stage)
    slots = _imputed_slots(imputed, encode_features(imputed.table, final.predictor_cols), final)
    if method.timing == "post" and slots:
        raise ValueError("timing='post' keeps post-treatment values observed; pass an "
                         "imputation whose final stage does not read earlier stage draws")
    b = method.baseline_arm
    source = 1 - b if method.pooling == "other_arm" else b
    for arm in {source, b, 1 - b if method.pooling == "max" else b}:
        if (final.name, arm) not in imputed.draws:
            raise ValueError(f"pooling {method.pooling!r} needs arm {arm}, which is not imputed")
    rows = np.arange(imputed.n) if rows is None else np.asarray(rows)
    enc = encode_features(imputed.table.take(rows), final.predictor_cols)
    if method.pooling == "max":
        labels = np.maximum(imputed.arm(final.name, 0), imputed.arm(final.name, 1))
    else:
        labels = imputed.arm(final.name, source)
    blocks = []
    for m in range(imputed.M):
        X = enc.design.copy()
        for j, stage_name in slots:
            X[:, j] = imputed.arm(stage_name, source)[m][rows]
        blocks.append(X)
    design = EncodedMatrix(np.vstack(blocks), enc.feature_names, enc.source_mapping)
    return FairTrainingSet(design, labels[:, rows].ravel(), n_paths=imputed.M)


# ----------------------------------------------------------------------------
# benchmark pipeline
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BenchmarkData:
    """A cohort ready for train-and-evaluate runs.

    ``imputed_pre`` imputes every stage (post-treatment columns respond to
    the group); ``imputed_post`` imputes the final stage only, holding the
    post-treatment columns at their observed values.
    """

    imputed_pre: ImputedCohort
    imputed_post: ImputedCohort
    train: np.ndarray
    test: np.ndarray
    seed: int = 0
    cohort: SyntheticCohort | None = None

    @property
    def table(self) -> DataTable:
        return self.imputed_pre.table

    @property
    def group_col(self) -> str:
        return self.imputed_pre.group_col

    @property
    def final(self) -> StageSpec:
        return self.imputed_pre.stage(self.imputed_pre.final_stage)

    @property
    def outcome_col(self) -> str:
        return self.final.outcome_col

    @property
    def feature_cols(self) -> tuple[str, ...]:
        return self.final.predictor_cols


def prepare_benchmark(table: DataTable, stages: Sequence[StageSpec], M: int = 10, seed: int = 0,
                      train_frac: float = 0.7, config: TrainConfig | None = None,
                      cohort: SyntheticCohort | None = None) -> BenchmarkData:
    """Impute both timings on all rows and split rows into train and test."""
    if not 0.0 < train_frac < 1.0:
        raise ValueError("train_frac must lie in (0, 1)")
    stages = tuple(stages)
    pre = impute_sequential(table, stages, M=M, seed=seed, config=config)
    final = stages[-1]
    post_stage = dataclasses.replace(final, gate=None)
    post = impute_sequential(pre.table, [post_stage], M=M, seed=seed, config=config,
                             prefit={final.name: pre.models[final.name]} if final.gate is None else None)
    rng = np.random.default_rng(mix_seed(seed, 7))
    perm = rng.permutation(pre.n)
    cut = int(round(train_frac * pre.n))
    return BenchmarkData(pre, post, np.sort(perm[:cut]), np.sort(perm[cut:]), seed, cohort)


HIRING_STAGES = (StageSpec("interview", "s", ("x",)), StageSpec("hire", "y", ("x", "s")))


def hiring_benchmark(params: HiringParams | None = None, M: int = 10, seed: int | None = None,
                     train_frac: float = 0.7) -> BenchmarkData:
    """Hiring cohort with its pre- and post-interview imputations."""
    params = params or HiringParams()
    cohort = generate(params)
    seed = params.seed if seed is None else seed
    return prepare_benchmark(cohort.to_table(), HIRING_STAGES, M=M, seed=seed,
                             train_frac=train_frac, cohort=cohort)


@dataclass(frozen=True, eq=False)
class MitigationResult:
    method: MitigationMethod
    model: GlmModel
    stat: FairnessReport
    causal: FairnessReport
    causal_accuracy: CausalAccuracy
    band: float | None = None

    @property
    def accuracy(self) -> float:
        return self.stat.value("accuracy")


def _design(data: BenchmarkData, rows, with_group: bool, arm: int | None = None,
            m: int | None = None, group=None) -> np.ndarray:
    """Final-stage features for ``rows``; with ``arm`` the imputed predictors
    take that arm's draws on path ``m`` and the group is set to ``arm``."""
    imputed = data.imputed_pre
    sub = data.table.take(rows)
    enc = encode_features(sub, data.feature_cols)
    X = enc.design.copy()
    if arm is not None:
        for j, stage_name in _imputed_slots(imputed, enc, data.final):
            X[:, j] = imputed.arm(stage_name, arm)[m][rows]
    if not with_group:
        return X
    if group is None:
        group = sub[data.group_col] if arm is None else np.full(len(rows), arm)
    return np.hstack([X, np.asarray(group, dtype=float)[:, None]])


def _fit(X, y, config, group=None, names=None):
    return fit_logistic(EncodedMatrix(X, names) if names else X, y, group=group, config=config)


def train_mitigated(data: BenchmarkData, method: MitigationMethod,
                    model_config: TrainConfig | None = None) -> MitigationResult:
    """Fit a logistic model under ``method`` and evaluate it on the test rows.

    Statistical criteria use observed features, group and labels.
    Counterfactual criteria are averaged over the imputation paths: in world
    ``a`` the group input is ``a`` and imputed post-treatment inputs take
    arm-``a`` draws, except for the pre-timing pooled model, whose inputs
    are the baseline arm's draws in both worlds. The outcome arms are the
    imputed ``Y(a)`` for models trained on observed labels, and the pooled
    labels (identical in both worlds) for pooled models.
    """
    config = model_config or TrainConfig()
    tr, te = data.train, data.test
    y_all = data.table[data.outcome_col].astype(int)
    g_all = data.table[data.group_col].astype(int)
    names = (*encode_features(data.table.take(tr[:1]), data.feature_cols).feature_names, data.group_col)
    band = None

    if method.kind == "causal":
        imputed = data.imputed_pre if method.timing == "pre" else data.imputed_post
        fts = causal_preprocess(imputed, method, rows=tr)
        model = fit_logistic(fts.design, fts.labels, config=config)
        uses_group = False
    elif method.kind == "roc":
        rng = np.random.default_rng(mix_seed(data.seed, 11))
        shuffled = rng.permutation(tr)
        n_val = int(round(0.3 * len(tr)))
        val, fit_rows = np.sort(shuffled[:n_val]), np.sort(shuffled[n_val:])
        model = _fit(_design(data, fit_rows, True), y_all[fit_rows], config, names=names)
        band = method.band
        if band is None:
            band = select_roc_band(predict_proba(model, _design(data, val, True)), g_all[val],
                                   favorable_label=method.favorable_label,
                                   unprivileged_group=method.unprivileged_group)
        uses_group = True
    else:
        X = _design(data, tr, True)
        if method.kind == "rew":
            config = dataclasses.replace(config, sample_weights=reweigh(g_all[tr], y_all[tr]))
            model = _fit(X, y_all[tr], config, names=names)
        elif method.kind == "prem":
            model = prejudice_remover(EncodedMatrix(X, names), y_all[tr], g_all[tr], method.eta, config)
        else:
            model = _fit(X, y_all[tr], config, names=names)
        uses_group = True

    def decide(X, group):
        p = predict_proba(model, X)
        if method.kind == "roc":
            return p, reject_option(p, group, band, method.favorable_label, method.unprivileged_group)
        return p, (p >= 0.5).astype(np.int8)

    b = method.baseline_arm
    final = data.final.name
    M = data.imputed_pre.M
    baseline_inputs = method.kind == "causal" and method.timing == "pre"

    # observed-world evaluation; a pre-timing pooled model reads the
    # baseline arm's draws, so it is scored once per path
    observed = []
    for m in range(M if baseline_inputs else 1):
        X = _design(data, te, False, arm=b, m=m) if baseline_inputs else _design(data, te, uses_group)
        p, yhat = decide(X, g_all[te])
        observed.append((p, yhat))
    stat = average_reports([stat_metrics(PredictionSet(y_all[te], p, g_all[te], y_pred=yhat))
                            for p, yhat in observed])

    # counterfactual evaluation
    reports, agreement, gap = [], [], []
    if method.kind == "causal":
        pooled = causal_preprocess(imputed, method, rows=te)
        y_fair = pooled.labels.reshape(imputed.M, -1)
    for m in range(M):
        arms = {}
        for a in (0, 1):
            if baseline_inputs:
                X = _design(data, te, False, arm=b, m=m)
            else:
                X = _design(data, te, uses_group, arm=a, m=m)
            arms[a] = decide(X, np.full(len(te), a))
        if method.kind == "causal":
            y0 = y1 = y_fair[m]
        else:
            y0 = data.imputed_pre.arm(final, 0)[m][te]
            y1 = data.imputed_pre.arm(final, 1)[m][te]
        cps = CounterfactualPredictionSet(arms[0][1], arms[1][1], y0, y1, arms[0][0], arms[1][0])
        reports.append(causal_metrics(cps))
        yhat_obs = observed[m if baseline_inputs else 0][1]
        y_base = data.imputed_pre.arm(final, b)[m][te]
        agreement.append(np.mean(yhat_obs == y_base))
        gap.append(np.mean(yhat_obs.astype(float) - y_base))
    causal = average_reports(reports)
    cacc = CausalAccuracy(float(np.mean(agreement)), float(np.mean(gap)))
    return MitigationResult(method, model, stat, causal, cacc, band)
