"""Statistical fairness criteria, their counterfactual (causal) variants,
counterfactual accuracy, and the exact error-rate identity that makes causal
PPV parity and causal equalized odds compatible.

All violations are signed: group 1 (or arm 1) minus group 0 (or arm 0).
A conditional probability over an empty cell is reported as undefined,
never as zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

STAT_METRICS = ("parity", "ppv_parity", "eodds_tp", "eodds_fp", "accuracy")
CAUSAL_METRICS = ("causal_parity", "causal_ppv_parity", "causal_eodds_tp", "causal_eodds_fp")


def _binary(name, v) -> np.ndarray:
    arr = np.asarray(v)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a vector")
    if not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} must be binary")
    return arr.astype(np.int8)


@dataclass(frozen=True, eq=False)
class PredictionSet:
    y_true: np.ndarray
    y_score: np.ndarray
    group: np.ndarray
    y_pred: np.ndarray | None = None

    def __post_init__(self):
        score = np.asarray(self.y_score, dtype=float)
        y_true = _binary("y_true", self.y_true)
        group = _binary("group", self.group)
        pred = (score >= 0.5).astype(np.int8) if self.y_pred is None else _binary("y_pred", self.y_pred)
        if not (len(y_true) == len(score) == len(group) == len(pred)):
            raise ValueError("prediction set vectors have unequal lengths")
        object.__setattr__(self, "y_true", y_true)
        object.__setattr__(self, "y_score", score)
        object.__setattr__(self, "group", group)
        object.__setattr__(self, "y_pred", pred)


@dataclass(frozen=True, eq=False)
class CounterfactualPredictionSet:
    """Predictions and outcomes in the two worlds (group set to 0 and to 1)."""

    yhat_0: np.ndarray
    yhat_1: np.ndarray
    y_0: np.ndarray
    y_1: np.ndarray
    score_0: np.ndarray | None = None
    score_1: np.ndarray | None = None

    def __post_init__(self):
        for name in ("yhat_0", "yhat_1", "y_0", "y_1"):
            object.__setattr__(self, name, _binary(name, getattr(self, name)))
        for name in ("score_0", "score_1"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, np.asarray(v, dtype=float))
        lengths = {len(v) for v in (self.yhat_0, self.yhat_1, self.y_0, self.y_1,
                                    self.score_0, self.score_1) if v is not None}
        if len(lengths) != 1:
            raise ValueError("counterfactual arms have unequal lengths")

    def swapped(self) -> "CounterfactualPredictionSet":
        return CounterfactualPredictionSet(self.yhat_1, self.yhat_0, self.y_1, self.y_0,
                                           self.score_1, self.score_0)


@dataclass(frozen=True)
class MetricValue:
    value: float | None
    n_effective: int = 0
    ci95: tuple[float, float] | None = None
    undefined_reason: str | None = None

    @property
    def defined(self) -> bool:
        return self.value is not None

    def to_dict(self) -> dict:
        out = {"value": self.value, "ci95": None if self.ci95 is None else list(self.ci95),
               "n_effective": self.n_effective}
        if self.undefined_reason is not None:
            out["undefined_reason"] = self.undefined_reason
        return out


@dataclass(frozen=True)
class FairnessReport:
    metrics: Mapping[str, MetricValue]
    n: int
    arms_present: tuple[int, ...] = ()

    def __getitem__(self, name: str) -> MetricValue:
        return self.metrics[name]

    def value(self, name: str) -> float | None:
        return self.metrics[name].value

    def to_dict(self) -> dict:
        return {"metrics": {k: v.to_dict() for k, v in self.metrics.items()}, "n": self.n,
                "arms_present": list(self.arms_present)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _rate(event: np.ndarray, cond: np.ndarray, label: str):
    n = int(cond.sum())
    if n == 0:
        return None, 0, f"empty cell: {label}"
    return float(event[cond].mean()), n, None


def _diff(name, first, second) -> MetricValue:
    (v1, n1, r1), (v0, n0, r0) = first, second
    if r1 or r0:
        return MetricValue(None, n1 + n0, undefined_reason="; ".join(r for r in (r1, r0) if r))
    return MetricValue(v1 - v0, n1 + n0)


def stat_metrics(ps: PredictionSet) -> FairnessReport:
    """Group-difference criteria on observed data, plus accuracy."""
    g1, g0 = ps.group == 1, ps.group == 0
    if not g1.any() or not g0.any():
        raise ValueError("both groups must be nonempty")
    yh, y = ps.y_pred, ps.y_true
    pos = yh == 1
    metrics = {
        "parity": _diff("parity", _rate(yh, g1, "A=1"), _rate(yh, g0, "A=0")),
        "ppv_parity": _diff("ppv_parity", _rate(y, g1 & pos, "Yhat=1,A=1"),
                            _rate(y, g0 & pos, "Yhat=1,A=0")),
        "eodds_tp": _diff("eodds_tp", _rate(yh, g1 & (y == 1), "Y=1,A=1"),
                          _rate(yh, g0 & (y == 1), "Y=1,A=0")),
        "eodds_fp": _diff("eodds_fp", _rate(yh, g1 & (y == 0), "Y=0,A=1"),
                          _rate(yh, g0 & (y == 0), "Y=0,A=0")),
        "accuracy": MetricValue(float(np.mean(yh == y)), len(y)),
    }
    return FairnessReport(metrics, len(y))


def causal_metrics(cps: CounterfactualPredictionSet) -> FairnessReport:
    """Arm-difference criteria: world 1 minus world 0."""
    n = len(cps.y_0)
    if n == 0:
        raise ValueError("empty counterfactual prediction set")
    everyone = np.ones(n, dtype=bool)
    h1, h0, y1, y0 = cps.yhat_1, cps.yhat_0, cps.y_1, cps.y_0
    metrics = {
        "causal_parity": _diff("causal_parity", _rate(h1, everyone, "all"), _rate(h0, everyone, "all")),
        "causal_ppv_parity": _diff("causal_ppv_parity", _rate(y1, h1 == 1, "Yhat(1)=1"),
                                   _rate(y0, h0 == 1, "Yhat(0)=1")),
        "causal_eodds_tp": _diff("causal_eodds_tp", _rate(h1, y1 == 1, "Y(1)=1"),
                                 _rate(h0, y0 == 1, "Y(0)=1")),
        "causal_eodds_fp": _diff("causal_eodds_fp", _rate(h1, y1 == 0, "Y(1)=0"),
                                 _rate(h0, y0 == 0, "Y(0)=0")),
    }
    return FairnessReport(metrics, n, arms_present=(0, 1))


def average_reports(reports: Sequence[FairnessReport]) -> FairnessReport:
    """Mean of each metric over reports (e.g. over imputation paths).

    Paths where a metric is undefined are skipped; a metric undefined on
    every path stays undefined.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to average")
    names = list(reports[0].metrics)
    out = {}
    for name in names:
        vals = [r.metrics[name] for r in reports]
        defined = [v for v in vals if v.defined]
        if not defined:
            out[name] = MetricValue(None, 0, undefined_reason=vals[0].undefined_reason)
        else:
            out[name] = MetricValue(float(np.mean([v.value for v in defined])),
                                    int(round(np.mean([v.n_effective for v in defined]))))
    return FairnessReport(out, reports[0].n, reports[0].arms_present)


@dataclass(frozen=True)
class CalibrationBin:
    lo: float
    hi: float
    gap: float | None
    n1: int
    n0: int
    undefined_reason: str | None = None


def causal_calibration(cps: CounterfactualPredictionSet, n_bins: int = 10) -> list[CalibrationBin]:
    """Per equal-width score bin: P(Y(1)=1 | S(1) in bin) - P(Y(0)=1 | S(0) in bin)."""
    if cps.score_0 is None or cps.score_1 is None:
        raise ValueError("causal calibration needs scores for both arms")
    edges = np.linspace(0.0, 1.0, n_bins + 1)

    def bin_of(s):
        return np.clip(np.searchsorted(edges, s, side="right") - 1, 0, n_bins - 1)

    b1, b0 = bin_of(cps.score_1), bin_of(cps.score_0)
    out = []
    for k in range(n_bins):
        r1 = _rate(cps.y_1, b1 == k, f"S(1) in bin {k}")
        r0 = _rate(cps.y_0, b0 == k, f"S(0) in bin {k}")
        d = _diff("gap", r1, r0)
        out.append(CalibrationBin(float(edges[k]), float(edges[k + 1]), d.value, r1[1], r0[1],
                                  d.undefined_reason))
    return out


@dataclass(frozen=True)
class CausalAccuracy:
    agreement: float
    signed_gap: float


def causal_accuracy(predictions, baseline_outcome=None, baseline_arm: int = 0) -> CausalAccuracy:
    """Agreement of predictions with the baseline-arm potential outcome.

    ``predictions`` is either a :class:`CounterfactualPredictionSet` (the
    baseline arm's prediction and outcome are used) or a prediction vector,
    in which case ``baseline_outcome`` holds Y(baseline).
    """
    if isinstance(predictions, CounterfactualPredictionSet):
        yhat = getattr(predictions, f"yhat_{baseline_arm}")
        y_base = getattr(predictions, f"y_{baseline_arm}")
    elif isinstance(predictions, PredictionSet):
        if baseline_outcome is None:
            raise ValueError("missing baseline arm outcomes")
        yhat, y_base = predictions.y_pred, _binary("baseline_outcome", baseline_outcome)
    else:
        if baseline_outcome is None:
            raise ValueError("missing baseline arm outcomes")
        yhat, y_base = _binary("predictions", predictions), _binary("baseline_outcome", baseline_outcome)
    if len(yhat) != len(y_base) or len(yhat) == 0:
        raise ValueError("predictions and baseline outcomes must be nonempty and aligned")
    return CausalAccuracy(float(np.mean(yhat == y_base)),
                          float(np.mean(yhat.astype(float) - y_base)))


# ----------------------------------------------------------------------------
# error-rate identity
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class IdentityResidual:
    residual: float | None
    fpr_direct: float | None = None
    ppv: float | None = None
    base_ratio: float | None = None
    tpr: float | None = None
    undefined_reason: str | None = None


def theorem1_residual(joint: Mapping[int, np.ndarray] | np.ndarray) -> dict[int, IdentityResidual]:
    """Check FPR = (1 - PPV)/PPV * P(Y=1)/P(Y=0) * TPR per arm from exact counts.

    ``joint`` maps arm -> 2x2 count array indexed ``[y, yhat]`` (a single
    array is treated as arm 0). The residual is ``FPR_direct`` minus the
    right-hand side; it vanishes on every valid table.
    """
    if isinstance(joint, np.ndarray) or not isinstance(joint, Mapping):
        joint = {0: np.asarray(joint)}
    out = {}
    for arm, counts in joint.items():
        c = np.asarray(counts, dtype=float)
        if c.shape != (2, 2):
            raise ValueError(f"arm {arm}: counts must be 2x2 indexed [y, yhat]")
        if (c < 0).any():
            raise ValueError(f"arm {arm}: negative counts")
        tn, fp, fn, tp = c[0, 0], c[0, 1], c[1, 0], c[1, 1]
        total = c.sum()
        pos, neg, pred_pos = tp + fn, tn + fp, tp + fp
        if total == 0 or pos == 0 or neg == 0:
            out[arm] = IdentityResidual(None, undefined_reason="base rate is 0 or 1")
            continue
        if tp == 0:
            out[arm] = IdentityResidual(None, undefined_reason="PPV is 0 or undefined")
            continue
        ppv = tp / pred_pos
        tpr = tp / pos
        fpr = fp / neg
        ratio = (pos / total) / (neg / total)
        rhs = (1.0 - ppv) / ppv * ratio * tpr
        out[arm] = IdentityResidual(fpr - rhs, fpr, ppv, ratio, tpr)
    return out


def joint_counts(yhat, y) -> np.ndarray:
    """2x2 count table indexed ``[y, yhat]``."""
    yhat = _binary("yhat", yhat)
    y = _binary("y", y)
    return np.bincount(2 * y.astype(int) + yhat, minlength=4).reshape(2, 2)


def report_rows(report: FairnessReport, names: Iterable[str] | None = None) -> list[tuple[str, float | None]]:
    names = list(names) if names is not None else list(report.metrics)
    return [(k, report.metrics[k].value) for k in names]
