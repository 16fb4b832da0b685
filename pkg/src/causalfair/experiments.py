"""Parameter sweeps over the hiring cohort and the mitigation benchmark.

Every (grid cell, repeat) pair gets its own seed derived from the master
seed, the cell index and the repeat index, so results do not depend on
execution order or on the number of worker processes.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Mapping, Sequence

import numpy as np

from .counterfactual import StageSpec, impute_sequential, total_effect
from .dgp import HiringParams, generate, mix_seed, oracle_effects
from .mitigation import (METHOD_NAMES, MitigationMethod, hiring_benchmark, train_mitigated)
from .models import TrainConfig

EVALUATORS = ("causal_pre", "causal_post", "statistical")
PLOT_COLUMNS = ("alpha", "beta", "gamma", "evaluator", "metric", "mean", "ci_lo", "ci_hi")
BENCHMARK_COLUMNS = ("method", "domain", "metric_family", "metric", "value", "ci_lo", "ci_hi",
                     "accuracy")
Z95 = 1.96

PLOT_JSON_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["columns", "rows"],
    "additionalProperties": False,
    "properties": {
        "columns": {"const": list(PLOT_COLUMNS)},
        "rows": {
            "type": "array",
            "items": {
                "type": "object",
                "required": list(PLOT_COLUMNS),
                "additionalProperties": False,
                "properties": {
                    "alpha": {"type": "number"},
                    "beta": {"type": "number"},
                    "gamma": {"type": "number"},
                    "evaluator": {"enum": list(EVALUATORS)},
                    "metric": {"type": "string"},
                    "mean": {"type": "number"},
                    "ci_lo": {"type": ["number", "null"]},
                    "ci_hi": {"type": ["number", "null"]},
                },
            },
        },
    },
}


def seed_for(master_seed: int, *keys: int) -> int:
    """64-bit integer seed for a sub-task."""
    return int(mix_seed(master_seed, *keys).generate_state(1, np.uint64)[0])


def _default_betas() -> tuple[float, ...]:
    return tuple(0.125 * k for k in range(9))


@dataclass(frozen=True)
class SweepConfig:
    alphas: tuple[float, ...] = (-0.5, 0.0, 0.5)
    betas: tuple[float, ...] = field(default_factory=_default_betas)
    gammas: tuple[float, ...] = (0.2,)
    n: int = 100_000
    repeats: int = 20
    master_seed: int = 0
    evaluators: tuple[str, ...] = EVALUATORS
    M: int = 10
    p_group1: float = 0.75
    workers: int = 1

    def __post_init__(self):
        for name in ("alphas", "betas", "gammas", "evaluators"):
            value = getattr(self, name)
            if isinstance(value, (int, float, str)):
                value = (value,)
            if name != "evaluators":
                value = (float(v) for v in value)
            object.__setattr__(self, name, tuple(value))
            if not getattr(self, name):
                raise ValueError(f"{name} must be nonempty")
        bad = [e for e in self.evaluators if e not in EVALUATORS]
        if bad:
            raise ValueError(f"unknown evaluator(s) {bad}; valid: {', '.join(EVALUATORS)}")
        if self.repeats < 1 or self.n < 1 or self.M < 1 or self.workers < 1:
            raise ValueError("n, repeats, M and workers must be positive")
        if any(b < 0 for b in self.betas) or any(g < 0 for g in self.gammas):
            raise ValueError("betas and gammas must be >= 0")

    @classmethod
    def from_mapping(cls, doc: Mapping) -> "SweepConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ValueError(f"unknown sweep config key(s): {', '.join(unknown)}")
        return cls(**dict(doc))

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    def cells(self) -> list[tuple[float, float, float]]:
        return list(itertools.product(self.alphas, self.betas, self.gammas))


@dataclass(frozen=True)
class SweepRow:
    alpha: float
    beta: float
    gamma: float
    evaluator: str
    metric: str
    mean: float
    ci_lo: float | None
    ci_hi: float | None

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, c) for c in PLOT_COLUMNS)


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]
    failures: tuple[dict, ...] = ()

    def select(self, **where) -> list[SweepRow]:
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in where.items())]

    def value(self, alpha, beta, gamma, evaluator, metric="parity") -> float:
        hits = self.select(alpha=alpha, beta=beta, gamma=gamma, evaluator=evaluator, metric=metric)
        if len(hits) != 1:
            raise KeyError((alpha, beta, gamma, evaluator, metric))
        return hits[0].mean


_HIRING_PRE = (StageSpec("interview", "s", ("x",)), StageSpec("hire", "y", ("x", "s")))
_HIRING_POST = (StageSpec("hire", "y", ("x", "s")),)


def evaluate_cell(params: HiringParams, evaluators: Sequence[str], M: int = 10) -> dict:
    """Data-level parity estimates for one cohort.

    Returns ``{(evaluator, metric): value}``. Causal evaluators report the
    imputed total effect as ``parity`` and the ground truth from the stored
    potential outcomes as ``oracle_parity``.
    """
    cohort = generate(params)
    oracle = oracle_effects(cohort)
    out = {}
    if "statistical" in evaluators:
        out[("statistical", "parity")] = oracle.statistical_parity_data
    if "causal_pre" in evaluators or "causal_post" in evaluators:
        table = cohort.to_table()
        pre = impute_sequential(table, _HIRING_PRE, M=M, seed=params.seed)
        if "causal_pre" in evaluators:
            out[("causal_pre", "parity")] = total_effect(pre).estimate
            out[("causal_pre", "oracle_parity")] = oracle.causal_parity_pre
        if "causal_post" in evaluators:
            post = impute_sequential(table, _HIRING_POST, M=M, seed=params.seed,
                                     prefit={"hire": pre.models["hire"]})
            out[("causal_post", "parity")] = total_effect(post).estimate
            out[("causal_post", "oracle_parity")] = oracle.causal_parity_post
    return out


def _run_task(task):
    cell_idx, rep, params, evaluators, M = task
    try:
        return cell_idx, rep, evaluate_cell(params, evaluators, M), None
    except Exception as exc:  # reported per cell, the sweep continues
        return cell_idx, rep, None, f"{type(exc).__name__}: {exc}"


def _interval(values: Sequence[float]):
    mean = float(np.mean(values))
    if len(values) < 2:
        return mean, None, None
    half = Z95 * float(np.std(values, ddof=1)) / math.sqrt(len(values))
    return mean, mean - half, mean + half


def run_evaluation_sweep(config: SweepConfig) -> SweepResult:
    """Run every grid cell ``repeats`` times and aggregate with normal-approximation CIs.

    Cells run in a pool of ``config.workers`` processes (in-process when 1).
    A failed run is recorded in ``failures``; the cell's statistics use the
    remaining repeats.
    """
    cells = config.cells()
    tasks = []
    for ci, (alpha, beta, gamma) in enumerate(cells):
        for rep in range(config.repeats):
            params = HiringParams(alpha=alpha, beta=beta, gamma=gamma, p_group1=config.p_group1,
                                  n=config.n, seed=seed_for(config.master_seed, ci, rep))
            tasks.append((ci, rep, params, config.evaluators, config.M))
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * config.workers))))
    else:
        results = [_run_task(t) for t in tasks]

    collected: dict[tuple, dict[int, float]] = {}
    failures = []
    for ci, rep, values, error in results:
        if error is not None:
            alpha, beta, gamma = cells[ci]
            failures.append({"alpha": alpha, "beta": beta, "gamma": gamma, "repeat": rep,
                             "error": error})
            continue
        for key, v in values.items():
            collected.setdefault((ci, *key), {})[rep] = v
    rows = []
    for (ci, evaluator, metric), by_rep in collected.items():
        alpha, beta, gamma = cells[ci]
        mean, lo, hi = _interval([by_rep[r] for r in sorted(by_rep)])
        rows.append(SweepRow(float(alpha), float(beta), float(gamma), evaluator, metric, mean, lo, hi))
    rows.sort(key=lambda r: (r.alpha, r.beta, r.gamma, r.evaluator, r.metric))
    return SweepResult(tuple(rows), tuple(failures))


# ----------------------------------------------------------------------------
# plot data
# ----------------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    return repr(float(v))


def emit_plot_data(result: SweepResult, path, format: str = "csv") -> None:
    """Write sweep rows ordered by (alpha, beta, gamma, evaluator, metric)."""
    rows = sorted(result.rows, key=lambda r: (r.alpha, r.beta, r.gamma, r.evaluator, r.metric))
    if format == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(PLOT_COLUMNS)
            for r in rows:
                writer.writerow([_fmt(v) for v in r.as_tuple()])
    elif format == "json":
        doc = {"columns": list(PLOT_COLUMNS), "rows": [asdict(r) for r in rows]}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")
    else:
        raise ValueError(f"unknown plot data format {format!r}; use 'csv' or 'json'")


def read_plot_data(path) -> SweepResult:
    """Read a file written by :func:`emit_plot_data` (format from the extension)."""
    if str(path).endswith(".json"):
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        return SweepResult(tuple(SweepRow(**r) for r in doc["rows"]))
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != PLOT_COLUMNS:
            raise ValueError(f"{path}: plot header must be {','.join(PLOT_COLUMNS)}")
        rows = []
        for rec in reader:
            a, b, g, ev, metric, mean, lo, hi = rec
            rows.append(SweepRow(float(a), float(b), float(g), ev, metric, float(mean),
                                 float(lo) if lo else None, float(hi) if hi else None))
    return SweepResult(tuple(rows))


# ----------------------------------------------------------------------------
# mitigation benchmark
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class BenchmarkRow:
    method: str
    domain: str
    metric_family: str
    metric: str
    value: float | None
    ci_lo: float | None = None
    ci_hi: float | None = None
    accuracy: float | None = None


@dataclass(frozen=True)
class BenchmarkTable:
    rows: tuple[BenchmarkRow, ...]
    params: HiringParams

    def get(self, method: str, metric: str, metric_family: str | None = None) -> BenchmarkRow:
        for r in self.rows:
            if r.method == method and r.metric == metric and metric_family in (None, r.metric_family):
                return r
        raise KeyError((method, metric, metric_family))

    def value(self, method: str, metric: str, metric_family: str | None = None) -> float | None:
        return self.get(method, metric, metric_family).value


def _benchmark_once(params: HiringParams, methods, M, baseline_arm, model_config) -> dict:
    data = hiring_benchmark(params, M=M)
    oracle = oracle_effects(data.cohort)
    out: dict[tuple[str, str, str], tuple[float | None, float | None]] = {
        ("data", "causal", "causal_parity_pre"): (total_effect(data.imputed_pre).estimate, None),
        ("data", "causal", "causal_parity_post"): (total_effect(data.imputed_post).estimate, None),
        ("data", "oracle", "causal_parity_pre"): (oracle.causal_parity_pre, None),
        ("data", "oracle", "causal_parity_post"): (oracle.causal_parity_post, None),
        ("data", "statistical", "parity"): (oracle.statistical_parity_data, None),
    }
    for name in methods:
        method = MitigationMethod.from_name(name, baseline_arm=baseline_arm)
        res = train_mitigated(data, method, model_config)
        acc = res.accuracy
        for family, report in (("statistical", res.stat), ("causal", res.causal)):
            for metric, mv in report.metrics.items():
                out[(method.name, family, metric)] = (mv.value, acc)
        out[(method.name, "causal_accuracy", "agreement")] = (res.causal_accuracy.agreement, acc)
        out[(method.name, "causal_accuracy", "signed_gap")] = (res.causal_accuracy.signed_gap, acc)
    return out


def run_mitigation_benchmark(params: HiringParams | None = None, methods: Iterable[str] = METHOD_NAMES,
                             M: int = 10, repeats: int = 1, baseline_arm: int = 0,
                             model_config: TrainConfig | None = None,
                             domain: str = "hiring") -> BenchmarkTable:
    """Train and evaluate each method on the hiring cohort.

    With ``repeats > 1`` each repeat draws a fresh cohort (seeded from
    ``params.seed`` and the repeat index) and values are reported as
    means with normal-approximation 95% intervals.
    """
    params = params or HiringParams()
    methods = [MitigationMethod.from_name(m).name for m in methods]
    runs = []
    for rep in range(repeats):
        p = params if repeats == 1 else HiringParams(**{**asdict(params), "seed": seed_for(params.seed, rep)})
        runs.append(_benchmark_once(p, methods, M, baseline_arm, model_config))
    rows = []
    for key in runs[0]:
        method, family, metric = key
        vals = [r[key][0] for r in runs]
        accs = [r[key][1] for r in runs]
        if any(v is None for v in vals):
            value, lo, hi = None, None, None
        else:
            value, lo, hi = _interval(vals)
        acc = None if accs[0] is None else float(np.mean(accs))
        rows.append(BenchmarkRow(method, domain, family, metric, value, lo, hi, acc))
    return BenchmarkTable(tuple(rows), params)


def write_benchmark_csv(table: BenchmarkTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(BENCHMARK_COLUMNS)
        for r in table.rows:
            writer.writerow([_fmt(getattr(r, c)) for c in BENCHMARK_COLUMNS])


def read_benchmark_csv(path) -> list[BenchmarkRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != BENCHMARK_COLUMNS:
            raise ValueError(f"{path}: benchmark header must be {','.join(BENCHMARK_COLUMNS)}")
        out = []
        for rec in reader:
            num = [float(v) if v else None for v in rec[4:]]
            out.append(BenchmarkRow(rec[0], rec[1], rec[2], rec[3], *num))
    return out
