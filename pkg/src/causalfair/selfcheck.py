"""Numerical self-checks run by ``causalfair selfcheck``.

Three suites: the error-rate identity on random count tables, analytic
versus finite-difference gradients, and exact group-label independence
after reweighing. Each suite returns a :class:`SuiteResult`; a failing
suite carries the first failing case in serialisable form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fairness import theorem1_residual
from .mitigation import reweigh
from .models import (GlmModel, MlpModel, TrainConfig, _init_mlp, loss_and_gradient)

IDENTITY_TOL = 1e-12
GRADIENT_RTOL = 1e-5
REWEIGH_TOL = 1e-12


@dataclass
class SuiteResult:
    name: str
    passed: bool
    n_cases: int
    worst: float
    failure: dict | None = field(default=None)

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "n_cases": self.n_cases,
                "worst": self.worst, "failure": self.failure}


def random_count_tables(rng, n_tables: int):
    """Valid 2x2 ``[y, yhat]`` tables with a positive true-positive cell and
    both outcome classes present."""
    tables = []
    while len(tables) < n_tables:
        c = rng.integers(0, rng.choice([5, 100, 10_000]), size=(2, 2))
        if c[1, 1] > 0 and c[0].sum() > 0:
            tables.append(c)
    return tables


BOUNDARY_TABLES = {
    "perfect": np.array([[40, 0], [0, 60]]),
    "constant_positive": np.array([[0, 40], [0, 60]]),
    "all_negatives_predicted_positive": np.array([[0, 25], [10, 5]]),
    "single_true_positive": np.array([[999, 0], [0, 1]]),
}


def check_identity(n_tables: int = 1000, seed: int = 0) -> SuiteResult:
    rng = np.random.default_rng(seed)
    cases = [(f"random_{i}", t) for i, t in enumerate(random_count_tables(rng, n_tables))]
    cases += list(BOUNDARY_TABLES.items())
    worst = 0.0
    for label, table in cases:
        res = theorem1_residual({0: table})
        for arm, r in res.items():
            err = np.inf if r.residual is None else abs(r.residual)
            worst = max(worst, err)
            if not err < IDENTITY_TOL:
                return SuiteResult("theorem1", False, len(cases), worst,
                                   {"case": label, "arm": arm, "counts": table.tolist(),
                                    "residual": r.residual, "reason": r.undefined_reason})
    return SuiteResult("theorem1", True, len(cases), worst)


def _finite_difference(model, X, y, config, group, h=1e-6):
    theta = model.params()
    grad = np.empty_like(theta)
    for i in range(theta.size):
        step = np.zeros_like(theta)
        step[i] = h
        f_plus, _ = loss_and_gradient(model.with_params(theta + step), X, y, config, group)
        f_minus, _ = loss_and_gradient(model.with_params(theta - step), X, y, config, group)
        grad[i] = (f_plus - f_minus) / (2 * h)
    return grad


def _relative_error(analytic, numeric) -> float:
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def check_gradients(n_instances: int = 3, seed: int = 0) -> SuiteResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    n_cases = 0
    for i in range(n_instances):
        n, p = 40, 4
        X = rng.normal(size=(n, p))
        y = (rng.random(n) < 0.5).astype(float)
        group = (rng.random(n) < 0.5).astype(int)
        weights = rng.uniform(0.5, 2.0, size=n)
        instances = []
        for eta in (0.0, 1.0):
            cfg = TrainConfig(l2=0.01, pr_eta=eta, sample_weights=weights)
            glm = GlmModel(rng.normal(scale=0.5, size=p), float(rng.normal()), (), config=cfg)
            instances.append((f"logistic_eta{eta:g}", glm, cfg))
        cfg = TrainConfig(l2=0.01, sample_weights=weights)
        w_, b_ = _init_mlp((p, 8, 8, 1), rng)
        b_ = [rng.normal(scale=0.1, size=b.shape) for b in b_]
        instances.append(("mlp_8_8", MlpModel((p, 8, 8, 1), tuple(w_), tuple(b_), config=cfg), cfg))
        for label, model, cfg in instances:
            n_cases += 1
            _, analytic = loss_and_gradient(model, X, y, cfg, group)
            numeric = _finite_difference(model, X, y, cfg, group)
            err = _relative_error(np.asarray(analytic), numeric)
            worst = max(worst, err)
            if not err < GRADIENT_RTOL:
                return SuiteResult("gradient", False, n_cases, worst,
                                   {"case": f"{label}_instance{i}", "relative_error": err,
                                    "analytic": np.asarray(analytic).tolist(),
                                    "numeric": numeric.tolist()})
    return SuiteResult("gradient", True, n_cases, worst)


def check_reweigh(n_tables: int = 100, seed: int = 0) -> SuiteResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    done = 0
    while done < n_tables:
        n = int(rng.integers(8, 500))
        g = (rng.random(n) < rng.uniform(0.1, 0.9)).astype(int)
        y = (rng.random(n) < rng.uniform(0.1, 0.9)).astype(int)
        if any(((g == a) & (y == v)).sum() == 0 for a in (0, 1) for v in (0, 1)):
            continue
        done += 1
        w = reweigh(g, y)
        rates = [np.sum(w * y * (g == a)) / np.sum(w * (g == a)) for a in (0, 1)]
        err = abs(rates[1] - rates[0])
        worst = max(worst, err)
        if not err < REWEIGH_TOL:
            return SuiteResult("reweigh", False, done, worst,
                               {"case": done - 1, "group": g.tolist(), "labels": y.tolist(),
                                "gap": err})
    return SuiteResult("reweigh", True, done, worst)


def run_selfcheck(seed: int = 0) -> list[SuiteResult]:
    return [check_identity(seed=seed), check_gradients(seed=seed), check_reweigh(seed=seed)]
