"""Stylized two-stage hiring cohort with both potential-outcome arms.

Each candidate has a group ``a`` (1 = majority), a qualification ``x``, an
interview score ``s`` and a hiring decision ``y``::

    a ~ Bernoulli(p_group1)
    x ~ Normal(2 * alpha * (a - 0.5), 1)
    P(S(a') = 1) = sigmoid(2x + 2 * beta * (a' - 0.5))
    P(Y(a', s) = 1) = sigmoid(2x + s + 2 * gamma * (a' - 0.5))

Two outcome arms are stored per candidate. The *pre* arms ``Y(a', S(a'))``
let the score respond to the group as well; the *post* arms
``Y(a', s_obs)`` hold the observed score fixed.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .tabular import ColumnSpec, DataTable, SchemaError

COHORT_COLUMNS = ("id", "a", "x", "s0", "s1", "y0_pre", "y1_pre", "y0_post", "y1_post", "s", "y")
_BINARY_COLUMNS = COHORT_COLUMNS[3:]


def mix_seed(master_seed: int, *keys: int) -> np.random.SeedSequence:
    """Seed stream for a sub-task, derived only from ``master_seed`` and ``keys``.

    Used wherever work is split into cells so that results do not depend on
    the order or the process in which cells run.
    """
    return np.random.SeedSequence(entropy=int(master_seed) & (2**64 - 1),
                                  spawn_key=tuple(int(k) for k in keys))


@dataclass(frozen=True)
class HiringParams:
    alpha: float = 0.0
    beta: float = 0.25
    gamma: float = 0.2
    p_group1: float = 0.75
    n: int = 100_000
    seed: int = 0
    coupling: str = "shared"

    def __post_init__(self):
        if not 0.0 < self.p_group1 < 1.0:
            raise ValueError(f"p_group1 must lie in (0, 1), got {self.p_group1}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.coupling not in ("shared", "independent"):
            raise ValueError(f"coupling must be 'shared' or 'independent', got {self.coupling!r}")


@dataclass(frozen=True, eq=False)
class SyntheticCohort:
    id: np.ndarray
    a: np.ndarray
    x: np.ndarray
    s0: np.ndarray
    s1: np.ndarray
    y0_pre: np.ndarray
    y1_pre: np.ndarray
    y0_post: np.ndarray
    y1_post: np.ndarray
    s: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        n = len(self.id)
        for name in COHORT_COLUMNS:
            arr = np.array(getattr(self, name), copy=True)
            if arr.shape != (n,):
                raise SchemaError(f"cohort column {name!r} has shape {arr.shape}, expected ({n},)")
            if name in _BINARY_COLUMNS or name in ("a", "id"):
                arr = arr.astype(np.int64)
            else:
                arr = arr.astype(float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return len(self.id)

    def __eq__(self, other):
        if not isinstance(other, SyntheticCohort):
            return NotImplemented
        return all(np.array_equal(getattr(self, c), getattr(other, c)) for c in COHORT_COLUMNS)

    def to_table(self, include_arms: bool = False) -> DataTable:
        """Observed view of the cohort as a :class:`DataTable`.

        With ``include_arms`` the potential-outcome columns are carried along
        with role ``outcome``.
        """
        cols = [
            ColumnSpec("id", "numeric", "id"),
            ColumnSpec("a", "binary", "group"),
            ColumnSpec("x", "numeric", "pre_treatment"),
            ColumnSpec("s", "binary", "post_treatment"),
            ColumnSpec("y", "binary", "outcome"),
        ]
        if include_arms:
            cols += [ColumnSpec(c, "binary", "outcome") for c in COHORT_COLUMNS[3:9]]
        return DataTable(cols, {c.name: getattr(self, c.name) for c in cols})


def generate(params: HiringParams) -> SyntheticCohort:
    """Draw a cohort. Identical ``params`` give an identical cohort."""
    rng = np.random.Generator(np.random.PCG64(mix_seed(params.seed)))
    n = int(params.n)
    a = (rng.random(n) < params.p_group1).astype(np.int64)
    x = rng.normal(2.0 * params.alpha * (a - 0.5), 1.0)
    u_s = rng.random(n)
    u_y = rng.random(n)
    if params.coupling == "shared":
        u_s1, u_y1 = u_s, u_y
    else:
        u_s1 = rng.random(n)
        u_y1 = rng.random(n)

    def score(arm, u):
        return (u < expit(2.0 * x + 2.0 * params.beta * (arm - 0.5))).astype(np.int64)

    def outcome(arm, s, u):
        return (u < expit(2.0 * x + s + 2.0 * params.gamma * (arm - 0.5))).astype(np.int64)

    s0 = score(0, u_s)
    s1 = score(1, u_s1)
    s = np.where(a == 1, s1, s0)
    y0_pre = outcome(0, s0, u_y)
    y1_pre = outcome(1, s1, u_y1)
    y0_post = outcome(0, s, u_y)
    y1_post = outcome(1, s, u_y1)
    y = np.where(a == 1, y1_pre, y0_pre)
    return SyntheticCohort(
        id=np.arange(n), a=a, x=x, s0=s0, s1=s1,
        y0_pre=y0_pre, y1_pre=y1_pre, y0_post=y0_post, y1_post=y1_post, s=s, y=y,
    )


@dataclass(frozen=True)
class OracleEffects:
    causal_parity_pre: float
    causal_parity_post: float
    statistical_parity_data: float


def oracle_effects(cohort: SyntheticCohort) -> OracleEffects:
    """Ground-truth effects computed from the stored potential outcomes."""
    g1 = cohort.a == 1
    if not g1.any() or g1.all():
        raise ValueError("statistical parity is undefined: one group is empty")
    return OracleEffects(
        causal_parity_pre=float(np.mean(cohort.y1_pre - cohort.y0_pre)),
        causal_parity_post=float(np.mean(cohort.y1_post - cohort.y0_post)),
        statistical_parity_data=float(cohort.y[g1].mean() - cohort.y[~g1].mean()),
    )


def write_cohort_csv(cohort: SyntheticCohort, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COHORT_COLUMNS)
        cols = [getattr(cohort, c) for c in COHORT_COLUMNS]
        x = cohort.x
        for i in range(cohort.n):
            row = [str(int(c[i])) for c in cols]
            row[2] = repr(float(x[i]))
            writer.writerow(row)


def read_cohort_csv(path) -> SyntheticCohort:
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != COHORT_COLUMNS:
            raise SchemaError(f"{path}: cohort header must be {','.join(COHORT_COLUMNS)}, got {header}")
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{path}: cohort file has no data rows")
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(COHORT_COLUMNS):
            raise SchemaError(f"{path}:{lineno}: expected {len(COHORT_COLUMNS)} fields, got {len(row)}")
    cols = list(zip(*rows))
    try:
        data = {name: np.array(col, dtype=float) for name, col in zip(COHORT_COLUMNS, cols)}
    except ValueError as exc:
        raise SchemaError(f"{path}: unparseable cell ({exc})") from None
    for name in _BINARY_COLUMNS + ("a",):
        if not np.isin(data[name], (0.0, 1.0)).all():
            raise SchemaError(f"{path}: column {name!r} is not binary")
    return SyntheticCohort(**data)
