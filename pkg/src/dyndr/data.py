"""Observational data containers, design matrices, subgroup masks and fold plans.

Row order of the input is the canonical observation index everywhere: folds,
subgroup masks and per-observation scores all refer to it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, SchemaError

TREATED = (1, 1)
CONTROL = (0, 0)


@dataclass(frozen=True)
class Observation:
    y: float
    a1: int
    a2: int
    s1: np.ndarray
    s2: np.ndarray


def _frozen(arr, dtype=float):
    out = np.array(arr, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class Dataset:
    """N observations of (Y, A1, A2, S1, S2) stored column-wise.

    Arrays are copied on construction and marked read-only.
    """

    y: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    s1: np.ndarray
    s2: np.ndarray

    def __post_init__(self):
        for name, arr in (("a1", np.asarray(self.a1, dtype=float)),
                          ("a2", np.asarray(self.a2, dtype=float))):
            bad = np.flatnonzero((arr != 0) & (arr != 1))
            if bad.size:
                raise SchemaError("treatment must be 0 or 1", row=int(bad[0]), column=name)
        y = _frozen(self.y)
        a1 = _frozen(self.a1, dtype=np.int8)
        a2 = _frozen(self.a2, dtype=np.int8)
        s1 = _frozen(self.s1)
        s2 = _frozen(self.s2)
        n = y.shape[0] if y.ndim == 1 else -1
        if n < 1:
            raise SchemaError("dataset must contain at least one observation")
        if s1.ndim != 2 or s2.ndim != 2:
            raise SchemaError("covariate blocks must be two-dimensional")
        for name, arr in (("a1", a1), ("a2", a2), ("s1", s1), ("s2", s2)):
            if arr.shape[0] != n:
                raise SchemaError(f"{name} has {arr.shape[0]} rows, expected {n}")
        if s1.shape[1] < 1 or s2.shape[1] < 1:
            raise SchemaError("both covariate blocks need at least one column")
        for name, arr in (("y", y), ("s1", s1), ("s2", s2)):
            bad = ~np.isfinite(arr)
            if bad.any():
                row = int(np.argwhere(bad)[0][0])
                raise SchemaError("non-finite value", row=row, column=name)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "a1", a1)
        object.__setattr__(self, "a2", a2)
        object.__setattr__(self, "s1", s1)
        object.__setattr__(self, "s2", s2)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def d1(self) -> int:
        return self.s1.shape[1]

    @property
    def d2(self) -> int:
        return self.s2.shape[1]

    def observation(self, i: int) -> Observation:
        return Observation(float(self.y[i]), int(self.a1[i]), int(self.a2[i]),
                           self.s1[i], self.s2[i])

    @property
    def observations(self) -> list[Observation]:
        return [self.observation(i) for i in range(self.n)]

    @cached_property
    def design(self) -> "DesignMatrices":
        return build_design_matrices(self)

    def with_outcome(self, y) -> "Dataset":
        """Copy with a replaced outcome vector (treatments and covariates kept)."""
        return Dataset(y, self.a1, self.a2, self.s1, self.s2)


@dataclass(frozen=True)
class Schema:
    """Column names for one CSV layout."""

    y: str
    a1: str
    a2: str
    s1: Sequence[str]
    s2: Sequence[str]

    def __post_init__(self):
        object.__setattr__(self, "s1", tuple(self.s1))
        object.__setattr__(self, "s2", tuple(self.s2))
        if not self.s1 or not self.s2:
            raise ConfigError("schema needs at least one column in each covariate block")


def _parse_float(value, row, column):
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise SchemaError(f"cannot parse {value!r} as a number", row=row, column=column) from None
    if not np.isfinite(out):
        raise SchemaError("non-finite value", row=row, column=column)
    return out


def _parse_binary(value, row, column):
    out = _parse_float(value, row, column)
    if out not in (0.0, 1.0):
        raise SchemaError(f"treatment must be 0 or 1, got {value!r}", row=row, column=column)
    return int(out)


def load_dataset(rows: Iterable[Mapping[str, object]], schema: Schema) -> Dataset:
    """Build a Dataset from dict-like records, preserving row order."""
    ys, a1s, a2s, s1s, s2s = [], [], [], [], []
    for i, row in enumerate(rows):
        for col in (schema.y, schema.a1, schema.a2, *schema.s1, *schema.s2):
            if col not in row or row[col] is None:
                raise SchemaError("missing value", row=i, column=col)
        ys.append(_parse_float(row[schema.y], i, schema.y))
        a1s.append(_parse_binary(row[schema.a1], i, schema.a1))
        a2s.append(_parse_binary(row[schema.a2], i, schema.a2))
        s1s.append([_parse_float(row[c], i, c) for c in schema.s1])
        s2s.append([_parse_float(row[c], i, c) for c in schema.s2])
    if not ys:
        raise SchemaError("dataset must contain at least one observation")
    return Dataset(np.array(ys), np.array(a1s), np.array(a2s),
                   np.array(s1s).reshape(len(ys), -1), np.array(s2s).reshape(len(ys), -1))


def read_csv(path, schema: Schema) -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in (schema.y, schema.a1, schema.a2, *schema.s1, *schema.s2):
            if col not in header:
                raise SchemaError("column not found in header", column=col)
        return load_dataset(reader, schema)


def write_csv(path, ds: Dataset) -> Schema:
    """Write a dataset with generated column names; returns the matching schema."""
    schema = Schema("y", "a1", "a2",
                    [f"s1_{j + 1}" for j in range(ds.d1)],
                    [f"s2_{j + 1}" for j in range(ds.d2)])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([schema.y, schema.a1, schema.a2, *schema.s1, *schema.s2])
        for i in range(ds.n):
            w.writerow([repr(float(ds.y[i])), int(ds.a1[i]), int(ds.a2[i]),
                        *map(repr, ds.s1[i].tolist()), *map(repr, ds.s2[i].tolist())])
    return schema


@dataclass(frozen=True, eq=False)
class DesignMatrices:
    u: np.ndarray  # (1, S1, S2)
    v: np.ndarray  # (1, S1)


def build_design_matrices(ds: Dataset) -> DesignMatrices:
    ones = np.ones((ds.n, 1))
    u = np.hstack([ones, ds.s1, ds.s2])
    u.flags.writeable = False
    v = u[:, : ds.d1 + 1]
    return DesignMatrices(u=u, v=v)


def subgroup_indices(ds: Dataset, a1: int | None = None, a2: int | None = None) -> np.ndarray:
    """Sorted indices of the full sample, an arm (a1 only) or a path (a1 and a2)."""
    if a1 is None:
        if a2 is not None:
            raise ConfigError("a path filter needs a1 as well as a2")
        return np.arange(ds.n)
    mask = ds.a1 == a1
    if a2 is not None:
        mask &= ds.a2 == a2
    return np.flatnonzero(mask)


@dataclass(frozen=True, eq=False)
class FoldPlan:
    k: int
    assignment: np.ndarray
    seed: int

    def fold(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == j)

    def complement(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != j)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.k)


def make_folds(n: int, k: int, seed: int) -> FoldPlan:
    """Random partition of range(n) into k folds whose sizes differ by at most one."""
    if k < 2 or k > n:
        raise ConfigError(f"fold count must satisfy 2 <= k <= n, got k={k}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    assignment[perm] = np.arange(n) % k
    assignment.flags.writeable = False
    return FoldPlan(k=k, assignment=assignment, seed=seed)
