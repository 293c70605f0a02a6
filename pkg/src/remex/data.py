"""Datasets: ingestion, empirical marginals and synthetic Gaussian-linear data."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .core import FeatureSubset, as_subset
from .errors import (
    EmptyBackground,
    EmptyDataset,
    InvalidDistribution,
    NotPositiveDefinite,
    ParseError,
    SchemaMismatch,
)

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"
_KINDS = (CONTINUOUS, CATEGORICAL)


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str = CONTINUOUS

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise SchemaMismatch(f"column {self.name!r}: kind must be one of {_KINDS}, got {self.kind!r}")


@dataclass(frozen=True)
class DatasetSchema:
    columns: tuple[ColumnSpec, ...]
    label: str | None = None

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaMismatch("duplicate column names in schema")
        if self.label is not None and self.label not in names:
            raise SchemaMismatch(f"label column {self.label!r} is not in the schema")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @classmethod
    def from_dict(cls, doc: dict) -> DatasetSchema:
        try:
            cols = tuple(ColumnSpec(c["name"], c.get("kind", CONTINUOUS)) for c in doc["columns"])
        except (KeyError, TypeError) as exc:
            raise SchemaMismatch(f"malformed schema document: {exc}") from None
        return cls(cols, doc.get("label"))

    def to_dict(self) -> dict:
        doc: dict = {"columns": [{"name": c.name, "kind": c.kind} for c in self.columns]}
        if self.label is not None:
            doc["label"] = self.label
        return doc


def load_schema(path) -> DatasetSchema:
    with open(path) as fh:
        return DatasetSchema.from_dict(json.load(fh))


@dataclass
class BackgroundData:
    """Empirical stand-in for the feature distribution (``n x d`` rows)."""

    rows: np.ndarray
    column_kinds: tuple[str, ...] = ()

    def __post_init__(self):
        self.rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        if self.rows.shape[0] == 0 or self.rows.size == 0:
            raise EmptyBackground("background data needs at least one row")
        if not np.all(np.isfinite(self.rows)):
            raise ValueError("background data contains non-finite entries")
        if not self.column_kinds:
            self.column_kinds = (CONTINUOUS,) * self.dim
        self.column_kinds = tuple(self.column_kinds)
        if len(self.column_kinds) != self.dim:
            raise SchemaMismatch("one column kind per feature is required")

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    @property
    def n(self) -> int:
        return self.rows.shape[0]


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray | None = None
    label_distribution: np.ndarray | None = None
    column_kinds: tuple[str, ...] = ()
    feature_names: tuple[str, ...] = ()
    label_kind: str = CONTINUOUS
    categories: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=float))
        n, d = self.features.shape
        if not self.column_kinds:
            self.column_kinds = (CONTINUOUS,) * d
        if not self.feature_names:
            self.feature_names = tuple(f"x{i}" for i in range(d))
        self.column_kinds = tuple(self.column_kinds)
        self.feature_names = tuple(self.feature_names)
        if len(self.column_kinds) != d or len(self.feature_names) != d:
            raise SchemaMismatch("column kinds and names must match the feature count")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=float).reshape(-1)
            if self.labels.shape[0] != n:
                raise SchemaMismatch("one label per row is required")
        if self.label_distribution is not None:
            dist = np.atleast_2d(np.asarray(self.label_distribution, dtype=float))
            if dist.shape[0] != n:
                raise SchemaMismatch("one label distribution per row is required")
            if np.any(dist < 0) or np.any(np.abs(dist.sum(axis=1) - 1.0) > 1e-9):
                raise InvalidDistribution("label distributions must be nonnegative and sum to 1")
            self.label_distribution = dist

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        if self.label_distribution is not None:
            return self.label_distribution.shape[1]
        if self.labels is None:
            return 0
        return int(self.labels.max()) + 1

    def background(self) -> BackgroundData:
        return BackgroundData(self.features, self.column_kinds)

    def subset_columns(self, s: FeatureSubset | Sequence[int]) -> LabeledDataset:
        idx = list(as_subset(s, self.dim).indices()) if isinstance(s, FeatureSubset) else list(s)
        return LabeledDataset(
            self.features[:, idx],
            self.labels,
            self.label_distribution,
            tuple(self.column_kinds[i] for i in idx),
            tuple(self.feature_names[i] for i in idx),
            self.label_kind,
        )


# CSV ingestion -----------------------------------------------------------


def _parse_float(token: str, row: int, column: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"row {row}, column {column!r}: cannot parse {token!r} as a number", row, column) from None
    if not np.isfinite(value):
        raise ParseError(f"row {row}, column {column!r}: non-finite value {token!r}", row, column)
    return value


def load_csv(path, schema: DatasetSchema) -> LabeledDataset:
    """Read a comma-separated file described by ``schema``.

    The header row is optional; it is recognised when it matches the schema's
    column names. Categorical columns are integer-coded in order of first
    appearance. Row numbers in errors are 1-based file lines.
    """
    with open(path, newline="") as fh:
        records = list(csv.reader(fh))
    names = schema.names
    start = 0
    if records and [t.strip() for t in records[0]] == names:
        start = 1
    records = [(i + 1, r) for i, r in enumerate(records) if i >= start and r]
    if not records:
        raise EmptyDataset(f"{path}: no data rows")

    columns: list[list[float]] = [[] for _ in names]
    codes: list[dict[str, int]] = [{} for _ in names]
    for lineno, rec in records:
        if len(rec) != len(names):
            raise SchemaMismatch(f"row {lineno}: expected {len(names)} fields, found {len(rec)}")
        for j, (spec, token) in enumerate(zip(schema.columns, rec)):
            token = token.strip()
            if token == "":
                raise ParseError(f"row {lineno}, column {spec.name!r}: missing value", lineno, spec.name)
            if spec.kind == CATEGORICAL:
                columns[j].append(codes[j].setdefault(token, len(codes[j])))
            else:
                columns[j].append(_parse_float(token, lineno, spec.name))

    feat_idx = [j for j, c in enumerate(schema.columns) if c.name != schema.label]
    features = np.array([columns[j] for j in feat_idx], dtype=float).T.reshape(len(records), len(feat_idx))
    labels = None
    label_kind = CONTINUOUS
    if schema.label is not None:
        j = names.index(schema.label)
        labels = np.array(columns[j], dtype=float)
        label_kind = schema.columns[j].kind
    categories = {schema.columns[j].name: list(codes[j]) for j in range(len(names)) if codes[j]}
    return LabeledDataset(
        features,
        labels,
        column_kinds=tuple(schema.columns[j].kind for j in feat_idx),
        feature_names=tuple(names[j] for j in feat_idx),
        label_kind=label_kind,
        categories=categories,
    )


def write_csv(path, data: LabeledDataset, label_name: str = "y", header: bool = True) -> DatasetSchema:
    """Write ``data`` so that ``load_csv`` reproduces it bit-exactly; returns the schema."""

    def fmt(v: float, kind: str) -> str:
        return str(int(v)) if kind == CATEGORICAL else repr(float(v))

    cols = [ColumnSpec(n, k) for n, k in zip(data.feature_names, data.column_kinds)]
    if data.labels is not None:
        cols.append(ColumnSpec(label_name, data.label_kind))
    schema = DatasetSchema(tuple(cols), label_name if data.labels is not None else None)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow(schema.names)
        for r in range(data.n):
            row = [fmt(v, k) for v, k in zip(data.features[r], data.column_kinds)]
            if data.labels is not None:
                row.append(fmt(data.labels[r], data.label_kind))
            w.writerow(row)
    return schema


# Empirical marginals -----------------------------------------------------


@dataclass(frozen=True)
class CategoricalSummary:
    values: tuple[float, ...]
    frequencies: dict

    kind = CATEGORICAL


@dataclass(frozen=True)
class ContinuousSummary:
    """Sorted samples, range, and inner quantile-bin edges (type-7 quantiles)."""

    sorted_values: np.ndarray
    lo: float
    hi: float
    bin_edges: np.ndarray

    kind = CONTINUOUS


def quantile_edges(values, n_bins: int = 4) -> np.ndarray:
    """Inner bin edges at quantiles ``k / n_bins`` using linear interpolation."""
    qs = np.arange(1, n_bins) / n_bins
    return np.quantile(np.asarray(values, dtype=float), qs, method="linear")


def empirical_marginals(data: LabeledDataset | BackgroundData, n_bins: int = 4) -> list:
    rows = data.features if isinstance(data, LabeledDataset) else data.rows
    if rows.shape[0] == 0:
        raise EmptyDataset("cannot summarize an empty dataset")
    out = []
    for j, kind in enumerate(data.column_kinds):
        col = rows[:, j]
        if kind == CATEGORICAL:
            vals, counts = np.unique(col, return_counts=True)
            freqs = {float(v): c / col.size for v, c in zip(vals, counts)}
            out.append(CategoricalSummary(tuple(float(v) for v in vals), freqs))
        else:
            s = np.sort(col)
            out.append(ContinuousSummary(s, float(s[0]), float(s[-1]), quantile_edges(s, n_bins)))
    return out


# Synthetic Gaussian-linear data -----------------------------------------


def _cholesky(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite("covariance matrix is not positive definite") from None


@dataclass(frozen=True)
class GaussianLinearOracle:
    """Analytic quantities for ``y = beta . x + noise`` with ``X ~ N(mean, cov)``."""

    mean: np.ndarray
    cov: np.ndarray
    beta: np.ndarray
    noise_std: float

    def conditional_mean(self, x, s) -> np.ndarray:
        """``E[X_{not S} | X_S = x_S]`` as a length-|not S| vector."""
        s = as_subset(s, len(self.mean))
        S = list(s.indices())
        R = list(s.complement().indices())
        x = np.asarray(x, dtype=float)
        if not S:
            return self.mean[R].copy()
        K = scipy.linalg.solve(self.cov[np.ix_(S, S)], self.cov[np.ix_(S, R)], assume_a="pos").T
        return self.mean[R] + K @ (x[S] - self.mean[S])

    def conditional_expectation(self, x, s) -> float:
        s = as_subset(s, len(self.mean))
        S = list(s.indices())
        R = list(s.complement().indices())
        x = np.asarray(x, dtype=float)
        return float(self.beta[S] @ x[S] + self.beta[R] @ self.conditional_mean(x, s))

    def output_variance(self) -> float:
        return float(self.beta @ self.cov @ self.beta)

    def explained_variance(self, s) -> float:
        """``Var(E[beta . X | X_S])``."""
        s = as_subset(s, len(self.mean))
        S = list(s.indices())
        if not S:
            return 0.0
        c = self.cov[S, :] @ self.beta
        return float(c @ scipy.linalg.solve(self.cov[np.ix_(S, S)], c, assume_a="pos"))

    def dataset_loss_shapley(self) -> np.ndarray | None:
        """Shapley values of the MSE dataset-loss game; only closed-form for diagonal cov."""
        if np.count_nonzero(self.cov - np.diag(np.diag(self.cov))):
            return None
        return self.beta**2 * np.diag(self.cov)


def synth_gaussian_linear(d: int, mean, cov, beta, noise_std: float, n: int, seed: int):
    """Sample ``n`` rows of ``X ~ N(mean, cov)`` and ``y = beta . x + N(0, noise_std^2)``.

    Returns ``(LabeledDataset, GaussianLinearOracle)``.
    """
    mean = np.asarray(mean, dtype=float).reshape(d)
    cov = np.asarray(cov, dtype=float).reshape(d, d)
    beta = np.asarray(beta, dtype=float).reshape(d)
    L = _cholesky(cov)
    rng = np.random.default_rng(seed)
    X = mean + rng.standard_normal((n, d)) @ L.T
    y = X @ beta
    if noise_std > 0:
        y = y + noise_std * rng.standard_normal(n)
    data = LabeledDataset(X, y)
    return data, GaussianLinearOracle(mean, cov, beta, float(noise_std))
