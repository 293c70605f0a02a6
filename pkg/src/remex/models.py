"""Desk-scale model families and per-subset model tables."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.special import expit

from .core import FeatureSubset, PredictionModel, all_masks
from .data import CATEGORICAL, LabeledDataset
from .errors import DimensionTooLarge, EmptyDataset, NonBinaryLabels, RankDeficient

MODEL_FORMAT = "remex.model"
MODEL_VERSION = 1
MAX_TABLE_DIM = 15


class LinearModel(PredictionModel):
    def __init__(self, coefficients, intercept: float):
        self.coefficients = np.asarray(coefficients, dtype=float).reshape(-1)
        self.intercept = float(intercept)
        self.dim = self.coefficients.size
        self.out_dim = 1

    def _predict(self, X):
        return X @ self.coefficients + self.intercept

    def __repr__(self):
        return f"LinearModel(coefficients={self.coefficients.tolist()}, intercept={self.intercept})"


class LogisticModel(PredictionModel):
    """Binary classifier; outputs ``(P(y=0), P(y=1))``."""

    def __init__(self, coefficients, intercept: float, history=None):
        self.coefficients = np.asarray(coefficients, dtype=float).reshape(-1)
        self.intercept = float(intercept)
        self.dim = self.coefficients.size
        self.out_dim = 2
        self.history = history

    def _predict(self, X):
        p = expit(X @ self.coefficients + self.intercept)
        return np.column_stack([1.0 - p, p])


class ConstantModel(PredictionModel):
    """Ignores its inputs; used for the empty-subset entry of model tables."""

    def __init__(self, value, dim: int = 0):
        self.value = np.atleast_1d(np.asarray(value, dtype=float))
        self.dim = dim
        self.out_dim = self.value.size

    def _predict(self, X):
        return np.broadcast_to(self.value, (X.shape[0], self.out_dim)).copy()


# Linear regression -------------------------------------------------------


def fit_linear(data: LabeledDataset, ridge: float = 1e-8, allow_ridge: bool = True) -> LinearModel:
    """Ordinary least squares via Cholesky on centered normal equations.

    Rank-deficient designs fall back to ridge with penalty ``ridge`` on the
    coefficients, unless ``allow_ridge`` is false.
    """
    X, y = _xy(data)
    n, d = X.shape
    if d == 0:
        return LinearModel(np.zeros(0), float(np.mean(y)))
    x_mean = X.mean(axis=0)
    y_mean = float(y.mean())
    Xc = X - x_mean
    yc = y - y_mean
    A = Xc.T @ Xc
    b = Xc.T @ yc
    full_rank = n > d and np.linalg.matrix_rank(Xc) == d
    factor = None
    if full_rank:
        try:
            factor = scipy.linalg.cho_factor(A)
        except np.linalg.LinAlgError:
            factor = None
    if factor is None:
        if not allow_ridge:
            raise RankDeficient("design matrix is rank deficient")
        A = A + ridge * np.eye(d)
        factor = scipy.linalg.cho_factor(A)
    beta = scipy.linalg.cho_solve(factor, b)
    # one step of iterative refinement
    beta = beta + scipy.linalg.cho_solve(factor, b - A @ beta)
    return LinearModel(beta, y_mean - x_mean @ beta)


# Logistic regression -----------------------------------------------------


def _logistic_loss(z, y):
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def fit_logistic(data: LabeledDataset, max_iters: int = 10_000, step: float = 0.1, tol: float = 1e-6) -> LogisticModel:
    """Full-batch gradient descent on mean cross-entropy.

    Stops when the gradient's max-norm drops below ``tol`` or after
    ``max_iters`` steps. The per-iteration loss is kept in ``model.history``.
    """
    X, y = _xy(data)
    if not np.all((y == 0) | (y == 1)):
        raise NonBinaryLabels("logistic regression needs labels in {0, 1}")
    n, d = X.shape
    w = np.zeros(d)
    b = 0.0
    history = []
    for _ in range(max_iters):
        z = X @ w + b
        history.append(_logistic_loss(z, y))
        r = expit(z) - y
        gw = X.T @ r / n
        gb = float(r.mean())
        if max(np.max(np.abs(gw), initial=0.0), abs(gb)) < tol:
            break
        w = w - step * gw
        b = b - step * gb
    return LogisticModel(w, b, history=tuple(history))


def _xy(data: LabeledDataset):
    if data.n == 0:
        raise EmptyDataset("cannot fit on an empty dataset")
    if data.labels is None:
        raise ValueError("fitting needs labels")
    return data.features, data.labels


# Decision trees ----------------------------------------------------------

REGRESSION = "regression"
CLASSIFICATION = "classification"


@dataclass
class DecisionTreeModel(PredictionModel):
    """Binary tree in flat arrays. Leaves have ``feature == -1``.

    Rows with ``x[feature] <= threshold`` go left. ``coverage[k]`` is the
    number of training rows that reached node ``k``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    coverage: np.ndarray | None
    dim: int
    task: str = REGRESSION
    out_dim: int = field(init=False)

    def __post_init__(self):
        self.feature = np.asarray(self.feature, dtype=np.int64)
        self.threshold = np.asarray(self.threshold, dtype=float)
        self.left = np.asarray(self.left, dtype=np.int64)
        self.right = np.asarray(self.right, dtype=np.int64)
        self.value = np.atleast_2d(np.asarray(self.value, dtype=float))
        if self.coverage is not None:
            self.coverage = np.asarray(self.coverage, dtype=np.int64)
        self.out_dim = self.value.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def is_leaf(self, k: int) -> bool:
        return self.feature[k] < 0

    def _predict(self, X):
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] >= 0
        while np.any(active):
            rows = np.nonzero(active)[0]
            k = node[rows]
            go_left = X[rows, self.feature[k]] <= self.threshold[k]
            node[rows] = np.where(go_left, self.left[k], self.right[k])
            active = self.feature[node] >= 0
        return self.value[node]


def fit_tree(data: LabeledDataset, max_depth: int = 3, min_leaf: int = 1, task: str | None = None) -> DecisionTreeModel:
    """Greedy CART: squared error for regression, Gini for classification.

    Candidate thresholds are midpoints between consecutive distinct values;
    impurity ties go to the lowest feature index, then the lowest threshold.
    """
    X, y = _xy(data)
    n, d = X.shape
    if n < min_leaf:
        raise EmptyDataset(f"need at least min_leaf={min_leaf} rows, got {n}")
    if task is None:
        task = CLASSIFICATION if data.label_kind == CATEGORICAL else REGRESSION
    if task == CLASSIFICATION:
        n_classes = int(y.max()) + 1
        targets = np.eye(n_classes)[y.astype(np.int64)]
    else:
        targets = y[:, None]

    feature, threshold, left, right, value, coverage = [], [], [], [], [], []

    def node_value(rows):
        return targets[rows].mean(axis=0)

    def split_impurity(t_sum, t_sq, count):
        # total (not mean) impurity of a node holding `count` rows
        if task == CLASSIFICATION:
            return count - (t_sum**2).sum(axis=-1) / count
        return t_sq - t_sum[..., 0] ** 2 / count

    def build(rows, depth):
        k = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(node_value(rows))
        coverage.append(len(rows))
        m = len(rows)
        if depth >= max_depth or m < 2 * min_leaf:
            return k
        T = targets[rows]
        parent = float(split_impurity(T.sum(axis=0), (T[:, 0] ** 2).sum(), m))
        if parent <= 1e-12 * m:
            return k
        best = None
        for j in range(d):
            xj = X[rows, j]
            order = np.argsort(xj, kind="stable")
            xs = xj[order]
            ts = T[order]
            cum = np.cumsum(ts, axis=0)
            cum_sq = np.cumsum(ts[:, 0] ** 2)
            # a cut at i sends sorted rows 0..i left; only where the value changes
            cut = np.nonzero(xs[1:] != xs[:-1])[0]
            cut = cut[(cut + 1 >= min_leaf) & (m - cut - 1 >= min_leaf)]
            if cut.size == 0:
                continue
            nl = (cut + 1).astype(float)
            score = split_impurity(cum[cut], cum_sq[cut], nl) + split_impurity(
                cum[-1] - cum[cut], cum_sq[-1] - cum_sq[cut], m - nl
            )
            i = int(np.argmin(score))
            if best is None or score[i] < best[0] - 1e-12 * max(1.0, abs(best[0])):
                best = (float(score[i]), j, 0.5 * (xs[cut[i]] + xs[cut[i] + 1]))
        if best is None or best[0] >= parent - 1e-12 * max(1.0, parent):
            return k
        _, j, thr = best
        go_left = X[rows, j] <= thr
        feature[k] = j
        threshold[k] = thr
        left[k] = build(rows[go_left], depth + 1)
        right[k] = build(rows[~go_left], depth + 1)
        return k

    build(np.arange(n), 0)
    return DecisionTreeModel(feature, threshold, left, right, np.array(value), np.array(coverage), d, task)


# Per-subset tables -------------------------------------------------------

LINEAR = "linear"
LOGISTIC = "logistic"


@dataclass
class SubsetModelTable:
    """One model per feature subset; ``models[S.bits]`` reads only the S columns."""

    dim: int
    family: str
    models: dict

    def model_for(self, s: FeatureSubset) -> PredictionModel:
        return self.models[s.bits]

    @property
    def out_dim(self) -> int:
        return next(iter(self.models.values())).out_dim

    def __len__(self):
        return len(self.models)


def fit_subset_model_table(data: LabeledDataset, family: str = LINEAR, threads: int = 1) -> SubsetModelTable:
    """Fit ``2**d`` models, one per subset of columns.

    The empty subset predicts the label mean (linear) or the class
    proportions (logistic).
    """
    d = data.dim
    if d > MAX_TABLE_DIM:
        raise DimensionTooLarge(f"subset model tables are capped at d <= {MAX_TABLE_DIM}, got {d}")
    if family not in (LINEAR, LOGISTIC):
        raise ValueError(f"unknown model family {family!r}")
    _xy(data)

    def fit_one(bits: int):
        if bits == 0:
            if family == LINEAR:
                return ConstantModel([data.labels.mean()])
            p = float(data.labels.mean())
            return ConstantModel([1.0 - p, p])
        sub = data.subset_columns(FeatureSubset(bits, d))
        return fit_linear(sub) if family == LINEAR else fit_logistic(sub)

    masks = [int(b) for b in all_masks(d)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            fitted = list(pool.map(fit_one, masks))
    else:
        fitted = [fit_one(b) for b in masks]
    return SubsetModelTable(d, family, dict(zip(masks, fitted)))


# Serialization -----------------------------------------------------------


def model_to_dict(model: PredictionModel) -> dict:
    doc = {"format": MODEL_FORMAT, "version": MODEL_VERSION}
    if isinstance(model, LinearModel):
        doc.update(type="linear", coefficients=model.coefficients.tolist(), intercept=model.intercept)
    elif isinstance(model, LogisticModel):
        doc.update(type="logistic", coefficients=model.coefficients.tolist(), intercept=model.intercept)
    elif isinstance(model, ConstantModel):
        doc.update(type="constant", value=model.value.tolist(), dim=model.dim)
    elif isinstance(model, DecisionTreeModel):
        doc.update(
            type="tree",
            task=model.task,
            dim=model.dim,
            feature=model.feature.tolist(),
            threshold=model.threshold.tolist(),
            left=model.left.tolist(),
            right=model.right.tolist(),
            value=model.value.tolist(),
            coverage=None if model.coverage is None else model.coverage.tolist(),
        )
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    return doc


def model_from_dict(doc: dict) -> PredictionModel:
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError("not a serialized model document")
    if doc.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model document version {doc.get('version')}")
    kind = doc["type"]
    if kind == "linear":
        return LinearModel(doc["coefficients"], doc["intercept"])
    if kind == "logistic":
        return LogisticModel(doc["coefficients"], doc["intercept"])
    if kind == "constant":
        return ConstantModel(doc["value"], doc.get("dim", 0))
    if kind == "tree":
        return DecisionTreeModel(
            doc["feature"], doc["threshold"], doc["left"], doc["right"],
            doc["value"], doc["coverage"], doc["dim"], doc["task"],
        )
    raise ValueError(f"unknown model type {kind!r}")


def save_model(model: PredictionModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=2)
        fh.write("\n")


def load_model(path) -> PredictionModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
