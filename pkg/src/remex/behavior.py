"""Set functions ``u(S)`` built from a subset function: the model behavior to explain."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import SetFunction, SubsetFunction, all_masks, full_mask, row_seeds
from .data import LabeledDataset
from .errors import EmptyDataset, IndexOutOfRange, InvalidDistribution, PreconditionViolation

SQUARED_ERROR = "squared_error"
CROSS_ENTROPY = "cross_entropy"
IDENTITY = "identity"
LOGODDS = "logodds"


@dataclass(frozen=True)
class LossFunction:
    """Per-row loss between predictions and targets.

    ``pred`` is ``(out_dim,)`` or ``(n, out_dim)``. A target with one fewer
    dimension than ``pred`` is a label: a real value (or binary label when
    ``out_dim == 1``) or a class index. A target shaped like ``pred`` is a
    soft target (a probability vector or another model output).
    """

    kind: str = SQUARED_ERROR
    clip_epsilon: float = 1e-12

    def __post_init__(self):
        if self.kind not in (SQUARED_ERROR, CROSS_ENTROPY):
            raise ValueError(f"unknown loss {self.kind!r}")
        if not 0 < self.clip_epsilon < 0.5:
            raise ValueError("clip_epsilon must lie in (0, 0.5)")

    def _clip(self, p):
        return np.clip(p, self.clip_epsilon, 1.0 - self.clip_epsilon)

    def __call__(self, pred, target) -> np.ndarray:
        pred = np.asarray(pred, dtype=float)
        target = np.asarray(target, dtype=float)
        k = pred.shape[-1]
        if target.ndim == pred.ndim - 1:
            if k == 1:
                target = target[..., None]
            elif self.kind == SQUARED_ERROR:
                target = _one_hot(target, k)
            else:
                idx = _class_index(target, k)
                return -np.log(self._clip(np.take_along_axis(pred, idx[..., None], axis=-1)[..., 0]))
        elif target.shape != pred.shape:
            raise ValueError(f"target shape {target.shape} does not match prediction shape {pred.shape}")
        if self.kind == SQUARED_ERROR:
            return np.sum((pred - target) ** 2, axis=-1)
        if k == 1:
            p = self._clip(pred[..., 0])
            t = target[..., 0]
            return -(t * np.log(p) + (1.0 - t) * np.log1p(-p))
        return -np.sum(target * np.log(self._clip(pred)), axis=-1)


def _class_index(y, k):
    idx = np.asarray(y)
    if np.any(idx != np.round(idx)) or np.any(idx < 0) or np.any(idx >= k):
        raise IndexOutOfRange(f"class labels must be integers in [0, {k})")
    return idx.astype(np.int64)


def _one_hot(y, k):
    idx = _class_index(y, k)
    return (idx[..., None] == np.arange(k)).astype(float)


@dataclass(frozen=True)
class LinkFunction:
    kind: str = IDENTITY
    clip_epsilon: float = 1e-12

    def __post_init__(self):
        if self.kind not in (IDENTITY, LOGODDS):
            raise ValueError(f"unknown link {self.kind!r}")

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        if self.kind == IDENTITY:
            return p
        p = np.clip(p, self.clip_epsilon, 1.0 - self.clip_epsilon)
        return np.log(p) - np.log1p(-p)


def _check_distribution(dist, k=None):
    dist = np.asarray(dist, dtype=float).reshape(-1)
    if dist.size == 0 or np.any(dist < 0) or abs(dist.sum() - 1.0) > 1e-9 or not np.all(np.isfinite(dist)):
        raise InvalidDistribution("label distribution must be nonnegative and sum to 1")
    if k is not None and k > 1 and dist.size != k:
        raise InvalidDistribution(f"label distribution has {dist.size} classes, model outputs {k}")
    return dist


def behavior_prediction(F: SubsetFunction, x, output_index: int = 0, link: LinkFunction | None = None,
                        seed: int = 0, threads: int = 1) -> SetFunction:
    """``u(S) = link(F(x, S)[output_index])``."""
    if not 0 <= output_index < F.out_dim:
        raise IndexOutOfRange(f"output index {output_index} out of range for {F.out_dim} outputs")
    link = link or LinkFunction()
    x = np.asarray(x, dtype=float)

    def fn(s):
        return float(link(F(x, s, seed)[output_index]))

    return SetFunction(F.dim, fn, threads=threads, name="prediction")


def behavior_prediction_loss(F: SubsetFunction, x, y, loss: LossFunction | None = None,
                             seed: int = 0, threads: int = 1) -> SetFunction:
    """``u(S) = -loss(F(x, S), y)``."""
    loss = loss or LossFunction()
    x = np.asarray(x, dtype=float)
    loss(np.zeros(F.out_dim) + 0.5, y)  # validate the target up front

    def fn(s):
        return -float(loss(F(x, s, seed), y))

    return SetFunction(F.dim, fn, threads=threads, name="prediction_loss")


def behavior_prediction_mean_loss(F: SubsetFunction, x, label_dist, loss: LossFunction | None = None,
                                  seed: int = 0, threads: int = 1, support=None) -> SetFunction:
    """``u(S) = -sum_y p(y | x) loss(F(x, S), y)`` for a supplied label distribution.

    Entry ``j`` of ``label_dist`` is the probability of class ``j`` unless an
    explicit ``support`` of label values is given.
    """
    loss = loss or LossFunction()
    if support is None:
        dist = _check_distribution(label_dist, F.out_dim)
        labels = np.arange(dist.size, dtype=float)
    else:
        dist = _check_distribution(label_dist)
        labels = np.asarray(support, dtype=float).reshape(-1)
        if labels.size != dist.size:
            raise InvalidDistribution("support and label distribution differ in length")
    x = np.asarray(x, dtype=float)

    def fn(s):
        pred = F(x, s, seed)
        per_label = loss(np.broadcast_to(pred, (labels.size, F.out_dim)), labels)
        return -float(np.dot(dist, per_label))

    return SetFunction(F.dim, fn, threads=threads, name="prediction_mean_loss")


def _check_dataset(data: LabeledDataset, need_labels: bool):
    if data.n == 0 or data.features.size == 0:
        raise EmptyDataset("dataset has no rows")
    if need_labels and data.labels is None:
        raise EmptyDataset("dataset carries no labels")


def behavior_dataset_loss_label(F: SubsetFunction, data: LabeledDataset, loss: LossFunction | None = None,
                                seed: int = 0, threads: int = 1) -> SetFunction:
    """``u(S) = -mean_r loss(F(x_r, S), y_r)``.

    Row ``r`` is evaluated with seed ``row_seeds(seed, n)[r]``.
    """
    loss = loss or LossFunction()
    _check_dataset(data, need_labels=True)
    X, y = data.features, data.labels
    seeds = row_seeds(seed, data.n)

    def fn(s):
        return -float(np.mean(loss(F(X, s, seeds), y)))

    return SetFunction(F.dim, fn, threads=threads, name="dataset_loss_label")


def behavior_dataset_loss_output(F: SubsetFunction, data: LabeledDataset, loss: LossFunction | None = None,
                                 seed: int = 0, threads: int = 1) -> SetFunction:
    """``u(S) = -mean_r loss(F(x_r, S), F(x_r, D))``; squared error by default."""
    if F.extension_of is None:
        raise PreconditionViolation("the output-loss behavior needs a subset function that extends a model")
    loss = loss or LossFunction(SQUARED_ERROR)
    _check_dataset(data, need_labels=False)
    X = data.features
    seeds = row_seeds(seed, data.n)
    full = F(X, full_mask(F.dim), seeds)

    def fn(s):
        return -float(np.mean(loss(F(X, s, seeds), full)))

    return SetFunction(F.dim, fn, threads=threads, name="dataset_loss_output")


def verify_behavior_identities(F: SubsetFunction, data: LabeledDataset, loss: LossFunction | None = None,
                               seed: int = 0) -> dict[str, float]:
    """Max absolute discrepancy of each loss-behavior identity over every subset.

    Each side is built independently: the behavior constructors on one side,
    per-row standalone evaluations of ``F`` on the other.

    - ``v_xy``: ``u_loss(S) == -loss(F(x, S), y)`` per row
    - ``w_x``: mean-loss game equals the label-weighted sum of per-label loss games
    - ``v_label``: dataset-loss game equals the row mean of per-row loss games
    - ``v_joint``: the joint expectation over (row, label) equals the row mean of ``w_x``
    - ``w``: output-loss game equals ``-mean_r loss(F(x_r, S), F(x_r, D))``
    """
    loss = loss or LossFunction()
    _check_dataset(data, need_labels=True)
    n, d, k = data.n, F.dim, F.out_dim
    masks = all_masks(d)
    seeds = row_seeds(seed, n)

    # standalone evaluations: vx[r, b] = F(x_r, S_b) with the row's own seed
    vx = np.empty((n, masks.size, k))
    for r in range(n):
        for b in masks:
            vx[r, b] = F(data.features[r], int(b), int(seeds[r]))

    report = {"v_xy": 0.0, "w_x": 0.0, "v_label": 0.0, "v_joint": 0.0, "w": 0.0}
    vxy_rows = np.empty((n, masks.size))
    wx_rows = np.empty((n, masks.size))
    joint_terms = []
    for r in range(n):
        x, y, sr = data.features[r], data.labels[r], int(seeds[r])
        u_loss = behavior_prediction_loss(F, x, y, loss, sr).table()
        direct = -loss(vx[r], np.full(masks.size, y))
        report["v_xy"] = max(report["v_xy"], float(np.max(np.abs(u_loss - direct))))
        vxy_rows[r] = u_loss
        if data.label_distribution is not None:
            dist = data.label_distribution[r]
            support = np.arange(dist.size, dtype=float)
        else:
            # no distribution supplied: point mass at the observed label
            dist, support = np.ones(1), np.array([y])
        per_label = np.array([behavior_prediction_loss(F, x, lab, loss, sr).table() for lab in support])
        u_mean = behavior_prediction_mean_loss(F, x, dist, loss, sr, support=support).table()
        report["w_x"] = max(report["w_x"], float(np.max(np.abs(u_mean - dist @ per_label))))
        wx_rows[r] = u_mean
        joint_terms.append((dist / n, per_label))

    v = behavior_dataset_loss_label(F, data, loss, seed).table()
    report["v_label"] = float(np.max(np.abs(v - vxy_rows.mean(axis=0))))
    # E_XY[v_XY] summed over (row, label) pairs vs E_X[w_X]
    weights = np.concatenate([w for w, _ in joint_terms])
    joint = weights @ np.concatenate([t for _, t in joint_terms])
    report["v_joint"] = float(np.max(np.abs(joint - wx_rows.mean(axis=0))))

    if F.extension_of is not None:
        w = behavior_dataset_loss_output(F, data, LossFunction(SQUARED_ERROR, loss.clip_epsilon), seed).table()
        full = vx[:, -1, :]
        direct = np.array([-np.mean(LossFunction(SQUARED_ERROR)(vx[:, b], full)) for b in masks])
        report["w"] = float(np.max(np.abs(w - direct)))
    return report
