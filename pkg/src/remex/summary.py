"""Summaries of a game ``u``: per-feature attributions or a selected subset."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb

import numpy as np
import scipy.linalg

from .core import (
    ATTRIBUTION,
    SELECTION,
    Explanation,
    FeatureSubset,
    SetFunction,
    all_masks,
    check_enumerable,
    full_mask,
    popcount,
)
from .errors import DimensionTooLarge, Infeasible, InvalidK, NegativeEntry, SingularSystem, ZeroSum

EXACT = "exact"
SAMPLED = "sampled"
FULL = "full"
EXHAUSTIVE = "exhaustive"
GREEDY = "greedy"

UNIFORM = "uniform"
SHAPLEY = "shapley"
CUSTOM = "custom"

MAX_REGRESSION_DIM = 20
MAX_COMBINATIONS = 2_000_000
ENDPOINT_WEIGHT = 1e6
L1_MAX_SWEEPS = 100_000
L1_TOL = 1e-12


@dataclass(frozen=True)
class KernelWeights:
    """Weight ``pi(|S|, d)`` on each subset in a linear-surrogate fit."""

    kind: str = UNIFORM
    table: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in (UNIFORM, SHAPLEY, CUSTOM):
            raise ValueError(f"unknown kernel {self.kind!r}")
        if self.kind == CUSTOM:
            if self.table is None or any(w < 0 for w in self.table):
                raise ValueError("custom kernel needs a nonnegative weight per subset size")
            object.__setattr__(self, "table", tuple(float(w) for w in self.table))

    def by_size(self, d: int) -> np.ndarray:
        """Weights indexed by subset size ``0..d``."""
        if self.kind == UNIFORM:
            return np.ones(d + 1)
        if self.kind == CUSTOM:
            if len(self.table) != d + 1:
                raise ValueError(f"custom kernel has {len(self.table)} entries, need {d + 1}")
            return np.array(self.table)
        w = np.full(d + 1, ENDPOINT_WEIGHT)
        k = np.arange(1, d)
        w[1:d] = shapley_kernel(k, d)
        return w


def shapley_kernel(k, d: int) -> np.ndarray:
    """``(d - 1) / (C(d, k) k (d - k))`` for interior sizes ``0 < k < d``."""
    k = np.asarray(k)
    binom = np.array([comb(d, int(j)) for j in np.ravel(k)], dtype=float).reshape(k.shape)
    return (d - 1) / (binom * k * (d - k))


@dataclass(frozen=True)
class Regularizer:
    kind: str = "none"
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "l1"):
            raise ValueError(f"unknown regularizer {self.kind!r}")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")


@dataclass(frozen=True)
class SamplingPlan:
    n_samples: int
    seed: int = 0
    inclusion_prob: float = 0.5

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not 0 < self.inclusion_prob < 1:
            raise ValueError("inclusion_prob must lie in (0, 1)")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


def _mean(values: np.ndarray, axis: int = 0) -> np.ndarray:
    ref = np.take(values, [0], axis=axis)
    return np.squeeze(ref, axis=axis) + np.mean(values - ref, axis=axis)


def _attribution(u: SetFunction, start: int, scores, method: dict, stderr=None, **extras) -> Explanation:
    return Explanation(ATTRIBUTION, scores=scores, stderr=stderr, method=method,
                       evaluations_used=u.eval_count - start, extras=extras)


def _selection(u: SetFunction, start: int, bits: int, method: dict, objective: float) -> Explanation:
    return Explanation(SELECTION, selected=FeatureSubset(int(bits), u.dim), method=method,
                       evaluations_used=u.eval_count - start, extras={"objective": float(objective)})


def _bit_sums(masks: np.ndarray, values: np.ndarray, d: int) -> np.ndarray:
    """``out[i] = sum of values over masks containing feature i``."""
    return np.array([values[(masks >> i) & 1 == 1].sum() for i in range(d)])


# Attributions ------------------------------------------------------------


def remove_individual(u: SetFunction) -> Explanation:
    """``a_i = u(D) - u(D minus {i})``."""
    start, d = u.eval_count, u.dim
    full = full_mask(d)
    masks = np.array([full] + [full ^ (1 << i) for i in range(d)], dtype=np.int64)
    v = u.values(masks)
    return _attribution(u, start, v[0] - v[1:], {"summary": "remove_individual"})


def include_individual(u: SetFunction) -> Explanation:
    """``a_i = u({i}) - u({})``."""
    start, d = u.eval_count, u.dim
    masks = np.array([0] + [1 << i for i in range(d)], dtype=np.int64)
    v = u.values(masks)
    return _attribution(u, start, v[1:] - v[0], {"summary": "include_individual"})


def shapley_exact(u: SetFunction) -> Explanation:
    """Shapley values by enumerating all ``2**d`` subsets."""
    d = u.dim
    check_enumerable(d)
    start = u.eval_count
    masks = all_masks(d)
    t = u.table()
    size = popcount(masks)
    # |S|! (d - |S| - 1)! / d! = 1 / (d C(d-1, |S|))
    w_by_size = np.array([1.0 / (d * comb(d - 1, k)) for k in range(d)] + [0.0])
    w = w_by_size[size]
    phi = np.empty(d)
    for i in range(d):
        bit = 1 << i
        out = (masks & bit) == 0
        S = masks[out]
        phi[i] = np.dot(w[out], t[S | bit] - t[S])
    return _attribution(u, start, phi, {"summary": "shapley_exact"})


def shapley_permutation_sample(u: SetFunction, plan: SamplingPlan) -> Explanation:
    """Monte Carlo Shapley values from ``plan.n_samples`` random feature orderings."""
    n, d = plan.n_samples, u.dim
    if n < 2:
        raise ValueError("permutation sampling needs n_samples >= 2")
    start = u.eval_count
    perms = plan.rng().permuted(np.tile(np.arange(d), (n, 1)), axis=1)
    bits = np.left_shift(np.int64(1), perms.astype(np.int64))
    after = np.cumsum(bits, axis=1)
    before = after - bits
    delta = u.values(after) - u.values(before)
    contrib = np.empty((n, d))
    np.put_along_axis(contrib, perms, delta, axis=1)
    est = _mean(contrib, axis=0)
    stderr = contrib.std(axis=0, ddof=1) / np.sqrt(n)
    return _attribution(u, start, est, {"summary": "shapley_permutation_sample",
                                        "n_samples": n, "seed": plan.seed}, stderr=stderr)


def _sample_shapley_subsets(d: int, plan: SamplingPlan) -> np.ndarray:
    """Interior subsets drawn with probability proportional to the Shapley kernel."""
    rng = plan.rng()
    k = np.arange(1, d)
    p = (d - 1) / (k * (d - k))
    sizes = rng.choice(k, size=plan.n_samples, p=p / p.sum())
    order = np.argsort(rng.random((plan.n_samples, d)), axis=1)
    keep = np.arange(d)[None, :] < sizes[:, None]
    bits = np.where(keep, np.left_shift(np.int64(1), order.astype(np.int64)), 0)
    return bits.sum(axis=1)


def _constrained_solve(A: np.ndarray, c: np.ndarray, total: float) -> np.ndarray:
    """Minimize ``b'Ab - 2c'b`` subject to ``sum(b) == total``."""
    try:
        factor = scipy.linalg.cho_factor(A)
    except np.linalg.LinAlgError:
        raise SingularSystem("weighted normal equations are singular") from None
    ones = np.ones(A.shape[0])
    Ainv_c = scipy.linalg.cho_solve(factor, c)
    Ainv_1 = scipy.linalg.cho_solve(factor, ones)
    return Ainv_c - Ainv_1 * (ones @ Ainv_c - total) / (ones @ Ainv_1)


def shapley_kernel_regression(u: SetFunction, mode: str = FULL, plan: SamplingPlan | None = None) -> Explanation:
    """Shapley values as the efficiency-constrained weighted least-squares fit.

    The intercept is pinned to ``u({})`` and the coefficients must sum to
    ``u(D) - u({})``. ``mode="full"`` uses every interior subset with the
    Shapley kernel; ``mode="sampled"`` draws subsets in proportion to the
    kernel and weights repeated draws by their count.
    """
    d = u.dim
    start = u.eval_count
    method = {"summary": "shapley_kernel_regression", "mode": mode}
    u_empty, u_full = u.values(np.array([0, full_mask(d)]))
    total = u_full - u_empty
    if d == 1:
        return _attribution(u, start, np.array([total]), method)
    if mode == FULL:
        check_enumerable(d, MAX_REGRESSION_DIM)
        masks = all_masks(d)[1:-1]
        weights = shapley_kernel(popcount(masks), d)
        # A = alpha I + beta 11' from per-size counts
        k = np.arange(1, d)
        pk = shapley_kernel(k, d)
        diag = sum(pk[j] * comb(d - 1, int(k[j]) - 1) for j in range(d - 1))
        off = sum(pk[j] * comb(d - 2, int(k[j]) - 2) for j in range(d - 1) if k[j] >= 2)
        A = np.full((d, d), off) + np.eye(d) * (diag - off)
    elif mode == SAMPLED:
        if plan is None:
            raise ValueError("sampled mode needs a SamplingPlan")
        masks, counts = np.unique(_sample_shapley_subsets(d, plan), return_counts=True)
        if masks.size < d:
            raise SingularSystem(f"only {masks.size} distinct subsets sampled for {d} features")
        weights = counts.astype(float)
        Z = ((masks[:, None] >> np.arange(d)) & 1).astype(float)
        A = (Z * weights[:, None]).T @ Z
        method.update(n_samples=plan.n_samples, seed=plan.seed)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    y = u.values(masks) - u_empty
    c = _bit_sums(masks, weights * y, d)
    phi = _constrained_solve(A, c, total)
    return _attribution(u, start, phi, method)


def _gram_full(d: int, w_by_size: np.ndarray):
    """Gram matrix of ``z = (1, 1[i in S])`` over all subsets weighted by size."""
    sizes = np.arange(d + 1)
    s0 = sum(w_by_size[k] * comb(d, k) for k in sizes)
    s1 = sum(w_by_size[k] * comb(d - 1, k - 1) for k in sizes if k >= 1)
    s2 = sum(w_by_size[k] * comb(d - 2, k - 2) for k in sizes if k >= 2)
    G = np.full((d + 1, d + 1), s2)
    G[np.arange(1, d + 1), np.arange(1, d + 1)] = s1
    G[0, :] = s1
    G[:, 0] = s1
    G[0, 0] = s0
    return G


def _soft(z: float, t: float) -> float:
    return np.sign(z) * max(abs(z) - t, 0.0)


def _lasso_gram(G: np.ndarray, h: np.ndarray, lam: float) -> np.ndarray:
    """Cyclic coordinate descent on ``b'Gb - 2h'b + lam * sum_{j>0} |b_j|``."""
    p = G.shape[0]
    if np.any(np.diag(G) <= 0):
        raise SingularSystem("a feature never varies across the weighted subsets")
    b = np.zeros(p)
    for _ in range(L1_MAX_SWEEPS):
        change = 0.0
        for j in range(p):
            r = h[j] - G[j] @ b + G[j, j] * b[j]
            new = r / G[j, j] if j == 0 else _soft(r, lam / 2.0) / G[j, j]
            change = max(change, abs(new - b[j]))
            b[j] = new
        if change < L1_TOL:
            break
    return b


def lime_linear(u: SetFunction, weights: KernelWeights | None = None, reg: Regularizer | None = None,
                mode: str = FULL, plan: SamplingPlan | None = None) -> tuple[float, Explanation]:
    """Weighted (optionally L1-penalized) linear surrogate ``b0 + sum_{i in S} b_i`` of ``u``.

    Returns ``(b0, explanation)``. No efficiency constraint is imposed; with
    the Shapley kernel, the empty and full subsets get a large finite weight.
    """
    weights = weights or KernelWeights()
    reg = reg or Regularizer()
    d = u.dim
    start = u.eval_count
    w_by_size = weights.by_size(d)
    method = {"summary": "lime_linear", "kernel": weights.kind, "regularizer": reg.kind, "lam": reg.lam, "mode": mode}
    if mode == FULL:
        check_enumerable(d, MAX_REGRESSION_DIM)
        masks = all_masks(d)
        w = w_by_size[popcount(masks)]
        G = _gram_full(d, w_by_size)
    elif mode == SAMPLED:
        if plan is None:
            raise ValueError("sampled mode needs a SamplingPlan")
        draws = plan.rng().random((plan.n_samples, d)) < plan.inclusion_prob
        raw = (draws * np.left_shift(np.int64(1), np.arange(d, dtype=np.int64))).sum(axis=1)
        masks, counts = np.unique(raw, return_counts=True)
        w = counts * w_by_size[popcount(masks)]
        Z = np.hstack([np.ones((masks.size, 1)), ((masks[:, None] >> np.arange(d)) & 1).astype(float)])
        G = (Z * w[:, None]).T @ Z
        method.update(n_samples=plan.n_samples, seed=plan.seed)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    v = u.values(masks)
    wv = w * v
    h = np.concatenate([[wv.sum()], _bit_sums(masks, wv, d)])
    if reg.kind == "l1":
        b = _lasso_gram(G, h, reg.lam)
    else:
        try:
            b = scipy.linalg.cho_solve(scipy.linalg.cho_factor(G), h)
        except np.linalg.LinAlgError:
            raise SingularSystem("weighted normal equations are singular") from None
    exp = _attribution(u, start, b[1:], method, intercept=float(b[0]))
    return float(b[0]), exp


def mean_when_included(u: SetFunction, mode: str = EXACT, p: float = 0.5, plan: SamplingPlan | None = None) -> Explanation:
    """``a_i = E[u(S) | i in S]`` with features included independently with probability ``p``."""
    d = u.dim
    start = u.eval_count
    if mode == EXACT:
        if not 0 < p < 1:
            raise ValueError("p must lie in (0, 1)")
        check_enumerable(d)
        masks = all_masks(d)
        t = u.table()
        size = popcount(masks)
        w = p ** (size - 1.0) * (1.0 - p) ** (d - size)
        scores = _bit_sums(masks, w * t, d)
        return _attribution(u, start, scores, {"summary": "mean_when_included", "mode": EXACT, "p": p})
    if mode != SAMPLED:
        raise ValueError(f"unknown mode {mode!r}")
    if plan is None:
        raise ValueError("sampled mode needs a SamplingPlan")
    draws = plan.rng().random((plan.n_samples, d)) < plan.inclusion_prob
    masks = (draws * np.left_shift(np.int64(1), np.arange(d, dtype=np.int64))).sum(axis=1)
    v = u.values(masks)
    scores = np.empty(d)
    stderr = np.empty(d)
    for i in range(d):
        vi = v[draws[:, i]]
        if vi.size == 0:
            raise ValueError(f"no sampled subset contains feature {i}; increase n_samples")
        scores[i] = _mean(vi)
        stderr[i] = vi.std(ddof=1) / np.sqrt(vi.size) if vi.size > 1 else 0.0
    return _attribution(u, start, scores, {"summary": "mean_when_included", "mode": SAMPLED,
                                           "p": plan.inclusion_prob, "n_samples": plan.n_samples,
                                           "seed": plan.seed}, stderr=stderr)


def normalize_attributions(a):
    """Rescale nonnegative attributions to sum to one. Accepts an array or an Explanation."""
    scores = a.scores if isinstance(a, Explanation) else np.asarray(a, dtype=float)
    if np.any(scores < 0):
        raise NegativeEntry("normalization needs nonnegative attributions")
    total = scores.sum()
    if total == 0:
        raise ZeroSum("attributions sum to zero")
    w = scores / total
    if isinstance(a, Explanation):
        stderr = None if a.stderr is None else a.stderr / total
        return Explanation(ATTRIBUTION, scores=w, stderr=stderr, method={**a.method, "normalized": True},
                           evaluations_used=a.evaluations_used, extras=dict(a.extras))
    return w


# Selections --------------------------------------------------------------


def _best(masks: np.ndarray, objective: np.ndarray, maximize: bool) -> int:
    """Index of the optimum; ties go to the smallest subset, then the smallest bitmask."""
    order = np.lexsort((masks, popcount(masks)))
    vals = objective[order]
    j = np.argmax(vals) if maximize else np.argmin(vals)
    return int(order[j])


def _greedy_add(u: SetFunction, objective, maximize: bool, max_size: int | None = None, forced: bool = False):
    """Add one feature at a time while the objective strictly improves.

    ``objective(masks)`` scores candidate subsets. With ``forced`` the
    best feature is added even without improvement, up to ``max_size``.
    """
    d = u.dim
    S = 0
    current = float(objective(np.array([0]))[0])
    limit = d if max_size is None else max_size
    while popcount(np.array([S]))[0] < limit:
        cands = np.array([S | (1 << i) for i in range(d) if not S >> i & 1], dtype=np.int64)
        scores = objective(cands)
        j = int(np.argmax(scores) if maximize else np.argmin(scores))
        better = scores[j] > current if maximize else scores[j] < current
        if not (better or forced):
            break
        S, current = int(cands[j]), float(scores[j])
    return S, current


def _penalty(lam: float, masks: np.ndarray) -> np.ndarray:
    # an infinite penalty must leave the empty set at zero, not nan
    size = popcount(masks)
    return np.where(size == 0, 0.0, lam * np.maximum(size, 1))


def _check_solver(solver: str):
    if solver not in (EXHAUSTIVE, GREEDY):
        raise ValueError(f"unknown solver {solver!r}")


def low_value_subset(u: SetFunction, lam: float, solver: str = EXHAUSTIVE) -> Explanation:
    """Features to remove: ``argmin_S u(D minus S) + lam |S|``."""
    _check_solver(solver)
    d, start, full = u.dim, u.eval_count, full_mask(u.dim)
    method = {"summary": "low_value_subset", "lam": lam, "solver": solver}

    def objective(masks):
        return u.values(full ^ masks) + _penalty(lam, masks)

    if solver == EXHAUSTIVE:
        check_enumerable(d)
        masks = all_masks(d)
        obj = objective(masks)
        j = _best(masks, obj, maximize=False)
        return _selection(u, start, masks[j], method, obj[j])
    S, val = _greedy_add(u, objective, maximize=False)
    return _selection(u, start, S, method, val)


def minimal_subset_threshold(u: SetFunction, t: float, solver: str = EXHAUSTIVE) -> Explanation:
    """Smallest ``S`` with ``u(S) >= t``; greedy removal starts from ``D``."""
    _check_solver(solver)
    d, start, full = u.dim, u.eval_count, full_mask(u.dim)
    method = {"summary": "minimal_subset_threshold", "threshold": t, "solver": solver}
    if u.full_value < t:
        raise Infeasible(f"u(D) = {u.full_value} is below the threshold {t}")
    if solver == EXHAUSTIVE:
        check_enumerable(d)
        masks = all_masks(d)
        vals = u.table()
        ok = vals >= t
        # minimize cardinality among feasible subsets
        obj = np.where(ok, popcount(masks), d + 1).astype(float)
        j = _best(masks, obj, maximize=False)
        return _selection(u, start, masks[j], method, vals[j])
    S = full
    current = u(S)
    while S:
        cands = np.array([S & ~(1 << i) for i in range(d) if S >> i & 1], dtype=np.int64)
        vals = u.values(cands)
        j = int(np.argmax(vals))
        if vals[j] < t:
            break
        S, current = int(cands[j]), float(vals[j])
    return _selection(u, start, S, method, current)


def high_value_subset_constrained(u: SetFunction, k: int, solver: str = EXHAUSTIVE) -> Explanation:
    """``argmax_{|S| = k} u(S)``."""
    _check_solver(solver)
    d, start = u.dim, u.eval_count
    if not 0 <= k <= d:
        raise InvalidK(f"k must lie in [0, {d}], got {k}")
    method = {"summary": "high_value_subset_constrained", "k": k, "solver": solver}
    if solver == EXHAUSTIVE:
        n = comb(d, k)
        if n > MAX_COMBINATIONS:
            raise DimensionTooLarge(f"C({d}, {k}) = {n} candidates exceed the cap of {MAX_COMBINATIONS}")
        masks = np.sort(np.array([sum(1 << i for i in c) for c in itertools.combinations(range(d), k)], dtype=np.int64))
        vals = u.values(masks)
        j = _best(masks, vals, maximize=True)
        return _selection(u, start, masks[j], method, vals[j])
    S, val = _greedy_add(u, u.values, maximize=True, max_size=k, forced=True)
    return _selection(u, start, S, method, val)


def high_value_subset_regularized(u: SetFunction, lam: float, solver: str = EXHAUSTIVE) -> Explanation:
    """``argmax_S u(S) - lam |S|``."""
    _check_solver(solver)
    d, start = u.dim, u.eval_count
    method = {"summary": "high_value_subset_regularized", "lam": lam, "solver": solver}

    def objective(masks):
        return u.values(masks) - _penalty(lam, masks)

    if solver == EXHAUSTIVE:
        check_enumerable(d)
        masks = all_masks(d)
        obj = objective(masks)
        j = _best(masks, obj, maximize=True)
        return _selection(u, start, masks[j], method, obj[j])
    S, val = _greedy_add(u, objective, maximize=True)
    return _selection(u, start, S, method, val)


def partitioned_subsets(u: SetFunction, lam: float, gamma: float, solver: str = EXHAUSTIVE) -> Explanation:
    """``argmax_S u(S) - lam u(D minus S) - gamma |S|``."""
    _check_solver(solver)
    d, start, full = u.dim, u.eval_count, full_mask(u.dim)
    method = {"summary": "partitioned_subsets", "lam": lam, "gamma": gamma, "solver": solver}

    def objective(masks):
        return u.values(masks) - lam * u.values(full ^ masks) - _penalty(gamma, masks)

    if solver == EXHAUSTIVE:
        check_enumerable(d)
        masks = all_masks(d)
        obj = objective(masks)
        j = _best(masks, obj, maximize=True)
        return _selection(u, start, masks[j], method, obj[j])
    S, val = _greedy_add(u, objective, maximize=True)
    return _selection(u, start, S, method, val)
