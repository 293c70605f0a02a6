"""Feature-removal strategies: build a SubsetFunction from a model.

Every strategy here short-circuits to ``f(x)`` when all features are present.
Sampled strategies draw their randomness from ``counter_uniforms`` keyed by
(seed, subset, sample index), never from the values of removed features.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import ndtr, ndtri

from .core import FeatureSubset, PredictionModel, SubsetFunction, counter_uniforms
from .data import CATEGORICAL, BackgroundData
from .errors import (
    DegenerateBounds,
    DegenerateColumn,
    DimensionMismatch,
    EmptyBackground,
    MissingCoverage,
    MissingSubsetModel,
    NoMatchingRows,
    NotPositiveDefinite,
    PreconditionViolation,
    ProductTooLarge,
)
from .models import DecisionTreeModel, SubsetModelTable

EXACT = "exact"
SAMPLED = "sampled"
MEAN_PLUGIN = "mean"

PRODUCT_CAP = 10**7
_CHUNK_ROWS = 1 << 18


def _mean(values: np.ndarray, axis: int) -> np.ndarray:
    # Shifted mean: exact whenever all values coincide.
    ref = np.take(values, [0], axis=axis)
    return np.squeeze(ref, axis=axis) + np.mean(values - ref, axis=axis)


def _averaged(f: PredictionModel, X: np.ndarray, fill) -> np.ndarray:
    """Mean of ``f`` over ``m`` completions per row.

    ``fill(rows)`` returns the completed inputs of shape ``(len(rows), m, d)``.
    Rows are processed in chunks so that at most ~``_CHUNK_ROWS`` model rows
    are materialized at once.
    """
    n = X.shape[0]
    probe = fill(np.arange(min(1, n)))
    m = probe.shape[1]
    step = max(1, _CHUNK_ROWS // max(m, 1))
    out = []
    for start in range(0, n, step):
        rows = np.arange(start, min(n, start + step))
        Z = probe if start == 0 and len(rows) == probe.shape[0] else fill(rows)
        pred = f.predict(Z.reshape(-1, X.shape[1])).reshape(len(rows), m, f.out_dim)
        out.append(_mean(pred, axis=1))
    return np.concatenate(out, axis=0)


def _check_model(f: PredictionModel, dim: int):
    if f.dim != dim:
        raise DimensionMismatch(f"model has {f.dim} features, data has {dim}")


def _check_samples(n_samples):
    if n_samples is None or int(n_samples) < 1:
        raise ValueError("n_samples must be >= 1")
    return int(n_samples)


# Fixed baselines ---------------------------------------------------------


class FixedBaselineRemoval(SubsetFunction):
    kind = "fixed_baseline"

    def __init__(self, f: PredictionModel, baseline):
        baseline = np.asarray(baseline, dtype=float).reshape(-1)
        if baseline.size != f.dim:
            raise DimensionMismatch(f"baseline has {baseline.size} entries, model has {f.dim} features")
        if not np.all(np.isfinite(baseline)):
            raise ValueError("baseline must be finite")
        super().__init__(f.dim, f.out_dim, extension_of=f)
        self.f = f
        self.baseline = baseline

    def _evaluate(self, X, s, seeds):
        keep = s.mask
        Z = np.where(keep, X, self.baseline)
        return self.f.predict(Z)

    def describe(self):
        return {"kind": self.kind, "baseline": self.baseline.tolist()}


def fixed_baseline_removal(f: PredictionModel, baseline) -> FixedBaselineRemoval:
    """Replace removed features with fixed values (zeros or user defaults)."""
    return FixedBaselineRemoval(f, baseline)


# Marginal and product-of-marginals --------------------------------------


class MarginalRemoval(SubsetFunction):
    kind = "marginal"

    def __init__(self, f, bg: BackgroundData, mode=EXACT, n_samples=None):
        _check_model(f, bg.dim)
        super().__init__(f.dim, f.out_dim, extension_of=f)
        self.f = f
        self.bg = bg
        self.mode = mode
        self.n_samples = _check_samples(n_samples) if mode == SAMPLED else None
        if mode not in (EXACT, SAMPLED):
            raise ValueError(f"unknown mode {mode!r}")

    def _evaluate(self, X, s, seeds):
        keep = s.mask
        rows = self.bg.rows
        if self.mode == EXACT:
            return _averaged(self.f, X, lambda r: np.where(keep, X[r, None, :], rows[None, :, :]))
        u = counter_uniforms(seeds, s.bits, self.n_samples, 1)[..., 0]
        idx = np.minimum((u * self.bg.n).astype(np.int64), self.bg.n - 1)
        return _averaged(self.f, X, lambda r: np.where(keep, X[r, None, :], rows[idx[r]]))

    def describe(self):
        return {"kind": self.kind, "mode": self.mode, "n_samples": self.n_samples}


def marginal_removal(f, bg: BackgroundData, mode: str = EXACT, n_samples: int | None = None) -> MarginalRemoval:
    """Average ``f(x_S, r_notS)`` over background rows ``r`` (all rows, or a seeded sample)."""
    if bg.n == 0:
        raise EmptyBackground("background data is empty")
    return MarginalRemoval(f, bg, mode, n_samples)


class ProductOfMarginalsRemoval(SubsetFunction):
    kind = "product_of_marginals"

    def __init__(self, f, bg: BackgroundData, mode=EXACT, n_samples=None):
        _check_model(f, bg.dim)
        super().__init__(f.dim, f.out_dim, extension_of=f)
        if mode not in (EXACT, SAMPLED):
            raise ValueError(f"unknown mode {mode!r}")
        self.f = f
        self.bg = bg
        self.mode = mode
        self.n_samples = _check_samples(n_samples) if mode == SAMPLED else None

    def _evaluate(self, X, s, seeds):
        keep = s.mask
        held = np.nonzero(~keep)[0]
        rows = self.bg.rows
        nb = self.bg.n
        if self.mode == EXACT:
            terms = nb ** len(held)
            if terms > PRODUCT_CAP:
                raise ProductTooLarge(f"{terms} Cartesian terms exceed the cap of {PRODUCT_CAP}; use sampled mode")
            # every combination of per-column row indices, first held column slowest
            grid = np.indices((nb,) * len(held)).reshape(len(held), -1)
            comp = np.empty((grid.shape[1], self.dim))
            for c, j in enumerate(held):
                comp[:, j] = rows[grid[c], j]
            return _averaged(self.f, X, lambda r: np.where(keep, X[r, None, :], comp[None, :, :]))
        u = counter_uniforms(seeds, s.bits, self.n_samples, self.dim)
        idx = np.minimum((u * nb).astype(np.int64), nb - 1)
        cols = np.arange(self.dim)
        return _averaged(self.f, X, lambda r: np.where(keep, X[r, None, :], rows[idx[r], cols]))

    def describe(self):
        return {"kind": self.kind, "mode": self.mode, "n_samples": self.n_samples}


def product_of_marginals_removal(f, bg: BackgroundData, mode: str = EXACT, n_samples: int | None = None):
    """Average over independent draws of each removed column from its own marginal."""
    if bg.n == 0:
        raise EmptyBackground("background data is empty")
    return ProductOfMarginalsRemoval(f, bg, mode, n_samples)


# Uniform -----------------------------------------------------------------


@dataclass(frozen=True)
class FeatureBounds:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).reshape(-1)
        hi = np.asarray(self.hi, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise DimensionMismatch("lo and hi must have the same length")
        if np.any(lo > hi):
            raise DegenerateBounds("every lower bound must be <= its upper bound")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_data(cls, bg: BackgroundData) -> FeatureBounds:
        return cls(bg.rows.min(axis=0), bg.rows.max(axis=0))


class UniformRemoval(SubsetFunction):
    kind = "uniform"

    def __init__(self, f, bounds: FeatureBounds, n_samples: int):
        if bounds.lo.size != f.dim:
            raise DimensionMismatch("bounds must cover every feature")
        super().__init__(f.dim, f.out_dim, extension_of=f)
        self.f = f
        self.bounds = bounds
        self.n_samples = _check_samples(n_samples)

    def _evaluate(self, X, s, seeds):
        keep = s.mask
        u = counter_uniforms(seeds, s.bits, self.n_samples, self.dim)
        draws = self.bounds.lo + u * (self.bounds.hi - self.bounds.lo)
        return _averaged(self.f, X, lambda r: np.where(keep, X[r, None, :], draws[r]))

    def describe(self):
        return {"kind": self.kind, "n_samples": self.n_samples}


def uniform_removal(f, bounds: FeatureBounds, n_samples: int) -> UniformRemoval:
    """Monte Carlo average over removed features drawn uniformly within bounds."""
    return UniformRemoval(f, bounds, n_samples)


# Replacement distributions ----------------------------------------------


@dataclass(frozen=True)
class _CategoricalSampler:
    values: np.ndarray
    probs: np.ndarray

    def sample(self, x: np.ndarray, u: np.ndarray, u2: np.ndarray) -> np.ndarray:
        # p(X_i | X_i != x_i): drop the observed value and renormalize
        w = np.where(self.values[None, :] == x[:, None], 0.0, self.probs[None, :])
        cdf = np.cumsum(w, axis=1)
        cdf /= cdf[:, -1:]
        out = np.empty(u.shape)
        for r in range(x.shape[0]):
            k = np.searchsorted(cdf[r], u[r], side="right")
            out[r] = self.values[np.minimum(k, self.values.size - 1)]
        return out


@dataclass(frozen=True)
class _QuantileBinSampler:
    edges: np.ndarray  # bin boundaries, length n_bins + 1
    means: np.ndarray
    stds: np.ndarray

    @property
    def n_bins(self) -> int:
        return self.means.size

    def bin_of(self, x: np.ndarray) -> np.ndarray:
        return np.searchsorted(self.edges[1:-1], x, side="left")

    def sample(self, x: np.ndarray, u: np.ndarray, u2: np.ndarray) -> np.ndarray:
        own = self.bin_of(x)[:, None]
        k = np.minimum((u * (self.n_bins - 1)).astype(np.int64), self.n_bins - 2)
        b = k + (k >= own)
        lo, hi = self.edges[b], self.edges[b + 1]
        mu, sd = self.means[b], self.stds[b]
        with np.errstate(divide="ignore", invalid="ignore"):
            a_cdf = ndtr((lo - mu) / sd)
            b_cdf = ndtr((hi - mu) / sd)
            z = ndtri(a_cdf + u2 * (b_cdf - a_cdf))
            out = mu + sd * z
        flat = ~np.isfinite(out) | (sd <= 0) | (b_cdf - a_cdf < 1e-15)
        out = np.where(flat, np.where(sd <= 0, mu, lo + u2 * (hi - lo)), out)
        return np.clip(out, lo, hi)


class ReplacementDistributionSet:
    """Per-feature replacement samplers ``q_{x_i}`` built from background data.

    Categorical features draw from the empirical distribution with the
    observed value excluded. Continuous features pick a different quantile
    bin uniformly, then draw a truncated normal fitted to that bin.
    """

    def __init__(self, samplers: list, n_bins: int):
        self.samplers = samplers
        self.n_bins = n_bins

    @property
    def dim(self) -> int:
        return len(self.samplers)

    @classmethod
    def from_background(cls, bg: BackgroundData, n_bins: int = 4) -> ReplacementDistributionSet:
        samplers = []
        for j, kind in enumerate(bg.column_kinds):
            col = bg.rows[:, j]
            if kind == CATEGORICAL:
                vals, counts = np.unique(col, return_counts=True)
                if vals.size < 2:
                    raise DegenerateColumn(f"categorical column {j} has a single distinct value")
                samplers.append(_CategoricalSampler(vals, counts / counts.sum()))
                continue
            edges = np.unique(np.quantile(col, np.linspace(0, 1, n_bins + 1), method="linear"))
            if edges.size < 3:
                raise DegenerateColumn(f"continuous column {j} yields fewer than two quantile bins")
            nb = edges.size - 1
            which = np.searchsorted(edges[1:-1], col, side="left")
            means = np.empty(nb)
            stds = np.empty(nb)
            for b in range(nb):
                members = col[which == b]
                if members.size:
                    means[b], stds[b] = members.mean(), members.std()
                else:
                    means[b], stds[b] = 0.5 * (edges[b] + edges[b + 1]), 0.0
            samplers.append(_QuantileBinSampler(edges, means, stds))
        return cls(samplers, n_bins)

    def sample(self, j: int, x_j: np.ndarray, u: np.ndarray, u2: np.ndarray) -> np.ndarray:
        """Replacements for feature ``j`` given original values ``x_j`` (one per row of ``u``)."""
        return self.samplers[j].sample(np.asarray(x_j, dtype=float), u, u2)


class ReplacementRemoval(SubsetFunction):
    kind = "replacement_distribution"

    def __init__(self, f, q: ReplacementDistributionSet, n_samples: int):
        _check_model(f, q.dim)
        # agrees with f at S = D but depends on removed values, so not invariant
        super().__init__(f.dim, f.out_dim, is_invariant=False, extension_of=f)
        self.f = f
        self.q = q
        self.n_samples = _check_samples(n_samples)

    def _evaluate(self, X, s, seeds):
        keep = s.mask
        u = counter_uniforms(seeds, s.bits, self.n_samples, 2 * self.dim)
        draws = np.repeat(X[:, None, :], self.n_samples, axis=1)
        for j in np.nonzero(~keep)[0]:
            draws[:, :, j] = self.q.sample(j, X[:, j], u[:, :, 2 * j], u[:, :, 2 * j + 1])
        return _averaged(self.f, X, lambda r: draws[r])

    def describe(self):
        return {"kind": self.kind, "n_samples": self.n_samples, "n_bins": self.q.n_bins}


def replacement_distribution_removal(f, q: ReplacementDistributionSet, n_samples: int) -> ReplacementRemoval:
    return ReplacementRemoval(f, q, n_samples)


# Conditional distributions -----------------------------------------------


@dataclass(frozen=True)
class GaussianSpec:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise DimensionMismatch("covariance must be d x d")
        if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-12:
            raise NotPositiveDefinite("covariance matrix is not symmetric")
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise NotPositiveDefinite("covariance matrix is not positive definite") from None
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @classmethod
    def from_data(cls, bg: BackgroundData) -> GaussianSpec:
        cov = np.atleast_2d(np.cov(bg.rows, rowvar=False))
        return cls(bg.rows.mean(axis=0), 0.5 * (cov + cov.T))

    @property
    def dim(self) -> int:
        return self.mean.size


class ConditionalGaussianRemoval(SubsetFunction):
    kind = "conditional_gaussian"

    def __init__(self, f, g: GaussianSpec, mode=MEAN_PLUGIN, n_samples=None):
        _check_model(f, g.dim)
        if mode not in (MEAN_PLUGIN, SAMPLED):
            raise ValueError(f"unknown mode {mode!r}")
        super().__init__(f.dim, f.out_dim, extension_of=f)
        self.f = f
        self.g = g
        self.mode = mode
        self.n_samples = _check_samples(n_samples) if mode == SAMPLED else None
        self._plans: dict[int, tuple] = {}

    def _plan(self, s: FeatureSubset):
        plan = self._plans.get(s.bits)
        if plan is None:
            S = np.array(s.indices(), dtype=np.int64)
            R = np.array(s.complement().indices(), dtype=np.int64)
            cov = self.g.cov
            if S.size:
                factor = scipy.linalg.cho_factor(cov[np.ix_(S, S)])
                K = scipy.linalg.cho_solve(factor, cov[np.ix_(S, R)]).T
                cond = cov[np.ix_(R, R)] - K @ cov[np.ix_(S, R)]
            else:
                K = np.zeros((R.size, 0))
                cond = cov[np.ix_(R, R)]
            cond = 0.5 * (cond + cond.T)
            # conditional covariance can be PSD-singular; eigen-factor instead of Cholesky
            w, V = np.linalg.eigh(cond)
            L = V * np.sqrt(np.clip(w, 0.0, None))
            plan = (S, R, K, L)
            self._plans[s.bits] = plan
        return plan

    def conditional_mean(self, X: np.ndarray, s: FeatureSubset) -> np.ndarray:
        S, R, K, _ = self._plan(s)
        mu = self.g.mean
        return mu[R] + (X[:, S] - mu[S]) @ K.T

    def _evaluate(self, X, s, seeds):
        S, R, K, L = self._plan(s)
        cmean = self.conditional_mean(X, s)
        if self.mode == MEAN_PLUGIN:
            Z = X.copy()
            Z[:, R] = cmean
            return self.f.predict(Z)
        z = ndtri(counter_uniforms(seeds, s.bits, self.n_samples, R.size))
        draws = cmean[:, None, :] + z @ L.T

        def fill(r):
            Z = np.repeat(X[r, None, :], self.n_samples, axis=1)
            Z[:, :, R] = draws[r]
            return Z

        return _averaged(self.f, X, fill)

    def describe(self):
        return {"kind": self.kind, "mode": self.mode, "n_samples": self.n_samples}


def conditional_gaussian_removal(f, g: GaussianSpec, mode: str = MEAN_PLUGIN, n_samples: int | None = None):
    """Marginalize removed features with their Gaussian conditional given ``x_S``.

    ``mode="mean"`` plugs in the conditional mean (exact for linear ``f``);
    ``mode="sampled"`` averages over ``n_samples`` conditional draws.
    """
    return ConditionalGaussianRemoval(f, g, mode, n_samples)


class ConditionalEmpiricalRemoval(SubsetFunction):
    kind = "conditional_empirical"

    def __init__(self, f, bg: BackgroundData):
        _check_model(f, bg.dim)
        super().__init__(f.dim, f.out_dim, extension_of=f)
        self.f = f
        self.bg = bg
        self.categorical = np.array([k == CATEGORICAL for k in bg.column_kinds])
        self._bg_pred = None

    def _evaluate(self, X, s, seeds):
        keep = s.mask
        if np.any(keep & ~self.categorical):
            raise PreconditionViolation("empirical conditioning needs every retained feature to be categorical")
        if self._bg_pred is None:
            self._bg_pred = self.f.predict(self.bg.rows)
        S = np.nonzero(keep)[0]
        key = self.bg.rows[:, S]
        out = np.empty((X.shape[0], self.out_dim))
        for r in range(X.shape[0]):
            match = np.all(key == X[r, S], axis=1)
            if not match.any():
                raise NoMatchingRows(f"no background row matches x_S={X[r, S].tolist()} on features {S.tolist()}")
            out[r] = _mean(self._bg_pred[match], axis=0)
        return out


def conditional_empirical_removal(f, bg: BackgroundData) -> ConditionalEmpiricalRemoval:
    """Average ``f`` over background rows that match ``x`` exactly on the retained categorical features."""
    return ConditionalEmpiricalRemoval(f, bg)


# Tree distribution -------------------------------------------------------


class TreeDistributionRemoval(SubsetFunction):
    kind = "tree_distribution"

    def __init__(self, t: DecisionTreeModel):
        cov = t.coverage
        if cov is None or cov.size != t.n_nodes:
            raise MissingCoverage("tree nodes carry no training coverage counts")
        internal = t.feature >= 0
        if np.any(cov[internal] <= 0):
            raise MissingCoverage("internal node with zero coverage")
        super().__init__(t.dim, t.out_dim, extension_of=t)
        self.tree = t

    def _evaluate(self, X, s, seeds):
        t = self.tree
        keep = s.mask

        def walk(k, rows):
            f = t.feature[k]
            if f < 0:
                return np.broadcast_to(t.value[k], (rows.size, t.out_dim))
            out = np.empty((rows.size, t.out_dim))
            if keep[f]:
                go_left = X[rows, f] <= t.threshold[k]
                out[go_left] = walk(t.left[k], rows[go_left])
                out[~go_left] = walk(t.right[k], rows[~go_left])
                return out
            l, r = t.left[k], t.right[k]
            wl = t.coverage[l] / t.coverage[k]
            wr = t.coverage[r] / t.coverage[k]
            return wl * walk(l, rows) + wr * walk(r, rows)

        return walk(0, np.arange(X.shape[0]))


def tree_distribution_removal(t: DecisionTreeModel) -> TreeDistributionRemoval:
    """At splits on removed features, average both children by training coverage."""
    return TreeDistributionRemoval(t)


# Separate models ---------------------------------------------------------


class SeparateModelsRemoval(SubsetFunction):
    kind = "separate_models"

    def __init__(self, table: SubsetModelTable):
        full = (1 << table.dim) - 1
        if full not in table.models:
            raise MissingSubsetModel("the table has no model for the full feature set")
        super().__init__(table.dim, table.out_dim, extension_of=_ColumnsModel(table.models[full], table.dim))
        self.table = table

    def _evaluate(self, X, s, seeds):
        try:
            model = self.table.models[s.bits]
        except KeyError:
            raise MissingSubsetModel(f"no model for subset {s!r}") from None
        return model.predict(X[:, list(s.indices())])

    def describe(self):
        return {"kind": self.kind, "family": self.table.family}


class _ColumnsModel(PredictionModel):
    """The full-subset model viewed as a model on all ``dim`` columns."""

    def __init__(self, model: PredictionModel, dim: int):
        self.model = model
        self.dim = dim
        self.out_dim = model.out_dim

    def _predict(self, X):
        return self.model.predict(X)


def separate_models_removal(table: SubsetModelTable) -> SeparateModelsRemoval:
    """``F(x, S) = f_S(x_S)`` from a table of per-subset models."""
    return SeparateModelsRemoval(table)
