"""Feature subsets, subset functions, set functions and explanation containers.

Subsets are bitmasks: bit ``i`` is set iff feature ``i`` is present. A
``SubsetFunction`` evaluates a model with only a subset of its inputs, and a
``SetFunction`` is the cached scalar game ``u(S)`` that summaries explain.
"""
from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Iterator

import numpy as np

from .errors import DimensionMismatch, DimensionTooLarge, PreconditionViolation

MAX_DIM = 63
MAX_ENUM_DIM = 25


@dataclass(frozen=True, order=True)
class FeatureSubset:
    """A subset ``S`` of the feature indices ``{0, ..., dim-1}``."""

    bits: int
    dim: int

    def __post_init__(self):
        if not 1 <= self.dim <= MAX_DIM:
            raise DimensionTooLarge(f"dim must lie in [1, {MAX_DIM}], got {self.dim}")
        if self.bits < 0 or self.bits >> self.dim:
            raise ValueError(f"bits {self.bits:#x} out of range for dim {self.dim}")

    @classmethod
    def from_indices(cls, indices: Iterable[int], dim: int) -> FeatureSubset:
        bits = 0
        for i in indices:
            i = int(i)
            if not 0 <= i < dim:
                raise ValueError(f"feature index {i} out of range for dim {dim}")
            bits |= 1 << i
        return cls(bits, dim)

    @classmethod
    def empty(cls, dim: int) -> FeatureSubset:
        return cls(0, dim)

    @classmethod
    def full(cls, dim: int) -> FeatureSubset:
        return cls(full_mask(dim), dim)

    def complement(self) -> FeatureSubset:
        return FeatureSubset(self.bits ^ full_mask(self.dim), self.dim)

    def indices(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.dim) if self.bits >> i & 1)

    def with_feature(self, i: int) -> FeatureSubset:
        return FeatureSubset(self.bits | 1 << i, self.dim)

    def without_feature(self, i: int) -> FeatureSubset:
        return FeatureSubset(self.bits & ~(1 << i), self.dim)

    @property
    def mask(self) -> np.ndarray:
        return np.array([bool(self.bits >> i & 1) for i in range(self.dim)])

    @property
    def is_full(self) -> bool:
        return self.bits == full_mask(self.dim)

    def __contains__(self, i: object) -> bool:
        return isinstance(i, (int, np.integer)) and 0 <= i < self.dim and bool(self.bits >> int(i) & 1)

    def __iter__(self) -> Iterator[int]:
        return iter(self.indices())

    def __len__(self) -> int:
        return self.bits.bit_count()

    def __repr__(self) -> str:
        return "{" + ",".join(map(str, self.indices())) + f"}}/{self.dim}"


def full_mask(dim: int) -> int:
    return (1 << dim) - 1


def as_subset(s: FeatureSubset | int | Iterable[int], dim: int) -> FeatureSubset:
    """Coerce a subset, a bitmask integer, or an iterable of indices."""
    if isinstance(s, FeatureSubset):
        if s.dim != dim:
            raise DimensionMismatch(f"subset has dim {s.dim}, expected {dim}")
        return s
    if isinstance(s, (int, np.integer)):
        return FeatureSubset(int(s), dim)
    return FeatureSubset.from_indices(s, dim)


def subset_complement(s: FeatureSubset) -> FeatureSubset:
    return s.complement()


def enumerate_subsets(d: int) -> Iterator[FeatureSubset]:
    """Yield all ``2**d`` subsets in ascending bitmask order."""
    check_enumerable(d)
    for bits in range(1 << d):
        yield FeatureSubset(bits, d)


def check_enumerable(d: int, cap: int = MAX_ENUM_DIM) -> None:
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    if d > cap:
        raise DimensionTooLarge(f"exhaustive enumeration is capped at d <= {cap}, got d={d}")


def all_masks(d: int) -> np.ndarray:
    check_enumerable(d)
    return np.arange(1 << d, dtype=np.int64)


def popcount(masks: np.ndarray) -> np.ndarray:
    return np.bitwise_count(np.asarray(masks, dtype=np.uint64)).astype(np.int64)


# Counter-based random numbers. Every draw is a pure function of
# (seed, subset bits, sample index, coordinate), so sampled evaluations do not
# depend on call order or thread count.

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _splitmix(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = z + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _as_u64(values) -> np.ndarray:
    arr = np.asarray(values)
    if arr.dtype == np.uint64:
        return arr
    return np.asarray(arr, dtype=np.int64).astype(np.uint64)


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministically mix integer keys into a new 63-bit seed."""
    h = _splitmix(_as_u64(np.array([seed])))
    for k in keys:
        h = _splitmix(h ^ _splitmix(_as_u64(np.array([k]))))
    return int(h[0] >> np.uint64(1))


def row_seeds(seed: int, n: int) -> np.ndarray:
    """Per-row seeds used by dataset-level behaviors (row ``r`` -> derive_seed(seed, r))."""
    rows = _splitmix(np.arange(n, dtype=np.uint64))
    h = _splitmix(_splitmix(_as_u64(np.array([seed]))) ^ rows)
    return (h >> np.uint64(1)).astype(np.int64)


def counter_uniforms(seeds: np.ndarray, bits: int, n_samples: int, n_coords: int) -> np.ndarray:
    """Uniform(0, 1) draws of shape ``(len(seeds), n_samples, n_coords)``."""
    seeds = _as_u64(np.atleast_1d(seeds))
    base = _splitmix(_splitmix(seeds) ^ _splitmix(_as_u64(np.array([bits]))))
    counters = _splitmix(np.arange(n_samples * n_coords, dtype=np.uint64)).reshape(n_samples, n_coords)
    h = _splitmix(base[:, None, None] ^ counters[None, :, :])
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


class PredictionModel:
    """A deterministic model ``f: R^dim -> R^out_dim``.

    Subclasses implement ``_predict`` on 2-D input; ``predict`` accepts a single
    row or a batch and always routes through the same code path.
    """

    dim: int
    out_dim: int

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        if X.shape[1] != self.dim:
            raise DimensionMismatch(f"model expects {self.dim} features, got {X.shape[1]}")
        out = np.asarray(self._predict(X), dtype=float).reshape(X.shape[0], self.out_dim)
        return out[0] if single else out

    __call__ = predict

    def _predict(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class CallableModel(PredictionModel):
    """Wraps a vectorized callable mapping ``(n, dim)`` to ``(n,)`` or ``(n, out_dim)``."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], dim: int, out_dim: int = 1, name: str = "callable"):
        self.fn = fn
        self.dim = dim
        self.out_dim = out_dim
        self.name = name

    def _predict(self, X):
        return self.fn(X)


class SubsetFunction:
    """Evaluates a model with only the features in ``S`` available.

    ``F(x, S, seed)`` accepts a row or an ``(n, dim)`` batch. ``seed`` is an
    int shared by all rows or one seed per row. When the function extends a
    model, evaluation at ``S = D`` returns ``f(x)`` directly.
    """

    kind = "subset_function"

    def __init__(self, dim: int, out_dim: int, *, is_invariant: bool = True,
                 extension_of: PredictionModel | None = None):
        self.dim = dim
        self.out_dim = out_dim
        self.is_invariant = is_invariant
        self.extension_of = extension_of

    def __call__(self, x, s, seed=0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        if X.shape[1] != self.dim:
            raise DimensionMismatch(f"expected {self.dim} features, got {X.shape[1]}")
        s = as_subset(s, self.dim)
        seeds = np.asarray(seed, dtype=np.int64)
        seeds = np.broadcast_to(seeds, (X.shape[0],)) if seeds.ndim == 0 else seeds
        if seeds.shape != (X.shape[0],):
            raise DimensionMismatch("need one seed per row")
        if s.is_full and self.extension_of is not None:
            out = self.extension_of.predict(X)
        else:
            out = self._evaluate(X, s, seeds)
        out = np.asarray(out, dtype=float).reshape(X.shape[0], self.out_dim)
        return out[0] if single else out

    def _evaluate(self, X: np.ndarray, s: FeatureSubset, seeds: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def describe(self) -> dict[str, Any]:
        return {"kind": self.kind}


class SetFunction:
    """A cached game ``u: P(D) -> R``.

    Distinct subsets are evaluated once; ``eval_count`` is the number of
    distinct evaluations. Concurrent readers are safe and a subset evaluated
    by two threads at once is stored (and counted) once.
    """

    def __init__(self, dim: int, fn: Callable[[FeatureSubset], float], *, threads: int = 1, name: str | None = None):
        if not 1 <= dim <= MAX_DIM:
            raise DimensionTooLarge(f"dim must lie in [1, {MAX_DIM}], got {dim}")
        self.dim = dim
        self.threads = threads
        self.name = name
        self._fn = fn
        self._cache: dict[int, float] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_table(cls, values, name: str | None = None) -> SetFunction:
        """Game defined by an explicit table indexed by bitmask."""
        values = np.asarray(values, dtype=float)
        d = int(np.log2(len(values)))
        if len(values) != 1 << d:
            raise ValueError("table length must be a power of two")
        return cls(d, lambda s: values[s.bits], name=name or "table")

    @property
    def eval_count(self) -> int:
        return len(self._cache)

    @property
    def cache(self) -> dict[int, float]:
        with self._lock:
            return dict(self._cache)

    def _compute(self, bits: int) -> float:
        val = float(self._fn(FeatureSubset(bits, self.dim)))
        with self._lock:
            return self._cache.setdefault(bits, val)

    def __call__(self, s) -> float:
        bits = s.bits if isinstance(s, FeatureSubset) else int(s) if isinstance(s, (int, np.integer)) else as_subset(s, self.dim).bits
        try:
            return self._cache[bits]
        except KeyError:
            if bits < 0 or bits >> self.dim:
                raise ValueError(f"bits {bits:#x} out of range for dim {self.dim}") from None
            return self._compute(bits)

    def values(self, masks) -> np.ndarray:
        """Evaluate many bitmasks; uncached ones may run on a thread pool."""
        masks = np.asarray(masks, dtype=np.int64)
        flat = masks.ravel()
        uniq = np.unique(flat)
        missing = [int(b) for b in uniq if int(b) not in self._cache]
        if missing:
            if self.threads > 1 and len(missing) > 1:
                with ThreadPoolExecutor(self.threads) as pool:
                    list(pool.map(self._compute, missing))
            else:
                for b in missing:
                    self._compute(b)
        lookup = np.array([self._cache[int(b)] for b in uniq])
        return lookup[np.searchsorted(uniq, flat)].reshape(masks.shape)

    def table(self) -> np.ndarray:
        """All ``2**dim`` values, indexed by bitmask."""
        return self.values(all_masks(self.dim))

    @property
    def full_value(self) -> float:
        return self(full_mask(self.dim))

    @property
    def empty_value(self) -> float:
        return self(0)


ATTRIBUTION = "attribution"
SELECTION = "selection"


@dataclass
class Explanation:
    kind: str
    scores: np.ndarray | None = None
    stderr: np.ndarray | None = None
    selected: FeatureSubset | None = None
    method: dict = field(default_factory=dict)
    evaluations_used: int = 0
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind == ATTRIBUTION:
            if self.scores is None or self.selected is not None:
                raise ValueError("attribution explanations carry scores and no selection")
            self.scores = np.asarray(self.scores, dtype=float)
            if self.stderr is not None:
                self.stderr = np.asarray(self.stderr, dtype=float)
                if self.stderr.shape != self.scores.shape or np.any(self.stderr < 0):
                    raise ValueError("stderr must match scores and be nonnegative")
        elif self.kind == SELECTION:
            if self.selected is None or self.scores is not None:
                raise ValueError("selection explanations carry a subset and no scores")
        else:
            raise ValueError(f"unknown explanation kind {self.kind!r}")


def check_invariance(F: SubsetFunction, x, x_alt, s, seed: int = 0) -> bool:
    """True iff ``F(x, S) == F(x_alt, S)`` exactly for inputs agreeing on ``S``."""
    x = np.asarray(x, dtype=float)
    x_alt = np.asarray(x_alt, dtype=float)
    s = as_subset(s, F.dim)
    idx = list(s.indices())
    if not np.array_equal(x[idx], x_alt[idx]):
        raise PreconditionViolation("x and x_alt must agree on the retained features")
    return bool(np.array_equal(F(x, s, seed), F(x_alt, s, seed)))


def check_extension(F: SubsetFunction, f: PredictionModel, probes) -> bool:
    """True iff ``F(x, D) == f(x)`` exactly for every probe."""
    if F.dim != f.dim:
        raise DimensionMismatch("subset function and model dims differ")
    full = FeatureSubset.full(F.dim)
    for x in np.atleast_2d(np.asarray(probes, dtype=float)):
        if not np.array_equal(F(x, full), f.predict(x)):
            return False
    return True
