import threading
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from remex.core import (
    ATTRIBUTION,
    SELECTION,
    CallableModel,
    Explanation,
    FeatureSubset,
    SetFunction,
    all_masks,
    as_subset,
    check_extension,
    check_invariance,
    counter_uniforms,
    derive_seed,
    enumerate_subsets,
    popcount,
    row_seeds,
    subset_complement,
)
from remex.errors import DimensionMismatch, DimensionTooLarge, PreconditionViolation
from remex.models import LinearModel
from remex.removal import FeatureBounds, fixed_baseline_removal, marginal_removal, uniform_removal
from remex.data import BackgroundData


def subset(indices, d):
    return FeatureSubset.from_indices(indices, d)


def test_complement_examples():
    assert subset_complement(subset([], 3)) == subset([0, 1, 2], 3)
    assert subset_complement(subset([0, 2], 3)) == subset([1], 3)
    assert subset_complement(subset([0, 1, 2], 3)) == subset([], 3)


def test_enumerate_examples():
    assert [s.indices() for s in enumerate_subsets(1)] == [(), (0,)]
    assert [s.indices() for s in enumerate_subsets(2)] == [(), (0,), (1,), (0, 1)]
    with pytest.raises(DimensionTooLarge):
        list(enumerate_subsets(26))


@pytest.mark.parametrize("d", [1, 3, 7, 10])
def test_enumerate_is_complete_and_ordered(d):
    subs = list(enumerate_subsets(d))
    assert len(subs) == 2**d
    assert len({s.bits for s in subs}) == 2**d
    assert [s.bits for s in subs] == sorted(s.bits for s in subs)


def test_subset_validation():
    with pytest.raises(ValueError):
        FeatureSubset(0b100, 2)
    with pytest.raises(ValueError):
        FeatureSubset.from_indices([3], 3)
    with pytest.raises(DimensionTooLarge):
        FeatureSubset(0, 64)
    s = subset([1, 3], 5)
    assert len(s) == 2 and 3 in s and 0 not in s
    assert list(s) == [1, 3]
    assert s.mask.tolist() == [False, True, False, True, False]
    assert repr(s) == "{1,3}/5"
    assert s.with_feature(0).indices() == (0, 1, 3)
    assert s.without_feature(3).indices() == (1,)
    assert FeatureSubset.full(63).is_full


def test_as_subset_forms():
    assert as_subset(5, 3) == subset([0, 2], 3)
    assert as_subset([0, 2], 3) == subset([0, 2], 3)
    assert as_subset(subset([1], 3), 3) == subset([1], 3)
    with pytest.raises(DimensionMismatch):
        as_subset(subset([1], 4), 3)


@given(st.integers(1, 63).flatmap(lambda d: st.tuples(st.just(d), st.integers(0, 2**d - 1))))
def test_complement_properties(args):
    d, bits = args
    s = FeatureSubset(bits, d)
    c = s.complement()
    assert c.complement() == s
    assert s.bits & c.bits == 0
    assert s.bits | c.bits == (1 << d) - 1
    assert len(s) + len(c) == d


def test_popcount_matches_python():
    masks = all_masks(12)
    assert popcount(masks).tolist() == [bin(int(m)).count("1") for m in masks]


def test_counter_uniforms_contract():
    seeds = row_seeds(7, 5)
    u = counter_uniforms(seeds, 0b101, 64, 3)
    assert u.shape == (5, 64, 3)
    assert np.all((u > 0) & (u < 1))
    np.testing.assert_array_equal(u, counter_uniforms(seeds, 0b101, 64, 3))
    # a prefix of the sample axis does not depend on how many samples were requested
    np.testing.assert_array_equal(u[:, :10], counter_uniforms(seeds, 0b101, 10, 3)[:, :, :3][:, :10])
    assert not np.array_equal(u, counter_uniforms(seeds, 0b100, 64, 3))
    assert not np.array_equal(row_seeds(7, 5), row_seeds(8, 5))
    assert derive_seed(3, 1) == derive_seed(3, 1) != derive_seed(3, 2)
    # roughly uniform
    big = counter_uniforms(np.array([1]), 0, 20000, 1).ravel()
    assert abs(big.mean() - 0.5) < 0.01


def test_setfunction_cache_and_count():
    calls = []

    def fn(s):
        calls.append(s.bits)
        return float(len(s))

    u = SetFunction(3, fn)
    assert u(0b011) == 2.0
    assert u([0, 1]) == 2.0
    assert u(subset([0, 1], 3)) == 2.0
    assert u.eval_count == 1 and calls == [3]
    u.values([0, 1, 1, 2, 3])
    assert u.eval_count == 4
    assert u.table().tolist() == [0, 1, 1, 2, 1, 2, 2, 3]
    assert u.eval_count == 8 <= 2**3
    with pytest.raises(ValueError):
        u(8)


def test_setfunction_concurrent_inserts_count_once():
    barrier = threading.Barrier(8)

    def fn(s):
        return float(s.bits) * 0.5

    u = SetFunction(4, fn)

    def query(b):
        barrier.wait()
        return u(b)

    with ThreadPoolExecutor(8) as pool:
        out = list(pool.map(query, [5] * 8))
    assert out == [2.5] * 8
    assert u.eval_count == 1


def test_setfunction_threads_match_sequential():
    table = np.random.default_rng(0).normal(size=2**8)
    seq = SetFunction(8, lambda s: table[s.bits])
    par = SetFunction(8, lambda s: table[s.bits], threads=4)
    np.testing.assert_array_equal(seq.table(), par.table())
    assert SetFunction.from_table(table).full_value == table[-1]


def test_explanation_invariants():
    e = Explanation(ATTRIBUTION, scores=[1.0, 2.0], stderr=[0.0, 0.1])
    assert e.scores.dtype == float
    with pytest.raises(ValueError):
        Explanation(ATTRIBUTION, scores=[1.0], stderr=[-1.0])
    with pytest.raises(ValueError):
        Explanation(ATTRIBUTION)
    with pytest.raises(ValueError):
        Explanation(SELECTION, scores=[1.0], selected=subset([0], 1))
    Explanation(SELECTION, selected=subset([0], 2))
    with pytest.raises(ValueError):
        Explanation("other", scores=[1.0])


def sum_model():
    return LinearModel([1.0, 1.0], 0.0)


def test_check_invariance_examples():
    F = fixed_baseline_removal(sum_model(), [0.0, 0.0])
    assert check_invariance(F, [1, 9], [1, -3], subset([0], 2))
    assert check_invariance(F, [4, 5], [4, 5], subset([0, 1], 2))
    with pytest.raises(PreconditionViolation):
        check_invariance(F, [1, 9], [2, 9], subset([0], 2))


class _Corrupted(type(fixed_baseline_removal(sum_model(), [0.0, 0.0]))):
    def __call__(self, x, s, seed=0):
        return super().__call__(x, s, seed) + 1.0


def test_check_extension_examples():
    f = sum_model()
    probes = np.random.default_rng(1).normal(size=(20, 2))
    bg = BackgroundData(np.random.default_rng(2).normal(size=(10, 2)))
    assert check_extension(marginal_removal(f, bg), f, probes)
    assert check_extension(uniform_removal(f, FeatureBounds([0, 0], [1, 1]), 8), f, probes)
    assert not check_extension(_Corrupted(f, [0.0, 0.0]), f, probes)
    with pytest.raises(DimensionMismatch):
        check_extension(marginal_removal(f, bg), LinearModel([1.0], 0.0), probes)


def test_subset_function_input_contract():
    f = CallableModel(lambda X: X.sum(axis=1), 3)
    F = fixed_baseline_removal(f, [0.0, 0.0, 0.0])
    assert F([1, 2, 3], 0b101).shape == (1,)
    assert F(np.ones((4, 3)), 0b101).shape == (4, 1)
    with pytest.raises(DimensionMismatch):
        F([1, 2], 0b1)
    with pytest.raises(DimensionMismatch):
        F(np.ones((4, 3)), 0b1, seed=np.arange(3))
    with pytest.raises(DimensionMismatch):
        f.predict([1.0, 2.0])


@settings(max_examples=50)
@given(st.lists(st.integers(0, 2**6 - 1), min_size=1, max_size=40))
def test_eval_count_equals_distinct_queries(queries):
    u = SetFunction(6, lambda s: float(s.bits))
    for q in queries:
        assert u(q) == float(q)
    assert u.eval_count == len(set(queries))
