import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import marginal_average, product_average
from remex.core import CallableModel, FeatureSubset, check_extension, check_invariance
from remex.data import CATEGORICAL, CONTINUOUS, BackgroundData, LabeledDataset
from remex.errors import (
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
from remex.models import DecisionTreeModel, LinearModel, SubsetModelTable, fit_subset_model_table, fit_tree
from remex.removal import (
    SAMPLED,
    FeatureBounds,
    GaussianSpec,
    ReplacementDistributionSet,
    conditional_empirical_removal,
    conditional_gaussian_removal,
    fixed_baseline_removal,
    marginal_removal,
    product_of_marginals_removal,
    replacement_distribution_removal,
    separate_models_removal,
    tree_distribution_removal,
    uniform_removal,
)


def S(indices, d=2):
    return FeatureSubset.from_indices(indices, d)


def product_model():
    return CallableModel(lambda X: X[:, 0] * X[:, 1], 2, name="product")


def sum_model(d=2):
    return LinearModel(np.ones(d), 0.0)


def coord_model(j, d=2):
    beta = np.zeros(d)
    beta[j] = 1.0
    return LinearModel(beta, 0.0)


def nonlinear_model(d):
    return CallableModel(lambda X: np.sin(X).sum(axis=1) + X[:, 0] * X[:, -1] + 0.3 * X[:, 0] ** 2, d, name="nl")


BG2 = BackgroundData(np.array([[1.0, 2.0], [3.0, 4.0]]))


# fixed baseline


def test_fixed_baseline_examples():
    assert fixed_baseline_removal(sum_model(), [0, 0])([2, 3], S([0]))[0] == 2
    assert fixed_baseline_removal(product_model(), [1, 1])([5, 7], S([1]))[0] == 7
    F = fixed_baseline_removal(product_model(), [1, 1])
    assert F([5, 7], S([0, 1]))[0] == 35
    with pytest.raises(DimensionMismatch):
        fixed_baseline_removal(sum_model(), [0, 0, 0])


# marginal


def test_marginal_examples():
    F = marginal_removal(product_model(), BG2)
    x = [5.0, 6.0]
    assert F(x, S([0]))[0] == 15
    assert F(x, S([]))[0] == 7
    assert F(x, S([0, 1]))[0] == 30
    f = product_model()
    assert marginal_average(lambda z: f.predict(z)[0], x, [0], BG2.rows) == 15


def test_marginal_empty_background():
    with pytest.raises(EmptyBackground):
        BackgroundData(np.empty((0, 2)))


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6).flatmap(lambda d: st.tuples(
    st.just(d),
    st.lists(st.floats(-5, 5), min_size=d, max_size=d),
    st.lists(st.floats(-5, 5), min_size=d, max_size=d),
    st.integers(0, 2**d - 1),
)))
def test_single_row_marginal_equals_fixed_baseline(args):
    d, x, row, bits = args
    f = nonlinear_model(d)
    a = marginal_removal(f, BackgroundData(np.array([row])))(x, FeatureSubset(bits, d))
    b = fixed_baseline_removal(f, row)(x, FeatureSubset(bits, d))
    np.testing.assert_array_equal(a, b)


def test_marginal_matches_loop_oracle(rng):
    d = 4
    f = nonlinear_model(d)
    rows = rng.normal(size=(30, d))
    F = marginal_removal(f, BackgroundData(rows))
    for _ in range(20):
        x = rng.normal(size=d)
        s = FeatureSubset(int(rng.integers(0, 2**d - 1)), d)
        ref = marginal_average(lambda z: f.predict(z)[0], x, s.indices(), rows)
        assert abs(F(x, s)[0] - ref) < 1e-12


def test_marginal_sampled_converges(rng):
    """Sampled error within 3 empirical standard errors on at least 99% of probes."""
    d, n = 4, 400
    f = nonlinear_model(d)
    rows = rng.normal(size=(200, d))
    exact = marginal_removal(f, BackgroundData(rows))
    sampled = marginal_removal(f, BackgroundData(rows), SAMPLED, n)
    ok = 0
    probes = 200
    for p in range(probes):
        x = rng.normal(size=d)
        s = FeatureSubset(int(rng.integers(0, 2**d - 1)), d)
        vals = f.predict(np.where(s.mask, x, rows))
        se = vals.std(ddof=1) / np.sqrt(n)
        ok += abs(sampled(x, s, p)[0] - exact(x, s)[0]) <= 3 * se + 1e-12
    assert ok >= 0.99 * probes


# product of marginals


def test_product_examples():
    F = product_of_marginals_removal(product_model(), BG2)
    x = [5.0, 6.0]
    assert F(x, S([]))[0] == 6
    assert F(x, S([0]))[0] == 15
    assert F(x, S([0, 1]))[0] == 30
    f = product_model()
    assert product_average(lambda z: f.predict(z)[0], x, [], BG2.rows) == 6


def test_product_matches_cartesian_oracle(rng):
    d = 3
    f = nonlinear_model(d)
    rows = rng.normal(size=(5, d))
    F = product_of_marginals_removal(f, BackgroundData(rows))
    for bits in range(2**d):
        x = rng.normal(size=d)
        ref = product_average(lambda z: f.predict(z)[0], x, FeatureSubset(bits, d).indices(), rows)
        assert abs(F(x, FeatureSubset(bits, d))[0] - ref) < 1e-12


def test_product_cap():
    rows = np.arange(200.0).reshape(25, 8)
    F = product_of_marginals_removal(sum_model(8), BackgroundData(rows))
    with pytest.raises(ProductTooLarge):
        F(np.zeros(8), FeatureSubset(0, 8))
    G = product_of_marginals_removal(sum_model(8), BackgroundData(rows), SAMPLED, 32)
    assert np.isfinite(G(np.zeros(8), FeatureSubset(0, 8))[0])


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 5).flatmap(lambda d: st.tuples(st.just(d), st.integers(0, d - 1), st.booleans(), st.integers(0, 2**32))))
def test_product_equals_marginal_when_at_most_one_removed(args):
    d, j, drop_one, seed = args
    rng = np.random.default_rng(seed)
    rows = rng.normal(size=(7, d))
    bits = (1 << d) - 1
    if drop_one:
        bits ^= 1 << j
    f = nonlinear_model(d)
    x = rng.normal(size=d)
    s = FeatureSubset(bits, d)
    a = product_of_marginals_removal(f, BackgroundData(rows))(x, s)
    b = marginal_removal(f, BackgroundData(rows))(x, s)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


# uniform


def test_uniform_examples():
    bounds = FeatureBounds([0.0, 0.0], [1.0, 2.0])
    F = uniform_removal(coord_model(1), bounds, 100_000)
    assert abs(F([0.3, 9.0], S([0]), seed=11)[0] - 1.0) < 0.02
    G = uniform_removal(coord_model(0), bounds, 5)
    assert G([0.3, 9.0], S([0]), seed=3)[0] == 0.3
    H = uniform_removal(sum_model(), bounds, 5)
    assert H([0.3, 9.0], S([0, 1]))[0] == 0.3 + 9.0
    with pytest.raises(DegenerateBounds):
        FeatureBounds([1.0], [0.0])
    with pytest.raises(ValueError):
        uniform_removal(sum_model(), bounds, 0)


def test_uniform_draws_within_bounds():
    bounds = FeatureBounds([-1.0, 2.0], [1.0, 3.0])
    ident = CallableModel(lambda X: X, 2, out_dim=2)
    F = uniform_removal(ident, bounds, 1)
    for seed in range(50):
        v = F([0.0, 0.0], S([]), seed)
        assert -1 <= v[0] <= 1 and 2 <= v[1] <= 3


def test_bounds_from_data():
    b = FeatureBounds.from_data(BackgroundData([[1.0, 5.0], [3.0, -2.0], [2.0, 0.0]]))
    assert b.lo.tolist() == [1.0, -2.0] and b.hi.tolist() == [3.0, 5.0]


# replacement distributions


def test_replacement_categorical_always_switches():
    bg = BackgroundData(np.array([[0.0, 1.0], [1.0, 2.0], [0.0, 3.0], [1.0, 4.0]]), (CATEGORICAL, CONTINUOUS))
    q = ReplacementDistributionSet.from_background(bg)
    u = np.random.default_rng(0).random((3, 200))
    for x0 in (0.0, 1.0):
        draws = q.sample(0, np.full(3, x0), u, u)
        assert np.all(draws == 1.0 - x0)


def test_replacement_continuous_draws_in_other_bin(rng):
    col = rng.normal(size=400)
    q = ReplacementDistributionSet.from_background(BackgroundData(col[:, None]))
    sampler = q.samplers[0]
    x = rng.normal(size=50)
    u, u2 = rng.random((50, 100)), rng.random((50, 100))
    draws = q.sample(0, x, u, u2)
    own = sampler.bin_of(x)[:, None]
    k = np.minimum((u * (sampler.n_bins - 1)).astype(int), sampler.n_bins - 2)
    b = k + (k >= own)
    assert np.all(b != own)
    assert np.all((draws >= sampler.edges[b]) & (draws <= sampler.edges[b + 1]))


def test_replacement_degenerate_column():
    bg = BackgroundData(np.array([[1.0, 0.5], [1.0, 0.7]]), (CATEGORICAL, CONTINUOUS))
    with pytest.raises(DegenerateColumn):
        ReplacementDistributionSet.from_background(bg)


def test_replacement_is_extension_but_not_invariant(rng):
    bg = BackgroundData(rng.normal(size=(200, 2)) * [1.0, 5.0])
    q = ReplacementDistributionSet.from_background(bg)
    f = sum_model()
    F = replacement_distribution_removal(f, q, 16)
    assert not F.is_invariant
    assert check_extension(F, f, rng.normal(size=(50, 2)))
    # x_1 = 9 and x_1 = -3 sit in different quantile bins, so q_{x_1} differs
    assert not check_invariance(F, [1.0, 9.0], [1.0, -3.0], S([0]), seed=0)


# conditional Gaussian


def test_gaussian_examples():
    g = GaussianSpec([0.0, 0.0], [[1.0, 0.5], [0.5, 1.0]])
    F = conditional_gaussian_removal(sum_model(), g)
    assert abs(F([1.0, 123.0], S([0]))[0] - 1.5) < 1e-15
    assert F([1.0, 2.0], S([0, 1]))[0] == 3.0
    diag = GaussianSpec([0.5, -2.0], np.diag([1.0, 3.0]))
    G = conditional_gaussian_removal(LinearModel([2.0, 3.0], 1.0), diag)
    assert abs(G([4.0, 100.0], S([0]))[0] - (2 * 4 + 3 * -2.0 + 1)) < 1e-12


def test_gaussian_spec_errors():
    with pytest.raises(NotPositiveDefinite):
        GaussianSpec([0, 0], [[1.0, 0.2], [0.1, 1.0]])
    with pytest.raises(NotPositiveDefinite):
        GaussianSpec([0, 0], [[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(DimensionMismatch):
        GaussianSpec([0, 0], np.eye(3))


def test_gaussian_diagonal_linear_equals_marginal(rng):
    """Background constructed as mu +/- offsets so its column means are exactly mu."""
    d = 4
    mu = np.array([0.5, -1.0, 2.0, 0.25])
    off = rng.normal(size=(10, d))
    rows = np.vstack([mu + off, mu - off])
    assert np.allclose(rows.mean(axis=0), mu, atol=1e-15)
    f = LinearModel(rng.normal(size=d), 0.7)
    G = conditional_gaussian_removal(f, GaussianSpec(mu, np.diag(rng.uniform(0.5, 2, d))))
    M = marginal_removal(f, BackgroundData(rows))
    for bits in range(2**d):
        x = rng.normal(size=d)
        s = FeatureSubset(bits, d)
        assert abs(G(x, s)[0] - M(x, s)[0]) < 1e-12


def test_gaussian_sampled_converges(rng):
    g = GaussianSpec([0.0, 1.0, -1.0], [[1.0, 0.3, 0.1], [0.3, 2.0, 0.4], [0.1, 0.4, 1.5]])
    f = CallableModel(lambda X: X[:, 0] * X[:, 1] + X[:, 2] ** 2, 3)
    mean_F = conditional_gaussian_removal(LinearModel([1.0, 2.0, 3.0], 0.0), g)
    samp_F = conditional_gaussian_removal(LinearModel([1.0, 2.0, 3.0], 0.0), g, SAMPLED, 20000)
    x = np.array([0.4, 0.0, 0.0])
    # for a linear model sampling only adds noise around the plug-in value
    assert abs(samp_F(x, S([0], 3), 5)[0] - mean_F(x, S([0], 3))[0]) < 0.1
    assert np.isfinite(conditional_gaussian_removal(f, g, SAMPLED, 10)(x, S([], 3), 1)[0])


# conditional empirical


def test_empirical_examples():
    bg = BackgroundData(np.array([[0.0, 10.0], [0.0, 20.0], [1.0, 30.0]]), (CATEGORICAL, CONTINUOUS))
    F = conditional_empirical_removal(coord_model(1), bg)
    assert F([0.0, 999.0], S([0]))[0] == 15
    assert F([1.0, 999.0], S([0]))[0] == 30
    with pytest.raises(NoMatchingRows):
        F([2.0, 999.0], S([0]))
    with pytest.raises(PreconditionViolation):
        F([0.0, 10.0], S([1]))
    assert F([0.0, 5.0], S([0, 1]))[0] == 5.0
    assert F([7.0, 5.0], S([]))[0] == 20


# tree distribution


def stump():
    return DecisionTreeModel(
        feature=[0, -1, -1], threshold=[0.5, 0.0, 0.0], left=[1, -1, -1], right=[2, -1, -1],
        value=[[0.7], [0.0], [1.0]], coverage=[100, 30, 70], dim=1,
    )


def test_tree_examples():
    F = tree_distribution_removal(stump())
    assert abs(F([2.0], FeatureSubset(0, 1))[0] - 0.7) < 1e-15
    assert F([2.0], FeatureSubset(1, 1))[0] == 1.0
    t = stump()
    t.coverage = None
    with pytest.raises(MissingCoverage):
        tree_distribution_removal(t)


def test_tree_full_subset_equals_prediction(rng):
    X = rng.normal(size=(300, 4))
    y = np.sin(X[:, 0]) + (X[:, 1] > 0) * X[:, 2]
    t = fit_tree(LabeledDataset(X, y), max_depth=5)
    F = tree_distribution_removal(t)
    probes = rng.normal(size=(1000, 4))
    np.testing.assert_array_equal(F(probes, FeatureSubset.full(4)), t.predict(probes))
    # removing every feature gives the coverage-weighted mean of leaves = training mean
    assert abs(F(probes[0], FeatureSubset(0, 4))[0] - y.mean()) < 1e-12


# separate models


def test_separate_models_examples(rng):
    x0 = rng.normal(size=20)
    data = LabeledDataset(x0[:, None], 3 * x0)
    F = separate_models_removal(fit_subset_model_table(data))
    assert abs(F([2.0], FeatureSubset(1, 1))[0] - 6.0) < 1e-9
    assert abs(F([2.0], FeatureSubset(0, 1))[0] - (3 * x0).mean()) < 1e-12
    const = LabeledDataset(rng.normal(size=(10, 2)), np.full(10, 4.0))
    G = separate_models_removal(fit_subset_model_table(const))
    for bits in range(4):
        assert abs(G(rng.normal(size=2), FeatureSubset(bits, 2))[0] - 4.0) < 1e-9


def test_separate_models_extension_and_missing(rng):
    data = LabeledDataset(rng.normal(size=(30, 2)), rng.normal(size=30))
    table = fit_subset_model_table(data)
    F = separate_models_removal(table)
    probes = rng.normal(size=(10, 2))
    assert check_extension(F, F.extension_of, probes)
    np.testing.assert_array_equal(F(probes, FeatureSubset.full(2)), table.models[3].predict(probes))
    partial = SubsetModelTable(2, "linear", {3: table.models[3], 1: table.models[1]})
    G = separate_models_removal(partial)
    with pytest.raises(MissingSubsetModel):
        G(probes[0], FeatureSubset(2, 2))
    with pytest.raises(MissingSubsetModel):
        separate_models_removal(SubsetModelTable(2, "linear", {0: table.models[0]}))


# shared properties


def test_batch_equals_per_row_evaluation(rng):
    """Sampled strategies are pure in (row seed, S): batching and call order do not matter."""
    d = 3
    rows = rng.normal(size=(40, d))
    f = nonlinear_model(d)
    bg = BackgroundData(rows)
    strategies = [
        marginal_removal(f, bg, SAMPLED, 17),
        product_of_marginals_removal(f, bg, SAMPLED, 17),
        uniform_removal(f, FeatureBounds.from_data(bg), 17),
        replacement_distribution_removal(f, ReplacementDistributionSet.from_background(bg), 17),
        conditional_gaussian_removal(f, GaussianSpec.from_data(bg), SAMPLED, 17),
    ]
    X = rng.normal(size=(6, d))
    seeds = np.arange(100, 106)
    s = FeatureSubset(0b010, d)
    for F in strategies:
        batch = F(X, s, seeds)
        singles = np.array([F(X[r], s, int(seeds[r])) for r in reversed(range(6))])[::-1]
        np.testing.assert_array_equal(batch, singles)
        assert not np.array_equal(F(X[0], s, 1), F(X[0], s, 2))
