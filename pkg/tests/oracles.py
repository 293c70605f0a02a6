"""Independent reference implementations used as test oracles.

These deliberately avoid the package's formulas: Shapley values come from
averaging over explicit orderings, optima from plain enumeration with
itertools, and marginal averages from explicit loops.
"""
import itertools
import math

import numpy as np


def bits_of(indices):
    return sum(1 << i for i in indices)


def random_table(rng, d):
    return rng.normal(size=1 << d)


def shapley_by_orderings(table, d):
    """Average marginal contribution over all d! orderings (d <= 7)."""
    phi = np.zeros(d)
    count = 0
    for order in itertools.permutations(range(d)):
        s = 0
        for i in order:
            phi[i] += table[s | (1 << i)] - table[s]
            s |= 1 << i
        count += 1
    return phi / count


def shapley_by_formula_loops(table, d):
    """Subset-sum Shapley formula with explicit loops and math.factorial (any small d)."""
    phi = np.zeros(d)
    for i in range(d):
        others = [j for j in range(d) if j != i]
        for k in range(d):
            w = math.factorial(k) * math.factorial(d - k - 1) / math.factorial(d)
            for c in itertools.combinations(others, k):
                s = bits_of(c)
                phi[i] += w * (table[s | (1 << i)] - table[s])
    return phi


def subsets_in_tie_order(d, sizes=None):
    """Yield bitmasks by increasing size, ascending bitmask within a size."""
    for k in range(d + 1) if sizes is None else sizes:
        for s in sorted(bits_of(c) for c in itertools.combinations(range(d), k)):
            yield s


def naive_optimum(d, objective, maximize=True, sizes=None, feasible=lambda s: True):
    """First strictly-best subset in tie order."""
    best, best_val = None, None
    for s in subsets_in_tie_order(d, sizes):
        if not feasible(s):
            continue
        val = objective(s)
        if best is None or (val > best_val if maximize else val < best_val):
            best, best_val = s, val
    return best, best_val


def coverage_game(rng, d, n_items=12):
    """Weighted coverage u(S) = total weight of items covered by S: monotone submodular."""
    weights = rng.uniform(0.1, 1.0, n_items)
    covers = rng.random((d, n_items)) < 0.3
    table = np.zeros(1 << d)
    for s in range(1 << d):
        mask = np.zeros(n_items, dtype=bool)
        for i in range(d):
            if s >> i & 1:
                mask |= covers[i]
        table[s] = weights[mask].sum()
    return table


def weighted_lstsq(table, d, weight_of_size):
    """Fit b0 + sum b_i z_i on all subsets by weighted least squares with an explicit design."""
    rows, targets, w = [], [], []
    for s in range(1 << d):
        z = [1.0] + [float(s >> i & 1) for i in range(d)]
        rows.append(z)
        targets.append(table[s])
        w.append(weight_of_size(bin(s).count("1")))
    Z = np.array(rows)
    sw = np.sqrt(np.array(w))
    coef, *_ = np.linalg.lstsq(Z * sw[:, None], np.array(targets) * sw, rcond=None)
    return coef


def marginal_average(f, x, s_idx, rows):
    """mean over background rows of f(x_S, r_notS), by explicit loop."""
    vals = []
    for r in rows:
        z = np.array(r, dtype=float)
        for i in s_idx:
            z[i] = x[i]
        vals.append(f(z))
    return float(np.mean(vals))


def product_average(f, x, s_idx, rows):
    """Average over the Cartesian product of per-column background values."""
    rows = np.asarray(rows, dtype=float)
    d = rows.shape[1]
    held = [j for j in range(d) if j not in s_idx]
    vals = []
    for combo in itertools.product(*[rows[:, j] for j in held]):
        z = np.array(x, dtype=float)
        for j, v in zip(held, combo):
            z[j] = v
        vals.append(f(z))
    return float(np.mean(vals))
