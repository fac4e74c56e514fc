"""Exact multiple-choice knapsack solver used for global bit allocation.

Minimize ``sum_i err[i, c_i]`` subject to ``sum_i bits[i, c_i] <= budget``,
choosing exactly one option ``c_i`` per item.

The search is a breadth-first branch-and-bound over items in their given
order. Partial assignments are merged whenever one dominates another in
(bits, error). They are pruned with the LP relaxation bound, in which each
remaining item may pick any point on the lower convex hull of its
(bits, error) options. The incumbent comes from greedily rounding down the
LP solution.

Ties in total error go to the smaller total bits, then to the
lexicographically smallest choice vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["MckpSolution", "lower_hull", "lp_bound_tables", "solve_mckp"]


@dataclass(frozen=True)
class MckpSolution:
    choice: tuple
    objective: float
    total_bits: float
    nodes: int = 0


def lower_hull(bits, err):
    """Option indices on the lower-left convex hull, by increasing bits.

    Consecutive hull points have strictly decreasing error and strictly
    increasing slope, which makes the relaxed item a convex piecewise-linear
    function of its bit allowance.
    """
    bits = np.asarray(bits, dtype=np.float64)
    err = np.asarray(err, dtype=np.float64)
    order = np.lexsort((np.arange(bits.size), err, bits))
    hull = []
    for j in order:
        b, e = bits[j], err[j]
        if hull and (b == bits[hull[-1]] or e >= err[hull[-1]]):
            continue
        while len(hull) >= 2:
            b1, e1 = bits[hull[-2]], err[hull[-2]]
            b2, e2 = bits[hull[-1]], err[hull[-1]]
            if (e2 - e1) * (b - b2) >= (e - e2) * (b2 - b1):
                hull.pop()
            else:
                break
        hull.append(int(j))
    return hull


def lp_bound_tables(bits, err):
    """Per-suffix data for evaluating the LP bound.

    Returns ``(base_bits, base_err, cum_bits, cum_err)``, where entry ``k``
    describes items ``k..N-1``. The bound for budget ``R`` is ``base_err[k] +
    interp(R - base_bits[k], cum_bits[k], cum_err[k])``, or infinity when
    ``R < base_bits[k]``.
    """
    n = bits.shape[0]
    hulls = [lower_hull(bits[i], err[i]) for i in range(n)]
    base_bits = np.zeros(n + 1)
    base_err = np.zeros(n + 1)
    cum_bits = [np.zeros(1)] * (n + 1)
    cum_err = [np.zeros(1)] * (n + 1)
    slopes = np.empty(0)
    dbs = np.empty(0)
    des = np.empty(0)
    for k in range(n - 1, -1, -1):
        h = hulls[k]
        base_bits[k] = base_bits[k + 1] + bits[k, h[0]]
        base_err[k] = base_err[k + 1] + err[k, h[0]]
        hb = bits[k, h]
        he = err[k, h]
        db = np.diff(hb)
        de = np.diff(he)
        slopes = np.concatenate([slopes, de / db])
        dbs = np.concatenate([dbs, db])
        des = np.concatenate([des, de])
        order = np.argsort(slopes, kind="stable")
        slopes, dbs, des = slopes[order], dbs[order], des[order]
        cum_bits[k] = np.concatenate([[0.0], np.cumsum(dbs)])
        cum_err[k] = np.concatenate([[0.0], np.cumsum(des)])
    return base_bits, base_err, cum_bits, cum_err, hulls


def _greedy(bits, err, budget, hulls):
    """Round the LP solution down to a feasible integer assignment."""
    n = bits.shape[0]
    pos = [0] * n
    remaining = budget - sum(bits[i, hulls[i][0]] for i in range(n))
    steps = []
    for i, h in enumerate(hulls):
        for t in range(len(h) - 1):
            db = bits[i, h[t + 1]] - bits[i, h[t]]
            de = err[i, h[t + 1]] - err[i, h[t]]
            steps.append((de / db, i, t, db))
    steps.sort(key=lambda s: (s[0], s[1], s[2]))
    for _, i, t, db in steps:
        if pos[i] == t and db <= remaining:
            pos[i] = t + 1
            remaining -= db
    return [hulls[i][pos[i]] for i in range(n)]


def solve_mckp(bits, err, budget, rtol=1e-9):
    """Solve the multiple-choice knapsack problem exactly.

    Parameters
    ----------
    bits, err : array_like, shape (items, options)
    budget : float
        Upper bound on the summed bits (inclusive).

    Returns
    -------
    MckpSolution, or None if even the cheapest choice exceeds `budget`.
    """
    bits = np.asarray(bits, dtype=np.float64)
    err = np.asarray(err, dtype=np.float64)
    if bits.shape != err.shape or bits.ndim != 2:
        raise ValueError("bits and err must be 2-D arrays of equal shape")
    n, k_opts = bits.shape
    if n == 0:
        return MckpSolution((), 0.0, 0.0)
    if math.fsum(bits.min(axis=1)) > budget:
        return None

    base_bits, base_err, cum_bits, cum_err, hulls = lp_bound_tables(bits, err)
    inc = _greedy(bits, err, budget, hulls)
    upper = math.fsum(err[i, c] for i, c in enumerate(inc))
    slack = rtol * max(abs(upper), 1e-300)

    def bound(k, remaining):
        spare = remaining - base_bits[k]
        lb = base_err[k] + np.interp(spare, cum_bits[k], cum_err[k])
        return np.where(spare < -rtol * abs(budget), np.inf, lb)

    f_bits = np.zeros(1)
    f_err = np.zeros(1)
    f_rank = np.zeros(1, dtype=np.int64)
    parents = []
    choices = []
    nodes = 1
    opt_idx = np.arange(k_opts)
    for k in range(n):
        cb = (f_bits[:, None] + bits[k][None, :]).ravel()
        ce = (f_err[:, None] + err[k][None, :]).ravel()
        par = np.repeat(np.arange(f_bits.size), k_opts)
        cho = np.tile(opt_idx, f_bits.size)
        rank = f_rank[par]
        nodes += cb.size
        lb = ce + bound(k + 1, budget - cb)
        keep = lb <= upper + slack
        if k == n - 1:
            keep &= cb <= budget
        cb, ce, par, cho, rank = cb[keep], ce[keep], par[keep], cho[keep], rank[keep]
        if cb.size == 0:
            break
        # Pareto filter: ascending bits, then error, then lexicographic prefix
        order = np.lexsort((cho, rank, ce, cb))
        cb, ce, par, cho, rank = cb[order], ce[order], par[order], cho[order], rank[order]
        prev_min = np.concatenate([[np.inf], np.minimum.accumulate(ce)[:-1]])
        keep = ce < prev_min
        cb, ce, par, cho, rank = cb[keep], ce[keep], par[keep], cho[keep], rank[keep]
        lex = np.lexsort((cho, rank))
        f_rank = np.empty(lex.size, dtype=np.int64)
        f_rank[lex] = np.arange(lex.size)
        f_bits, f_err = cb, ce
        parents.append(par)
        choices.append(cho)

    if len(choices) < n or f_bits.size == 0:
        # numerical corner: fall back on the incumbent
        best = inc
    else:
        # frontier is Pareto-sorted by bits; pick min error, then bits, then lex
        best_err = f_err.min()
        cand = np.flatnonzero(f_err == best_err)
        cand = cand[np.lexsort((f_rank[cand], f_bits[cand]))]
        idx = int(cand[0])
        best = [0] * n
        for k in range(n - 1, -1, -1):
            best[k] = int(choices[k][idx])
            idx = int(parents[k][idx])
        if math.fsum(err[i, c] for i, c in enumerate(best)) > upper:
            best = inc
    obj = math.fsum(err[i, c] for i, c in enumerate(best))
    tot = math.fsum(bits[i, c] for i, c in enumerate(best))
    return MckpSolution(tuple(best), obj, tot, nodes)
