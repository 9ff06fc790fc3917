"""Independent reference implementations used as test oracles.

Each oracle is written from the defining formulas with plain loops and
shares no code with the package.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


# ---------------------------------------------------------------- splines

def truncated_power_natural_basis(x, knots):
    """Natural cubic spline basis in the original scale, without the constant.

    Columns: ``x`` followed by ``N_k(x) = d_k(x) - d_{K-1}(x)`` for
    ``k = 1..K-2`` (1-based), with
    ``d_k(x) = ((x - xi_k)^3_+ - (x - xi_K)^3_+) / (xi_K - xi_k)``.
    """
    xi = [float(k) for k in knots]
    K = len(xi)
    out = []
    for xv in np.asarray(x, dtype=float).reshape(-1):
        def d(k):  # 0-based k
            a = max(xv - xi[k], 0.0) ** 3
            b = max(xv - xi[K - 1], 0.0) ** 3
            return (a - b) / (xi[K - 1] - xi[k])

        row = [xv]
        for k in range(K - 2):
            row.append(d(k) - d(K - 2))
        out.append(row)
    return np.array(out)


# ---------------------------------------------------------------- estimands

def brute_force_estimands(p):
    """Estimands of a 4 x 4 joint ``p[k-1, l-1] = Pr(G(1)=k, G(0)=l)`` by loops."""
    levels = range(1, 5)
    P = lambda k, l: float(p[k - 1][l - 1])  # noqa: E731
    kappa10 = sum(P(k, l) for k in levels for l in levels if k > l)
    kappa01 = sum(P(k, l) for k in levels for l in levels if k < l)
    ties = sum(P(k, k) for k in levels)
    tau10 = sum(P(k, l) for k in levels for l in levels if k >= l)
    tau01 = sum(P(k, l) for k in levels for l in levels if k <= l)
    delta = []
    for j in (1, 2, 3):
        # Pr(G(1) <= j) - Pr(G(0) <= j) as double sums over the joint
        active = sum(P(k, l) for k in levels if k <= j for l in levels)
        control = sum(P(k, l) for l in levels if l <= j for k in levels)
        delta.append(active - control)
    pi1 = np.full((4, 4), np.nan)
    pi0 = np.full((4, 4), np.nan)
    for k in levels:
        row = sum(P(k, l) for l in levels)
        col = sum(P(l, k) for l in levels)
        for l in levels:
            if row > 0:
                pi1[k - 1, l - 1] = P(k, l) / row
            if col > 0:
                pi0[k - 1, l - 1] = P(l, k) / col
    return {
        "kappa10": kappa10,
        "kappa01": kappa01,
        "tau10": tau10,
        "tau01": tau01,
        "u10": kappa10 + 0.5 * ties,
        "u01": kappa01 + 0.5 * ties,
        "delta": np.array(delta),
        "pi1": pi1,
        "pi0": pi0,
    }


def unit_pair_estimands(pairs):
    """Finite-sample estimands from explicit unit pairs ``(G(1), G(0))``.

    Each unit is visited once; shares of worse, better and tied units are
    counted directly.
    """
    n = len(pairs)
    worse = sum(1 for g1, g0 in pairs if g1 > g0) / n
    better = sum(1 for g1, g0 in pairs if g1 < g0) / n
    tie = sum(1 for g1, g0 in pairs if g1 == g0) / n
    return {"kappa10": worse, "kappa01": better, "tau10": worse + tie, "u10": worse + tie / 2}


def enumerate_unit_outcomes(cells1, cells0):
    """Per-unit joint over all 16 (A(1), D(1), A(0), D(0)) outcomes.

    ``cellsw`` are dictionaries ``(a, d) -> probability`` for one unit.
    Returns the always-survivor probability and the adverse probability
    within it for each arm.
    """
    surv = 0.0
    adv1 = 0.0
    adv0 = 0.0
    for a1, d1, a0, d0 in itertools.product((0, 1), repeat=4):
        pr = cells1[(a1, d1)] * cells0[(a0, d0)]
        if d1 == 0 and d0 == 0:
            surv += pr
            adv1 += pr * a1
            adv0 += pr * a0
    return surv, adv1, adv0


# ---------------------------------------------------------------- pooling

def rubin_hand(q, u):
    m = len(q)
    qbar = sum(q) / m
    ubar = sum(u) / m
    b = sum((x - qbar) ** 2 for x in q) / (m - 1)
    t = ubar + (1 + 1 / m) * b
    try:
        nu = (m - 1) * (t / ((1 + 1 / m) * b)) ** 2 if b > 0 else math.inf
    except OverflowError:
        nu = math.inf
    return qbar, ubar, b, t, nu


# ---------------------------------------------------------------- logistic MAP

def log_posterior(beta, X, y, cauchy_scale=None):
    """Bernoulli-logit log-likelihood plus optional Cauchy log-prior on every coefficient.

    ``beta`` may be ``G x p`` (a grid of coefficient vectors).
    """
    beta = np.atleast_2d(beta)
    eta = beta @ X.T
    ll = -(y * np.logaddexp(0.0, -eta) + (1 - y) * np.logaddexp(0.0, eta)).sum(axis=1)
    if cauchy_scale is not None:
        ll = ll - np.log1p((beta / cauchy_scale) ** 2).sum(axis=1)
    return ll


def grid_search_map(X, y, cauchy_scale=None, start=None, half_width=8.0, points=21,
                    min_width=2e-6):
    """Maximize the log-posterior over shrinking tensor grids.

    Each round evaluates a ``points^p`` grid centred at the current best
    point, then halves the half-width around the new best.
    """
    p = X.shape[1]
    center = np.zeros(p) if start is None else np.asarray(start, dtype=float)
    width = half_width
    offsets = np.linspace(-1.0, 1.0, points)
    while width > min_width:
        axes = [center[j] + width * offsets for j in range(p)]
        grid = np.array(list(itertools.product(*axes)))
        vals = log_posterior(grid, X, y, cauchy_scale)
        best = grid[int(np.argmax(vals))]
        on_edge = np.any(np.isclose(np.abs(best - center), width))
        center = best
        if not on_edge:
            width *= 0.5
    return center
