"""Locally risk-minimizing hedge ratios and the strategy decomposition.

The hedge ratio in asset m is the s_m-derivative of the price field,
computed by differentiating the pricing operator under the integral sign
rather than by numerical differentiation of the field: the frozen-regime
delta carries the no-switch weight and the switch branch integrates the
continuation value against the kernel's s-derivative.  Finite differences
of the solved field are kept only as a test oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .market import Claim, MarketModel
from .quadrature import gauss_legendre, tensor_normal_nodes
from .regime_bsm import bsm_delta, bsm_delta_grid
from .volterra_pricer import Grid, PriceField, SolverSettings, VolterraSolver


def _joint_log_survival_at(models, x, y, v):
    out = 0.0
    for m, h in enumerate(models):
        out += float(h.residual_log_survival(x[m], y[m], np.asarray(v)))
    return out


def hedge_ratio(market: MarketModel, claim: Claim, models, field: PriceField,
                point, axis: int, settings: SolverSettings | None = None) -> float:
    """d(price)/d s_axis at point = (t, s, x, y) via the integral formula."""
    settings = settings or SolverSettings()
    g = field.grid
    t, s, x, y = point
    s = np.asarray(s, dtype=float)
    y = np.asarray(y, dtype=float)
    x = tuple(x)
    T = g.horizon
    rem = T - t
    if rem <= 1e-12:
        return float(bsm_delta(market, claim, x, T, T, s, axis))

    js_T = math.exp(_joint_log_survival_at(models, x, y, rem))
    out = float(bsm_delta(market, claim, x, t, T, s, axis)) * js_T

    n_panels = max(1, int(round(rem / g.dt)))
    width = rem / n_panels
    gl_x, gl_w = gauss_legendre(2)
    xi_idx = g.x_index
    rate_x = market.r(x)
    nodes, wq = tensor_normal_nodes(g.n, settings.gh_nodes)

    switch = 0.0
    mass = 0.0
    for p in range(n_panels):
        for gx, gw in zip(gl_x, gl_w):
            v = (p + 0.5 * (gx + 1.0)) * width
            wv = 0.5 * width * gw
            js = math.exp(_joint_log_survival_at(models, x, y, v))
            cov = market.a_integral(t, t + v, x)
            chol = np.linalg.cholesky(cov)
            zbar = rate_x * v - 0.5 * np.diag(cov)
            dev = nodes @ chol.T
            sig = s * np.exp(zbar + dev)
            inv_l = np.linalg.inv(chol)
            fac = (nodes @ inv_l[:, axis]) / s[axis]
            for l in range(g.n_components):
                h = models[l]
                lam_tot = 0.0
                inner = 0.0
                for j in range(1, h.k + 1):
                    if (x[l], j) not in h.rates:
                        continue
                    lam = float(h.rates[(x[l], j)].rate(np.asarray(y[l] + v)))
                    if lam == 0.0:
                        continue
                    xp = x[:l] + (j,) + x[l + 1:]
                    yp = y + v
                    yp[l] = 0.0
                    B = sig.shape[0]
                    vals = field.values(np.full(B, t + v), sig,
                                        np.full(B, xi_idx[xp]),
                                        np.tile(yp, (B, 1)))
                    # subtract the interpolated linear part and restore its
                    # closed-form derivative, matching the grid solver
                    excess = vals - g.interp_linear_part(sig, claim.c1)
                    d_excess = float(np.dot(wq * fac, excess))
                    lin_term = math.exp(rate_x * v) * claim.c1[axis]
                    inner += lam * (d_excess + lin_term)
                    lam_tot += lam
                switch += wv * math.exp(-rate_x * v) * js * inner
                mass += wv * js * lam_tot
    if mass > 1e-300:
        switch *= (1.0 - js_T) / mass
    return out + switch


def strategy_at(market, claim, models, field: PriceField, point,
                discount: float = 1.0,
                settings: SolverSettings | None = None):
    """Hedge vector and cash position at a point.

    The cash position is quoted in discounted units: eps = D (phi - xi . s)
    where D is the accumulated discount supplied by the caller (1 at t=0 or
    for undiscounted snapshots).
    """
    t, s, x, y = point
    s = np.asarray(s, dtype=float)
    xi = np.array([hedge_ratio(market, claim, models, field, point, m, settings)
                   for m in range(field.grid.n)])
    phi = field.value(t, s, tuple(x), np.asarray(y, dtype=float))
    eps = discount * (phi - float(xi @ s))
    return xi, eps


@dataclass
class HedgeField:
    """Hedge ratios and cash positions on the price grid."""

    grid: Grid
    xi: list      # per time node: (n_x, c_i.., S.., n)
    eps: list     # per time node: (n_x, c_i.., S..)


def hedge_field(market, claim, models, field: PriceField,
                settings: SolverSettings | None = None) -> HedgeField:
    """Hedge ratios at every grid node via the integral formula.

    Runs one solver-style pass with the kernel's s-derivative in place of
    the kernel, so it reuses the same gathered continuation slabs, survival
    weights and mass normalization as the pricing step.
    """
    settings = settings or SolverSettings()
    solver = VolterraSolver(market, claim, models, field.grid, settings)
    g = field.grid
    M = g.spec.time_steps
    n_x = len(g.x_tuples)
    lin = solver._linear_part()
    smesh = np.meshgrid(*g.s_axes, indexing="ij")

    xi_slabs, eps_slabs = [], []
    for i in range(M + 1):
        t = float(g.t_nodes[i])
        c = int(g.c_counts[i])
        y_pad = (...,) + (None,) * g.n
        shape = (n_x,) + (c,) * g.n_components + g.s_shape
        xi_slab = np.empty(shape + (g.n,))
        js_T = solver._js_T.get(i)
        if js_T is None:
            js_T = solver._joint_survival(i, M - i, "full")
            solver._js_T[i] = js_T

        drho = np.empty((n_x,) + g.s_shape + (g.n,))
        for xi_i, x in enumerate(g.x_tuples):
            for m_ax in range(g.n):
                drho[xi_i, ..., m_ax] = bsm_delta_grid(
                    market, claim, x, t, g.horizon, g.lns_axes, m_ax,
                    settings.bsm_quad)
        for xi_i in range(n_x):
            xi_slab[xi_i] = js_T[xi_i][y_pad + (None,)] * drho[xi_i]

        if i < M:
            acc = np.zeros(shape + (g.n,))
            mass = np.zeros((n_x,) + (c,) * g.n_components)
            for p in range(M - i):
                for q in range(settings.panel_nodes):
                    weights = solver._switch_weights(i, p, q)
                    vcol = p * settings.panel_nodes + q
                    v = solver.v_all[vcol]
                    gathered = {}
                    for l in range(g.n_components):
                        gathered[l] = solver._gather(field.slabs, i, p, q, l)
                    for xi_i, x in enumerate(g.x_tuples):
                        sm = solver._smoother(i, p, q, xi_i)
                        disc = math.exp(-market.r(x) * v)
                        for l in range(g.n_components):
                            h = models[l]
                            for j in range(1, h.k + 1):
                                wt = weights.get((xi_i, l, j))
                                if wt is None:
                                    continue
                                xpi = g.x_index[tuple(x[:l] + (j,) + x[l + 1:])]
                                excess = gathered[l][xpi] - lin
                                mass[xi_i] += wt
                                for m_ax in range(g.n):
                                    G = sm.apply(excess, deriv_axis=m_ax) \
                                        / smesh[m_ax]
                                    acc[xi_i, ..., m_ax] += \
                                        wt[y_pad] * (disc * G)
            kappa = np.where(mass > 1e-300,
                             (1.0 - js_T) / np.maximum(mass, 1e-300), 1.0)
            xi_slab += kappa[y_pad + (None,)] * acc
            xi_slab += ((1.0 - js_T)[y_pad + (None,)]
                        * np.stack([np.broadcast_to(c1m, g.s_shape)
                                    for c1m in claim.c1], axis=-1))

        phi = field.slabs[i]
        spots = np.stack(smesh, axis=-1)
        eps_slab = phi - np.einsum("...m,...m->...", xi_slab,
                                   np.broadcast_to(spots, shape + (g.n,)))
        xi_slabs.append(xi_slab)
        eps_slabs.append(eps_slab)
    return HedgeField(grid=g, xi=xi_slabs, eps=eps_slabs)
