"""Frozen-regime lognormal pricing of the claim (the no-switch building block).

With the regime tuple frozen at x the discounted claim expectation is a
plain lognormal integral with variance int_t^T a(u, x) du, evaluated by the
kink-aware kernel quadrature.  For one asset and a vanilla payoff this
reproduces the classical closed-form price to quadrature accuracy.
"""

from __future__ import annotations

import math

import numpy as np

from .market import (
    Claim,
    DEFAULT_QUAD,
    MarketModel,
    QuadratureSettings,
    build_kernel,
    claim_nodes,
)


def _batched(s):
    s = np.asarray(s, dtype=float)
    if s.ndim == 1:
        return s[None, :], True
    return s, False


def bsm_price(market: MarketModel, claim: Claim, x, t: float, maturity: float,
              s, quad: QuadratureSettings = DEFAULT_QUAD):
    """Frozen-regime discounted claim value; terminal slice returns K(s)."""
    s_batch, scalar = _batched(s)
    v = maturity - t
    if v <= 0.0:
        out = claim(s_batch)
        return float(out[0]) if scalar else out
    kern = build_kernel(market, t, x, v, mode="risk-neutral")
    sig, w, _ = claim_nodes(kern, claim, s_batch, quad)
    disc = math.exp(-market.r(tuple(x)) * v)
    out = disc * np.sum(w * claim(sig), axis=-1)
    return float(out[0]) if scalar else out


def bsm_delta(market: MarketModel, claim: Claim, x, t: float, maturity: float,
              s, axis: int, quad: QuadratureSettings = DEFAULT_QUAD):
    """d(price)/d s_axis by differentiating under the kernel integral."""
    s_batch, scalar = _batched(s)
    v = maturity - t
    if v <= 0.0:
        # one-sided slope of the payoff itself
        h = 1e-6 * np.maximum(s_batch[:, axis], 1.0)
        bump = s_batch.copy()
        bump[:, axis] += h
        out = (claim(bump) - claim(s_batch)) / h
        return float(out[0]) if scalar else out
    kern = build_kernel(market, t, x, v, mode="risk-neutral")
    sig, w, dev = claim_nodes(kern, claim, s_batch, quad)
    sol = np.linalg.solve(kern.cov, dev.reshape(-1, kern.n).T).T
    sol = sol.reshape(dev.shape)
    disc = math.exp(-market.r(tuple(x)) * v)
    out = disc * np.sum(w * claim(sig) * sol[..., axis], axis=-1) \
        / s_batch[:, axis]
    return float(out[0]) if scalar else out


def _grid_points(lns_axes):
    mesh = np.meshgrid(*[np.exp(a) for a in lns_axes], indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    return pts, tuple(len(a) for a in lns_axes)


def bsm_price_grid(market, claim, x, t, maturity, lns_axes,
                   quad: QuadratureSettings = DEFAULT_QUAD, chunk: int = 2048):
    """Price surface over the tensor log-price grid, chunked over rows."""
    pts, shape = _grid_points(lns_axes)
    out = np.empty(pts.shape[0])
    for lo in range(0, pts.shape[0], chunk):
        hi = min(lo + chunk, pts.shape[0])
        out[lo:hi] = bsm_price(market, claim, x, t, maturity, pts[lo:hi], quad)
    return out.reshape(shape)


def bsm_delta_grid(market, claim, x, t, maturity, lns_axes, axis,
                   quad: QuadratureSettings = DEFAULT_QUAD, chunk: int = 2048):
    pts, shape = _grid_points(lns_axes)
    out = np.empty(pts.shape[0])
    for lo in range(0, pts.shape[0], chunk):
        hi = min(lo + chunk, pts.shape[0])
        out[lo:hi] = bsm_delta(market, claim, x, t, maturity, pts[lo:hi],
                               axis, quad)
    return out.reshape(shape)
