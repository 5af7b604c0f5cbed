"""Sensitivity of the price to the switch intensities, and residual risk.

Two diagnostics on a solved price field:

* sensitivity_check solves the pricing equation under a perturbed hazard
  specification on the identical grid and compares the sup distance of the
  two fields against the Lipschitz bound 2 c2 T sum |lam - lam~|_sup (the
  per-pair sums maximized over the regime tuple).

* residual_risk estimates the expected squared discounted price jump that
  the optimal non-self-financing hedge absorbs at regime switches, by
  simulating physical-measure paths and reading the solved field at the
  pre- and post-switch states.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from .mc_oracle import simulate_path, _spawn_rngs
from .volterra_pricer import Grid, PriceField, SolverSettings, solve_price_field

_SUP_GRID = 1001


@dataclass
class SensitivityReport:
    lambda_sup_diff: float      # max over (component, pair) of sup_y |dlam|
    phi_sup_diff: float         # sup over shared grid of |phi - phi~|
    bound_summed: float         # 2 c2 T max_x sum_pairs |dlam|_sup
    bound_plain: float          # 2 c2 T |dlam|_sup (single worst pair)
    satisfied: bool
    ratio: float
    numerical_floor: float

    def to_dict(self):
        return {k: getattr(self, k) for k in (
            "lambda_sup_diff", "phi_sup_diff", "bound_summed", "bound_plain",
            "satisfied", "ratio", "numerical_floor")}


def _pair_sup_diffs(models, models_tilde, horizon: float):
    """sup_y |lam - lam~| on [0, horizon] for every (component, i, j)."""
    ygrid = np.linspace(0.0, horizon, _SUP_GRID)
    out = {}
    for l, (h, ht) in enumerate(zip(models, models_tilde)):
        pairs = set(h.rates) | set(ht.rates)
        for (i, j) in pairs:
            d = np.abs(h.rate(i, j, ygrid) - ht.rate(i, j, ygrid))
            out[(l, i, j)] = float(np.max(d))
    return out


def sensitivity_check(market, claim, models, models_tilde, grid: Grid,
                      tol: float = 1e-4,
                      settings: SolverSettings | None = None) -> SensitivityReport:
    """Dual solve under the base and perturbed hazards, with the sup bound."""
    field_a, rep_a = solve_price_field(market, claim, models, grid, tol,
                                       settings=settings)
    field_b, rep_b = solve_price_field(market, claim, models_tilde, grid, tol,
                                       settings=settings)
    sup_phi = 0.0
    for sa, sb in zip(field_a.slabs, field_b.slabs):
        sup_phi = max(sup_phi, float(np.max(np.abs(sa - sb))))

    diffs = _pair_sup_diffs(models, models_tilde, grid.horizon)
    lam_sup = max(diffs.values()) if diffs else 0.0
    T = grid.horizon
    worst_sum = 0.0
    for x in grid.x_tuples:
        total = sum(diffs.get((l, x[l], j), 0.0)
                    for l in range(grid.n_components)
                    for j in range(1, models[l].k + 1) if j != x[l])
        worst_sum = max(worst_sum, total)
    bound_summed = 2.0 * claim.c2 * T * worst_sum
    bound_plain = 2.0 * claim.c2 * T * lam_sup

    s_top = sum(math.exp(a[-1]) for a in grid.lns_axes)
    floor = ((rep_a.error_budget or 0.0) + (rep_b.error_budget or 0.0)) \
        * (1.0 + s_top)
    satisfied = sup_phi <= bound_summed + floor
    ratio = sup_phi / bound_summed if bound_summed > 0 else math.inf
    return SensitivityReport(lambda_sup_diff=lam_sup, phi_sup_diff=sup_phi,
                             bound_summed=bound_summed, bound_plain=bound_plain,
                             satisfied=bool(satisfied), ratio=float(ratio),
                             numerical_floor=float(floor))


@dataclass
class ResidualRiskReport:
    r0: float
    se: float
    n_paths: int
    mean_jumps: float
    cost_quantiles: dict = dc_field(default_factory=dict)

    def to_dict(self):
        return {"r0": self.r0, "se": self.se, "n_paths": self.n_paths,
                "mean_jumps": self.mean_jumps,
                "cost_quantiles": self.cost_quantiles}


def _path_costs(market, claim, models, field: PriceField, start, horizon,
                seed, ids):
    g = field.grid
    costs = np.zeros(len(ids))
    jumps = np.zeros(len(ids))
    queries = []  # (row, t, s, xi_pre, xi_post, y_pre, y_post, disc)
    for row, pid in enumerate(ids):
        rr, rg = _spawn_rngs(seed, pid)
        path = simulate_path(market, models, start, horizon, rr, rg,
                             mode="physical")
        jumps[row] = path.n_jumps
        for mth in range(path.n_jumps):
            pre = tuple(path.states[mth])
            post = tuple(path.states[mth + 1])
            queries.append((row, path.jump_times[mth], path.s_at_jumps[mth],
                            g.x_index[pre], g.x_index[post],
                            path.ages_before[mth], path.ages_after[mth],
                            path.discount_at_jumps[mth]))
    if queries:
        tq = np.array([q[1] for q in queries])
        sq = np.array([q[2] for q in queries])
        pre_idx = np.array([q[3] for q in queries])
        post_idx = np.array([q[4] for q in queries])
        y_pre = np.array([q[5] for q in queries])
        y_post = np.array([q[6] for q in queries])
        disc = np.array([q[7] for q in queries])
        phi_pre = field.values(tq, sq, pre_idx, y_pre)
        phi_post = field.values(tq, sq, post_idx, y_post)
        contrib = np.square(disc * (phi_post - phi_pre))
        for (row, *_), cval in zip(queries, contrib):
            costs[row] += cval
    return costs, jumps


def residual_risk(market, claim, models, field: PriceField, start,
                  n_paths: int, seed: int, n_jobs: int = 1) -> ResidualRiskReport:
    """Quadratic residual risk at the start point under the physical measure.

    Accumulates the squared discounted field jump at every switch epoch of
    each simulated path; the estimate is the path average.
    """
    horizon = field.grid.horizon
    ids = np.arange(n_paths)
    if n_jobs <= 1:
        costs, jumps = _path_costs(market, claim, models, field, start,
                                   horizon, seed, ids)
    else:
        chunks = np.array_split(ids, n_jobs)
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            parts = list(ex.map(
                lambda ch: _path_costs(market, claim, models, field, start,
                                       horizon, seed, ch), chunks))
        costs = np.concatenate([p[0] for p in parts])
        jumps = np.concatenate([p[1] for p in parts])
    r0 = float(np.mean(costs))
    se = float(np.std(costs, ddof=1) / math.sqrt(n_paths))
    qs = {f"q{int(100 * q)}": float(np.quantile(costs, q))
          for q in (0.5, 0.9, 0.99)}
    return ResidualRiskReport(r0=r0, se=se, n_paths=int(n_paths),
                              mean_jumps=float(np.mean(jumps)),
                              cost_quantiles=qs)
