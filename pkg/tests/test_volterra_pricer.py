import math

import numpy as np
import pytest

from regimehedge.errors import NoConvergence
from regimehedge.market import Claim, build_kernel, build_market, kernel_expectation
from regimehedge.regime_bsm import bsm_price, bsm_price_grid
from regimehedge.semi_markov import (
    AffineRate,
    ConstantRate,
    CsmState,
    HazardModel,
    WeibullRate,
    next_jump_component_prob,
    next_jump_time_law,
    transition_probs,
)
from regimehedge.volterra_pricer import (
    Grid,
    GridSpec,
    PriceField,
    SolverSettings,
    VolterraSolver,
    linear_growth_norm,
    pde_residual,
    picard_step,
    solve_price_field,
)


def degenerate_setup(price_nodes=81, time_steps=20, age_nodes=5):
    m = build_market(1, 2, 2, 0.04, np.array([0.08]), 0.25 * np.eye(1))
    claim = Claim("basket-call", weights=[1.0], strike=100.0)
    h = HazardModel(2, {(1, 2): ConstantRate(0.3), (2, 1): ConstantRate(0.4)})
    grid = Grid(m, 1.0, np.array([[100.0]]),
                GridSpec(time_steps=time_steps, price_nodes=price_nodes,
                         age_nodes=age_nodes))
    return m, claim, [h, h], grid


def regime_setup(price_nodes=61, time_steps=16, age_nodes=5):
    # genuinely regime-dependent: r from component 0, sigma from component 1
    def rate(x):
        return 0.02 if x[0] == 1 else 0.05

    def vol(x):
        return (0.2 if x[1] == 1 else 0.32) * np.eye(1)

    m = build_market(1, 2, 2, rate, np.array([0.07]), vol)
    claim = Claim("basket-call", weights=[1.0], strike=100.0)
    models = [
        HazardModel(2, {(1, 2): ConstantRate(0.5), (2, 1): ConstantRate(0.7)}),
        HazardModel(2, {(1, 2): WeibullRate(0.6, 2.0), (2, 1): AffineRate(0.3, 0.2)}),
    ]
    grid = Grid(m, 1.0, np.array([[100.0]]),
                GridSpec(time_steps=time_steps, price_nodes=price_nodes,
                         age_nodes=age_nodes))
    return m, claim, models, grid


def test_grid_restricts_ages_to_diagonal():
    m, claim, models, grid = degenerate_setup(time_steps=10, age_nodes=6)
    assert grid.c_counts[0] == 1
    assert grid.c_counts[-1] == 6
    assert np.all(np.diff(grid.c_counts) >= 0)
    # evaluation point sits exactly on the center node
    mid = grid.lns_axes[0][(len(grid.lns_axes[0]) - 1) // 2]
    assert mid == pytest.approx(math.log(100.0), abs=1e-12)


def test_linear_growth_norm_cases():
    m, claim, models, grid = degenerate_setup(price_nodes=21, time_steps=4,
                                              age_nodes=3)
    solver = VolterraSolver(m, claim, models, grid)
    f = solver.initial_field()
    assert linear_growth_norm(f, f) == 0.0

    # field equal to 1 + |s|_1 has norm exactly one
    ones = []
    smesh = grid.s_mesh()[..., 0]
    for i in range(5):
        shape = (4,) + grid.y_shape(i) + grid.s_shape
        ones.append(np.broadcast_to(1.0 + smesh, shape))
    g1 = PriceField(grid, claim, ones)
    zero = PriceField(grid, claim, [np.zeros_like(s) for s in ones])
    assert linear_growth_norm(g1, zero) == pytest.approx(1.0)

    # matches a brute-force scan over every node
    solver2 = VolterraSolver(m, claim, models, grid)
    f2 = solver2.step(f)
    brute = 0.0
    w = 1.0 / (1.0 + smesh)
    for i in range(5):
        brute = max(brute, float(np.max(np.abs(f2.slabs[i] - f.slabs[i]) * w)))
    assert linear_growth_norm(f2, f) == pytest.approx(brute, rel=1e-12)


def test_terminal_slab_is_exact_payoff():
    m, claim, models, grid = degenerate_setup(price_nodes=31, time_steps=6,
                                              age_nodes=4)
    field, _ = solve_price_field(m, claim, models, grid, tol=1e-3)
    pay = claim(grid.s_mesh())
    diff = field.slabs[-1] - pay[(None,) * 3]
    assert float(np.max(np.abs(diff))) == 0.0


def test_one_step_at_terminal_returns_payoff():
    m, claim, models, grid = degenerate_setup(price_nodes=31, time_steps=6,
                                              age_nodes=4)
    solver = VolterraSolver(m, claim, models, grid)
    stepped = solver.step(solver.initial_field())
    pay = claim(grid.s_mesh())
    assert float(np.max(np.abs(stepped.slabs[-1] - pay[(None,) * 3]))) == 0.0


def test_degenerate_regime_equals_frozen_price():
    m, claim, models, grid = degenerate_setup()
    field, report = solve_price_field(m, claim, models, grid, tol=1e-3)
    assert report.converged_at <= 2
    solver = VolterraSolver(m, claim, models, grid)
    rho_field = solver.initial_field()
    assert linear_growth_norm(field, rho_field) < 1e-3
    assert all(r < 1.0 for r in report.ratios)
    # age lookups on the diagonal boundary get clamped and reported
    assert report.age_clamp_events > 0
    assert report.error_budget is not None and report.error_budget > 0


def test_linear_claim_fixed_point_exact():
    m = build_market(1, 2, 2, 0.04, np.array([0.08]), 0.25 * np.eye(1))
    claim = Claim("linear", weights=[1.0])
    h = HazardModel(2, {(1, 2): ConstantRate(0.4), (2, 1): ConstantRate(0.6)})
    grid = Grid(m, 1.0, np.array([[100.0]]),
                GridSpec(time_steps=10, price_nodes=41, age_nodes=4))
    field, report = solve_price_field(m, claim, [h, h], grid, tol=1e-7,
                                      settings=SolverSettings(gh_nodes=32))
    smesh = grid.s_mesh()[..., 0]
    worst = 0.0
    for i in range(11):
        target = smesh[(None,) * 3]
        worst = max(worst, float(np.max(np.abs(field.slabs[i] - target)
                                        / (1.0 + smesh))))
    assert worst < 1e-6


def test_positivity_and_envelope_preserved():
    m, claim, models, grid = regime_setup()
    field, _ = solve_price_field(m, claim, models, grid, tol=5e-4)
    smesh = grid.s_mesh()[..., 0]
    for i, slab in enumerate(field.slabs):
        assert float(np.min(slab)) >= 0.0
        gap = np.abs(slab - smesh[(None,) * 3])
        assert float(np.max(gap)) <= claim.c2 + 1e-6


def test_payoff_scaling_linearity():
    m, _, models, grid = regime_setup(price_nodes=41, time_steps=8, age_nodes=4)
    c1 = Claim("basket-call", weights=[1.0], strike=100.0)
    c3 = Claim("custom-piecewise-linear", weights=[1.0],
               knots=[0.0, 100.0], values=[0.0, 0.0], final_slope=3.0)
    f1, _ = solve_price_field(m, c1, models, grid, tol=1e-5)
    f3, _ = solve_price_field(m, c3, models, grid, tol=3e-5)
    for i in (0, 4, 8):
        np.testing.assert_allclose(3.0 * f1.slabs[i], f3.slabs[i],
                                   rtol=2e-5, atol=2e-4)


def test_contraction_ratios_below_joint_survival_bound():
    m, claim, models, grid = regime_setup()
    solver = VolterraSolver(m, claim, models, grid)
    field, report = solver.solve(tol=1e-5)
    bound = report.contraction_bound
    assert 0.0 < bound < 1.0
    for r in report.ratios:
        assert r < 1.0
        assert r <= bound + 0.05


def test_no_convergence_raises_with_report():
    m, claim, models, grid = degenerate_setup(price_nodes=21, time_steps=4,
                                              age_nodes=3)
    with pytest.raises(NoConvergence) as err:
        solve_price_field(m, claim, models, grid, tol=1e-15, max_iter=2)
    assert err.value.report.iterations == 2


def test_step_matches_conditional_law_route():
    """The solver's joint-survival form must agree with evaluating the
    operator through the conditional next-jump laws at sampled nodes."""
    m, claim, models, grid = regime_setup(price_nodes=41, time_steps=8,
                                          age_nodes=4)
    # same Gauss-Hermite order as the oracle's kernel_expectation default,
    # so both routes quadrate the interpolated field at identical nodes
    solver = VolterraSolver(m, claim, models, grid,
                            SolverSettings(gh_nodes=32))
    base = solver.initial_field()
    stepped = solver.step(base)
    T = grid.horizon

    # field holding the linear part c1.s, used to translate between the
    # solver's excess-coordinate smoothing and a direct field expectation
    lin_grid = claim.c1[0] * grid.s_mesh()[..., 0]
    lin_slabs = [np.broadcast_to(lin_grid[(None,) * 3], s.shape)
                 for s in base.slabs]
    lin_field = PriceField(grid, claim, lin_slabs)

    rng = np.random.default_rng(3)
    for _ in range(4):
        i = int(rng.integers(1, 8))
        t = float(grid.t_nodes[i])
        c = int(grid.c_counts[i])
        y_idx = tuple(int(rng.integers(0, c)) for _ in range(2))
        y = tuple(float(grid.age_nodes[a]) for a in y_idx)
        xi = int(rng.integers(0, 4))
        x = grid.x_tuples[xi]
        s_idx = int(rng.integers(15, 26))
        s = float(grid.s_axes[0][s_idx])

        state = CsmState(x, y)
        probs = next_jump_component_prob(models, state)
        rho = bsm_price(m, claim, x, t, T, np.array([s]))
        total = 0.0
        for l in range(2):
            law = next_jump_time_law(models, state, l)
            total += probs[l] * rho * (1.0 - law.cdf(T - t))
            # v-integral: composite midpoint on the dt panels, matching the
            # solver's quadrature so the comparison isolates the law algebra
            for p in range(8 - i):
                v = (p + 0.5) * grid.dt
                pl = transition_probs(models[l], x[l], y[l] + v)
                inner = 0.0
                for j in range(1, 3):
                    if pl[j - 1] == 0.0:
                        continue
                    xp = x[:l] + (j,) + x[l + 1:]
                    yp = np.array([0.0 if mm == l else y[mm] + v
                                   for mm in range(2)])
                    kern = build_kernel(m, t, x, v, s=np.array([s]))

                    def cont(sig):
                        B = sig.shape[0]
                        return base.values(np.full(B, t + v), sig,
                                           np.full(B, grid.x_index[xp]),
                                           np.tile(yp, (B, 1)))

                    def lin_interp(sig):
                        B = sig.shape[0]
                        return lin_field.values(np.full(B, t + v), sig,
                                                np.zeros(B, dtype=int),
                                                np.tile(yp, (B, 1)))
                    # the solver smooths the excess over c1.s and restores
                    # the linear part analytically; mirror that split here
                    lin_mean = math.exp(m.r(x) * v) * claim.c1[0] * s
                    value = kernel_expectation(kern, cont) + lin_mean \
                        - kernel_expectation(kern, lin_interp)
                    inner += pl[j - 1] * value
                total += probs[l] * grid.dt * math.exp(-m.r(x) * v) \
                    * law.pdf(v) * inner
        got = stepped.node_value(i, x, y_idx, (s_idx,))
        # the solver floors each slab at zero (positivity invariant)
        assert got == pytest.approx(max(total, 0.0), rel=2e-3, abs=2e-3)


def test_smoother_general_path_matches_diagonal():
    # correlated sigma forces the general shift path; on a diagonal model the
    # two paths must agree
    from regimehedge.volterra_pricer import _Smoother
    m = build_market(2, 2, 2, 0.03, np.zeros(2),
                     np.diag([0.2, 0.3]))
    claim = Claim("basket-call", weights=[0.5, 0.5], strike=100.0)
    grid = Grid(m, 1.0, np.array([[100.0, 100.0]]),
                GridSpec(time_steps=6, price_nodes=31, age_nodes=3))
    cov = m.a_integral(0.0, 0.25, (1, 1))
    zbar = 0.03 * 0.25 - 0.5 * np.diag(cov)
    chol = np.linalg.cholesky(cov)
    sm_d = _Smoother(zbar, chol, grid, claim.c1, 8)
    assert sm_d.diagonal
    sm_g = _Smoother(zbar, chol, grid, claim.c1, 8)
    sm_g.diagonal = False
    xi, w = np.polynomial.hermite.hermgauss(8)
    xi = xi * math.sqrt(2.0)
    w = w / math.sqrt(math.pi)
    grids = np.meshgrid(xi, xi, indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    sm_g.shifts = zbar + nodes @ chol.T
    sm_g.weights = np.kron(w, w)

    rng = np.random.default_rng(0)
    arr = rng.uniform(0.0, 50.0, size=(2, grid.spec.price_nodes,
                                       grid.spec.price_nodes))
    out_d = sm_d.apply(arr)
    out_g = sm_g.apply(arr)
    np.testing.assert_allclose(out_d, out_g, rtol=1e-10, atol=1e-10)


def test_pde_residual_linear_claim_tiny():
    m = build_market(1, 2, 2, 0.04, np.array([0.08]), 0.25 * np.eye(1))
    claim = Claim("linear", weights=[1.0])
    h = HazardModel(2, {(1, 2): ConstantRate(0.4), (2, 1): ConstantRate(0.6)})
    grid = Grid(m, 1.0, np.array([[100.0]]),
                GridSpec(time_steps=10, price_nodes=41, age_nodes=4))
    field, _ = solve_price_field(m, claim, [h, h], grid, tol=1e-7,
                                 settings=SolverSettings(gh_nodes=32))
    res = pde_residual(field, m, [h, h])
    assert res.max_scaled < 1e-6


def test_pde_residual_first_order_in_dt():
    m, claim, models, _ = degenerate_setup()
    reports = []
    for M, S in ((20, 161), (40, 321)):
        grid = Grid(m, 1.0, np.array([[100.0]]),
                    GridSpec(time_steps=M, price_nodes=S, age_nodes=4))
        field, _ = solve_price_field(m, claim, models, grid, tol=1e-3)
        margin = max(1, round(0.15 * M))
        reports.append(pde_residual(field, m, models,
                                    maturity_margin_steps=margin))
    ratio = reports[0].mean_scaled / reports[1].mean_scaled
    assert ratio >= 1.7
    assert reports[1].max_scaled < 5e-2


def test_two_discretizations_agree_within_budgets():
    m, claim, models, _ = regime_setup()
    pt = (0.0, np.array([100.0]), (1, 1), np.array([0.0, 0.0]))
    vals, budgets = [], []
    for M, S, A in ((16, 61, 5), (24, 91, 7)):
        grid = Grid(m, 1.0, np.array([[100.0]]),
                    GridSpec(time_steps=M, price_nodes=S, age_nodes=A))
        field, rep = solve_price_field(m, claim, models, grid, tol=1e-4)
        vals.append(field.value(*pt))
        budgets.append(rep.error_budget)
    scale = 1.0 + 100.0
    assert abs(vals[0] - vals[1]) / scale <= budgets[0] + budgets[1]


def test_picard_step_public_wrapper():
    m, claim, models, grid = degenerate_setup(price_nodes=21, time_steps=4,
                                              age_nodes=3)
    solver = VolterraSolver(m, claim, models, grid)
    f0 = solver.initial_field()
    f1 = picard_step(m, claim, models, f0)
    f1b = solver.step(f0)
    for a, b in zip(f1.slabs, f1b.slabs):
        np.testing.assert_array_equal(a, b)


def test_threaded_step_bit_identical():
    m, claim, models, grid = regime_setup(price_nodes=41, time_steps=8,
                                          age_nodes=4)
    s1 = VolterraSolver(m, claim, models, grid, SolverSettings(threads=1))
    s2 = VolterraSolver(m, claim, models, grid, SolverSettings(threads=2))
    f1 = s1.step(s1.initial_field())
    f2 = s2.step(s2.initial_field())
    for a, b in zip(f1.slabs, f2.slabs):
        np.testing.assert_array_equal(a, b)


def test_field_lookup_interpolation_and_extrapolation():
    m, claim, models, grid = degenerate_setup(price_nodes=41, time_steps=8,
                                              age_nodes=4)
    field, _ = solve_price_field(m, claim, models, grid, tol=1e-3)
    # beyond the top price edge the lookup extends with slope c1
    s_big = np.array([[math.exp(grid.lns_axes[0][-1]) * 2.0]])
    edge = np.array([[math.exp(grid.lns_axes[0][-1])]])
    v_big = field.values(np.array([0.5]), s_big, np.array([0]),
                         np.array([[0.2, 0.2]]))
    v_edge = field.values(np.array([0.5]), edge, np.array([0]),
                          np.array([[0.2, 0.2]]))
    assert v_big[0] == pytest.approx(v_edge[0] + (s_big[0, 0] - edge[0, 0]),
                                     rel=1e-9)
    # terminal queries return the payoff exactly
    vT = field.values(np.array([1.0]), np.array([[137.0]]), np.array([2]),
                      np.array([[0.3, 0.9]]))
    assert vT[0] == pytest.approx(37.0, abs=1e-12)
