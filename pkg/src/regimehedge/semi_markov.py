"""Age-dependent semi-Markov components.

Each component lives on states ``{1, .., k}`` and is described by hazard
rates ``lam[i][j](age)`` for ``i != j``: the instantaneous intensity of a
switch from ``i`` to ``j`` after holding for ``age`` time units.  From the
hazards we derive the cumulative hazard, the holding-time law, the
conditional destination probabilities, the competing-jump distributions
across several independent components, and an exact path simulator based
on inverting the exponential clock.

States are labelled 1..k in the public API; asset/component positions are
plain 0-based indices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize
from scipy.interpolate import PchipInterpolator

from .errors import ConfigError, RootFindFailure, TruncationFailure

# Tail handling for the improper competing-risk integrals: truncate where the
# joint survival drops below SURVIVAL_CUTOFF, never farther than CAP_MULTIPLE
# times the joint e-folding time.
SURVIVAL_CUTOFF = 1e-14
CAP_MULTIPLE = 50.0

_QUAD_OPTS = dict(epsabs=1e-12, epsrel=1e-11, limit=200)


# ---------------------------------------------------------------------------
# Hazard-rate families
# ---------------------------------------------------------------------------

class ConstantRate:
    """lam(age) = c with c > 0."""

    kind = "constant"

    def __init__(self, c: float):
        if not c > 0:
            raise ConfigError(f"constant hazard requires c > 0, got {c}")
        self.c = float(c)

    def rate(self, y):
        y = np.asarray(y, dtype=float)
        return np.full(y.shape, self.c)

    def integral(self, y):
        return self.c * np.asarray(y, dtype=float)

    def params(self):
        return {"family": "constant", "c": self.c}


class AffineRate:
    """lam(age) = a + b*age with a, b >= 0 and a + b > 0."""

    kind = "affine"

    def __init__(self, a: float, b: float):
        if a < 0 or b < 0 or a + b == 0:
            raise ConfigError(
                f"affine hazard requires a >= 0, b >= 0, a + b > 0, got a={a}, b={b}"
            )
        self.a = float(a)
        self.b = float(b)

    def rate(self, y):
        y = np.asarray(y, dtype=float)
        return self.a + self.b * y

    def integral(self, y):
        y = np.asarray(y, dtype=float)
        return self.a * y + 0.5 * self.b * y * y

    def params(self):
        return {"family": "affine", "a": self.a, "b": self.b}


class WeibullRate:
    """lam(age) = c * age**(kappa - 1) with c > 0, kappa >= 1.

    kappa = 1 degenerates to the constant family; kappa > 1 gives an
    increasing (aging) hazard that vanishes at age zero.
    """

    kind = "weibull"

    def __init__(self, c: float, kappa: float):
        if not c > 0:
            raise ConfigError(f"weibull hazard requires c > 0, got {c}")
        if not kappa >= 1:
            raise ConfigError(f"weibull hazard requires kappa >= 1, got {kappa}")
        self.c = float(c)
        self.kappa = float(kappa)

    def rate(self, y):
        y = np.asarray(y, dtype=float)
        if self.kappa == 1.0:
            return np.full(y.shape, self.c)
        return self.c * np.power(y, self.kappa - 1.0)

    def integral(self, y):
        y = np.asarray(y, dtype=float)
        return (self.c / self.kappa) * np.power(y, self.kappa)

    def params(self):
        return {"family": "weibull", "c": self.c, "kappa": self.kappa}


class TabulatedRate:
    """Monotone-cubic (PCHIP) interpolation of (age, rate) knots.

    The interpolant is C1 and stays within the local data range, so strictly
    positive knot values give a strictly positive rate.  Beyond the last knot
    the rate is extrapolated as the constant last value (below the first knot,
    the constant first value), which keeps the cumulative hazard unbounded.
    """

    kind = "tabulated"

    def __init__(self, knots, values):
        knots = np.asarray(knots, dtype=float)
        values = np.asarray(values, dtype=float)
        if knots.ndim != 1 or knots.size < 2:
            raise ConfigError("tabulated hazard needs at least two knots")
        if np.any(np.diff(knots) <= 0):
            raise ConfigError("tabulated hazard knots must be strictly increasing")
        if np.any(values <= 0):
            raise ConfigError("tabulated hazard values must be strictly positive")
        if knots[0] < 0:
            raise ConfigError("tabulated hazard knots must be >= 0")
        self.knots = knots
        self.values = values
        self._interp = PchipInterpolator(knots, values, extrapolate=False)
        self._anti = self._interp.antiderivative()

    def rate(self, y):
        y = np.asarray(y, dtype=float)
        yc = np.clip(y, self.knots[0], self.knots[-1])
        return np.asarray(self._interp(yc), dtype=float)

    def integral(self, y):
        # Exact integral of the piecewise cubic, plus constant-rate tails.
        y = np.asarray(y, dtype=float)
        k0, k1 = self.knots[0], self.knots[-1]
        yc = np.clip(y, k0, k1)
        out = self._anti(yc) - self._anti(k0)
        out = out + self.values[0] * (np.minimum(y, k0) - 0.0)
        out = out + self.values[-1] * np.maximum(y - k1, 0.0)
        return np.asarray(out, dtype=float)

    def params(self):
        return {
            "family": "tabulated",
            "knots": self.knots.tolist(),
            "values": self.values.tolist(),
        }


_CLOSED_FORM_AFFINE = (ConstantRate, AffineRate)


def make_rate(spec: dict):
    """Build a rate family from a config mapping."""
    fam = spec.get("family")
    if fam == "constant":
        return ConstantRate(spec["c"])
    if fam == "affine":
        return AffineRate(spec.get("a", 0.0), spec.get("b", 0.0))
    if fam == "weibull":
        return WeibullRate(spec["c"], spec.get("kappa", 1.0))
    if fam == "tabulated":
        return TabulatedRate(spec["knots"], spec["values"])
    raise ConfigError(f"unknown hazard family {fam!r}")


# ---------------------------------------------------------------------------
# HazardModel
# ---------------------------------------------------------------------------

class HazardModel:
    """Hazard description of a single age-dependent component.

    Parameters
    ----------
    k : int
        Number of states; states are labelled 1..k.
    rates : dict[(int, int), rate family]
        One entry per ordered pair (i, j), i != j, giving lam_ij(age).
        Omitted pairs have zero rate, but the support pattern must remain
        irreducible (every state reachable from every other).
    """

    def __init__(self, k: int, rates: dict):
        if k < 2:
            raise ConfigError(f"component needs k >= 2 states, got {k}")
        self.k = int(k)
        self.rates = {}
        for (i, j), fam in rates.items():
            if not (1 <= i <= k and 1 <= j <= k) or i == j:
                raise ConfigError(f"invalid hazard pair ({i}, {j}) for k={k}")
            self.rates[(int(i), int(j))] = fam
        self._rows = {i: sorted(j for (ii, j) in self.rates if ii == i)
                      for i in range(1, k + 1)}
        for i in range(1, k + 1):
            if not self._rows[i]:
                raise ConfigError(f"state {i} has no exit hazard")
        self._check_irreducible()
        self._row_kind = {i: self._classify_row(i) for i in range(1, k + 1)}

    # -- construction helpers ------------------------------------------------

    def _check_irreducible(self):
        k = self.k
        adj = np.zeros((k, k), dtype=bool)
        for (i, j) in self.rates:
            adj[i - 1, j - 1] = True
        reach = adj | np.eye(k, dtype=bool)
        for _ in range(k):
            reach = reach | (reach @ reach)
        if not reach.all():
            raise ConfigError("hazard support pattern is not irreducible")

    def _classify_row(self, i):
        fams = [self.rates[(i, j)] for j in self._rows[i]]
        if all(isinstance(f, _CLOSED_FORM_AFFINE)
               or (isinstance(f, WeibullRate) and f.kappa == 1.0) for f in fams):
            a = sum(f.c if isinstance(f, (ConstantRate, WeibullRate)) else f.a
                    for f in fams)
            b = sum(f.b for f in fams if isinstance(f, AffineRate))
            return ("affine", float(a), float(b))
        if all(isinstance(f, WeibullRate) for f in fams):
            kappas = {f.kappa for f in fams}
            if len(kappas) == 1:
                return ("weibull", float(sum(f.c for f in fams)), kappas.pop())
        return ("numeric",)

    # -- elementary laws ------------------------------------------------------

    def rate(self, i: int, j: int, y):
        fam = self.rates.get((i, j))
        if fam is None:
            return np.zeros(np.shape(np.asarray(y, dtype=float)))
        return fam.rate(y)

    def exit_rate(self, i: int, y):
        """Total exit rate sum_{j != i} lam_ij(y); equals |lam_ii|."""
        y = np.asarray(y, dtype=float)
        out = np.zeros(y.shape)
        for j in self._rows[i]:
            out = out + self.rates[(i, j)].rate(y)
        return out

    def cumulative_hazard(self, i: int, y):
        y = np.asarray(y, dtype=float)
        out = np.zeros(y.shape)
        for j in self._rows[i]:
            out = out + self.rates[(i, j)].integral(y)
        return out

    def holding_cdf(self, i: int, y):
        return 1.0 - np.exp(-self.cumulative_hazard(i, y))

    def holding_pdf(self, i: int, y):
        return self.exit_rate(i, y) * np.exp(-self.cumulative_hazard(i, y))

    def residual_log_survival(self, i: int, y: float, s):
        """log P(holding > y + s | holding > y) = -(Lambda(y+s) - Lambda(y))."""
        s = np.asarray(s, dtype=float)
        return -(self.cumulative_hazard(i, y + s) - self.cumulative_hazard(i, float(y)))

    def transition_probs(self, i: int, y: float):
        """Destination distribution given a jump out of i at age y."""
        p = np.zeros(self.k)
        for j in self._rows[i]:
            p[j - 1] = float(self.rates[(i, j)].rate(np.asarray(y, dtype=float)))
        tot = p.sum()
        if tot <= 0:
            # Only reachable when every exit rate vanishes at y (weibull/affine
            # rows at age 0); the embedded ratio is the limit of rate ratios.
            eps = 1e-9
            for j in self._rows[i]:
                p[j - 1] = float(self.rates[(i, j)].rate(np.asarray(y + eps)))
            tot = p.sum()
        return p / tot

    # -- clock inversion -------------------------------------------------------

    def invert_clock(self, i: int, y: float, e: float) -> float:
        """Solve Lambda_i(y + tau) - Lambda_i(y) = e for tau >= 0."""
        kind = self._row_kind[i]
        if kind[0] == "affine":
            _, a, b = kind
            if b == 0.0:
                return e / a
            r = a + b * y
            return 2.0 * e / (r + math.sqrt(r * r + 2.0 * b * e))
        if kind[0] == "weibull":
            _, c, kap = kind
            return (y ** kap + kap * e / c) ** (1.0 / kap) - y
        base = float(self.cumulative_hazard(i, np.asarray(y)))
        g = lambda tau: float(self.cumulative_hazard(i, np.asarray(y + tau))) - base - e

        hi = max(e / max(float(self.exit_rate(i, np.asarray(y))), 1e-300), 1e-12)
        for _ in range(200):
            if g(hi) >= 0.0:
                break
            hi *= 2.0
        else:
            raise RootFindFailure(
                f"cumulative hazard failed to reach {e} from age {y} in state {i}"
            )
        return float(optimize.brentq(g, 0.0, hi, xtol=1e-12))

    def clock_scale(self, i: int, y: float) -> float:
        """Residual time to accumulate one unit of hazard (e-folding time)."""
        return self.invert_clock(i, y, 1.0)

    def describe(self):
        return {"k": self.k,
                "rates": {f"{i}->{j}": fam.params() for (i, j), fam in self.rates.items()}}

    def scaled(self, factor: float) -> "HazardModel":
        """New model with every rate multiplied by a positive factor."""
        if factor <= 0:
            raise ConfigError("hazard scale factor must be positive")
        out = {}
        for (i, j), fam in self.rates.items():
            if isinstance(fam, ConstantRate):
                out[(i, j)] = ConstantRate(factor * fam.c)
            elif isinstance(fam, AffineRate):
                out[(i, j)] = AffineRate(factor * fam.a, factor * fam.b)
            elif isinstance(fam, WeibullRate):
                out[(i, j)] = WeibullRate(factor * fam.c, fam.kappa)
            else:
                out[(i, j)] = TabulatedRate(fam.knots, factor * fam.values)
        return HazardModel(self.k, out)


# ---------------------------------------------------------------------------
# Joint state of a componentwise semi-Markov vector
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CsmState:
    """States and ages of all components: x[l] in 1..k, y[l] >= 0."""

    x: tuple
    y: tuple

    def __post_init__(self):
        if len(self.x) != len(self.y):
            raise ConfigError("state and age vectors must have equal length")
        if any(a < 0 for a in self.y):
            raise ConfigError("ages must be nonnegative")

    @property
    def n_components(self):
        return len(self.x)

    def replace_state(self, l: int, j: int) -> "CsmState":
        x = list(self.x)
        x[l] = j
        return CsmState(tuple(x), self.y)


# ---------------------------------------------------------------------------
# Module-level operations (thin wrappers for the common laws)
# ---------------------------------------------------------------------------

def cumulative_hazard(h: HazardModel, i: int, y: float) -> float:
    return float(h.cumulative_hazard(i, np.asarray(y, dtype=float)))


def holding_cdf(h: HazardModel, i: int, y: float) -> float:
    return float(h.holding_cdf(i, np.asarray(y, dtype=float)))


def holding_pdf(h: HazardModel, i: int, y: float) -> float:
    return float(h.holding_pdf(i, np.asarray(y, dtype=float)))


def residual_holding_cdf(h: HazardModel, i: int, y: float, s) -> float | np.ndarray:
    """CDF of the remaining holding time given current age y."""
    out = 1.0 - np.exp(h.residual_log_survival(i, y, s))
    return float(out) if np.ndim(s) == 0 else out


def transition_probs(h: HazardModel, i: int, y: float) -> np.ndarray:
    return h.transition_probs(i, y)


# ---------------------------------------------------------------------------
# Competing-jump laws across components
# ---------------------------------------------------------------------------

def _joint_log_survival(models, state):
    """Vectorized s -> log prod_m P(comp m holds s more | age y_m)."""
    def ls(s):
        s = np.asarray(s, dtype=float)
        out = np.zeros(s.shape)
        for m, h in enumerate(models):
            out = out + h.residual_log_survival(state.x[m], state.y[m], s)
        return out
    return ls


def _truncation_horizon(models, state):
    scales = [h.clock_scale(state.x[m], state.y[m])
              for m, h in enumerate(models)]
    cap = CAP_MULTIPLE * max(scales)
    ceiling = 20.0 * cap
    ls = _joint_log_survival(models, state)
    s = min(scales)
    cutoff = math.log(SURVIVAL_CUTOFF)
    while True:
        lsv = float(ls(np.asarray(s)))
        if lsv <= cutoff:
            return s
        if s >= cap:
            # decaying-but-positive tails legitimately need more than the
            # nominal multiple of the holding scale (the cutoff is ~32
            # hazard units); project the remaining depth from the current
            # joint exit rate and extend, flagging only a genuine collapse
            h_now = sum(float(h.exit_rate(state.x[m],
                                          np.asarray(state.y[m] + s)))
                        for m, h in enumerate(models))
            needed = (lsv - cutoff) / max(h_now, 1e-300)
            target = s + 1.2 * needed
            if h_now <= 0.0 or target > ceiling:
                raise TruncationFailure(
                    f"joint survival still {math.exp(lsv):.3e} at "
                    f"{s / max(scales):.0f} holding-time scales; check the "
                    f"hazard tables")
            cap = min(target, ceiling)
        s = min(2.0 * s, cap)


def _component_integrand(models, state, l):
    ls = _joint_log_survival(models, state)
    h = models[l]
    xl, yl = state.x[l], state.y[l]

    def f(s):
        s = np.asarray(s, dtype=float)
        return np.exp(ls(s)) * h.exit_rate(xl, yl + s)
    return f


def _breakpoints(models, state, s_max):
    """Knot offsets of tabulated hazards inside (0, s_max), for quadrature."""
    pts = set()
    for m, h in enumerate(models):
        for fam in h.rates.values():
            if isinstance(fam, TabulatedRate):
                for t in fam.knots:
                    off = float(t) - state.y[m]
                    if 0.0 < off < s_max:
                        pts.add(off)
    return sorted(pts)


def next_jump_component_prob(models, state: CsmState) -> np.ndarray:
    """P(the next jump happens in component l), for l = 0..n.

    Computed by adaptive quadrature of the joint-survival-weighted exit rate
    of each component, truncated where the joint survival falls below
    SURVIVAL_CUTOFF.  Entries sum to one within quadrature tolerance.
    """
    s_max = _truncation_horizon(models, state)
    pts = _breakpoints(models, state, s_max)
    out = np.empty(len(models))
    for l in range(len(models)):
        f = _component_integrand(models, state, l)
        val, _ = integrate.quad(f, 0.0, s_max, points=pts or None, **_QUAD_OPTS)
        out[l] = val
    return out


@dataclass
class JumpTimeLaw:
    """Conditional law of the waiting time given which component jumps first."""

    component: int
    prob: float                 # P(l jumps first)
    _models: list = field(repr=False)
    _state: CsmState = field(repr=False)
    _denom: float = field(repr=False)
    _s_max: float = field(repr=False)

    def cdf(self, v):
        f = _component_integrand(self._models, self._state, self.component)
        pts = _breakpoints(self._models, self._state, self._s_max)

        def one(vv):
            hi = min(float(vv), self._s_max)
            if hi <= 0.0:
                return 0.0
            cut = [p for p in pts if p < hi]
            num, _ = integrate.quad(f, 0.0, hi, points=cut or None, **_QUAD_OPTS)
            return num / self._denom
        if np.ndim(v) == 0:
            return one(v)
        return np.array([one(vv) for vv in np.asarray(v, dtype=float)])

    def pdf(self, v):
        f = _component_integrand(self._models, self._state, self.component)
        out = f(np.asarray(v, dtype=float)) / self._denom
        return float(out) if np.ndim(v) == 0 else out


def next_jump_time_law(models, state: CsmState, l: int) -> JumpTimeLaw:
    """Waiting-time law of component l's jump given it is the first to jump."""
    s_max = _truncation_horizon(models, state)
    f = _component_integrand(models, state, l)
    pts = _breakpoints(models, state, s_max)
    denom, _ = integrate.quad(f, 0.0, s_max, points=pts or None, **_QUAD_OPTS)
    return JumpTimeLaw(component=l, prob=denom, _models=list(models),
                       _state=state, _denom=denom, _s_max=s_max)


# ---------------------------------------------------------------------------
# Exact simulation
# ---------------------------------------------------------------------------

@dataclass
class RegimePath:
    """Jump record of a simulated componentwise path over [0, horizon]."""

    horizon: float
    jump_times: np.ndarray      # (m,)
    jump_component: np.ndarray  # (m,) int
    jump_from: np.ndarray       # (m,) state labels
    jump_to: np.ndarray         # (m,)
    ages_before: np.ndarray     # (m, n+1) ages just before each jump
    states: np.ndarray          # (m+1, n+1) state tuple on each inter-jump interval
    final_ages: np.ndarray      # (n+1,) ages at the horizon

    @property
    def n_jumps(self):
        return len(self.jump_times)


def simulate_csm(models, initial: CsmState, horizon: float,
                 rng: np.random.Generator, max_jumps: int | None = None) -> RegimePath:
    """Simulate all components exactly by inverting each exponential clock.

    Each component repeatedly draws E ~ Exp(1) and solves
    Lambda(age + tau) - Lambda(age) = E for its next jump; the earliest
    candidate jump fires (ties broken by lowest component index), its
    destination is drawn from the age-dependent transition probabilities,
    and its age resets to zero while the others keep running.

    max_jumps truncates the record early (first-jump studies); the returned
    final ages then refer to the truncation time, not the horizon.
    """
    if horizon <= 0:
        raise ConfigError("horizon must be positive")
    n_comp = len(models)
    x = list(initial.x)
    reset_time = [-float(initial.y[m]) for m in range(n_comp)]  # age(t) = t - reset
    next_time = np.empty(n_comp)
    for m in range(n_comp):
        tau = models[m].invert_clock(x[m], initial.y[m], rng.exponential())
        next_time[m] = tau

    times, comps, frs, tos, ages_b, states = [], [], [], [], [], [tuple(x)]
    while True:
        l = int(np.argmin(next_time))
        t_jump = float(next_time[l])
        if t_jump > horizon:
            break
        age_at_jump = t_jump - reset_time[l]
        probs = models[l].transition_probs(x[l], age_at_jump)
        j = int(np.searchsorted(np.cumsum(probs), rng.random())) + 1
        ages_b.append([t_jump - reset_time[m] for m in range(n_comp)])
        times.append(t_jump)
        comps.append(l)
        frs.append(x[l])
        tos.append(j)
        x[l] = j
        reset_time[l] = t_jump
        next_time[l] = t_jump + models[l].invert_clock(j, 0.0, rng.exponential())
        states.append(tuple(x))
        if max_jumps is not None and len(times) >= max_jumps:
            horizon = t_jump
            break

    return RegimePath(
        horizon=horizon,
        jump_times=np.asarray(times, dtype=float),
        jump_component=np.asarray(comps, dtype=int),
        jump_from=np.asarray(frs, dtype=int),
        jump_to=np.asarray(tos, dtype=int),
        ages_before=np.asarray(ages_b, dtype=float).reshape(len(times), n_comp),
        states=np.asarray(states, dtype=int),
        final_ages=np.array([horizon - reset_time[m] for m in range(n_comp)]),
    )


def path_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for reproducible independent streams."""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(stream,)))
    )
