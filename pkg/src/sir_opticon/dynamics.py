"""Controlled SIR dynamics, piecewise-control integration and event location.

The state is the pair ``(s, i)`` of susceptible and infected fractions, driven by

    ds/dt = -b s i,        di/dt = (b s - gamma) i,

with the transmission rate ``b`` confined to ``[beta_star, beta]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq, minimize_scalar

from .errors import DomainError, IntegrationError, StandingAssumptionError

DEFAULT_TOL = 1e-9
TOL_EVENT = 1e-10
_RATE_SLACK = 1e-12


def level_root(threshold, i_M):
    """Root ``s > threshold`` of ``i_M - s + c + c*log(s/c) = 0`` with ``c = threshold``.

    The left side equals ``i_M`` at ``s = c`` and decreases strictly afterwards,
    so the root is unique and bracketed.
    """
    c = threshold

    def g(s):
        return i_M - s + c + c * math.log(s / c)

    hi = max(1.0, 2.0 * c)
    while g(hi) > 0.0:
        hi *= 2.0
    return brentq(g, c, hi, xtol=1e-15, rtol=8.9e-16, maxiter=500)


@dataclass(frozen=True)
class EpidemicParams:
    """Model constants. Rates are per day, ``i_M`` is a population fraction."""

    beta_star: float
    beta: float
    gamma: float
    i_M: float

    def __post_init__(self):
        if not 0.0 < self.beta_star < self.beta:
            raise DomainError(f"need 0 < beta_star < beta, got {self.beta_star}, {self.beta}")
        if not self.gamma > 0.0:
            raise DomainError(f"gamma must be positive, got {self.gamma}")
        if not 0.0 < self.i_M < 1.0:
            raise DomainError(f"need 0 < i_M < 1, got {self.i_M}")
        s_star = level_root(self.lock, self.i_M)
        if s_star > 1.0:
            raise StandingAssumptionError(
                f"s_M* = {s_star:.6g} > 1; only the case s_M* <= 1 is supported"
            )

    @property
    def herd(self):
        """Herd-immunity threshold gamma/beta."""
        return self.gamma / self.beta

    @property
    def lock(self):
        """Threshold gamma/beta_star below which full lockdown stops the epidemic."""
        return self.gamma / self.beta_star

    def clip_rate(self, b):
        return min(max(b, self.beta_star), self.beta)

    def check_rate(self, b):
        lo = self.beta_star * (1.0 - _RATE_SLACK)
        hi = self.beta * (1.0 + _RATE_SLACK)
        if not lo <= b <= hi:
            raise DomainError(
                f"control {b!r} outside [{self.beta_star}, {self.beta}]"
            )


@dataclass(frozen=True)
class CostWeights:
    lambda1: float = 0.0
    lambda2: float = 1.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise DomainError("cost weights must be non-negative")
        if self.lambda1 == 0 and self.lambda2 == 0:
            raise DomainError("at least one cost weight must be positive")


@dataclass(frozen=True)
class SirState:
    s: float
    i: float

    def __post_init__(self):
        if self.s < 0 or self.i < 0 or self.s + self.i > 1.0 + 1e-12:
            raise DomainError(f"state ({self.s}, {self.i}) is outside the simplex")


# -- control laws -------------------------------------------------------------


@dataclass(frozen=True)
class Constant:
    b: float

    def value(self, t, params):
        return self.b


@dataclass(frozen=True)
class SingularArc:
    """Boundary-arc law ``beta / (1 + beta*i_M*(tau2 - t))``.

    ``offset`` shifts the law (clipped back into the admissible band); it is
    zero for the optimal synthesis and only used by perturbation studies.
    """

    tau2: float
    offset: float = 0.0

    def value(self, t, params):
        b = params.beta / (1.0 + params.beta * params.i_M * (self.tau2 - t))
        if self.offset:
            return params.clip_rate(b + self.offset)
        return b


@dataclass(frozen=True)
class ControlSegment:
    t_start: float
    t_end: float
    law: Constant | SingularArc

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise DomainError(f"segment needs t_start < t_end, got [{self.t_start}, {self.t_end}]")


@dataclass(frozen=True)
class ControlSchedule:
    """Contiguous control segments; ``default`` applies outside them."""

    segments: tuple[ControlSegment, ...]
    default: float
    params: EpidemicParams

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        p = self.params
        p.check_rate(self.default)
        for a, b in zip(self.segments, self.segments[1:]):
            if abs(a.t_end - b.t_start) > 1e-12 * max(1.0, abs(a.t_end)):
                raise DomainError("control segments must be contiguous")
        for seg in self.segments:
            law = seg.law
            if isinstance(law, Constant):
                p.check_rate(law.b)
            elif isinstance(law, SingularArc):
                if law.offset == 0.0:
                    if seg.t_end > law.tau2 + 1e-9:
                        raise DomainError("singular arc must end no later than tau2")
                    p.check_rate(law.value(seg.t_start, p))
                    p.check_rate(law.value(seg.t_end, p))
            else:
                raise DomainError(f"unknown control law {law!r}")

    @classmethod
    def constant(cls, b, params):
        return cls((), b, params)

    def segment_at(self, t):
        for seg in self.segments:
            if seg.t_start <= t < seg.t_end:
                return seg
        return None

    def __call__(self, t):
        seg = self.segment_at(t)
        if seg is None:
            return self.default
        return seg.law.value(t, self.params)

    def breakpoints(self):
        pts = []
        for seg in self.segments:
            pts.extend((seg.t_start, seg.t_end))
        return sorted(set(pts))


# -- trajectories -------------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    """Time-sampled path with dense interpolation between samples.

    ``times`` is increasing for forward runs and decreasing for backward runs.
    """

    times: np.ndarray
    s: np.ndarray
    i: np.ndarray
    b: np.ndarray
    events: list = field(default_factory=list)
    _pieces: list = field(default_factory=list, repr=False, compare=False)

    def state_at(self, t):
        """Dense state at time(s) ``t`` within the integrated range."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        s = np.full(t.size, np.nan)
        i = np.full(t.size, np.nan)
        for t_a, t_b, sol, sign in self._pieces:
            lo, hi = (t_a, t_b) if sign > 0 else (t_b, t_a)
            mask = np.isnan(s) & (t >= lo - 1e-12) & (t <= hi + 1e-12)
            if not mask.any():
                continue
            if sol is None:
                y = self._constant_value(t_a)
                s[mask], i[mask] = y
                continue
            tau = np.clip(sign * (t[mask] - t_a), 0.0, abs(t_b - t_a))
            s[mask], i[mask] = sol(tau)
        if np.isnan(s).any():
            raise DomainError("time outside the trajectory range")
        return s, i

    def _constant_value(self, t_a):
        k = int(np.argmin(np.abs(self.times - t_a)))
        return self.s[k], self.i[k]

    @property
    def t_start(self):
        return float(self.times[0])

    @property
    def t_end(self):
        return float(self.times[-1])

    def final_state(self):
        return SirState(max(float(self.s[-1]), 0.0), max(float(self.i[-1]), 0.0))


def vector_field(state, b, params):
    """Return ``(ds/dt, di/dt)`` at ``state`` under transmission rate ``b``."""
    params.check_rate(b)
    inc = b * state.s * state.i
    return -inc, inc - params.gamma * state.i


def conserved_quantity(state, b, params):
    """First integral ``i + s - (gamma/b) log s`` of the constant-control flow."""
    if state.s <= 0:
        raise DomainError("conserved quantity needs s > 0")
    return state.i + state.s - params.gamma / b * math.log(state.s)


def _run_law(law, s0, i0, t0, t1, params, tol, breakpoints=(), max_step=np.inf):
    """Integrate under ``law(t, s, i) -> b`` from ``t0`` to ``t1``.

    The solver restarts at every breakpoint strictly between ``t0`` and ``t1``;
    backward runs integrate the negated field in reversed time.
    """
    sign = 1.0 if t1 > t0 else -1.0
    inner = sorted(p for p in breakpoints if min(t0, t1) < p < max(t0, t1))
    if sign < 0:
        inner = inner[::-1]
    nodes = [t0, *inner, t1]
    gamma = params.gamma
    # i decays to ~1e-8 over long horizons; a loose atol spoils backward runs
    rtol, atol = tol, tol * 1e-7

    times, ss, ii, pieces = [], [], [], []
    y = np.array([s0, i0], dtype=float)
    for t_a, t_b in zip(nodes, nodes[1:]):
        if t_a == t_b:
            continue
        if y[1] == 0.0:
            # i = 0 is an equilibrium line
            ts = np.array([t_a, t_b])
            seg_s = np.full(2, y[0])
            seg_i = np.zeros(2)
            pieces.append((t_a, t_b, None, sign))
        else:

            def rhs(tau, y, t_a=t_a):
                t = t_a + sign * tau
                b = law(t, y[0], y[1])
                inc = b * y[0] * y[1]
                return (-sign * inc, sign * (inc - gamma * y[1]))

            sol = solve_ivp(
                rhs,
                (0.0, abs(t_b - t_a)),
                y,
                method="DOP853",
                rtol=rtol,
                atol=atol,
                dense_output=True,
                max_step=max_step,
            )
            if sol.status != 0:
                last = t_a + sign * float(sol.t[-1]) if sol.t.size else t_a
                raise IntegrationError(sol.message, last)
            ts = t_a + sign * sol.t
            seg_s, seg_i = sol.y
            pieces.append((t_a, t_b, sol.sol, sign))
        # the interior node values of consecutive pieces coincide; keep the later piece's
        if times:
            times[-1] = times[-1][:-1]
            ss[-1] = ss[-1][:-1]
            ii[-1] = ii[-1][:-1]
        times.append(ts)
        ss.append(seg_s)
        ii.append(seg_i)
        y = np.array([seg_s[-1], seg_i[-1]])

    t_all = np.concatenate(times)
    s_all = np.concatenate(ss)
    i_all = np.concatenate(ii)
    if t_all.size == 1:
        t_all = np.array([t0, t1])
        s_all = np.array([s0, s0])
        i_all = np.array([i0, i0])
    b_all = np.array([law(t, s, i) for t, s, i in zip(t_all, s_all, i_all)])
    return Trajectory(t_all, s_all, i_all, b_all, [], pieces)


def integrate(state0, schedule, t0, t1, tol=DEFAULT_TOL, params=None, max_step=np.inf):
    """Integrate the controlled field under ``schedule`` from ``t0`` to ``t1``.

    ``t1 < t0`` integrates backward in time. Segment boundaries of the schedule
    are always grid points and no solver step straddles them.
    """
    if t0 == t1:
        raise DomainError("integration needs t0 != t1")
    if tol <= 0:
        raise DomainError("tol must be positive")
    params = params or schedule.params
    law = _schedule_law(schedule)
    traj = _run_law(law, state0.s, state0.i, t0, t1, params, tol, schedule.breakpoints(), max_step)
    lo, hi = min(t0, t1), max(t0, t1)
    traj.events.extend(("switch", p) for p in schedule.breakpoints() if lo < p < hi)
    return traj


def integrate_feedback(state0, feedback, t0, t1, params, tol=DEFAULT_TOL, max_step=np.inf):
    """Integrate under a state-feedback law ``feedback(s, i) -> b``."""
    return _run_law(lambda t, s, i: feedback(s, i), state0.s, state0.i, t0, t1, params, tol,
                    (), max_step)


def _schedule_law(schedule):
    def law(t, s, i):
        return schedule(t)

    return law


# -- events -------------------------------------------------------------------


@dataclass(frozen=True)
class EventSpec:
    """Event ``s_reaches(c)``, ``i_reaches(c)`` or ``hits_boundary_B``."""

    kind: str
    level: float | None = None

    def __post_init__(self):
        if self.kind not in ("s_reaches", "i_reaches", "hits_boundary_B"):
            raise DomainError(f"unknown event kind {self.kind!r}")
        if self.kind != "hits_boundary_B" and self.level is None:
            raise DomainError(f"event {self.kind} needs a level")

    @classmethod
    def s_reaches(cls, c):
        return cls("s_reaches", c)

    @classmethod
    def i_reaches(cls, c):
        return cls("i_reaches", c)

    @classmethod
    def hits_boundary_B(cls):
        return cls("hits_boundary_B")

    def function(self, params):
        if self.kind == "s_reaches":
            return lambda s, i: s - self.level
        if self.kind == "i_reaches":
            return lambda s, i: i - self.level
        from .zones import phi_b

        return lambda s, i: i - phi_b(s, params)


def first_crossing(traj, g, tol_event=TOL_EVENT, subdivide=4):
    """First time along ``traj`` where ``g(s, i)`` vanishes or changes sign.

    Each solver step is sampled at ``subdivide`` interior points through the dense
    output before bracketing; the root is refined with Brent's method (bisection
    safeguarded secant/inverse-quadratic steps) to ``tol_event`` in time.
    Sampled local maxima of a negative ``g`` are refined as well, so contacts
    that graze zero between two samples are not missed.
    ``g`` must accept numpy arrays.
    """
    ts = np.asarray(traj.times, dtype=float)
    frac = np.linspace(0.0, 1.0, subdivide + 2)[1:-1]
    fine = (ts[:-1, None] + (ts[1:] - ts[:-1])[:, None] * frac[None, :])
    grid = np.concatenate([np.column_stack([ts[:-1, None], fine]).ravel(), ts[-1:]])
    s, i = traj.state_at(grid)
    # grid nodes are exact solver output; keep them rather than interpolated values
    node_idx = np.arange(ts.size) * (subdivide + 1)
    s[node_idx], i[node_idx] = traj.s, traj.i
    gv = np.asarray(g(s, i), dtype=float)
    if gv[0] == 0.0:
        return float(grid[0])

    def gt(t):
        ss, ii = traj.state_at(t)
        return float(g(ss, ii)[0])

    pos = gv > 0
    hits = np.flatnonzero((gv[1:] == 0.0) | (pos[1:] != pos[:-1]))
    k = hits[0] + 1 if hits.size else gv.size
    # a grazing contact can rise above zero and fall back between two samples;
    # refine each earlier sampled local maximum of a negative g before trusting k
    peaks = np.flatnonzero((gv[1:-1] < 0) & (gv[1:-1] >= gv[:-2]) & (gv[1:-1] >= gv[2:])) + 1
    for j in peaks[peaks < k - 1]:
        a, c = sorted((grid[j - 1], grid[j + 1]))
        res = minimize_scalar(lambda t: -gt(t), bounds=(a, c), method="bounded",
                              options={"xatol": tol_event})
        if -res.fun >= 0.0:
            lo, hi = sorted((grid[j - 1], res.x))
            if gt(lo) * gt(hi) > 0:
                return float(res.x)
            return float(brentq(gt, lo, hi, xtol=tol_event, rtol=8.9e-16))
    if k == gv.size:
        return None
    if gv[k] == 0.0:
        return float(grid[k])
    lo, hi = sorted((grid[k - 1], grid[k]))
    return float(brentq(gt, lo, hi, xtol=tol_event, rtol=8.9e-16))


def crossing_time(state0, schedule, event, t_max, params=None, tol=DEFAULT_TOL,
                  tol_event=TOL_EVENT):
    """First time in ``[0, t_max]`` at which ``event`` fires, or None."""
    if t_max <= 0:
        raise DomainError("t_max must be positive")
    params = params or schedule.params
    traj = integrate(state0, schedule, 0.0, t_max, tol, params)
    return first_crossing(traj, event.function(params), tol_event)
