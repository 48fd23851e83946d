"""Brute-force baselines that do not use the closed-form synthesis.

``solve_transcription`` discretizes the control into piecewise-constant values and
minimizes a penalized cost. The state is propagated by classical RK4, and the
gradient comes from the exact discrete adjoint of that scheme.
``sample_admissible_perturbation`` draws random feasible competitors of a
synthesized control for optimality spot checks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numba
import numpy as np
from scipy.optimize import minimize

from .dynamics import (
    Constant,
    ControlSchedule,
    ControlSegment,
    CostWeights,
    EpidemicParams,
    SingularArc,
    SirState,
)
from .errors import DomainError

log = logging.getLogger(__name__)

TERMINAL_MARGIN = 1e-4
FEASIBILITY_SLACK = 1e-10


@dataclass(frozen=True)
class TranscriptionProblem:
    n_intervals: int
    t_f: float
    state0: SirState
    params: EpidemicParams
    weights: CostWeights = CostWeights()
    penalty_weight: float = 1.0
    substeps: int = 8
    rounds: int = 4
    growth: float = 10.0

    def __post_init__(self):
        if self.n_intervals < 10:
            raise DomainError("need at least 10 control intervals")
        if not self.penalty_weight > 0:
            raise DomainError("penalty weight must be positive")
        if not self.t_f > 0:
            raise DomainError("t_f must be positive")


@dataclass(frozen=True)
class BaselineSolution:
    control_values: np.ndarray
    cost: float
    max_violation: float
    times: np.ndarray
    s: np.ndarray
    i: np.ndarray
    objective: float
    start: str

    def control_at(self, t):
        n = self.control_values.size
        k = np.clip((np.asarray(t) / self.times[-1] * n).astype(int), 0, n - 1)
        return self.control_values[k]


# -- RK4 propagation and its discrete adjoint ---------------------------------


@numba.njit(cache=True, inline="always")
def _f(s, i, u, gamma):
    inc = u * s * i
    return -inc, inc - gamma * i


@numba.njit(cache=True)
def _forward(u, s0, i0, dt, m, gamma):
    n = u.size
    S = np.empty(n * m + 1)
    I = np.empty(n * m + 1)
    S[0] = s0
    I[0] = i0
    for k in range(n):
        b = u[k]
        for j in range(m):
            q = k * m + j
            s, i = S[q], I[q]
            a1, c1 = _f(s, i, b, gamma)
            a2, c2 = _f(s + 0.5 * dt * a1, i + 0.5 * dt * c1, b, gamma)
            a3, c3 = _f(s + 0.5 * dt * a2, i + 0.5 * dt * c2, b, gamma)
            a4, c4 = _f(s + dt * a3, i + dt * c3, b, gamma)
            S[q + 1] = s + dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
            I[q + 1] = i + dt / 6.0 * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
    return S, I


@numba.njit(cache=True, inline="always")
def _vjp(s, i, u, gamma, ls, li):
    """``(df/dx)^T (ls, li)`` and ``(df/du) . (ls, li)``."""
    gs = -u * i * ls + u * i * li
    gi = -u * s * ls + (u * s - gamma) * li
    gu = s * i * (li - ls)
    return gs, gi, gu


@numba.njit(cache=True)
def _objective(u, s0, i0, h, m, gamma, beta, i_M, s_target, s_scale, lam1, lam2, w):
    """Penalized cost, its gradient, the pure cost and the largest violation."""
    n = u.size
    dt = h / m
    S, I = _forward(u, s0, i0, dt, m, gamma)
    pure = 0.0
    for k in range(n):
        pure += h * (lam1 + lam2 * (beta - u[k]))
    pen = 0.0
    viol = 0.0
    for q in range(1, n * m + 1):
        e = I[q] - i_M
        if e > 0.0:
            pen += dt * (e / i_M) ** 2
            if e > viol:
                viol = e
    e_term = S[n * m] - s_target
    if e_term > 0.0:
        pen += (e_term / s_scale) ** 2
    total = pure + w * pen

    grad = np.empty(n)
    ls = 0.0
    li = 0.0
    if e_term > 0.0:
        ls = w * 2.0 * e_term / s_scale ** 2
    for k in range(n - 1, -1, -1):
        b = u[k]
        gu_tot = -h * lam2
        for j in range(m - 1, -1, -1):
            q = k * m + j
            e = I[q + 1] - i_M
            if e > 0.0:
                li += w * dt * 2.0 * e / i_M ** 2
            s, i = S[q], I[q]
            a1, c1 = _f(s, i, b, gamma)
            s2, i2 = s + 0.5 * dt * a1, i + 0.5 * dt * c1
            a2, c2 = _f(s2, i2, b, gamma)
            s3, i3 = s + 0.5 * dt * a2, i + 0.5 * dt * c2
            a3, c3 = _f(s3, i3, b, gamma)
            s4, i4 = s + dt * a3, i + dt * c3
            # adjoints of the stage slopes
            k4s, k4i = dt / 6.0 * ls, dt / 6.0 * li
            k3s, k3i = dt / 3.0 * ls, dt / 3.0 * li
            k2s, k2i = dt / 3.0 * ls, dt / 3.0 * li
            k1s, k1i = dt / 6.0 * ls, dt / 6.0 * li
            xs, xi = ls, li
            ys, yi, gu = _vjp(s4, i4, b, gamma, k4s, k4i)
            gu_tot += gu
            xs += ys
            xi += yi
            k3s += dt * ys
            k3i += dt * yi
            ys, yi, gu = _vjp(s3, i3, b, gamma, k3s, k3i)
            gu_tot += gu
            xs += ys
            xi += yi
            k2s += 0.5 * dt * ys
            k2i += 0.5 * dt * yi
            ys, yi, gu = _vjp(s2, i2, b, gamma, k2s, k2i)
            gu_tot += gu
            xs += ys
            xi += yi
            k1s += 0.5 * dt * ys
            k1i += 0.5 * dt * yi
            ys, yi, gu = _vjp(s, i, b, gamma, k1s, k1i)
            gu_tot += gu
            ls = xs + ys
            li = xi + yi
        grad[k] = gu_tot
    return total, grad, pure, viol, S[n * m]


class _Evaluator:
    def __init__(self, problem):
        p = problem.params
        self.problem = problem
        self.h = problem.t_f / problem.n_intervals
        self.args = (
            problem.state0.s, problem.state0.i, self.h, problem.substeps, p.gamma, p.beta,
            p.i_M, p.herd - TERMINAL_MARGIN, p.herd, problem.weights.lambda1,
            problem.weights.lambda2,
        )

    def __call__(self, u, w):
        total, grad, _, _, _ = _objective(np.ascontiguousarray(u), *self.args, w)
        return total, grad

    def details(self, u, w):
        return _objective(np.ascontiguousarray(u), *self.args, w)


def penalized_objective(problem, u, w=None):
    """Penalized objective and its gradient for control values ``u``."""
    ev = _Evaluator(problem)
    return ev(np.asarray(u, dtype=float), problem.penalty_weight if w is None else w)


def sample_schedule(schedule, n, t_f, per_interval=16):
    """Average of ``schedule`` over each of ``n`` equal intervals of ``[0, t_f]``."""
    h = t_f / n
    offs = (np.arange(per_interval) + 0.5) / per_interval * h
    vals = np.array([[schedule(k * h + o) for o in offs] for k in range(n)])
    return vals.mean(axis=1)


def _starts(problem, seed, reference):
    p = problem.params
    n = problem.n_intervals
    rng = np.random.default_rng(seed)
    starts = []
    if reference is not None:
        starts.append(("reference", sample_schedule(reference, n, problem.t_f)))
    starts.append(("beta", np.full(n, p.beta)))
    starts.append(("beta_star", np.full(n, p.beta_star)))
    n_random = 8 - len(starts)
    for k in range(n_random):
        starts.append((f"random{k}", rng.uniform(p.beta_star, p.beta, n)))
    return starts


def solve_transcription(problem, seed=0, reference=None, maxiter=500):
    """Minimize the penalized transcription from 8 starts and return the best.

    Each start runs ``problem.rounds`` rounds of L-BFGS-B inside the box
    ``[beta_star, beta]``, multiplying the penalty weight by ``problem.growth``
    after every round. Every start uses the same final weight, so their final
    penalized objectives are comparable and the smallest wins. ``reference``
    (usually the synthesized schedule) supplies one of the starts. The random
    starts are drawn from ``seed``.
    """
    p = problem.params
    ev = _Evaluator(problem)
    bounds = [(p.beta_star, p.beta)] * problem.n_intervals
    w_final = problem.penalty_weight * problem.growth ** (problem.rounds - 1)
    best = None
    for name, u0 in _starts(problem, seed, reference):
        u = np.clip(u0, p.beta_star, p.beta)
        w = problem.penalty_weight
        for _ in range(problem.rounds):
            res = minimize(ev, u, args=(w,), jac=True, method="L-BFGS-B", bounds=bounds,
                           options={"maxiter": maxiter, "maxfun": 4 * maxiter,
                                    "ftol": 1e-15, "gtol": 1e-11})
            u = np.clip(res.x, p.beta_star, p.beta)
            w *= problem.growth
        obj, _, pure, viol, s_end = ev.details(u, w_final)
        log.debug("start %s: objective %.10g cost %.10g violation %.3g", name, obj, pure, viol)
        if best is None or obj < best[0]:
            best = (obj, name, u, pure, viol, s_end)
    obj, name, u, pure, viol, s_end = best
    dt = problem.t_f / problem.n_intervals / problem.substeps
    S, I = _forward(u, problem.state0.s, problem.state0.i, dt, problem.substeps, p.gamma)
    times = np.linspace(0.0, problem.t_f, S.size)
    violation = max(0.0, float(I.max()) - p.i_M, float(S[-1]) - p.herd)
    return BaselineSolution(u, float(pure), violation, times, S, I, float(obj), name)


# -- random admissible perturbations -----------------------------------------


def _bumps(rng, t_f, magnitude):
    n_bumps = int(rng.integers(1, 4))
    out = []
    for _ in range(n_bumps):
        width = rng.uniform(2.0, 0.25 * t_f)
        start = rng.uniform(-0.5 * width, t_f - 0.5 * width)
        out.append((max(start, 0.0), min(start + width, t_f), rng.uniform(-magnitude, magnitude)))
    return out


def perturb_schedule(schedule, bumps, t_f):
    """Add piecewise-constant offsets ``(t_a, t_b, delta)`` to ``schedule`` and clip."""
    p = schedule.params
    base = list(schedule.segments)
    end = base[-1].t_end if base else 0.0
    if end < t_f:
        base.append(ControlSegment(end, t_f, Constant(schedule.default)))
    cuts = {t for a, b, _ in bumps for t in (a, b)}
    segs = []
    for seg in base:
        pts = sorted({seg.t_start, seg.t_end} | {c for c in cuts if seg.t_start < c < seg.t_end})
        for a, b in zip(pts, pts[1:]):
            mid = 0.5 * (a + b)
            delta = sum(d for ta, tb, d in bumps if ta <= mid < tb)
            law = seg.law
            if delta == 0.0:
                new = law
            elif isinstance(law, Constant):
                new = Constant(p.clip_rate(law.b + delta))
            else:
                new = SingularArc(law.tau2, law.offset + delta)
            segs.append(ControlSegment(a, b, new))
    return ControlSchedule(tuple(segs), schedule.default, p)


@numba.njit(cache=True)
def _vertex(t0, y0, t1, y1, t2, y2):
    """Peak of the parabola through three points with a local maximum at the middle one."""
    d1 = (y1 - y0) / (t1 - t0)
    d2 = (y2 - y1) / (t2 - t1)
    a = (d2 - d1) / (t2 - t0)
    if a >= 0.0:
        return y1
    # the parabola is y1 + d (t - t1) + a (t - t1)^2, with d its slope at t1
    d = d1 + a * (t1 - t0)
    t_peak = t1 - d / (2.0 * a)
    if not t0 <= t_peak <= t2:
        return y1
    return y1 - d * d / (4.0 * a)


@numba.njit(cache=True)
def _screen(t_a, t_b, kind, rate, tau2, offset, s0, i0, beta_star, beta, gamma, i_M, max_dt):
    """Fixed-step RK4 over the segments; returns ``(max i, s at the end)``.

    Steps never straddle a segment boundary. ``kind`` is 0 for constant rates and
    1 for boundary-arc laws. A local maximum of ``i`` at a step node inside a
    segment is refined through the parabola over the two neighbouring steps;
    maxima at segment boundaries are kinks and are taken as they are.
    """
    s, i = s0, i0
    peak = i0
    tp2, ip2 = np.nan, np.nan
    tp1, ip1 = t_a[0], i0
    bs = np.empty(3)
    for q in range(t_a.size):
        length = t_b[q] - t_a[q]
        n = max(int(np.ceil(length / max_dt)), 1)
        dt = length / n
        for j in range(n):
            t = t_a[q] + j * dt
            if j == 0:
                ip2 = np.nan
            for r in range(3):
                tt = t + 0.5 * r * dt
                if kind[q] == 0:
                    bs[r] = rate[q]
                else:
                    v = beta / (1.0 + beta * i_M * (tau2[q] - tt)) + offset[q]
                    bs[r] = min(max(v, beta_star), beta)
            a1, c1 = _f(s, i, bs[0], gamma)
            a2, c2 = _f(s + 0.5 * dt * a1, i + 0.5 * dt * c1, bs[1], gamma)
            a3, c3 = _f(s + 0.5 * dt * a2, i + 0.5 * dt * c2, bs[1], gamma)
            a4, c4 = _f(s + dt * a3, i + dt * c3, bs[2], gamma)
            s = s + dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
            i = i + dt / 6.0 * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
            t_new = t + dt
            if i > peak:
                peak = i
            if not np.isnan(ip2) and ip1 >= ip2 and ip1 >= i:
                v = _vertex(tp2, ip2, tp1, ip1, t_new, i)
                if v > peak:
                    peak = v
            tp2, ip2 = tp1, ip1
            tp1, ip1 = t_new, i
    return peak, s


def screen_schedule(schedule, state0, t_f, max_dt=0.02):
    """Peak infected fraction and final ``s`` under ``schedule`` on ``[0, t_f]``.

    A fixed-step RK4 run compiled with numba. It is much cheaper than the
    adaptive integrator and, at the default step, agrees with it to about
    ``1e-10`` on the control laws used here.
    """
    p = schedule.params
    segs = [seg for seg in schedule.segments if seg.t_start < t_f]
    end = segs[-1].t_end if segs else 0.0
    rows = []
    for seg in segs:
        law = seg.law
        b_end = min(seg.t_end, t_f)
        if isinstance(law, Constant):
            rows.append((seg.t_start, b_end, 0, law.b, 0.0, 0.0))
        else:
            rows.append((seg.t_start, b_end, 1, 0.0, law.tau2, law.offset))
    if end < t_f:
        rows.append((end, t_f, 0, schedule.default, 0.0, 0.0))
    cols = list(zip(*rows))
    arr = [np.array(c, dtype=float) for c in cols]
    kind = np.array(cols[2], dtype=np.int64)
    peak, s_end = _screen(arr[0], arr[1], kind, arr[3], arr[4], arr[5], state0.s, state0.i,
                          p.beta_star, p.beta, p.gamma, p.i_M, max_dt)
    return float(peak), float(s_end)


def is_admissible(schedule, state0, t_f):
    """ICU feasibility within ``FEASIBILITY_SLACK`` and ``s(t_f) < gamma/beta``."""
    p = schedule.params
    peak, s_end = screen_schedule(schedule, state0, t_f)
    return peak <= p.i_M + FEASIBILITY_SLACK and s_end < p.herd


def sample_admissible_perturbation(result, magnitude, seed):
    """Randomly perturbed copy of ``result.schedule`` if it stays admissible, else None.

    One to three rectangular bumps of random width, position and signed height
    (at most ``magnitude``) are added to the control, which is then clipped into
    ``[beta_star, beta]``. ``magnitude == 0`` returns the optimal schedule as is.
    """
    if magnitude < 0:
        raise DomainError("magnitude must be non-negative")
    if magnitude == 0:
        return result.schedule
    rng = np.random.default_rng(seed)
    sched = perturb_schedule(result.schedule, _bumps(rng, result.t_f, magnitude), result.t_f)
    if is_admissible(sched, result.state0, result.t_f):
        return sched
    return None


def perturbation_study(result, n_accept=200, magnitude=None, seed=0, max_draws=20000):
    """Costs of ``n_accept`` admissible perturbations of ``result``'s schedule.

    Draw ``k`` uses seed ``(seed, k)``. Returns the list of costs together with
    the number of draws it took.
    """
    from .synthesis import cost

    p = result.params
    if magnitude is None:
        magnitude = 0.5 * (p.beta - p.beta_star)
    costs = []
    draws = 0
    while len(costs) < n_accept and draws < max_draws:
        sched = sample_admissible_perturbation(
            result, magnitude, np.random.SeedSequence([seed, draws])
        )
        draws += 1
        if sched is not None:
            costs.append(cost(sched, result.t_f, result.weights))
    return costs, draws
