"""Optimal lockdown synthesis for the ICU-constrained SIR problem.

The optimal transmission rate has at most four phases:

1. ``beta`` (no intervention) until the free trajectory touches the boundary of
   the feasible zone B at ``tau0``;
2. ``beta_star`` (full lockdown) while sliding along that boundary down to the
   corner ``s = gamma/beta_star`` at ``tau1``. This phase is skipped when the
   contact already happens on ``i = i_M``;
3. the boundary arc ``beta / (1 + beta*i_M*(tau2 - t))``, which holds ``i = i_M``
   while ``s`` falls linearly to the herd-immunity threshold ``gamma/beta``;
4. ``beta`` again after ``tau2``.

Starts inside the no-effort zone A only need phase 4.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .dynamics import (
    DEFAULT_TOL,
    TOL_EVENT,
    Constant,
    ControlSchedule,
    ControlSegment,
    CostWeights,
    EventSpec,
    SingularArc,
    SirState,
    Trajectory,
    first_crossing,
    integrate,
    integrate_feedback,
)
from .errors import DomainError, HorizonError, InfeasibleStateError
from .zones import ZoneLabel, classify, phi_b

FEEDBACK_BAND = 1e-9
OMEGA_MIN = 1e-10
_SEARCH_HORIZONS = (1000.0, 1e4, 1e5)


@dataclass(frozen=True)
class SwitchingTimes:
    tau0: float | None
    tau1: float | None
    tau2: float | None
    reaching_time: float

    def as_dict(self):
        return {"tau0": self.tau0, "tau1": self.tau1, "tau2": self.tau2,
                "reaching_time": self.reaching_time}


@dataclass(frozen=True)
class SynthesisResult:
    schedule: ControlSchedule
    switching: SwitchingTimes
    trajectory: Trajectory
    cost: float
    state0: SirState
    t_f: float
    weights: CostWeights
    structure: str
    label: ZoneLabel
    metadata: dict = field(default_factory=dict)

    @property
    def params(self):
        return self.schedule.params

    def to_json(self):
        """JSON-ready dict: schedule segments, switching times, cost and metadata."""
        return {
            "state0": {"s": self.state0.s, "i": self.state0.i},
            "t_f": self.t_f,
            "zone": self.label.value,
            "structure": self.structure,
            "switching_times": self.switching.as_dict(),
            "cost": self.cost,
            "schedule": schedule_to_json(self.schedule),
            "metadata": self.metadata,
        }


def schedule_to_json(schedule):
    segs = []
    for seg in schedule.segments:
        law = seg.law
        if isinstance(law, Constant):
            entry = {"law": "constant", "b": law.b}
        else:
            entry = {"law": "singular_arc", "tau2": law.tau2}
            if law.offset:
                entry["offset"] = law.offset
        segs.append({"t_start": seg.t_start, "t_end": seg.t_end, **entry})
    return {"segments": segs, "default": schedule.default}


def schedule_from_json(data, params):
    segs = []
    for d in data["segments"]:
        if d["law"] == "constant":
            law = Constant(d["b"])
        else:
            law = SingularArc(d["tau2"], d.get("offset", 0.0))
        segs.append(ControlSegment(d["t_start"], d["t_end"], law))
    return ControlSchedule(tuple(segs), data["default"], params)


# -- switching times ----------------------------------------------------------


def _first_event(state, b, event_fn, params, tol):
    """First zero of ``event_fn`` along the constant-``b`` flow, with its trajectory."""
    sched = ControlSchedule.constant(b, params)
    for horizon in _SEARCH_HORIZONS:
        traj = integrate(state, sched, 0.0, horizon, tol, params)
        t = first_crossing(traj, event_fn, TOL_EVENT)
        if t is not None:
            return t, traj
    return None, None


def _state_at(traj, t):
    s, i = traj.state_at(t)
    return SirState(max(float(s[0]), 0.0), max(float(i[0]), 0.0))


def _herd_time(state, params, tol):
    """Time for the free (``b = beta``) flow to bring ``s`` down to ``gamma/beta``."""
    if state.s <= params.herd:
        return 0.0
    t, _ = _first_event(state, params.beta, lambda s, i: s - params.herd, params, tol)
    if t is None:
        raise HorizonError("susceptible fraction never reaches gamma/beta")
    return t


def _check_start(state0, params):
    if state0.i <= 0.0:
        raise DomainError("synthesis needs i0 > 0")
    label = classify(state0, params)
    if label is ZoneLabel.OutsideB:
        raise InfeasibleStateError()
    return label


def _is_on_top_edge(state, params):
    return abs(state.i - params.i_M) <= FEEDBACK_BAND and params.herd < state.s <= params.lock


def _synthesis_times(state0, params, tol):
    """Switching times plus the state at ``tau1``; see ``switching_times``."""
    label = _check_start(state0, params)
    if label in (ZoneLabel.InteriorA, ZoneLabel.BoundaryA):
        return label, SwitchingTimes(None, None, None, _herd_time(state0, params, tol)), None

    if _is_on_top_edge(state0, params):
        tau0, hit = 0.0, state0
    elif label is ZoneLabel.BoundaryB:
        tau0, hit = 0.0, state0
    else:
        g = EventSpec.hits_boundary_B().function(params)
        tau0, traj = _first_event(state0, params.beta, g, params, tol)
        if tau0 is None:
            raise HorizonError("free trajectory never reaches the boundary of B")
        hit = _state_at(traj, tau0)

    if hit.s > params.lock:
        # slide along the boundary under full lockdown until the corner; locating
        # s = gamma/beta_star is transversal, unlike the tangential i = i_M contact
        dt, traj = _first_event(hit, params.beta_star, lambda s, i: s - params.lock, params, tol)
        if dt is None:
            raise HorizonError("lockdown phase never reaches s = gamma/beta_star")
        tau1 = tau0 + dt
        at_tau1 = _state_at(traj, dt)
    else:
        tau1, at_tau1 = tau0, hit
    tau2 = tau1 + (at_tau1.s - params.herd) / (params.gamma * params.i_M)
    return label, SwitchingTimes(tau0, tau1, tau2, tau2), at_tau1


def switching_times(state0, t_f, params, tol=DEFAULT_TOL):
    """Switching times ``tau0 <= tau1 <= tau2`` and the reaching time.

    All three are None for starts in A. For starts in B0 the boundary contact
    happens on ``i = i_M`` so ``tau0 == tau1``. ``t_f`` is not needed to locate
    the times; it only matters to ``optimal_open_loop``.
    """
    del t_f
    return _synthesis_times(state0, params, tol)[1]


def phase_structure(schedule, t_f):
    """Phase pattern such as ``bang-bang-boundary-bang``."""
    parts = []
    for seg in schedule.segments:
        if seg.t_start >= t_f:
            break
        parts.append("boundary" if isinstance(seg.law, SingularArc) else "bang")
    end = schedule.segments[-1].t_end if schedule.segments else 0.0
    if t_f > end:
        parts.append("bang")
    return "-".join(parts)


def build_schedule(times, params):
    """The open-loop control for given switching times."""
    if times.tau1 is None:
        return ControlSchedule.constant(params.beta, params)
    segs = []
    if times.tau0 > 0.0:
        segs.append(ControlSegment(0.0, times.tau0, Constant(params.beta)))
    if times.tau1 > times.tau0:
        segs.append(ControlSegment(times.tau0, times.tau1, Constant(params.beta_star)))
    if times.tau2 > times.tau1:
        segs.append(ControlSegment(times.tau1, times.tau2, SingularArc(times.tau2)))
    return ControlSchedule(tuple(segs), params.beta, params)


def optimal_open_loop(state0, t_f, params, weights=None, tol=DEFAULT_TOL):
    """Synthesize the optimal schedule from ``state0`` over ``[0, t_f]``.

    Raises InfeasibleStateError for starts outside B. Raises HorizonError if
    ``t_f`` does not leave the trajectory strictly below ``gamma/beta`` at the end.
    """
    weights = weights or CostWeights()
    # an error e in s at tau1 moves tau2 by e/(gamma i_M); tighten the state
    # tolerance by that factor so the switching times are accurate to ``tol``
    tol = tol * min(1.0, params.gamma * params.i_M)
    label, times, _ = _synthesis_times(state0, params, tol)
    if t_f <= times.reaching_time:
        raise HorizonError(
            f"t_f = {t_f} does not exceed the reaching time {times.reaching_time:.6g}"
        )
    schedule = build_schedule(times, params)
    traj = integrate(state0, schedule, 0.0, t_f, tol, params)
    margin = params.herd - float(traj.s[-1])
    if margin <= OMEGA_MIN:
        raise HorizonError(
            f"terminal margin gamma/beta - s(t_f) = {margin:.3g} is not positive"
        )
    metadata = {}
    if label is ZoneLabel.BoundaryA and state0.s > params.herd:
        metadata["non_unique"] = (
            "start lies on the upper boundary of A with s > gamma/beta; the optimal "
            "control is unique only up to a null set there and beta was chosen"
        )
    return SynthesisResult(
        schedule=schedule,
        switching=times,
        trajectory=traj,
        cost=cost(schedule, t_f, weights),
        state0=state0,
        t_f=float(t_f),
        weights=weights,
        structure=phase_structure(schedule, t_f),
        label=label,
        metadata=metadata,
    )


# -- feedback -----------------------------------------------------------------


def optimal_feedback(state, params, band=FEEDBACK_BAND):
    """Closed-loop optimal rate at ``state``.

    ``gamma/s`` on the top edge ``(gamma/beta, gamma/beta_star] x {i_M}``,
    ``beta_star`` on the curved boundary of B right of ``gamma/beta_star``, and
    ``beta`` everywhere else in B. ``band`` is the distance within which a state
    counts as lying on a boundary.
    """
    if state.i > phi_b(state.s, params) + band:
        raise InfeasibleStateError("state lies outside the feasible zone")
    if abs(state.i - params.i_M) <= band and params.herd < state.s <= params.lock:
        return params.gamma / state.s
    if state.s > params.lock and abs(state.i - phi_b(state.s, params)) <= band:
        return params.beta_star
    return params.beta


def _join(trajs, events):
    times, ss, ii, bb, pieces = [], [], [], [], []
    for k, tr in enumerate(trajs):
        cut = 1 if k else 0
        times.append(tr.times[cut:])
        ss.append(tr.s[cut:])
        ii.append(tr.i[cut:])
        bb.append(tr.b[cut:])
        pieces.extend(tr._pieces)
    return Trajectory(np.concatenate(times), np.concatenate(ss), np.concatenate(ii),
                      np.concatenate(bb), list(events), pieces)


def simulate_feedback(state0, t_f, params, tol=DEFAULT_TOL):
    """Closed-loop run of ``optimal_feedback`` as an event-driven mode machine.

    Modes are ``free`` (``beta``), ``lockdown`` (``beta_star``) and ``boundary``
    (``gamma/s``, which freezes ``i``). Mode changes happen at detected contacts
    with the boundary of B, at ``s = gamma/beta_star`` and at ``s = gamma/beta``.
    """
    _check_start(state0, params)
    b0 = optimal_feedback(state0, params)
    if b0 == params.beta:
        mode = "free"
    elif b0 == params.beta_star:
        mode = "lockdown"
    else:
        mode = "boundary"
    free_done = classify(state0, params) in (ZoneLabel.InteriorA, ZoneLabel.BoundaryA)

    laws = {
        "free": lambda s, i: params.beta,
        "lockdown": lambda s, i: params.beta_star,
        "boundary": lambda s, i: params.gamma / s,
    }
    next_mode = {"free": "lockdown", "lockdown": "boundary", "boundary": "free"}
    guards = {
        "free": EventSpec.hits_boundary_B().function(params),
        "lockdown": lambda s, i: s - params.lock,
        "boundary": lambda s, i: s - params.herd,
    }
    t, state = 0.0, state0
    trajs, events = [], []
    while True:
        guard = None if (mode == "free" and free_done) else guards[mode]
        traj = integrate_feedback(state, laws[mode], t, t_f, params, tol)
        hit = first_crossing(traj, guard, TOL_EVENT) if guard else None
        if hit is None:
            trajs.append(traj)
            break
        if hit > t:
            traj = integrate_feedback(state, laws[mode], t, hit, params, tol)
            trajs.append(traj)
            state = _state_at(traj, hit)
        nxt = next_mode[mode]
        if nxt == "lockdown" and state.s <= params.lock:
            # contact on the flat part of the boundary: no lockdown phase
            nxt = "boundary"
        free_done = free_done or nxt == "free"
        events.append((nxt, hit))
        t, mode = hit, nxt
    return _join(trajs, events)


# -- cost and derived quantities ---------------------------------------------


def _arc_integral(law, a, c, params):
    """Integral of ``beta - b`` over ``[a, c]`` on a boundary arc."""
    if law.offset:
        val, _ = quad(lambda t: params.beta - law.value(t, params), a, c,
                      epsabs=1e-13, epsrel=1e-13, limit=200)
        return val
    k = params.beta * params.i_M
    u_a = 1.0 + k * (law.tau2 - a)
    u_c = 1.0 + k * (law.tau2 - c)
    return params.beta * (c - a) - math.log(u_a / u_c) / params.i_M


def cost(schedule, t_f, weights):
    """Exact ``int_0^t_f lambda1 + lambda2 (beta - b(t)) dt`` for ``schedule``."""
    params = schedule.params
    beta = params.beta
    effort = 0.0
    t = 0.0
    for seg in schedule.segments:
        a, c = max(seg.t_start, 0.0), min(seg.t_end, t_f)
        if a > t:
            # gap before this segment runs at the default rate
            effort += (beta - schedule.default) * (min(a, t_f) - t)
        if c <= a:
            t = max(t, min(seg.t_end, t_f))
            continue
        if isinstance(seg.law, Constant):
            effort += (beta - seg.law.b) * (c - a)
        else:
            effort += _arc_integral(seg.law, a, c, params)
        t = c
    if t_f > t:
        effort += (beta - schedule.default) * (t_f - t)
    return weights.lambda1 * t_f + weights.lambda2 * effort


def reaching_time(state0, params, tol=DEFAULT_TOL):
    """First time the optimal trajectory brings ``s`` to ``gamma/beta`` (0 if already below)."""
    return _synthesis_times(state0, params, tol)[1].reaching_time


def omega(state0, tau, params, tol=DEFAULT_TOL):
    """How far ``s`` has dropped below ``gamma/beta`` ``tau`` days after the reaching time.

    The free flow restarts from ``(gamma/beta, i_r)``, where ``i_r`` is the
    infected fraction at the reaching time. Starts already below the threshold
    use ``i_r = i0``.
    """
    if tau < 0:
        raise DomainError("tau must be non-negative")
    if tau == 0:
        return 0.0
    label, times, at_tau1 = _synthesis_times(state0, params, tol)
    if times.tau2 is not None:
        i_r = params.i_M
    elif state0.s > params.herd:
        t_r = times.reaching_time
        traj = integrate(state0, ControlSchedule.constant(params.beta, params), 0.0, t_r, tol, params)
        i_r = float(traj.i[-1])
    else:
        i_r = state0.i
    start = SirState(params.herd, min(i_r, 1.0 - params.herd))
    traj = integrate(start, ControlSchedule.constant(params.beta, params), 0.0, tau, tol, params)
    return params.herd - float(traj.s[-1])


@dataclass(frozen=True)
class LockdownBounds:
    lower: float
    upper: float
    theta0: float
    theta1: float
    theta2: float


def lockdown_thetas(state0, params):
    """``(theta0, theta1, theta2)`` for the lockdown-length estimate.

    ``theta1`` is the ``s`` value where the free trajectory meets the boundary of
    B and ``theta2`` the matching ``i`` value.
    """
    c_lock, c_herd = params.lock, params.herd
    theta0 = params.i_M + c_lock - c_lock * math.log(c_lock)
    k_free = state0.s + state0.i - c_herd * math.log(state0.s)
    theta1 = math.exp((k_free - theta0) / (c_lock - c_herd))
    ratio = params.beta / (params.beta - params.beta_star)
    theta2 = ratio * k_free - (ratio - 1.0) * theta0 - theta1
    return theta0, theta1, theta2


def lockdown_length_bounds(state0, params):
    """Interval known to contain the full-lockdown duration ``tau1 - tau0``.

    Along the lockdown phase ``s`` falls from ``theta1`` to ``gamma/beta_star``
    at speed ``beta_star*s*i``. That speed is at most ``beta*s0*i_M`` and at
    least ``gamma*theta2``, which gives the two ends. Starts without a lockdown
    phase get the degenerate interval ``[0, 0]``.
    """
    theta0, theta1, theta2 = lockdown_thetas(state0, params)
    if state0.s <= params.lock or theta1 <= params.lock:
        return LockdownBounds(0.0, 0.0, theta0, theta1, theta2)
    drop = params.beta_star * theta1 - params.gamma
    lower = drop / (params.beta_star * params.beta * state0.s * params.i_M)
    upper = drop / (params.beta_star * params.gamma * theta2)
    return LockdownBounds(lower, upper, theta0, theta1, theta2)


def dumps(result):
    return json.dumps(result.to_json(), sort_keys=True, indent=2)
