import math

import numpy as np
import pytest

from sir_opticon.dynamics import (
    DEFAULT_TOL,
    TOL_EVENT,
    Constant,
    ControlSchedule,
    ControlSegment,
    EpidemicParams,
    EventSpec,
    SingularArc,
    SirState,
    conserved_quantity,
    crossing_time,
    integrate,
    vector_field,
)
from sir_opticon.errors import DomainError, StandingAssumptionError
from sir_opticon.zones import phi_b


def test_params_reject_bad_ordering():
    with pytest.raises(DomainError):
        EpidemicParams(0.2, 0.16, 0.06, 0.02)
    with pytest.raises(DomainError):
        EpidemicParams(0.08, 0.16, 0.0, 0.02)
    with pytest.raises(DomainError):
        EpidemicParams(0.08, 0.16, 0.06, 1.5)


def test_params_reject_s_m_star_above_one():
    # gamma/beta_star = 0.95 puts the zero of Phi_B beyond s = 1
    with pytest.raises(StandingAssumptionError):
        EpidemicParams(0.08, 0.16, 0.076, 0.02)


def test_thresholds(params):
    assert params.herd == pytest.approx(0.375)
    assert params.lock == pytest.approx(0.75)


def test_state_outside_simplex():
    with pytest.raises(DomainError):
        SirState(0.8, 0.3)
    with pytest.raises(DomainError):
        SirState(-0.1, 0.1)


@pytest.mark.parametrize(
    "s, i, b, expected",
    [
        (0.5, 0.0, 0.16, (0.0, 0.0)),
        (0.375, 0.02, 0.16, (-0.0012, 0.0)),
        (0.85, 0.001, 0.16, (-0.000136, 0.000076)),
    ],
)
def test_vector_field_examples(params, s, i, b, expected):
    ds, di = vector_field(SirState(s, i), b, params)
    assert ds == pytest.approx(expected[0], abs=1e-15)
    assert di == pytest.approx(expected[1], abs=1e-15)


def test_vector_field_rejects_rate(params):
    with pytest.raises(DomainError):
        vector_field(SirState(0.5, 0.01), 0.2, params)


def test_conserved_quantity_examples(params):
    assert conserved_quantity(SirState(1.0, 0.0), 0.16, params) == pytest.approx(1.0)
    # s + i = 1.3 lies outside the simplex, so use the formula directly at s = 1
    assert 0.3 + 1.0 - 0.06 / 0.16 * math.log(1.0) == pytest.approx(1.3)
    val = conserved_quantity(SirState(0.75, 0.02), 0.08, params)
    assert val == pytest.approx(0.77 - 0.75 * math.log(0.75), abs=1e-15)
    with pytest.raises(DomainError):
        conserved_quantity(SirState(0.0, 0.1), 0.16, params)


def test_stationary_line(params):
    sched = ControlSchedule.constant(params.beta, params)
    traj = integrate(SirState(0.5, 0.0), sched, 0.0, 100.0, params=params)
    assert np.all(traj.s == 0.5) and np.all(traj.i == 0.0)
    s, i = traj.state_at([0.0, 37.0, 100.0])
    assert np.all(s == 0.5) and np.all(i == 0.0)


def test_peak_of_i_at_herd_threshold(params):
    sched = ControlSchedule.constant(params.beta, params)
    traj = integrate(SirState(0.85, 0.001), sched, 0.0, 300.0, params=params)
    t_peak = crossing_time(SirState(0.85, 0.001), sched, EventSpec.s_reaches(params.herd),
                           300.0, params)
    # i is maximal where s = gamma/beta; compare against a dense scan
    grid = np.linspace(t_peak - 1.0, t_peak + 1.0, 20001)
    _, i = traj.state_at(grid)
    assert abs(grid[np.argmax(i)] - t_peak) < 2e-4


def test_round_trip(params):
    sched = ControlSchedule.constant(params.beta, params)
    s0 = SirState(0.85, 0.001)
    fwd = integrate(s0, sched, 0.0, 200.0, DEFAULT_TOL, params)
    end = fwd.final_state()
    back = integrate(end, sched, 200.0, 0.0, DEFAULT_TOL, params)
    assert abs(back.s[-1] - s0.s) < 10 * DEFAULT_TOL
    assert abs(back.i[-1] - s0.i) < 10 * DEFAULT_TOL
    assert back.times[-1] == 0.0


def test_conserved_drift(params):
    sched = ControlSchedule.constant(params.beta, params)
    traj = integrate(SirState(0.85, 0.001), sched, 0.0, 200.0, DEFAULT_TOL, params)
    q = traj.i + traj.s - params.gamma / params.beta * np.log(traj.s)
    assert np.abs(q - q[0]).max() < 100 * DEFAULT_TOL


def test_segments_are_grid_points(params):
    segs = (
        ControlSegment(0.0, 10.0, Constant(params.beta)),
        ControlSegment(10.0, 25.5, Constant(params.beta_star)),
    )
    sched = ControlSchedule(segs, params.beta, params)
    traj = integrate(SirState(0.8, 0.01), sched, 0.0, 40.0, params=params)
    assert 10.0 in traj.times and 25.5 in traj.times
    assert ("switch", 10.0) in traj.events


def test_integrate_rejects_degenerate_interval(params):
    sched = ControlSchedule.constant(params.beta, params)
    with pytest.raises(DomainError):
        integrate(SirState(0.5, 0.01), sched, 3.0, 3.0, params=params)
    with pytest.raises(DomainError):
        integrate(SirState(0.5, 0.01), sched, 0.0, 3.0, tol=0.0, params=params)


def test_schedule_validation(params):
    with pytest.raises(DomainError):
        ControlSchedule((ControlSegment(0, 1, Constant(0.5)),), params.beta, params)
    with pytest.raises(DomainError):
        ControlSchedule(
            (ControlSegment(0, 1, Constant(0.1)), ControlSegment(2, 3, Constant(0.1))),
            params.beta, params,
        )
    with pytest.raises(DomainError):
        ControlSegment(2.0, 1.0, Constant(0.1))
    # an arc whose rate at the start would fall below beta_star
    with pytest.raises(DomainError):
        ControlSchedule((ControlSegment(0.0, 500.0, SingularArc(500.0)),), params.beta, params)


def test_arc_law_endpoint(params):
    law = SingularArc(300.0)
    assert law.value(300.0, params) == pytest.approx(params.beta)
    expected = params.beta / (1 + params.beta * params.i_M * 100.0)
    assert law.value(200.0, params) == pytest.approx(expected)


def test_crossing_none_for_monotone_s(params):
    sched = ControlSchedule.constant(params.beta, params)
    t = crossing_time(SirState(0.3, 0.01), sched, EventSpec.s_reaches(params.herd), 500.0, params)
    assert t is None


def test_crossing_i_reaches(params):
    sched = ControlSchedule.constant(params.beta, params)
    s0 = SirState(0.85, 0.001)
    t = crossing_time(s0, sched, EventSpec.i_reaches(params.i_M), 500.0, params)
    assert t is not None
    traj = integrate(s0, sched, 0.0, t, params=params)
    assert abs(traj.i[-1] - params.i_M) < TOL_EVENT


def test_crossing_on_boundary_reaches_corner(params):
    # a point on the boundary of B right of gamma/beta_star
    s0 = 0.85
    start = SirState(s0, float(phi_b(s0, params)))
    sched = ControlSchedule.constant(params.beta_star, params)
    t = crossing_time(start, sched, EventSpec.s_reaches(params.lock), 500.0, params)
    traj = integrate(start, sched, 0.0, t, params=params)
    assert abs(traj.i[-1] - params.i_M) < TOL_EVENT
    assert abs(traj.s[-1] - params.lock) < TOL_EVENT


def test_event_spec_validation():
    with pytest.raises(DomainError):
        EventSpec("nonsense", 1.0)
    with pytest.raises(DomainError):
        EventSpec("s_reaches")


def test_grazing_contact_is_detected(params):
    # just above the boundary of A: i overshoots i_M by about 3e-8 for a fraction of a day
    start = SirState(0.4, 0.019201973265484718)
    sched = ControlSchedule.constant(params.beta, params)
    t = crossing_time(start, sched, EventSpec.i_reaches(params.i_M), 100.0, params)
    assert t is not None
    traj = integrate(start, sched, 0.0, 100.0, params=params)
    grid = np.linspace(t - 0.5, t + 0.5, 100001)
    _, i = traj.state_at(grid)
    assert i.max() > params.i_M
    assert abs(grid[np.argmax(i > params.i_M)] - t) < 1e-4
