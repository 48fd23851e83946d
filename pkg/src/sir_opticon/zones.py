"""Closed-form viability zones of the ICU-constrained SIR model.

Three nested regions of the admissible triangle ``{s, i >= 0, s + i <= 1, i <= i_M}``
matter for the control problem:

* ``A`` (no-effort zone): states whose uncontrolled flow (``b = beta``) never
  exceeds ``i_M``. Its upper boundary is ``Phi_A``.
* ``A0`` (all-control zone): states from which *every* admissible control keeps
  ``i <= i_M``. It coincides with ``A``.
* ``B`` (feasible zone): states for which *some* admissible control keeps
  ``i <= i_M`` forever. Its upper boundary is ``Phi_B``.

Both boundaries come from the first integral ``i + s - (gamma/b) log s`` of the
constant-control flow. A grid-based viability-kernel iteration, which knows
nothing about those formulas, cross-checks them.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numba
import numpy as np

from .dynamics import (
    ControlSchedule,
    EpidemicParams,
    SirState,
    crossing_time,
    level_root,
    EventSpec,
    DEFAULT_TOL,
    integrate,
)
from .errors import DomainError, OracleError

LABEL_TOL = 1e-12


def boundary_level(s, threshold, i_M):
    """Level curve ``i_M - s + c + c*log(s/c)`` with ``c = threshold``.

    This is the analytic branch shared by both zone boundaries, evaluated
    without any piecewise switch. ``s`` may be an array.
    """
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore"):
        return i_M - s + threshold + threshold * np.log(s / threshold)


def _phi(s, threshold, i_M, clamp):
    s_arr = np.asarray(s, dtype=float)
    raw = boundary_level(np.maximum(s_arr, threshold), threshold, i_M)
    out = np.where(s_arr <= threshold, i_M, raw)
    if clamp:
        out = np.maximum(out, 0.0)
    return out if out.ndim else float(out)


def phi_b(s, params, clamp=True):
    """Upper boundary of the feasible zone B.

    Equal to ``i_M`` for ``s <= gamma/beta_star``, then the ``beta_star`` level
    curve through the corner ``(gamma/beta_star, i_M)``. With ``clamp=False`` the
    curve is continued below zero past ``s_M*``.
    """
    return _phi(s, params.lock, params.i_M, clamp)


def phi_a(s, params, clamp=True):
    """Upper boundary of the no-effort zone A.

    Equal to ``i_M`` for ``s <= gamma/beta``, then the ``beta`` level curve through
    ``(gamma/beta, i_M)``. With ``clamp=False`` the negative continuation past
    ``s_M`` is returned, which is what the classifier compares against.
    """
    return _phi(s, params.herd, params.i_M, clamp)


def s_m(params):
    """Root ``s_M > gamma/beta`` where ``Phi_A`` reaches zero."""
    return level_root(params.herd, params.i_M)


def s_m_star(params):
    """Root ``s_M* > gamma/beta_star`` where ``Phi_B`` reaches zero.

    ``EpidemicParams`` already refuses parameter sets with ``s_M* > 1``.
    """
    return level_root(params.lock, params.i_M)


@dataclass(frozen=True)
class ZoneBoundaries:
    s_M: float
    s_M_star: float
    params: EpidemicParams


def zone_boundaries(params):
    return ZoneBoundaries(s_m(params), s_m_star(params), params)


class ZoneLabel(enum.Enum):
    InteriorA = "InteriorA"
    BoundaryA = "BoundaryA"
    InB0_NotA = "InB0_NotA"
    InB_NotB0 = "InB_NotB0"
    BoundaryB = "BoundaryB"
    OutsideB = "OutsideB"
    StationaryLine = "StationaryLine"

    @property
    def feasible(self):
        return self is not ZoneLabel.OutsideB


def classify(state, params, band=LABEL_TOL):
    """Label ``state`` by its position relative to ``Phi_A`` and ``Phi_B``.

    Membership in A uses the unclamped ``Phi_A``, so e.g. ``(0.7, 0.001)`` sits
    above the analytic separatrix (``Phi_A(0.7) < 0``) and is not in A. States
    on ``i = i_M`` left of ``gamma/beta`` lie on both curves; they get
    ``BoundaryA`` because the uncontrolled flow is viable there.
    """
    s, i = state.s, state.i
    if i == 0.0:
        return ZoneLabel.StationaryLine
    fb = phi_b(s, params)
    if i > fb + band:
        return ZoneLabel.OutsideB
    fa = phi_a(s, params, clamp=False)
    if i < fa - band:
        return ZoneLabel.InteriorA
    if abs(i - fa) <= band:
        return ZoneLabel.BoundaryA
    if abs(i - fb) <= band:
        return ZoneLabel.BoundaryB
    if s <= params.lock:
        return ZoneLabel.InB0_NotA
    return ZoneLabel.InB_NotB0


# -- grid viability kernel ----------------------------------------------------


@dataclass(frozen=True)
class BitGrid:
    """Boolean cell set on the ``resolution x resolution`` grid of ``[0,1] x [0,i_M]``.

    ``cells[a, c]`` refers to the cell centred at ``(s_centers[a], i_centers[c])``.
    """

    cells: np.ndarray
    s_centers: np.ndarray
    i_centers: np.ndarray
    iterations: int

    @property
    def resolution(self):
        return self.cells.shape[0]

    def to_pgm(self, path):
        """Write a binary PGM (P5); white = in the kernel, i increasing upwards."""
        img = np.where(self.cells.T[::-1], 255, 0).astype(np.uint8)
        h, w = img.shape
        with open(path, "wb") as fh:
            fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
            fh.write(img.tobytes())

    def to_csv(self, path):
        S, I = np.meshgrid(self.s_centers, self.i_centers, indexing="ij")
        with open(path, "w") as fh:
            fh.write("s,i,in_kernel\n")
            for s, i, k in zip(S.ravel(), I.ravel(), self.cells.ravel()):
                fh.write(f"{s:.17g},{i:.17g},{int(k)}\n")


@numba.njit(cache=True, parallel=True)
def _viability_sweep(V, G, controls, gamma, ds, di, reach, out):
    n = V.shape[0]
    row_change = np.zeros(n)
    for a in numba.prange(n):
        s = (a + 0.5) * ds
        dmax = 0.0
        for c in range(n):
            if G[a, c] > 1.0:
                out[a, c] = 1.0
                continue
            i = (c + 0.5) * di
            best = np.inf
            for b in controls:
                # velocity in cell units; one explicit Euler step of ``reach`` cells
                vs = -b * s * i / ds
                vi = (b * s - gamma) * i / di
                speed = max(abs(vs), abs(vi))
                h = reach / speed
                x = a + h * vs
                y = c + h * vi
                if y + 0.5 > n:
                    # the step leaves through i = i_M
                    val = 1.0
                else:
                    x = min(max(x, 0.0), n - 1.0)
                    y = min(max(y, 0.0), n - 1.0)
                    ia = min(int(x), n - 2)
                    ic = min(int(y), n - 2)
                    fx = x - ia
                    fy = y - ic
                    val = ((1.0 - fx) * (1.0 - fy) * V[ia, ic] + fx * (1.0 - fy) * V[ia + 1, ic]
                           + (1.0 - fx) * fy * V[ia, ic + 1] + fx * fy * V[ia + 1, ic + 1])
                if val < best:
                    best = val
            v = min(max(G[a, c], best), 1.0)
            out[a, c] = v
            d = abs(v - V[a, c])
            if d > dmax:
                dmax = d
        row_change[a] = dmax
    return row_change.max()


def grid_viability_kernel(params, resolution=512, control_samples=9, controls=None,
                          reach=2.0, tol=1e-12):
    """Approximate the viability kernel of ``{i <= i_M}`` on a uniform grid.

    A value function ``V`` is iterated to its fixpoint. ``V`` starts from
    the constraint ``(i - i_M)/di`` clipped to ``[-1, 1]``. Each sweep sets
    ``V(x) = max(G(x), min_b V(x + h f(x, b)))``, where the image is one explicit
    Euler step moving ``reach`` cells and ``V`` is read by bilinear
    interpolation. That interpolation plays the role of the dilation in the
    classical discrete viability algorithm. Leaving the grid through ``i = i_M``
    counts as ``V = 1``. The kernel is ``{V <= 0}``.

    ``controls`` overrides the ``control_samples`` evenly spaced rates in
    ``[beta_star, beta]``; pass ``[params.beta]`` to approximate A instead of B.
    Raises OracleError if the sweeps do not settle within ``resolution**2``
    iterations.
    """
    n = int(resolution)
    if n < 64:
        raise DomainError("resolution must be at least 64")
    if controls is None:
        controls = np.linspace(params.beta_star, params.beta, int(control_samples))
    controls = np.asarray(controls, dtype=float)
    for b in controls:
        params.check_rate(b)
    ds = 1.0 / n
    di = params.i_M / n
    s_c = (np.arange(n) + 0.5) * ds
    i_c = (np.arange(n) + 0.5) * di
    S, I = np.meshgrid(s_c, i_c, indexing="ij")
    G = np.maximum((I - params.i_M) / di, -1.0)
    G[S + I > 1.0] = np.inf  # outside the simplex
    V = np.minimum(G, 1.0)
    W = np.empty_like(V)
    for it in range(1, n * n + 1):
        change = _viability_sweep(V, G, controls, params.gamma, ds, di, float(reach), W)
        V, W = W, V
        if change < tol:
            return BitGrid(V <= 0.0, s_c, i_c, it)
    raise OracleError(f"viability iteration did not converge in {n * n} sweeps")


def kernel_disagreement(grid, phi, width=2):
    """Cells where ``grid`` and ``{i <= phi(s)}`` differ outside a band around the curve.

    The band holds every cell whose centre lies within ``width`` cells of the
    graph of ``phi`` in either coordinate. Returns a boolean array.
    """
    ds = grid.s_centers[1] - grid.s_centers[0]
    di = grid.i_centers[1] - grid.i_centers[0]
    S, I = np.meshgrid(grid.s_centers, grid.i_centers, indexing="ij")
    truth = (I <= phi(S)) & (S + I <= 1.0)
    lo = np.full(S.shape, np.inf)
    hi = np.full(S.shape, -np.inf)
    for off in np.linspace(-width, width, 8 * width + 1):
        v = phi(np.clip(S + off * ds, 0.0, 1.0))
        lo = np.minimum(lo, v)
        hi = np.maximum(hi, v)
    band = (I >= lo - width * di) & (I <= hi + width * di)
    return (grid.cells != truth) & ~band


# -- capture basin ------------------------------------------------------------


def in_b0(state, params, slack=0.0):
    return state.s <= params.lock + slack and state.i <= params.i_M + slack


def capture_basin_check(state, params, t_max=1000.0, tol=DEFAULT_TOL):
    """Whether the boundary-respecting control steers ``state`` into B0.

    The control is ``beta`` until the path touches ``Phi_B`` and ``beta_star``
    from then on. Success means reaching ``B0 = [0, gamma/beta_star] x [0, i_M]``
    within ``t_max`` days with ``i <= i_M`` throughout.
    """
    if state.i <= 0.0:
        raise DomainError("capture basin check needs i > 0")
    slack = 1e-9
    if in_b0(state, params):
        return True
    if state.i > phi_b(state.s, params) + LABEL_TOL:
        return False
    lock_rate = ControlSchedule.constant(params.beta_star, params)
    full_rate = ControlSchedule.constant(params.beta, params)
    on_boundary = abs(state.i - phi_b(state.s, params)) <= 1e-10
    if not on_boundary:
        t_hit = crossing_time(state, full_rate, EventSpec.hits_boundary_B(), t_max, params, tol)
        t_b0 = crossing_time(state, full_rate, EventSpec.s_reaches(params.lock), t_max, params, tol)
        if t_b0 is not None and (t_hit is None or t_b0 <= t_hit):
            traj = integrate(state, full_rate, 0.0, t_b0, tol, params)
            return bool(traj.i.max() <= params.i_M + slack)
        if t_hit is None:
            return False
        traj = integrate(state, full_rate, 0.0, t_hit, tol, params)
        if traj.i.max() > params.i_M + slack:
            return False
        s1, i1 = traj.state_at(t_hit)
        state = SirState(float(s1[0]), float(i1[0]))
        t_max -= t_hit
        if in_b0(state, params, slack):
            return True
    t_b0 = crossing_time(state, lock_rate, EventSpec.s_reaches(params.lock), t_max, params, tol)
    if t_b0 is None:
        return False
    traj = integrate(state, lock_rate, 0.0, t_b0, tol, params)
    return bool(traj.i.max() <= params.i_M + slack)


__all__ = [
    "BitGrid",
    "ZoneBoundaries",
    "ZoneLabel",
    "boundary_level",
    "capture_basin_check",
    "classify",
    "grid_viability_kernel",
    "kernel_disagreement",
    "phi_a",
    "phi_b",
    "s_m",
    "s_m_star",
    "zone_boundaries",
]
