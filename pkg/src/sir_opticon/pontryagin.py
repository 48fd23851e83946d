"""Costates and multiplier for the synthesized control, and a numerical check of
the maximum principle.

With the normal multiplier ``p0 = 1`` the Hamiltonian is

    H(b) = lambda1 + lambda2 (beta - b) + eta b s i - gamma p_i i,    eta = p_i - p_s,

so it is affine in ``b`` with slope ``psi - lambda2``, where ``psi = eta s i``.
The adjoint system reads ``dp_s = -eta b i dt`` and
``dp_i = -(eta b s - gamma p_i) dt - dmu``, where ``mu`` is the non-decreasing
multiplier of the ICU constraint ``i <= i_M``.

The construction runs backward from ``t_f``. After ``tau2`` both costates
vanish. An atom of ``mu`` at ``tau2`` lifts ``psi`` to ``lambda2``. Along the
boundary arc ``mu`` has density ``gamma p_s``, which pins ``psi = lambda2``.
Before the arc the smooth adjoint system is integrated backward. When a
full-lockdown phase precedes the arc, a second atom at ``tau1`` is needed. Its
mass is the one that makes ``psi`` return to ``lambda2`` exactly at ``tau0``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson, solve_ivp

from .errors import DomainError

GRID_STEP = 0.1
_ODE_RTOL = 1e-12
_ODE_ATOL = 1e-13


@dataclass(frozen=True)
class CostatePhase:
    """Costates on one smooth phase ``[t[0], t[-1]]``; the last entry is a left limit."""

    t: np.ndarray
    p_s: np.ndarray
    p_i: np.ndarray
    mu_density: np.ndarray
    kind: str


@dataclass(frozen=True)
class CostateTrajectory:
    times: np.ndarray
    p_s: np.ndarray
    p_i: np.ndarray
    eta: np.ndarray
    psi: np.ndarray
    mu_density: np.ndarray
    mu_atoms: list
    p0: float
    p1: float
    k: float
    phases: list = field(default_factory=list, repr=False)

    def total_mass(self):
        dens = sum(float(np.trapezoid(ph.mu_density, ph.t)) for ph in self.phases)
        return dens + sum(m for _, m in self.mu_atoms)

    def sidecar(self):
        return {
            "p0": self.p0,
            "p1": self.p1,
            "k": self.k,
            "mu_atoms": [{"time": t, "mass": m} for t, m in self.mu_atoms],
        }

    def to_csv(self, path, trajectory):
        """Rows ``t, p_s, p_i, eta, psi, mu_density``.

        Each atom time appears twice, first with the left limit and then with the
        right-continuous value, so the jumps of ``p_i`` show up in plots.
        """
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "p_s", "p_i", "eta", "psi", "mu_density"])
            for k, ph in enumerate(self.phases):
                keep_end = k == len(self.phases) - 1 or _has_atom(self, ph.t[-1])
                n = ph.t.size if keep_end else ph.t.size - 1
                s, i = trajectory.state_at(ph.t[:n])
                eta = ph.p_i[:n] - ph.p_s[:n]
                for row in zip(ph.t[:n], ph.p_s[:n], ph.p_i[:n], eta, eta * s * i,
                               ph.mu_density[:n]):
                    w.writerow([f"{v:.17g}" for v in row])

    def write_sidecar(self, path):
        with open(path, "w") as fh:
            json.dump(self.sidecar(), fh, sort_keys=True, indent=2)
            fh.write("\n")


def _has_atom(costates, t):
    return any(abs(ta - t) < 1e-12 for ta, _ in costates.mu_atoms)


def _phase_grid(a, c, step=GRID_STEP):
    n = max(int(np.ceil((c - a) / step)), 8)
    return np.linspace(a, c, n + 1)


def _smooth_backward(traj, schedule, t_end, t_start, p_end):
    """Integrate the adjoint system (no ``mu``) backward from ``t_end`` to ``t_start``."""
    params = schedule.params
    gamma = params.gamma

    def rhs(t, p):
        s, i = traj.state_at(t)
        s, i = s[0], i[0]
        # b is constant on these phases; evaluate inside to stay on the right side
        b = schedule(min(max(t, t_start), np.nextafter(t_end, -np.inf)))
        eta = p[1] - p[0]
        return (-eta * b * i, -(eta * b * s - gamma * p[1]))

    grid = _phase_grid(t_start, t_end)
    sol = solve_ivp(rhs, (t_end, t_start), p_end, method="DOP853", t_eval=grid[::-1],
                    rtol=_ODE_RTOL, atol=_ODE_ATOL)
    if sol.status != 0:
        raise RuntimeError(f"adjoint integration failed: {sol.message}")
    return grid, sol.y[0][::-1], sol.y[1][::-1]


def synthesize_costates(result, weights, params):
    """Build ``(p_s, p_i, eta, psi, mu)`` along a synthesized optimal trajectory.

    The multiplier is normal (``p0 = 1``), ``p1 = 0`` and the Hamiltonian
    constant is ``k = lambda1``. For pure-``beta`` solutions every costate is zero,
    so ``psi = 0 < lambda2`` certifies the choice ``b = beta``.
    """
    if weights.lambda2 <= 0:
        raise DomainError("costate construction needs lambda2 > 0")
    lam2 = weights.lambda2
    sw = result.switching
    traj = result.trajectory
    sched = result.schedule
    t_f = result.t_f
    phases = []
    atoms = []

    if sw.tau2 is None:
        grid = _phase_grid(0.0, t_f)
        z = np.zeros_like(grid)
        phases.append(CostatePhase(grid, z, z.copy(), z.copy(), "free"))
        return _assemble(phases, atoms, traj, weights)

    tau0, tau1, tau2 = sw.tau0, sw.tau1, sw.tau2
    m2 = lam2 * params.beta / (params.gamma * params.i_M)
    atoms.append((tau2, m2))

    # after tau2: zero costates
    grid = _phase_grid(tau2, t_f)
    z = np.zeros_like(grid)
    tail = CostatePhase(grid, z, z.copy(), z.copy(), "free")

    # boundary arc: p_i constant, psi pinned at lambda2
    arc = None
    if tau2 > tau1:
        grid = _phase_grid(tau1, tau2)
        s_arc, _ = traj.state_at(grid)
        p_i = np.full(grid.size, m2)
        p_s = m2 - lam2 / (s_arc * params.i_M)
        p_s[-1] = 0.0
        # right limit at tau2 is handled by the tail; the arc keeps its left limit
        p_i[-1] = m2
        arc = CostatePhase(grid, p_s, p_i, params.gamma * p_s, "boundary")

    s1 = float(traj.state_at(tau1)[0][0])
    ps_tau1 = m2 - lam2 / (s1 * params.i_M) if tau2 > tau1 else 0.0
    pre = []
    if tau1 > tau0:
        # lockdown phase; a second atom at tau1 is fixed by psi(tau0) = lambda2
        def lock_phase(m1):
            return _smooth_backward(traj, sched, tau1, tau0, [ps_tau1, m2 + m1])

        g0, ps0, pi0 = lock_phase(0.0)
        g1, ps1, pi1 = lock_phase(1.0)
        s0_, i0_ = traj.state_at(tau0)
        si0 = float(s0_[0] * i0_[0])
        psi_a = (pi0[0] - ps0[0]) * si0
        psi_b = (pi1[0] - ps1[0]) * si0
        m1 = (lam2 - psi_a) / (psi_b - psi_a)
        ps = ps0 + m1 * (ps1 - ps0)
        pi = pi0 + m1 * (pi1 - pi0)
        atoms.insert(0, (tau1, float(m1)))
        pre.insert(0, CostatePhase(g0, ps, pi, np.zeros_like(g0), "lockdown"))
        p_at_tau0 = [ps[0], pi[0]]
    else:
        p_at_tau0 = [ps_tau1, m2]
    if tau0 > 0:
        g, ps, pi = _smooth_backward(traj, sched, tau0, 0.0, p_at_tau0)
        pre.insert(0, CostatePhase(g, ps, pi, np.zeros_like(g), "free"))

    phases = pre + ([arc] if arc is not None else []) + [tail]
    return _assemble(phases, atoms, traj, weights)


def _assemble(phases, atoms, traj, weights):
    ts, pss, pis, mus = [], [], [], []
    for k, ph in enumerate(phases):
        last = k == len(phases) - 1
        sl = slice(None) if last else slice(None, -1)
        ts.append(ph.t[sl])
        pss.append(ph.p_s[sl])
        pis.append(ph.p_i[sl])
        mus.append(ph.mu_density[sl])
    t = np.concatenate(ts)
    p_s = np.concatenate(pss)
    p_i = np.concatenate(pis)
    s, i = traj.state_at(t)
    eta = p_i - p_s
    return CostateTrajectory(
        times=t, p_s=p_s, p_i=p_i, eta=eta, psi=eta * s * i,
        mu_density=np.concatenate(mus), mu_atoms=[(float(a), float(m)) for a, m in atoms],
        p0=1.0, p1=0.0, k=weights.lambda1, phases=phases,
    )


# -- verification -------------------------------------------------------------


@dataclass(frozen=True)
class Check:
    name: str
    residual: float
    tolerance: float
    passed: bool

    def as_dict(self):
        return {"residual": self.residual, "tolerance": self.tolerance, "passed": self.passed}


@dataclass(frozen=True)
class VerificationReport:
    checks: list

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def as_dict(self):
        return {"passed": self.passed, "checks": {c.name: c.as_dict() for c in self.checks}}


def _ddt(f, h):
    """Fourth-order central difference on the interior points ``f[2:-2]``."""
    return (f[:-4] - 8.0 * f[1:-3] + 8.0 * f[3:-1] - f[4:]) / (12.0 * h)


def _hamiltonian(b, s, i, p_s, p_i, weights, params):
    eta = p_i - p_s
    return weights.lambda1 + weights.lambda2 * (params.beta - b) + eta * b * s * i - params.gamma * p_i * i


def verify_extremal(result, costates, weights, params, tol=1e-6):
    """Check the maximum-principle conditions along ``result`` with ``costates``.

    Every check records its worst residual and its tolerance. The report passes
    only if every check passes. Hamiltonian quantities are compared on the
    interior points of each phase, so control switches and atoms are excluded.
    """
    traj = result.trajectory
    sched = result.schedule
    lam2 = weights.lambda2
    checks = []

    def add(name, residual, tolerance=tol, ok=None):
        residual = float(residual)
        if ok is None:
            ok = residual <= tolerance
        checks.append(Check(name, residual, tolerance, bool(ok)))

    total_mass = costates.total_mass()
    add("P1_nondegeneracy", costates.p0 + total_mass + costates.p1, 0.0,
        ok=costates.p0 + total_mass + costates.p1 > 0)

    comp = 0.0
    support = 0.0
    adj_res = dpsi_res = h_drift = min_gap = switch_err = 0.0
    eta_min = np.inf
    ps_min = np.inf
    ps_incr = 0.0
    b_scan = np.linspace(params.beta_star, params.beta, 101)
    for ph in costates.phases:
        t = ph.t
        s, i = traj.state_at(t)
        inner = t[2:-2]
        b = np.array([sched(x) for x in inner])
        si = s * i
        eta = ph.p_i - ph.p_s
        psi = eta * si
        comp += float(np.trapezoid((i - params.i_M) * ph.mu_density, t))
        off = i < params.i_M - 1e-8
        if off.any():
            support = max(support, float(np.abs(ph.mu_density[off]).max()))
        eta_min = min(eta_min, float(eta.min()))
        ps_min = min(ps_min, float(ph.p_s.min()))
        ps_incr = max(ps_incr, float(np.max(np.diff(ph.p_s), initial=0.0)))

        # adjoint residuals by central differences on the phase interior
        step = t[1] - t[0]
        dps = _ddt(ph.p_s, step)
        dpi = _ddt(ph.p_i, step)
        dpsi = _ddt(psi, step)
        s_in, i_in = s[2:-2], i[2:-2]
        ps_in, pi_in, mu_in = ph.p_s[2:-2], ph.p_i[2:-2], ph.mu_density[2:-2]
        eta_in = pi_in - ps_in
        r_s = dps + eta_in * b * i_in
        r_i = dpi + (eta_in * b * s_in - params.gamma * pi_in) + mu_in
        adj_res = max(adj_res, float(np.abs(r_s).max()), float(np.abs(r_i).max()))
        r_psi = dpsi - (s_in * i_in * params.gamma * ps_in - s_in * i_in * mu_in)
        dpsi_res = max(dpsi_res, float(np.abs(r_psi).max()))

        h = _hamiltonian(b, s_in, i_in, ps_in, pi_in, weights, params)
        h_drift = max(h_drift, float(np.abs(h - costates.k).max()))
        h_scan = _hamiltonian(b_scan[None, :], s_in[:, None], i_in[:, None], ps_in[:, None],
                              pi_in[:, None], weights, params).min(axis=1)
        min_gap = max(min_gap, float((h - h_scan).max()))

        psi_in = psi[2:-2]
        want_hi = psi_in < lam2 - tol
        want_lo = psi_in > lam2 + tol
        if want_hi.any():
            switch_err = max(switch_err, float(np.abs(b[want_hi] - params.beta).max()))
        if want_lo.any():
            switch_err = max(switch_err, float(np.abs(b[want_lo] - params.beta_star).max()))

    for t_a, m in costates.mu_atoms:
        s_a, i_a = traj.state_at(t_a)
        comp += float((i_a[0] - params.i_M) * m)
    add("P2_complementarity", abs(comp))
    add("mu_support", support)
    add("mu_nonnegative", -min([0.0] + [m for _, m in costates.mu_atoms]
                                  + [float(ph.mu_density.min()) for ph in costates.phases]))
    add("P3_adjoint_residual", adj_res)
    add("P4_minimality", max(min_gap, 0.0))
    add("P5_hamiltonian_drift", h_drift)
    add("switching_law", switch_err)
    add("eta_nonnegative", max(-eta_min, 0.0))
    add("dpsi_identity", dpsi_res)
    add("p_s_nonnegative", max(-ps_min, 0.0))
    add("p_s_nonincreasing", ps_incr)

    # jump bookkeeping: the drop of p_i across each atom equals its mass
    jump_err = 0.0
    for t_a, m in costates.mu_atoms:
        left = right = None
        for ph in costates.phases:
            if abs(ph.t[-1] - t_a) < 1e-12:
                left = ph.p_i[-1] - ph.p_s[-1]
            if abs(ph.t[0] - t_a) < 1e-12:
                right = ph.p_i[0] - ph.p_s[0]
        if left is None or right is None:
            jump_err = np.inf
        else:
            jump_err = max(jump_err, abs((right - left) + m))
    add("jump_bookkeeping", jump_err)

    # adjoint consistency: p_s(t) = p_s(t_f) + int_t^t_f eta b i
    cons = 0.0
    acc = costates.p_s[-1]
    for ph in reversed(costates.phases):
        t = ph.t
        s, i = traj.state_at(t)
        bb = np.array([sched(min(x, np.nextafter(t[-1], -np.inf))) for x in t])
        integrand = (ph.p_i - ph.p_s) * bb * i
        seg = cumulative_simpson(integrand, x=t, initial=0.0)
        from_end = seg[-1] - seg
        cons = max(cons, float(np.abs(ph.p_s - (acc + from_end)).max()))
        acc = acc + from_end[0]
    add("adjoint_consistency", cons)

    add("transversality", max(abs(costates.p_s[-1] - costates.p1), abs(costates.p_i[-1])))
    return VerificationReport(checks)


def singular_arc_control(s, params):
    """Rate ``gamma/s`` that keeps ``i`` constant; defined for ``gamma/beta <= s <= gamma/beta_star``."""
    slack = 1e-12
    if not params.herd * (1 - slack) <= s <= params.lock * (1 + slack):
        raise DomainError(
            f"s = {s} outside [{params.herd}, {params.lock}]; gamma/s would leave the control band"
        )
    return params.gamma / s


__all__ = [
    "CostateTrajectory",
    "VerificationReport",
    "singular_arc_control",
    "synthesize_costates",
    "verify_extremal",
]
