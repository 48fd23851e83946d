"""Command-line scenario runner.

    sir-opticon <zones|synth|verify|baseline|all> --config FILE [--out DIR] [--n N] [--seed S]

The config is a flat ``key = value`` file with the keys beta_star, beta, gamma,
i_M, lambda1, lambda2, s0, i0, t_f, tol and seed. ``--config`` also accepts the
names of the bundled scenarios (``scenario1``, ``scenario2``).
Set ``SIR_OPTICON_LOG`` to quiet, info or debug to control logging.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import export
from .dynamics import CostWeights, EpidemicParams, SirState, integrate
from .errors import DomainError, HorizonError, InfeasibleStateError, StandingAssumptionError
from .oracle import TranscriptionProblem, solve_transcription
from .pontryagin import synthesize_costates, verify_extremal
from .synthesis import (
    SynthesisResult,
    SwitchingTimes,
    cost,
    optimal_open_loop,
    schedule_from_json,
    phase_structure,
)
from .zones import ZoneLabel, classify, phi_a, phi_b, s_m, s_m_star

log = logging.getLogger("sir_opticon")

VERIFY_TOL = 1e-6
REQUIRED = ("beta_star", "beta", "gamma", "i_M", "s0", "i0", "t_f")
DEFAULTS = {"lambda1": 0.0, "lambda2": 1.0, "tol": 1e-9, "seed": 0}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    params: EpidemicParams
    weights: CostWeights
    state0: SirState
    t_f: float
    tol: float
    seed: int
    outputs: Path


def _resolve_config(path):
    p = Path(path)
    if p.exists():
        return p.read_text()
    bundled = resources.files("sir_opticon") / "scenarios" / f"{p.stem}.cfg"
    if bundled.is_file():
        return bundled.read_text()
    raise ConfigError(f"config file not found: {path}")


def load_scenario(path, out_dir="."):
    """Parse a scenario config into a ``Scenario``."""
    text = _resolve_config(path)
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string("[scenario]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    raw = dict(cp["scenario"])
    unknown = set(raw) - set(REQUIRED) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    missing = [k for k in REQUIRED if k not in raw]
    if missing:
        raise ConfigError(f"missing config keys: {', '.join(missing)}")
    vals = dict(DEFAULTS)
    try:
        for k, v in raw.items():
            vals[k] = int(v) if k == "seed" else float(v)
    except ValueError as exc:
        raise ConfigError(f"bad config value: {exc}") from exc
    if not vals["t_f"] > 0:
        raise ConfigError("t_f must be positive")
    if not vals["tol"] > 0:
        raise ConfigError("tol must be positive")
    try:
        params = EpidemicParams(vals["beta_star"], vals["beta"], vals["gamma"], vals["i_M"])
        weights = CostWeights(vals["lambda1"], vals["lambda2"])
        state0 = SirState(vals["s0"], vals["i0"])
    except (DomainError, StandingAssumptionError) as exc:
        raise ConfigError(str(exc)) from exc
    return Scenario(params, weights, state0, vals["t_f"], vals["tol"], vals["seed"], Path(out_dir))


# -- stages -------------------------------------------------------------------


def _update_report(sc, **entries):
    path = sc.outputs / "report.json"
    report = json.loads(path.read_text()) if path.exists() else {}
    report.update(entries)
    export.write_json(path, report)
    return report


def stage_zones(sc):
    p = sc.params
    export.write_zones(sc.outputs / "zones.csv", p)
    label = classify(sc.state0, p)
    _update_report(sc, zones={
        "label": label.value,
        "s_M": s_m(p),
        "s_M_star": s_m_star(p),
        "phi_A_s0": phi_a(sc.state0.s, p),
        "phi_A_s0_unclamped": phi_a(sc.state0.s, p, clamp=False),
        "phi_B_s0": phi_b(sc.state0.s, p),
        "phi_B_s0_unclamped": phi_b(sc.state0.s, p, clamp=False),
    })
    log.info("zone of the initial state: %s", label.value)
    return label


def _trajectory_rows(result):
    sw = result.switching
    grid = export.trajectory_grid(result.t_f, (sw.tau0, sw.tau1, sw.tau2))
    s, i = result.trajectory.state_at(grid)
    b = np.array([result.schedule(t) for t in grid])
    return grid, s, i, b


def stage_synth(sc):
    if classify(sc.state0, sc.params) is ZoneLabel.OutsideB:
        raise InfeasibleStateError()
    result = optimal_open_loop(sc.state0, sc.t_f, sc.params, sc.weights, sc.tol)
    export.write_json(sc.outputs / "synthesis.json", result.to_json())
    export.write_trajectory(sc.outputs / "trajectory.csv", *_trajectory_rows(result))
    _update_report(sc, synthesis={
        "structure": result.structure,
        "switching_times": result.switching.as_dict(),
        "cost": result.cost,
        "zone": result.label.value,
        "max_i": float(result.trajectory.i.max()),
        "s_t_f": float(result.trajectory.s[-1]),
        "metadata": result.metadata,
    })
    log.info("structure %s, cost %.10g", result.structure, result.cost)
    return result


def load_result(sc):
    """Rebuild a ``SynthesisResult`` from the synthesis.json written by ``synth``."""
    path = sc.outputs / "synthesis.json"
    if not path.exists():
        raise FileNotFoundError("missing trajectory: run the synth stage first")
    data = json.loads(path.read_text())
    schedule = schedule_from_json(data["schedule"], sc.params)
    sw = SwitchingTimes(**data["switching_times"])
    t_f = data["t_f"]
    state0 = SirState(data["state0"]["s"], data["state0"]["i"])
    traj = integrate(state0, schedule, 0.0, t_f, sc.tol, sc.params)
    return SynthesisResult(
        schedule=schedule, switching=sw, trajectory=traj,
        cost=cost(schedule, t_f, sc.weights), state0=state0, t_f=t_f, weights=sc.weights,
        structure=phase_structure(schedule, t_f), label=ZoneLabel(data["zone"]),
        metadata=data.get("metadata", {}),
    )


def stage_verify(sc, result=None):
    result = result or load_result(sc)
    costates = synthesize_costates(result, sc.weights, sc.params)
    report = verify_extremal(result, costates, sc.weights, sc.params, VERIFY_TOL)
    costates.to_csv(sc.outputs / "costates.csv", result.trajectory)
    costates.write_sidecar(sc.outputs / "costates.json")
    _update_report(sc, verification=report.as_dict())
    log.info("verification %s", "passed" if report.passed else "FAILED")
    return costates, report


def stage_baseline(sc, n=250, seed=None, result=None):
    if result is None:
        result = optimal_open_loop(sc.state0, sc.t_f, sc.params, sc.weights, sc.tol)
    seed = sc.seed if seed is None else seed
    problem = TranscriptionProblem(n, sc.t_f, sc.state0, sc.params, sc.weights)
    base = solve_transcription(problem, seed, reference=result.schedule)
    b = np.append(np.repeat(base.control_values, problem.substeps), base.control_values[-1])
    export.write_trajectory(sc.outputs / "baseline.csv", base.times, base.s, base.i, b)
    _update_report(sc, baseline={
        "n_intervals": n,
        "seed": seed,
        "cost": base.cost,
        "max_violation": base.max_violation,
        "relative_gap": (base.cost - result.cost) / result.cost if result.cost else None,
        "best_start": base.start,
    })
    return base


def write_plot(sc, result, costates):
    grid, s, i, b = _trajectory_rows(result)
    ps = [(ph.t, ph.p_s) for ph in costates.phases]
    pi = [(ph.t, ph.p_i) for ph in costates.phases]
    svg = export.svg_plot(
        [("s", [(grid, s)]), ("i", [(grid, i)]), ("b", [(grid, b)]), ("p_s", ps), ("p_i", pi)],
        result.t_f,
        title=f"s0 = {sc.state0.s:g}, i0 = {sc.state0.i:g}: {result.structure}",
    )
    (sc.outputs / "plot.svg").write_text(svg)


# -- entry point --------------------------------------------------------------


def _setup_logging():
    level = os.environ.get("SIR_OPTICON_LOG", "quiet").lower()
    levels = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def build_parser():
    ap = argparse.ArgumentParser(prog="sir-opticon", description=__doc__.split("\n\n")[0])
    ap.add_argument("command", choices=["zones", "synth", "verify", "baseline", "all"])
    ap.add_argument("--config", required=True, help="scenario config file or bundled name")
    ap.add_argument("--out", default=".", help="output directory (default: current)")
    ap.add_argument("--n", type=int, default=250, help="transcription intervals (baseline)")
    ap.add_argument("--seed", type=int, default=None, help="override the config seed")
    return ap


def run(argv=None):
    args = build_parser().parse_args(argv)
    _setup_logging()
    try:
        sc = load_scenario(args.config, args.out)
        sc.outputs.mkdir(parents=True, exist_ok=True)
        if args.command == "zones":
            stage_zones(sc)
            return 0
        if args.command == "synth":
            stage_synth(sc)
            return 0
        if args.command == "verify":
            _, report = stage_verify(sc)
            return 0 if report.passed else 1
        if args.command == "baseline":
            stage_baseline(sc, args.n, args.seed)
            return 0
        stage_zones(sc)
        result = stage_synth(sc)
        costates, report = stage_verify(sc, result)
        stage_baseline(sc, args.n, args.seed, result)
        write_plot(sc, result, costates)
        return 0 if report.passed else 1
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InfeasibleStateError:
        print("error: infeasible initial state", file=sys.stderr)
        return 1
    except (HorizonError, FileNotFoundError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
