"""Command line entry point: ``vrbsim run | check | sweep``.

Exit codes: 0 success, 1 scenario/validation failure, 2 mission timeout or
numerical divergence.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .constraints import rigidity_check
from .dynamics import inertia
from .errors import NumericalDivergence, ScenarioError, VrbError
from .guidance import design_attitude, design_translation
from .logio import write_log
from .scenario import bundled_names, load_scenario
from .sim import Mission, momentum_energy_audit

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_MISSION = 2


def _overrides(args) -> list[str]:
    items = list(args.set or [])
    if getattr(args, "dt", None) is not None:
        items.append(f"sim.dt={args.dt!r}")
    if getattr(args, "t_end", None) is not None:
        items.append(f"sim.t_end={args.t_end!r}")
    return items


def _err(msg: str) -> None:
    print(f"vrbsim: {msg}", file=sys.stderr)


def _simulate(scenario_ref: str, overrides: list[str], out_dir: str) -> tuple[int, str]:
    """Run one mission and write its log; returns (exit code, summary)."""
    try:
        sc = load_scenario(scenario_ref, overrides)
    except ScenarioError as exc:
        return EXIT_INVALID, f"invalid scenario: {exc}"
    mission = Mission(sc)
    code = EXIT_OK
    try:
        log = mission.run()
    except NumericalDivergence as exc:
        log = mission.log
        code = EXIT_MISSION
        note = f"diverged: {exc}"
    except VrbError as exc:
        log = mission.log
        log.truncate(mission.k + 1)
        code = EXIT_MISSION
        note = f"mission aborted: {type(exc).__name__}: {exc}"
    else:
        if log.timed_out:
            code = EXIT_MISSION
            note = "mission timeout: final waypoint not reached before t_end"
        else:
            note = "ok"
    write_log(log, out_dir)
    parts = [f"{sc.name}: {note}"]
    if len(log.t):
        parts.append(f"t = {log.t[-1]:.2f} s, r_cm = {np.array2string(log.r_cm[-1], precision=3)}")
        if log.waypoints_reached:
            parts.append(f"waypoints reached: {len(log.waypoints_reached)}/{len(sc.waypoints)}")
        parts.append(f"max per-agent input {momentum_energy_audit(log).max_input:.2f} N")
    return code, "; ".join(parts)


def cmd_run(args) -> int:
    code, summary = _simulate(args.scenario, _overrides(args), args.out)
    if code == EXIT_OK:
        print(summary)
        print(f"logs written to {args.out}")
    else:
        _err(summary)
    return code


def cmd_check(args) -> int:
    try:
        sc = load_scenario(args.scenario, _overrides(args))
    except ScenarioError as exc:
        _err(f"invalid scenario: {exc}")
        return EXIT_INVALID
    cs = sc.constraint_set()
    report = rigidity_check(cs, sc.particle_system())
    print(f"scenario {sc.name}: {sc.n_agents} agents, {len(cs)} constraints, {len(sc.waypoints)} waypoints")
    print(report.summary())
    ok = report.passes
    try:
        tr = design_translation(sc.masses.sum(), sc.control.translation_Q, sc.control.translation_R)
        print(f"translation LQR: K = {np.array2string(tr.K[0], precision=4)}, CARE residual {tr.residual:.1e}")
        if sc.waypoints:
            rel = sc.positions - sc.masses @ sc.positions / sc.masses.sum()
            I = inertia(rel, np.zeros_like(rel), sc.masses).I_cm_b
            at = design_attitude(I, sc.control.attitude_Q, sc.control.attitude_R, sc.control.axis_rtol)
            print(
                f"attitude LQR (initial geometry): {3 - at.free_axes.shape[1]} controlled axes, "
                f"CARE residual {at.residual:.1e}"
            )
    except VrbError as exc:
        print(f"gain design failed: {exc}")
        ok = False
    print("check: pass" if ok else "check: FAIL")
    return EXIT_OK if ok else EXIT_INVALID


def _sweep_job(job):
    return _simulate(*job)


def cmd_sweep(args) -> int:
    out = Path(args.out)
    jobs = []
    for raw in args.values:
        label = f"{args.param}={raw}".replace("/", "_").replace(" ", "")
        jobs.append((args.scenario, _overrides(args) + [f"{args.param}={raw}"], str(out / label)))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    worst = EXIT_OK
    for (_, _, path), (code, summary) in zip(jobs, results):
        print(f"[{code}] {path}: {summary}")
        worst = max(worst, code)
    return worst


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vrbsim", description="Virtual rigid body formation missions.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("scenario", help="scenario file, or the name of a bundled scenario")
        sp.add_argument(
            "--set",
            "--seed-overrides",
            dest="set",
            action="append",
            metavar="KEY=VALUE",
            help="override a scenario field by dotted path, e.g. sim.dt=0.005 (repeatable)",
        )

    r = sub.add_parser("run", help="simulate a mission and write CSV logs")
    common(r)
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--dt", type=float)
    r.add_argument("--t-end", dest="t_end", type=float)
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("check", help="validate a scenario without simulating")
    common(c)
    c.set_defaults(func=cmd_check)

    s = sub.add_parser("sweep", help="run a scenario over several values of one field")
    common(s)
    s.add_argument("--param", required=True, help="dotted field path")
    s.add_argument("--values", nargs="+", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--dt", type=float)
    s.add_argument("--t-end", dest="t_end", type=float)
    s.add_argument("--jobs", type=int, default=1, help="parallel missions")
    s.set_defaults(func=cmd_sweep)

    sub.add_parser("list", help="list bundled scenarios").set_defaults(func=lambda a: print("\n".join(bundled_names())) or 0)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
