"""Command-line front end: integrate, nsre-check, homotopy, certify.

Exit codes: 0 ok, 2 bad input, 3 failed check (including domain exit and
not-certifiable runs), 4 inconclusive, 5 numerical failure.
"""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from .certify import (NotCertifiableError, build_certificate, verify_certificate,
                      xi, zeta, psi, estimate_constants)
from .core import ControlSignal, SRXError, Trajectory, control_inner
from .extremals import hamiltonian_extremal, nsre_check
from .flows import (DomainExitError, IntegrationError, SingularFlowError,
                    integrate_trajectory, tangent_flow, write_tangent_flow_rows,
                    write_trajectory_rows)
from .homotopy import (drift_matrix, endpoint_separation, energy_comparison_check,
                       natural_homotopy, spread_matrix, variation_fields)
from .io import write_csv, write_json
from .scenario import Scenario, ScenarioError, load_scenario

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_FAILED = 3
EXIT_INCONCLUSIVE = 4
EXIT_NUMERIC = 5


def _resolve_run(scenario: Scenario) -> tuple[ControlSignal, Trajectory]:
    """Control + trajectory for the scenario, generating the extremal if asked."""
    if scenario.control is not None:
        u = scenario.control
        traj = integrate_trajectory(scenario.frame, u, scenario.q0,
                                    scenario.domain, scenario.substeps)
        return u, traj
    ham = scenario.hamiltonian
    try:
        ext = hamiltonian_extremal(scenario.frame, scenario.q0, ham["p0"],
                                   ham["T"], ham["N_t"], scenario.substeps,
                                   domain=scenario.domain)
    except ValueError as err:
        raise ScenarioError(str(err)) from err
    return ext.control, ext.trajectory


def cmd_integrate(scenario: Scenario, out: Path) -> int:
    u, traj = _resolve_run(scenario)
    header, rows = write_trajectory_rows(traj)
    write_csv(out / "trajectory.csv", header, rows, scenario.sha256, scenario.name)
    if scenario.emit_tangent_flow:
        tf = tangent_flow(scenario.frame, u, traj, substeps=scenario.substeps)
        header, rows = write_tangent_flow_rows(tf)
        write_csv(out / "tangent_flow.csv", header, rows, scenario.sha256,
                  scenario.name)
    if traj.left_domain:
        print(f"trajectory left the domain at t={traj.first_exit_time:.6g}",
              file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def cmd_nsre_check(scenario: Scenario, out: Path) -> int:
    u, traj = _resolve_run(scenario)
    report = nsre_check(scenario.frame, u, traj, substeps=scenario.substeps,
                        **scenario.nsre_kwargs())
    write_json(out / "nsre_report.json", report.to_json_dict(), scenario.sha256,
               scenario.name)
    if traj.left_domain or report.status == "failed":
        return EXIT_FAILED
    if report.status == "inconclusive":
        return EXIT_INCONCLUSIVE
    return EXIT_OK


def _bound_entry(value: float, limit: float, applicable: bool) -> dict:
    return {"max": value, "limit": limit, "slack": limit - value,
            "applicable": applicable}


def cmd_homotopy(scenario: Scenario, out: Path) -> int:
    if scenario.delta_u is None:
        raise ScenarioError("homotopy command needs homotopy.delta_u")
    u, traj = _resolve_run(scenario)
    frame, domain = scenario.frame, scenario.domain
    du = scenario.delta_u
    hom = natural_homotopy(frame, u, du, scenario.q0, scenario.homotopy_n_s,
                           domain, scenario.substeps)
    fields = variation_fields(frame, u, hom, scenario.substeps)
    sep = endpoint_separation(hom)

    rows = []
    for idx, s in enumerate(hom.s_grid):
        member = hom.trajectories[idx]
        bvec = fields[idx].vectors
        for j, t in enumerate(member.grid):
            rows.append([s, t, *member.states[j], *bvec[j]])
    n = frame.n
    header = ["s", "t"] + [f"q{a + 1}" for a in range(n)] + \
             [f"b{a + 1}" for a in range(n)]
    write_csv(out / "homotopy.csv", header, rows, scenario.sha256, scenario.name)
    write_csv(out / "endpoints.csv", ["s"] + [f"q{a + 1}" for a in range(n)],
              [[s, *e] for s, e in zip(hom.s_grid, sep.endpoints)],
              scenario.sha256, scenario.name)

    comparison = energy_comparison_check(u, du)
    report = nsre_check(frame, u, traj, substeps=scenario.substeps,
                        **scenario.nsre_kwargs()) if u.is_normalized() else None
    constants = estimate_constants(frame, domain,
                                   int(scenario.certify["grid_resolution"]),
                                   float(scenario.certify["margin"]))
    horizon = u.horizon
    du_l2 = du.l2_norm()
    z = zeta(horizon, constants, frame.k)
    p = psi(horizon, constants, frame.k, frame.n)
    x = xi(horizon, constants, frame.k, frame.n)
    admissible = comparison.applicable
    in_domain = hom.in_domain

    b0_norms = np.linalg.norm(fields[0].vectors, axis=1)
    phi_cum = np.abs(control_inner(u, du).cumulative)
    c = report.c if report is not None else 0.0
    b0_slack = float((b0_norms - c * phi_cum).min())

    bounds = {
        "spread": _bound_entry(float(spread_matrix(hom).max()),
                               math.sqrt(horizon) * z * du_l2, in_domain),
        "variation": _bound_entry(float(max(f.max_norm() for f in fields)),
                                  math.sqrt(horizon) * p * du_l2,
                                  in_domain and admissible),
        "drift": _bound_entry(float(drift_matrix(fields).max()),
                              horizon * x * du.l2_norm_sq(),
                              in_domain and admissible),
        "b0_lower": {"min_slack": b0_slack, "c": c,
                     "applicable": report is not None and
                     report.status == "certified"},
    }
    payload = {
        "separation": sep.separation,
        "in_domain": in_domain,
        "nsre_status": report.status if report is not None else "not_normalized",
        "energy_comparison": {
            "applicable": comparison.applicable,
            "lhs": comparison.lhs, "rhs": comparison.rhs,
            "slack": comparison.slack, "holds": comparison.holds,
            "du_l2": comparison.du_l2, "bound2": comparison.bound2,
        },
        "bounds": bounds,
    }
    write_json(out / "lemma_slacks.json", payload, scenario.sha256, scenario.name)

    failed = any(b["applicable"] and b["slack"] < -1e-9
                 for b in bounds.values() if "slack" in b)
    failed = failed or (bounds["b0_lower"]["applicable"]
                        and bounds["b0_lower"]["min_slack"] < -1e-9)
    failed = failed or (comparison.applicable and not comparison.holds)
    return EXIT_FAILED if failed else EXIT_OK


def cmd_certify(scenario: Scenario, out: Path, threads: int) -> int:
    u, traj = _resolve_run(scenario)
    if traj.left_domain:
        print("trajectory leaves the domain; nothing to certify", file=sys.stderr)
        return EXIT_FAILED
    cfg = scenario.certify
    try:
        cert, report = build_certificate(
            scenario.frame, scenario.domain, u, traj,
            grid_resolution=int(cfg["grid_resolution"]),
            margin=float(cfg["margin"]),
            margin_factor=float(cfg["margin_factor"]),
            seed=scenario.seed, substeps=scenario.substeps,
            nsre_kwargs=scenario.nsre_kwargs())
    except NotCertifiableError as err:
        print(f"not certifiable: {err}", file=sys.stderr)
        payload = {"certified": False, "reason": str(err)}
        if err.report is not None:
            payload["nsre"] = err.report.to_json_dict()
        write_json(out / "certificate.json", payload, scenario.sha256,
                   scenario.name)
        if err.report is not None and err.report.status == "inconclusive":
            return EXIT_INCONCLUSIVE
        return EXIT_FAILED

    t_prime = cfg.get("T_prime")
    verification = verify_certificate(
        scenario.frame, scenario.domain, u, traj, cert,
        n_trials=int(cfg["n_trials"]), base_seed=0,
        t_prime=None if t_prime is None else float(t_prime),
        n_s=int(cfg["N_s"]), threads=threads, substeps=scenario.substeps)

    payload = {"certified": verification.ok}
    payload.update(cert.to_json_dict())
    payload["verification"] = verification.to_json_dict()
    write_json(out / "certificate.json", payload, scenario.sha256, scenario.name)
    header, rows = verification.csv_rows()
    write_csv(out / "verification.csv", header, rows, scenario.sha256,
              scenario.name)
    if not verification.ok:
        print(f"{verification.violation_count} verification violations; "
              f"seeds {list(verification.failing_seeds)[:5]}", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="srx",
        description="integrate, test and certify normal sub-Riemannian extremals")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("integrate", "integrate the scenario trajectory to CSV"),
            ("nsre-check", "run the geometric normal-extremal test"),
            ("homotopy", "build the natural homotopy and bound slacks"),
            ("certify", "compute and verify a local-optimality certificate")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True,
                       help="scenario JSON file or bundled scenario name")
        p.add_argument("--out", default=None,
                       help="output directory (default: scenario out_dir or cwd)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the scenario seed")
        p.add_argument("--threads", type=int, default=1,
                       help="worker cap for verification trials")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        scenario = load_scenario(args.config)
        if args.seed is not None:
            object.__setattr__(scenario, "seed", int(args.seed))
        out = Path(args.out if args.out is not None
                   else scenario.out_dir or ".")
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "integrate":
            return cmd_integrate(scenario, out)
        if args.command == "nsre-check":
            return cmd_nsre_check(scenario, out)
        if args.command == "homotopy":
            return cmd_homotopy(scenario, out)
        return cmd_certify(scenario, out, max(1, args.threads))
    except ScenarioError as err:
        print(f"scenario error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except (IntegrationError, SingularFlowError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except DomainExitError as err:
        print(f"domain violation: {err}", file=sys.stderr)
        return EXIT_FAILED
    except NotCertifiableError as err:
        print(f"not certifiable: {err}", file=sys.stderr)
        return EXIT_FAILED
    except SRXError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
