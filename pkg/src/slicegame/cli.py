"""Command-line entry point.

One command, subcommand style; scenario configs come from TOML/JSON files,
behavior switches from flags.  Exit codes: 0 success, 1 domain failure
(invalid scenario, solver failure, infeasible dimensioning), 2 usage or
parse failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .allocation import DegenerateResource, ZeroBidSlice, rates_for_weights
from .config import ConfigError, load_scenario
from .experiments import (
    ExperimentConfig, FAMILIES, InfeasibleMapping, Undimensionable,
    dimension_share, rows_to_csv, sweep,
)
from .game import (
    SolverError, bid_norm, brd_run, default_weights, policy_dynamics,
    social_optimal,
)
from .model import ValidationError, check_well_dimensioned, validate_scenario
from .policy import DivergentRequirement

DOMAIN_ERRORS = (ValidationError, SolverError, DegenerateResource,
                 ZeroBidSlice, DivergentRequirement, Undimensionable,
                 InfeasibleMapping)


def _load(path, allow_overcommit=False):
    spec, weights = load_scenario(path)
    return validate_scenario(spec, allow_overcommit=allow_overcommit), weights


def _out(text: str, output):
    if output:
        Path(output).write_text(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# subcommands


def cmd_validate(args) -> int:
    try:
        scn, _ = _load(args.config)
    except ValidationError as exc:
        report = {"valid": False,
                  "issues": [{"kind": i.kind, "subject": i.subject,
                              "detail": i.detail} for i in exc.issues]}
        print(json.dumps(report, indent=2))
        return 1
    dim = check_well_dimensioned(scn)
    report = {"valid": True, "issues": [],
              "well_dimensioned": dim.ok,
              "n_slices": scn.n_slices, "n_base_stations": scn.n_bs,
              "n_users": scn.n_users,
              "min_slack": float(dim.slack.min()) if dim.slack.size else 0.0}
    print(json.dumps(report, indent=2))
    return 0


def cmd_allocate(args) -> int:
    scn, weights = _load(args.config, allow_overcommit=args.allow_overcommit)
    if weights is None:
        weights = default_weights(scn)
    f_vb, f_u, r_u = rates_for_weights(scn, weights)
    lines = ["bs,slice,fraction"]
    for b in range(scn.n_bs):
        for v in range(scn.n_slices):
            lines.append(f"{scn.bs_ids[b]},{scn.slice_ids[v]},{f_vb[v, b]:.12g}")
    lines.append("user,fraction,rate")
    for u in range(scn.n_users):
        lines.append(f"{scn.user_ids[u]},{f_u[u]:.12g},{r_u[u]:.12g}")
    _out("\n".join(lines) + "\n", args.output)
    return 0


def _detect_cycle(scn, trace, tol: float = 1e-6):
    """Post-hoc scan of a trace for a revisited non-adjacent state."""
    if trace.converged:
        return False, 0
    bids = trace.local_bid_history(scn)
    for i in range(len(bids)):
        for j in range(i + 2, len(bids)):
            if bid_norm(bids[j], bids[i]) < tol:
                return True, j - i
    return False, 0


def cmd_dynamics(args) -> int:
    scn, w0 = _load(args.config, allow_overcommit=args.allow_overcommit)
    if args.best_response:
        if args.mode != "rr":
            raise SolverError("best-response dynamics only supports --mode rr")
        trace = brd_run(scn, delta=args.delta, max_rounds=args.rounds,
                        w0=w0, tol=args.tol)
        cycle, period = trace.cycle_detected, trace.cycle_period
    else:
        trace = policy_dynamics(scn, mode=args.mode, w0=w0,
                                max_rounds=args.rounds, tol=args.tol)
        cycle, period = _detect_cycle(scn, trace)
    print(f"converged={str(trace.converged).lower()} "
          f"cycle={str(cycle).lower()} "
          f"rounds={trace.rounds} period={period}")
    if args.output:
        lines = ["round,step_norm"]
        lines += [f"{n + 1},{s:.12g}" for n, s in enumerate(trace.step_norms)]
        Path(args.output).write_text("\n".join(lines) + "\n")
    return 0


def cmd_solve_so(args) -> int:
    scn, _ = _load(args.config)
    w, value, info = social_optimal(scn, delta=args.delta, seed=args.seed)
    print(f"utility={value:.10g} residual={info.residual:.3g} "
          f"iterations={info.iterations}")
    lines = ["user,weight,rate"]
    _, _, r = rates_for_weights(scn, w)
    for u in range(scn.n_users):
        lines.append(f"{scn.user_ids[u]},{w[u]:.12g},{r[u]:.12g}")
    _out("\n".join(lines) + "\n", args.output)
    return 0


def cmd_dimension(args) -> int:
    samples = [float(x) for x in args.fmin.split(",")]
    s = dimension_share(args.lam, samples, args.pmax, seed=args.seed)
    print(f"share={s:.10g}")
    return 0


def cmd_sweep(args) -> int:
    grid = [float(x) for x in args.grid.split(",")]
    seeds = list(range(args.seed, args.seed + args.seeds))
    base = ExperimentConfig(
        slices=(), sites=args.sites, epochs=args.epochs,
        dim_epochs=args.dim_epochs, p_max=args.pmax)
    rows = sweep(base, args.family, grid, seeds, jobs=args.jobs,
                 family_kwargs={"users_per_slice": args.users_per_slice,
                                "gamma_bps": args.gamma})
    outdir = Path(args.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    csv_path = outdir / f"sweep_{args.family}.csv"
    csv_path.write_text(rows_to_csv(rows))
    failed = [r for r in rows if "error" in r]
    summary = [
        f"family={args.family} grid={grid} seeds={seeds}",
        f"rows={len(rows)} failed={len(failed)}",
    ]
    summary += [f"  {r['elastic_share_total']}: {r['error']}" for r in failed]
    (outdir / f"sweep_{args.family}_summary.txt").write_text(
        "\n".join(summary) + "\n")
    print(f"wrote {csv_path}")
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="slicegame",
        description="Network-slicing allocation engine, dynamics, and sweeps")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)

    a = sub.add_parser("allocate", help="one-shot allocation at given weights")
    a.add_argument("config")
    a.add_argument("--output", help="write CSV here instead of stdout")
    a.add_argument("--allow-overcommit", action="store_true",
                   help="skip the per-BS guaranteed-share cap")
    a.set_defaults(func=cmd_allocate)

    d = sub.add_parser("dynamics", help="iterate the share policy or best responses")
    d.add_argument("config")
    d.add_argument("--mode", choices=["rr", "sim", "async"], default="rr")
    d.add_argument("--rounds", type=int, default=50)
    d.add_argument("--tol", type=float, default=1e-8)
    d.add_argument("--delta", type=float, default=1e-6,
                   help="weight floor (best-response dynamics)")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--best-response", action="store_true",
                   help="full best responses instead of the share policy")
    d.add_argument("--allow-overcommit", action="store_true")
    d.add_argument("--output", help="write the step-norm trace CSV here")
    d.set_defaults(func=cmd_dynamics)

    so = sub.add_parser("solve-so", help="social-optimum reference solver")
    so.add_argument("config")
    so.add_argument("--delta", type=float, default=0.0)
    so.add_argument("--seed", type=int, default=0)
    so.add_argument("--output", help="write per-user CSV here instead of stdout")
    so.set_defaults(func=cmd_solve_so)

    dim = sub.add_parser("dimension", help="dimension one guaranteed share")
    dim.add_argument("--lam", type=float, required=True,
                     help="mean number of users (Poisson)")
    dim.add_argument("--fmin", required=True,
                     help="comma-separated empirical minimum-fraction samples")
    dim.add_argument("--pmax", type=float, default=0.01)
    dim.add_argument("--seed", type=int, default=0)
    dim.set_defaults(func=cmd_dimension)

    sw = sub.add_parser("sweep", help="run a scheme-comparison sweep")
    sw.add_argument("--family", choices=list(FAMILIES), default="uniform")
    sw.add_argument("--grid", default="0.2,0.4,0.6",
                    help="comma-separated total elastic shares")
    sw.add_argument("--seeds", type=int, default=5, help="number of seeds")
    sw.add_argument("--seed", type=int, default=0, help="first seed")
    sw.add_argument("--sites", type=int, default=7)
    sw.add_argument("--epochs", type=int, default=300)
    sw.add_argument("--dim-epochs", type=int, default=100)
    sw.add_argument("--users-per-slice", type=int, default=40)
    sw.add_argument("--gamma", type=float, default=0.2e6,
                    help="guaranteed minimum rate, bits/s")
    sw.add_argument("--pmax", type=float, default=0.01)
    sw.add_argument("--jobs", type=int, default=1)
    sw.add_argument("--output-dir", default="results")
    sw.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except DOMAIN_ERRORS as exc:
        print(str(exc), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
