"""Command-line entry point.

Subcommands: forward, grad-check, solve, kappa-sweep, convergence,
support-curve, second-order.  Each takes --config (INI file, see config_io),
optional --seed and --out overrides; VCHE_NUM_THREADS sets the worker count
for kappa-grid experiments.  The exit code is 0 only if every enabled
assertion of the subcommand passed.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config_io import load_config, materialize
from .experiments import (
    ExperimentSpec,
    run_convergence_study,
    run_kappa_sweep,
    run_support_curve,
    solve_reference,
    write_csv,
)
from .exceptions import VCHEError
from .fields import write_snapshot
from .forward import ControlField, SparsityKind, solve_forward, trajectory_rows
from .optimizer import (
    sample_critical_cone,
    second_order_probe,
    growth_check,
    solve,
)
from .sensitivity import evaluate_smooth, gradient_check_rows
from .sparsity import estimate_threshold_M


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except VCHEError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="vche",
        description="Sparse optimal control of the 3D viscous Camassa-Holm flow",
    )
    parser.add_argument("--version", action="version", version=f"vche {__version__}")
    sub = parser.add_subparsers(required=True)

    def common(p):
        p.add_argument("--config", required=True, help="INI configuration file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output directory")

    p = sub.add_parser("forward", help="time-march the state and export the trajectory")
    common(p)
    p.add_argument("--snapshot-every", type=int, default=0, metavar="K",
                   help="write a binary field snapshot every K steps (0: none)")
    p.set_defaults(handler=cmd_forward)

    p = sub.add_parser("grad-check", help="finite-difference check of the reduced gradient")
    common(p)
    p.add_argument("--directions", type=int, default=5)
    p.set_defaults(handler=cmd_grad_check)

    p = sub.add_parser("solve", help="solve the sparse control problem")
    common(p)
    p.set_defaults(handler=cmd_solve)

    p = sub.add_parser("kappa-sweep", help="stability-rate fit over the kappa grid")
    common(p)
    p.set_defaults(handler=cmd_kappa_sweep)

    p = sub.add_parser("convergence", help="kappa -> 0 convergence study")
    common(p)
    p.set_defaults(handler=cmd_convergence)

    p = sub.add_parser("support-curve", help="support statistics vs kappa")
    common(p)
    p.set_defaults(handler=cmd_support_curve)

    p = sub.add_parser("second-order", help="critical-cone sampling and curvature probes")
    common(p)
    p.add_argument("--directions", type=int, default=20)
    p.set_defaults(handler=cmd_second_order)
    return parser


def _setup(args):
    loaded = load_config(args.config)
    if args.seed is not None:
        loaded.solve.seed = args.seed
        loaded.experiment.seed = args.seed
    out_dir = Path(args.out) if args.out is not None else loaded.experiment.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    problem = materialize(loaded)
    return loaded, problem, out_dir


def _experiment_spec(loaded, problem, out_dir) -> ExperimentSpec:
    threshold = None
    if loaded.experiment.kappa_grid is None and loaded.experiment.relative_to_threshold:
        threshold = estimate_threshold_M(problem.y0, problem.cost, problem.cfg)
    grid = loaded.experiment.resolve_grid(threshold)
    return ExperimentSpec(
        problem=problem,
        solve_opts=loaded.solve,
        kappa_grid=grid,
        out_dir=out_dir,
        seed=loaded.experiment.seed,
    )


def cmd_forward(args) -> int:
    loaded, problem, out_dir = _setup(args)
    u = ControlField.zeros(problem.cfg)
    traj = solve_forward(u, problem.y0, problem.cfg)
    rows = trajectory_rows(traj)
    write_csv(out_dir / "trajectory.csv", rows)
    if args.snapshot_every > 0:
        for m, y in enumerate(traj.states):
            if m % args.snapshot_every == 0:
                write_snapshot(y, out_dir / f"state_{m:04d}.field")
    div = max(y.divergence_violation() for y in traj.states)
    scale = max(max(y.max_coeff() for y in traj.states), 1e-300)
    ok = div <= 1e-11 * scale
    print(f"forward: {traj.steps} steps, max divergence {div:.3e} ({'ok' if ok else 'FAIL'})")
    print(f"wrote {out_dir / 'trajectory.csv'}")
    return 0 if ok else 1


def cmd_grad_check(args) -> int:
    loaded, problem, out_dir = _setup(args)
    rng = np.random.default_rng(loaded.solve.seed)
    rows, worst = gradient_check_rows(
        problem, directions=args.directions, rng=rng
    )
    write_csv(out_dir / "grad_check.csv", rows)
    ok = worst <= 1e-6
    print(f"grad-check: worst min-over-h relative error {worst:.3e} ({'ok' if ok else 'FAIL'})")
    print(f"wrote {out_dir / 'grad_check.csv'}")
    return 0 if ok else 1


def cmd_solve(args) -> int:
    loaded, problem, out_dir = _setup(args)
    u, report = solve(problem, loaded.solve)
    ev = evaluate_smooth(u, problem.y0, problem.cost, problem.cfg)
    np.save(out_dir / "control.npy", u.values)
    np.save(out_dir / "adjoint.npy", ev.lambda_phys)
    write_snapshot(ev.trajectory.states[-1], out_dir / "final_state.field")
    text = format_report(report)
    (out_dir / "report.txt").write_text(text)
    print(text)
    print(f"wrote {out_dir / 'report.txt'}, control.npy, adjoint.npy, final_state.field")
    return 0 if report.converged else 1


def cmd_kappa_sweep(args) -> int:
    loaded, problem, out_dir = _setup(args)
    spec = _experiment_spec(loaded, problem, out_dir)
    result = run_kappa_sweep(spec)
    fit = result.fit
    print(
        f"kappa-sweep: slope={fit.slope:.4f} r2={fit.r_squared:.4f} "
        f"n={fit.n_used} low_confidence={fit.low_confidence}"
    )
    kind = problem.cfg.sparsity
    ok = not fit.degenerate and fit.r_squared >= 0.95 and not fit.low_confidence
    if kind in (SparsityKind.J1, SparsityKind.J3):
        ok = ok and 0.9 <= fit.slope <= 1.1
    elif kind is SparsityKind.J2:
        ok = ok and fit.slope >= 0.6
    print(f"wrote {out_dir / 'kappa_sweep.csv'} ({'ok' if ok else 'FAIL'})")
    return 0 if ok else 1


def cmd_convergence(args) -> int:
    loaded, problem, out_dir = _setup(args)
    spec = _experiment_spec(loaded, problem, out_dir)
    result = run_convergence_study(spec)
    ok = result.final_distance_ok and result.gap_monotone_ok
    print(
        f"convergence: final_distance_ok={result.final_distance_ok} "
        f"gap_monotone_ok={result.gap_monotone_ok}"
    )
    print(f"wrote {out_dir / 'convergence.csv'} ({'ok' if ok else 'FAIL'})")
    return 0 if ok else 1


def cmd_support_curve(args) -> int:
    loaded, problem, out_dir = _setup(args)
    spec = _experiment_spec(loaded, problem, out_dir)
    result = run_support_curve(spec)
    ok = result.zero_above_threshold_ok
    print(
        f"support-curve: threshold_estimate={result.threshold_estimate:.6e} "
        f"zero_above_threshold={ok}"
    )
    print(f"wrote {out_dir / 'support_curve.csv'} ({'ok' if ok else 'FAIL'})")
    return 0 if ok else 1


def cmd_second_order(args) -> int:
    loaded, problem, out_dir = _setup(args)
    u, report = solve(problem, loaded.solve)
    if not report.converged:
        print("second-order: solve did not converge", file=sys.stderr)
        return 1
    ev = evaluate_smooth(u, problem.y0, problem.cost, problem.cfg)
    rng = np.random.default_rng(loaded.experiment.seed)
    grad_scale = float(
        np.sqrt(u.dt * u.grid.cell_volume * np.sum(ev.gradient**2))
    )
    tau = 1e-3 * max(grad_scale, 1e-12)
    trunc_k = 8.0
    dirs = sample_critical_cone(
        problem, u, ev, count=4 * args.directions, tau=tau, trunc_k=trunc_k, rng=rng
    )[: args.directions]
    probe = second_order_probe(problem, u, dirs, ev)
    rows = [
        {
            "direction": i,
            "norm": d.norm,
            "cone_value": d.cone_value,
            "quadratic_form": probe["values"][i],
            "ratio": probe["ratios"][i],
        }
        for i, d in enumerate(dirs)
    ]
    write_csv(out_dir / "second_order.csv", rows)
    growth_ok = True
    if dirs and np.isfinite(probe["mu_hat"]):
        t0 = 1.0 / trunc_k**2
        t_grid = np.geomspace(t0 / 10.0, t0, 5)
        for d in dirs:
            res = growth_check(problem, u, d, probe["mu_hat"] / 2.0, t_grid)
            growth_ok = growth_ok and res["ok"]
    ok = bool(dirs) and probe["snc_ok"] and growth_ok
    print(
        f"second-order: {len(dirs)} directions, mu_hat={probe['mu_hat']:.6e}, "
        f"snc_ok={probe['snc_ok']}, growth_ok={growth_ok}"
    )
    print(f"wrote {out_dir / 'second_order.csv'} ({'ok' if ok else 'FAIL'})")
    return 0 if ok else 1


def format_report(report) -> str:
    lines = [
        "optimality report",
        f"  method              : {report.method}",
        f"  converged           : {report.converged}",
        f"  iterations          : {report.iterations}",
        f"  objective           : {report.objective!r}",
        f"    tracking          : {report.objective_tracking!r}",
        f"    tikhonov          : {report.objective_tikhonov!r}",
        f"    sparsity (kappa*j): {report.objective_sparsity!r}",
        f"  kkt residual        : {report.kkt_residual!r}",
        f"  support fraction    : {report.support['fraction']!r}",
        f"  group support frac  : {report.support['group_fraction']!r}",
        f"  eta max violation   : {report.eta_violations['max_violation']!r}",
    ]
    if report.second_order is not None:
        lines.append(f"  mu_hat              : {report.second_order['mu_hat']!r}")
    return "\n".join(lines) + "\n"


if __name__ == "__main__":
    sys.exit(main())
