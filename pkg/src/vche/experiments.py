"""Experiment drivers: kappa -> 0 convergence, stability-rate fits, support curves.

The reference solution u0 is the computed minimizer of the non-sparse
problem (kappa = 0) on the same discretization; the stability and
convergence checks compare against exactly this object.  Sweeps walk the
kappa grid from large to small, warm-starting each solve from the previous
point (or from u0 when solved in a parallel worker pool).
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .forward import ControlField, control_norm
from .optimizer import OptimalityReport, Problem, SolveOptions, solve
from .sensitivity import evaluate_smooth
from .sparsity import estimate_threshold_M

THREADS_ENV = "VCHE_NUM_THREADS"


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


@dataclass
class ExperimentSpec:
    problem: Problem  # base instance; kappa is overridden per grid point
    solve_opts: SolveOptions
    kappa_grid: np.ndarray  # strictly decreasing toward 0
    out_dir: Path | None = None
    seed: int = 0

    def __post_init__(self):
        grid = np.asarray(self.kappa_grid, dtype=float)
        if grid.ndim != 1 or grid.size < 1:
            raise ValueError("kappa grid must be a nonempty 1-d array")
        if np.any(grid < 0):
            raise ValueError("kappa grid values must be >= 0")
        if np.any(np.diff(grid) >= 0):
            if grid.size > 1:
                raise ValueError("kappa grid must be strictly decreasing toward 0")
        self.kappa_grid = grid


@dataclass
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    kappas: list
    distances: list
    n_used: int
    low_confidence: bool
    degenerate: bool = False


@dataclass
class SweepPoint:
    kappa: float
    distance: float
    objective_smooth: float
    report: OptimalityReport
    control: ControlField = field(repr=False, default=None)


def _problem_at(problem: Problem, kappa: float) -> Problem:
    return Problem(problem.cfg.with_kappa(kappa), problem.cost, problem.y0)


def solve_reference(spec: ExperimentSpec) -> tuple[ControlField, OptimalityReport]:
    """Minimizer of the non-sparse problem (P), i.e. kappa = 0."""
    return solve(_problem_at(spec.problem, 0.0), spec.solve_opts)


def _solve_point_warm_u0(args):
    problem, opts, kappa, u0_values = args
    pk = _problem_at(problem, kappa)
    warm = pk.zero_control().with_values(np.asarray(u0_values))
    u, report = solve(pk, opts, warm_start=warm)
    return kappa, u, report


def run_sweep_points(
    spec: ExperimentSpec, u0: ControlField
) -> tuple[list[SweepPoint], ControlField]:
    """Solve (P_kappa) over the grid, largest kappa first.

    Sequential runs warm-start each point from the previous one; a worker
    pool (VCHE_NUM_THREADS > 1) warm-starts every point from the reference
    u0 so aggregation is order-independent.
    """
    points = []
    workers = worker_count()
    if workers > 1:
        tasks = [
            (spec.problem, spec.solve_opts, float(k), u0.values) for k in spec.kappa_grid
        ]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            solved = {k: (u, r) for k, u, r in pool.map(_solve_point_warm_u0, tasks)}
        ordered = [(float(k), *solved[float(k)]) for k in spec.kappa_grid]
    else:
        ordered = []
        warm = u0.copy()
        for k in spec.kappa_grid:
            pk = _problem_at(spec.problem, float(k))
            u, report = solve(pk, spec.solve_opts, warm_start=warm)
            warm = u.copy()
            ordered.append((float(k), u, report))
    for k, u, report in ordered:
        diff = u.values - u0.values
        dist = float(np.sqrt(u.dt * u.grid.cell_volume * np.sum(diff * diff)))
        ev = evaluate_smooth(u, spec.problem.y0, spec.problem.cost, spec.problem.cfg)
        points.append(
            SweepPoint(
                kappa=k,
                distance=dist,
                objective_smooth=ev.cost,
                report=report,
                control=u,
            )
        )
    return points, u0


def fit_rate(points: list[SweepPoint]) -> RateFit:
    """Log-log least squares of distance vs kappa over converged points."""
    usable = [
        p for p in points if p.report.converged and p.distance > 0 and p.kappa > 0
    ]
    kappas = [p.kappa for p in usable]
    dists = [p.distance for p in usable]
    if len(usable) < 2 or max(dists, default=0.0) <= 0:
        return RateFit(
            slope=float("nan"),
            intercept=float("nan"),
            r_squared=float("nan"),
            kappas=kappas,
            distances=dists,
            n_used=len(usable),
            low_confidence=True,
            degenerate=True,
        )
    x = np.log(kappas)
    y = np.log(dists)
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return RateFit(
        slope=float(slope),
        intercept=float(intercept),
        r_squared=r2,
        kappas=kappas,
        distances=dists,
        n_used=len(usable),
        low_confidence=len(usable) < 6,
    )


# -- drivers -----------------------------------------------------------------------


@dataclass
class SweepResult:
    fit: RateFit
    points: list
    reference_norm: float
    rows: list
    reference_control: ControlField = field(repr=False, default=None)


def run_kappa_sweep(spec: ExperimentSpec, u0: ControlField | None = None) -> SweepResult:
    if u0 is None:
        u0, ref_report = solve_reference(spec)
        if not ref_report.converged:
            raise RuntimeError("reference (P) solve did not converge")
    points, _ = run_sweep_points(spec, u0)
    fit = fit_rate(points)
    rows = [
        {
            "kappa": p.kappa,
            "distance": p.distance,
            "objective_smooth": p.objective_smooth,
            "converged": int(p.report.converged),
            "iterations": p.report.iterations,
            "kkt_residual": p.report.kkt_residual,
            "support_fraction": p.report.support["fraction"],
        }
        for p in points
    ]
    result = SweepResult(
        fit=fit,
        points=points,
        reference_norm=control_norm(u0),
        rows=rows,
        reference_control=u0,
    )
    if spec.out_dir is not None:
        write_csv(spec.out_dir / "kappa_sweep.csv", rows)
    return result


@dataclass
class ConvergenceResult:
    rows: list
    final_distance_ok: bool
    gap_monotone_ok: bool
    reference_norm: float
    reference_objective: float


def run_convergence_study(
    spec: ExperimentSpec, sweep: SweepResult | None = None
) -> ConvergenceResult:
    """Table of (kappa, ||u_k - u0||, J(u_k) - J(u0), support fraction).

    Verifies the distance at the smallest kappa is <= 1e-3 * ||u0|| and that
    the smooth-objective gap is non-increasing along the decreasing grid,
    within 1e-8 slack (the gap itself is bounded by kappa * j(u0)).
    """
    if sweep is None:
        sweep = run_kappa_sweep(spec)
    u0 = sweep.reference_control
    ev0 = evaluate_smooth(u0, spec.problem.y0, spec.problem.cost, spec.problem.cfg)
    rows = []
    gaps = []
    for p in sweep.points:
        gap = p.objective_smooth - ev0.cost
        gaps.append(gap)
        rows.append(
            {
                "kappa": p.kappa,
                "distance": p.distance,
                "objective_gap": gap,
                "support_fraction": p.report.support["fraction"],
                "converged": int(p.report.converged),
            }
        )
    scale = max(sweep.reference_norm, 1e-300)
    final_ok = sweep.points[-1].distance <= 1e-3 * scale if sweep.points else False
    gap_ok = all(g2 <= g1 + 1e-8 for g1, g2 in zip(gaps, gaps[1:]))
    if spec.out_dir is not None:
        write_csv(spec.out_dir / "convergence.csv", rows)
    return ConvergenceResult(
        rows=rows,
        final_distance_ok=final_ok,
        gap_monotone_ok=gap_ok,
        reference_norm=sweep.reference_norm,
        reference_objective=ev0.cost,
    )


@dataclass
class SupportCurveResult:
    rows: list
    threshold_estimate: float
    zero_above_threshold_ok: bool


def run_support_curve(spec: ExperimentSpec, u0: ControlField | None = None) -> SupportCurveResult:
    """Support statistics per kappa with the threshold marker M_hat overlaid.

    Asserts the converged control has empty support for every grid point with
    kappa >= 1.5 * M_hat.
    """
    problem = spec.problem
    m_hat = estimate_threshold_M(problem.y0, problem.cost, problem.cfg)
    if u0 is None:
        u0, _ = solve_reference(spec)
    points, _ = run_sweep_points(spec, u0)
    rows = []
    ok = True
    for p in points:
        stats = p.report.support
        per_time = stats["per_time_fraction"]
        rows.append(
            {
                "kappa": p.kappa,
                "support_fraction": stats["fraction"],
                "group_fraction": stats["group_fraction"],
                "per_time_min": float(np.min(per_time)),
                "per_time_max": float(np.max(per_time)),
                "above_threshold": int(p.kappa >= 1.5 * m_hat),
                "threshold_estimate": m_hat,
            }
        )
        if p.kappa >= 1.5 * m_hat and stats["fraction"] > 0:
            ok = False
    if spec.out_dir is not None:
        write_csv(spec.out_dir / "support_curve.csv", rows)
    return SupportCurveResult(rows=rows, threshold_estimate=m_hat, zero_above_threshold_ok=ok)


# -- output -------------------------------------------------------------------------


def write_csv(path, rows: list) -> None:
    """Serialize dict rows with repr-exact floats (bit-reproducible output)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        path.write_text("")
        return
    fieldnames = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fieldnames)
        for row in rows:
            writer.writerow([_fmt(row[k]) for k in fieldnames])


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return value
