"""INI-style configuration files: schema, validation, echo round-trip.

Sections and keys (defaults in parentheses):

  [problem]   grid = n1 n2 n3 (8 8 8); box = L1 L2 L3 (2pi each);
              dealias (0.6666...); t_final (1.0); steps (16);
              viscosity (0.5); alpha (0.25); gamma (0.01); kappa (0.0);
              sparsity = none|j1|j2|j3 (none)
  [bounds]    lower = a1 a2 a3 (-1 -1 -1); upper = b1 b2 b3 (1 1 1)
  [cost]      kind = quadratic_tracking|gradient_tracking (quadratic_tracking);
              weight (1.0); target = zero|two_mode (two_mode);
              target_amplitude (0.05); initial = zero|two_mode|target (zero)
  [solve]     method = prox_grad|fixed_point (prox_grad); max_iters (2000);
              kkt_tol (1e-8); step0 = auto|float (auto); backtrack (0.5);
              sufficient_decrease (0.5); fp_damping (0.5); seed (0)
  [experiment] kappa_grid = comma-separated decreasing floats, or "auto";
              kappa_points (12); kappa_max (1.0); kappa_min (1e-4);
              relative_to_threshold = true|false (false): when true the auto
              grid spans [kappa_min, kappa_max] * M_hat; seed (0); out_dir (out)

Every numeric invariant of the problem types is validated here with a
field-level message; gamma = 0 and non-decreasing kappa grids are rejected.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigError
from .forward import CostKind, ProblemConfig, SparsityKind
from .grids import Grid
from .optimizer import Method, SolveOptions

_DEFAULTS = {
    "problem": {
        "grid": "8 8 8",
        "box": f"{2 * math.pi} {2 * math.pi} {2 * math.pi}",
        "dealias": str(2.0 / 3.0),
        "t_final": "1.0",
        "steps": "16",
        "viscosity": "0.5",
        "alpha": "0.25",
        "gamma": "0.01",
        "kappa": "0.0",
        "sparsity": "none",
    },
    "bounds": {"lower": "-1 -1 -1", "upper": "1 1 1"},
    "cost": {
        "kind": "quadratic_tracking",
        "weight": "1.0",
        "target": "two_mode",
        "target_amplitude": "0.05",
        "initial": "zero",
    },
    "solve": {
        "method": "prox_grad",
        "max_iters": "2000",
        "kkt_tol": "1e-8",
        "step0": "auto",
        "backtrack": "0.5",
        "sufficient_decrease": "0.5",
        "fp_damping": "0.5",
        "seed": "0",
    },
    "experiment": {
        "kappa_grid": "auto",
        "kappa_points": "12",
        "kappa_max": "1.0",
        "kappa_min": "1e-4",
        "relative_to_threshold": "false",
        "seed": "0",
        "out_dir": "out",
    },
}


@dataclass
class ExperimentSettings:
    kappa_grid: np.ndarray | None  # explicit decreasing grid, or None for auto
    kappa_points: int
    kappa_max: float
    kappa_min: float
    relative_to_threshold: bool
    seed: int
    out_dir: Path

    def resolve_grid(self, threshold: float | None = None) -> np.ndarray:
        if self.kappa_grid is not None:
            return self.kappa_grid
        lo, hi = self.kappa_min, self.kappa_max
        if self.relative_to_threshold:
            if threshold is None or threshold <= 0:
                raise ConfigError(
                    "experiment.kappa_grid",
                    "relative grid requested but no positive threshold estimate available",
                )
            lo, hi = lo * threshold, hi * threshold
        return np.geomspace(hi, lo, self.kappa_points)


@dataclass
class LoadedConfig:
    problem: ProblemConfig
    target_recipe: str
    target_amplitude: float
    initial_recipe: str
    solve: SolveOptions
    experiment: ExperimentSettings
    raw: dict = field(default_factory=dict)


def _floats(field_name: str, text: str, count: int) -> tuple:
    parts = text.replace(",", " ").split()
    if len(parts) != count:
        raise ConfigError(field_name, f"expected {count} numbers, got '{text}'")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(field_name, f"not numeric: '{text}'") from exc


def _float(field_name: str, text: str) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise ConfigError(field_name, f"not numeric: '{text}'") from exc


def _int(field_name: str, text: str) -> int:
    try:
        return int(text)
    except ValueError as exc:
        raise ConfigError(field_name, f"not an integer: '{text}'") from exc


def _enum(field_name: str, text: str, enum_cls):
    try:
        return enum_cls(text.strip().lower())
    except ValueError as exc:
        options = ", ".join(e.value for e in enum_cls)
        raise ConfigError(field_name, f"'{text}' is not one of: {options}") from exc


def load_config(path) -> LoadedConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError("config", f"file not found: {path}")
    parser = configparser.ConfigParser()
    parser.read_dict(_DEFAULTS)
    with open(path) as fh:
        parser.read_file(fh, source=str(path))
    return _parse(parser)


def load_config_text(text: str) -> LoadedConfig:
    parser = configparser.ConfigParser()
    parser.read_dict(_DEFAULTS)
    parser.read_string(text)
    return _parse(parser)


def _parse(parser: configparser.ConfigParser) -> LoadedConfig:
    p = parser["problem"]
    dims_f = _floats("problem.grid", p["grid"], 3)
    dims = tuple(int(d) for d in dims_f)
    if any(abs(d - f) > 0 for d, f in zip(dims, dims_f)):
        raise ConfigError("problem.grid", "mode counts must be integers")
    for n in dims:
        if n < 4 or n % 2 != 0:
            raise ConfigError("problem.grid", f"each axis needs >= 4 even modes, got {n}")
    box = _floats("problem.box", p["box"], 3)
    dealias = _float("problem.dealias", p["dealias"])
    if not 0.0 < dealias <= 1.0:
        raise ConfigError("problem.dealias", "dealias fraction must lie in (0, 1]")
    grid = Grid(dims, box, dealias)

    gamma = _float("problem.gamma", p["gamma"])
    if gamma <= 0:
        raise ConfigError(
            "problem.gamma", "gamma = 0 (bang-bang regime) is rejected; gamma must be > 0"
        )
    kappa = _float("problem.kappa", p["kappa"])
    if kappa < 0:
        raise ConfigError("problem.kappa", "kappa must be >= 0")
    viscosity = _float("problem.viscosity", p["viscosity"])
    if viscosity <= 0:
        raise ConfigError("problem.viscosity", "viscosity must be positive")
    alpha = _float("problem.alpha", p["alpha"])
    if alpha <= 0:
        raise ConfigError("problem.alpha", "filter scale alpha must be positive")
    t_final = _float("problem.t_final", p["t_final"])
    if t_final <= 0:
        raise ConfigError("problem.t_final", "final time must be positive")
    steps = _int("problem.steps", p["steps"])
    if steps < 2:
        raise ConfigError("problem.steps", "need at least 2 time steps")
    sparsity = _enum("problem.sparsity", p["sparsity"], SparsityKind)

    b = parser["bounds"]
    lower = _floats("bounds.lower", b["lower"], 3)
    upper = _floats("bounds.upper", b["upper"], 3)
    for i, (a_i, b_i) in enumerate(zip(lower, upper)):
        if not (a_i <= 0.0 < b_i):
            raise ConfigError(
                f"bounds[{i}]",
                f"admissible set requires a_i <= 0 < b_i, got ({a_i}, {b_i})",
            )

    c = parser["cost"]
    cost_kind = _enum("cost.kind", c["kind"], CostKind)
    weight = _float("cost.weight", c["weight"])
    if weight < 0:
        raise ConfigError("cost.weight", "tracking weight must be >= 0")
    target_recipe = c["target"].strip().lower()
    if target_recipe not in ("zero", "two_mode"):
        raise ConfigError("cost.target", f"unknown target recipe '{target_recipe}'")
    target_amplitude = _float("cost.target_amplitude", c["target_amplitude"])
    initial_recipe = c["initial"].strip().lower()
    if initial_recipe not in ("zero", "two_mode", "target"):
        raise ConfigError("cost.initial", f"unknown initial recipe '{initial_recipe}'")

    cfg = ProblemConfig(
        grid=grid,
        t_final=t_final,
        steps=steps,
        viscosity=viscosity,
        alpha=alpha,
        gamma=gamma,
        kappa=kappa,
        bounds_lo=lower,
        bounds_hi=upper,
        sparsity=sparsity,
        cost_kind=cost_kind,
        cost_weight=weight,
    )

    s = parser["solve"]
    step0_text = s["step0"].strip().lower()
    step0 = None if step0_text == "auto" else _float("solve.step0", step0_text)
    opts = SolveOptions(
        max_iters=_int("solve.max_iters", s["max_iters"]),
        step0=step0,
        backtrack=_float("solve.backtrack", s["backtrack"]),
        sufficient_decrease=_float("solve.sufficient_decrease", s["sufficient_decrease"]),
        kkt_tol=_float("solve.kkt_tol", s["kkt_tol"]),
        method=_enum("solve.method", s["method"], Method),
        fp_damping=_float("solve.fp_damping", s["fp_damping"]),
        seed=_int("solve.seed", s["seed"]),
    )
    if opts.kkt_tol <= 0:
        raise ConfigError("solve.kkt_tol", "tolerance must be positive")
    if opts.method is Method.PROX_GRAD and sparsity is SparsityKind.J2 and kappa > 0:
        raise ConfigError(
            "solve.method", "prox_grad is unavailable for the j2 kind; use fixed_point"
        )

    e = parser["experiment"]
    grid_text = e["kappa_grid"].strip().lower()
    if grid_text == "auto":
        kappa_grid = None
    else:
        values = [
            _float("experiment.kappa_grid", tok)
            for tok in grid_text.replace(",", " ").split()
        ]
        if any(v <= 0 for v in values):
            raise ConfigError("experiment.kappa_grid", "grid values must be positive")
        if any(b >= a for a, b in zip(values, values[1:])):
            raise ConfigError(
                "experiment.kappa_grid", "grid must be strictly decreasing toward 0"
            )
        kappa_grid = np.asarray(values)
    experiment = ExperimentSettings(
        kappa_grid=kappa_grid,
        kappa_points=_int("experiment.kappa_points", e["kappa_points"]),
        kappa_max=_float("experiment.kappa_max", e["kappa_max"]),
        kappa_min=_float("experiment.kappa_min", e["kappa_min"]),
        relative_to_threshold=e["relative_to_threshold"].strip().lower()
        in ("true", "1", "yes"),
        seed=_int("experiment.seed", e["seed"]),
        out_dir=Path(e["out_dir"]),
    )
    if experiment.kappa_points < 2:
        raise ConfigError("experiment.kappa_points", "need at least 2 grid points")
    if experiment.kappa_min >= experiment.kappa_max:
        raise ConfigError("experiment.kappa_min", "kappa_min must be < kappa_max")

    raw = {sec: dict(parser[sec]) for sec in parser.sections()}
    return LoadedConfig(
        problem=cfg,
        target_recipe=target_recipe,
        target_amplitude=target_amplitude,
        initial_recipe=initial_recipe,
        solve=opts,
        experiment=experiment,
        raw=raw,
    )


def dump_config(loaded: LoadedConfig) -> str:
    """Echo a loaded configuration; load(dump(load(p))) == load(p)."""
    cfg = loaded.problem
    opts = loaded.solve
    exp = loaded.experiment
    lines = ["[problem]"]
    lines.append(f"grid = {' '.join(str(n) for n in cfg.grid.dims)}")
    lines.append(f"box = {' '.join(repr(b) for b in cfg.grid.box)}")
    lines.append(f"dealias = {cfg.grid.dealias!r}")
    lines.append(f"t_final = {cfg.t_final!r}")
    lines.append(f"steps = {cfg.steps}")
    lines.append(f"viscosity = {cfg.viscosity!r}")
    lines.append(f"alpha = {cfg.alpha!r}")
    lines.append(f"gamma = {cfg.gamma!r}")
    lines.append(f"kappa = {cfg.kappa!r}")
    lines.append(f"sparsity = {cfg.sparsity.value}")
    lines.append("")
    lines.append("[bounds]")
    lines.append(f"lower = {' '.join(repr(a) for a in cfg.bounds_lo)}")
    lines.append(f"upper = {' '.join(repr(b) for b in cfg.bounds_hi)}")
    lines.append("")
    lines.append("[cost]")
    lines.append(f"kind = {cfg.cost_kind.value}")
    lines.append(f"weight = {cfg.cost_weight!r}")
    lines.append(f"target = {loaded.target_recipe}")
    lines.append(f"target_amplitude = {loaded.target_amplitude!r}")
    lines.append(f"initial = {loaded.initial_recipe}")
    lines.append("")
    lines.append("[solve]")
    lines.append(f"method = {opts.method.value}")
    lines.append(f"max_iters = {opts.max_iters}")
    lines.append(f"kkt_tol = {opts.kkt_tol!r}")
    lines.append(f"step0 = {'auto' if opts.step0 is None else repr(opts.step0)}")
    lines.append(f"backtrack = {opts.backtrack!r}")
    lines.append(f"sufficient_decrease = {opts.sufficient_decrease!r}")
    lines.append(f"fp_damping = {opts.fp_damping!r}")
    lines.append(f"seed = {opts.seed}")
    lines.append("")
    lines.append("[experiment]")
    if exp.kappa_grid is None:
        lines.append("kappa_grid = auto")
    else:
        lines.append("kappa_grid = " + " ".join(repr(k) for k in exp.kappa_grid))
    lines.append(f"kappa_points = {exp.kappa_points}")
    lines.append(f"kappa_max = {exp.kappa_max!r}")
    lines.append(f"kappa_min = {exp.kappa_min!r}")
    lines.append(f"relative_to_threshold = {'true' if exp.relative_to_threshold else 'false'}")
    lines.append(f"seed = {exp.seed}")
    lines.append(f"out_dir = {exp.out_dir}")
    lines.append("")
    return "\n".join(lines)


def materialize(loaded: LoadedConfig):
    """Build the runtime Problem from a loaded configuration."""
    from .benchmark import make_problem

    return make_problem(
        loaded.problem,
        target_recipe=loaded.target_recipe,
        target_amplitude=loaded.target_amplitude,
        initial_recipe=loaded.initial_recipe,
    )
