"""Command-line driver: ``lscheme-homog <subcommand> [--config FILE] [--key value ...]``.

Configuration files hold ``key = value`` lines with ``#`` comments.  Flags
override the file, and the ``LSCHEME_HOMOG_OUTPUT_DIR`` environment variable
overrides the output directory given in the file.  Exit codes: 0 success,
1 numerical failure (the failing stage is named), 2 configuration error.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import dataclasses
import math
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import experiments as ex
from . import fem
from .fem import FeField
from .macro import AlphaCase, homogenized_tensor, run_macro_lscheme, solve_cell_problems
from .mesh import PerforationSpec, RefinementTooCoarse, generate_cell, generate_perforated, generate_square, write_mesh
from .micro import MicroConfig, run_lscheme, solve_newton
from .reaction import GammaSchedule, ReactionSpec

OUTPUT_ENV = "LSCHEME_HOMOG_OUTPUT_DIR"
SUBCOMMANDS = ("cell", "micro", "newton", "macro", "table1", "table2", "contraction", "convergence")


class ConfigError(ValueError):
    """Invalid configuration; maps to exit code 2."""


class StageError(RuntimeError):
    """Numerical failure inside a named stage; maps to exit code 1."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage


@dataclass
class RunConfig:
    # geometry and meshes
    epsilon: float = 0.25
    hole_radius: float = 0.4
    n_per_cell: int = 16
    cell_n: int = 128
    macro_n: int = 128
    # equation
    alpha: float = 0.0
    eta: float = 0.4
    p: float = 2.0
    delta0: float = 1.0
    delta1: float = 1.0
    source: float = 1.0
    schedule: str = "geometric"
    schedule_constant: float = 1.0
    # iterations
    k_max: int = 30
    stop_tol: float = 1e-8
    solver_tol: float = 1e-12
    newton_tol: float = 1e-10
    newton_max: int = 50
    # studies
    table1_epsilons: tuple = (0.5, 0.25, 1.0 / 6.0, 0.1)
    table1_k: int = 2
    table2_ks: tuple = (1, 2, 3, 4)
    rate_epsilons: tuple = (0.5, 0.25, 0.1)
    output_dir: str = "output"

    def reaction(self) -> ReactionSpec:
        return ReactionSpec(p=self.p, delta0=self.delta0, delta1=self.delta1)

    def gamma_schedule(self) -> GammaSchedule:
        if self.schedule == "geometric":
            return GammaSchedule.geometric(self.p)
        return GammaSchedule.harmonic(self.schedule_constant)

    def micro(self, epsilon=None) -> MicroConfig:
        return MicroConfig(
            epsilon=self.epsilon if epsilon is None else epsilon,
            alpha=self.alpha,
            eta=self.eta,
            reaction=self.reaction(),
            schedule=self.gamma_schedule(),
            source=self.source,
            k_max=self.k_max,
            stop_tol=self.stop_tol,
            solver_tol=self.solver_tol,
        )

    def setup(self) -> ex.StudySetup:
        return ex.StudySetup(self.hole_radius, self.n_per_cell, self.cell_n, self.macro_n, self.micro(), self.newton_tol)

    def perforation(self, epsilon=None) -> PerforationSpec:
        return PerforationSpec(self.epsilon if epsilon is None else epsilon, self.hole_radius)


_TUPLE_TYPES = {"table1_epsilons": float, "table2_ks": int, "rate_epsilons": float}


def _field_types():
    defaults = RunConfig()
    return {f.name: type(getattr(defaults, f.name)) for f in dataclasses.fields(RunConfig)}


def _convert(key, text):
    kind = _field_types()[key]
    try:
        if key in _TUPLE_TYPES:
            items = [s for s in text.replace(",", " ").split() if s]
            if not items:
                raise ValueError("empty list")
            return tuple(_TUPLE_TYPES[key](s) for s in items)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return str(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse value {text!r} ({exc})") from None


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; returns raw strings keyed by name."""
    known = _field_types()
    values = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise ConfigError(f"{path}:{lineno}: unknown key '{key}'")
        values[key] = value
    return values


def validate(cfg: RunConfig) -> RunConfig:
    def check(key, ok, message):
        if not ok:
            raise ConfigError(f"{key}: {message} (got {getattr(cfg, key)!r})")

    try:
        cfg.perforation()
    except ValueError as exc:
        key = "hole_radius" if "radius" in str(exc) else "epsilon"
        raise ConfigError(f"{key}: {exc}") from None
    for eps in cfg.table1_epsilons + cfg.rate_epsilons:
        try:
            cfg.perforation(eps)
        except ValueError as exc:
            raise ConfigError(f"study epsilons: {exc}") from None
    check("n_per_cell", cfg.n_per_cell >= 8, "must be at least 8")
    check("cell_n", cfg.cell_n >= 8, "must be at least 8")
    check("macro_n", cfg.macro_n >= 1, "must be at least 1")
    check("alpha", cfg.alpha >= 0, "must be nonnegative")
    check("eta", cfg.eta > 0, "must be positive")
    check("p", cfg.p > 1, "must exceed 1")
    check("delta0", cfg.delta0 > 0, "must be positive")
    check("delta1", cfg.delta1 > 0, "must be positive")
    check("schedule", cfg.schedule in ("geometric", "harmonic"), "must be 'geometric' or 'harmonic'")
    check("schedule_constant", cfg.schedule_constant > 0, "must be positive")
    check("k_max", cfg.k_max >= 1, "must be at least 1")
    check("stop_tol", cfg.stop_tol >= 0, "must be nonnegative")
    check("solver_tol", 0 < cfg.solver_tol < 1, "must lie in (0, 1)")
    check("newton_tol", 0 < cfg.newton_tol < 1, "must lie in (0, 1)")
    check("newton_max", cfg.newton_max >= 1, "must be at least 1")
    check("table1_k", cfg.table1_k >= 1, "must be at least 1")
    check("table2_ks", all(k >= 1 for k in cfg.table2_ks), "entries must be at least 1")
    check("source", math.isfinite(cfg.source), "must be finite")
    return cfg


def parse_config(path=None, overrides=None, environ=None) -> RunConfig:
    """File values, then environment (output directory), then ``overrides``."""
    environ = os.environ if environ is None else environ
    raw = read_config_file(path) if path else {}
    if environ.get(OUTPUT_ENV):
        raw["output_dir"] = environ[OUTPUT_ENV]
    known = _field_types()
    for key, value in (overrides or {}).items():
        key = key.replace("-", "_")
        if key not in known:
            raise ConfigError(f"unknown key '{key}'")
        raw[key] = value
    values = {k: _convert(k, v) if isinstance(v, str) else v for k, v in raw.items()}
    return validate(RunConfig(**values))


def format_config(cfg: RunConfig) -> list:
    out = []
    for f in dataclasses.fields(RunConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            text = ", ".join(repr(v) for v in value)
        else:
            text = repr(value) if not isinstance(value, str) else value
        out.append(f"{f.name} = {text}")
    return out


# ---------------------------------------------------------------- outputs


class Output:
    """Collects written files and writes the manifest last."""

    def __init__(self, cfg: RunConfig, command: str):
        self.dir = Path(cfg.output_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.cfg = cfg
        self.command = command
        self.files = []

    def path(self, name) -> Path:
        self.files.append(name)
        return self.dir / name

    def field(self, name, fld: FeField):
        write_field_csv(self.path(f"{name}.csv"), fld)
        write_mesh(fld.mesh, self.path(f"{name}_mesh.txt"))

    def rows(self, name, header, rows):
        with open(self.path(name), "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([ex._fmt(v) for v in row])

    def manifest(self):
        lines = [
            "# lscheme-homog run manifest",
            f"# subcommand: {self.command}",
            "# deterministic: no random numbers are used; rerunning with this file",
            f"# (lscheme-homog {self.command} --config manifest.txt) reproduces the outputs",
            "# outputs: " + ", ".join(self.files),
        ]
        lines += format_config(self.cfg)
        (self.dir / "manifest.txt").write_text("\n".join(lines) + "\n")


def write_field_csv(path, fld: FeField):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("x", "y", "value"))
        for (x, y), v in zip(fld.mesh.nodes.tolist(), fld.values.tolist()):
            writer.writerow((repr(x), repr(y), repr(v)))


def _trace_rows(trace):
    for r in trace.records:
        yield (r.k, r.l2_diff, r.grad_diff, r.rel_diff, math.nan if r.ratio is None else r.ratio)


_TRACE_HEADER = ("k", "l2_diff", "grad_diff", "rel_diff", "ratio")


@contextlib.contextmanager
def stage(name):
    try:
        yield
    except (fem.NonConvergenceError, fem.EllipticityError, fem.OutOfDomainError, RefinementTooCoarse,
            FloatingPointError, np.linalg.LinAlgError) as exc:
        raise StageError(name, exc) from exc


# ---------------------------------------------------------------- commands


def _tensor(cfg):
    with stage("cell mesh"):
        cell = generate_cell(cfg.cell_n, cfg.hole_radius)
    with stage("cell problems"):
        cells = solve_cell_problems(cell, cfg.micro().coefficient)
        return cells, homogenized_tensor(cells, cfg.micro().coefficient)


def _macro_config(cfg, tensor, **kw):
    return dataclasses.replace(cfg.setup().macro_config(tensor), **kw)


def cmd_cell(cfg, out):
    cells, tensor = _tensor(cfg)
    out.rows("a0.csv", ("col1", "col2"), tensor.a0.tolist())
    out.field("chi1", cells.chi[0])
    out.field("chi2", cells.chi[1])
    a = tensor.a0
    print(f"A0 = [[{a[0, 0]:.6f}, {a[0, 1]:.3e}], [{a[1, 0]:.3e}, {a[1, 1]:.6f}]]")
    print(f"porosity = {tensor.porosity:.6f}")


def _perforated(cfg):
    with stage("perforated mesh"):
        return generate_perforated(cfg.n_per_cell, cfg.perforation())


def cmd_micro(cfg, out):
    mesh = _perforated(cfg)
    with stage("micro L-scheme"):
        u, trace = run_lscheme(mesh, cfg.micro(), keep_iterates=False)
    out.field("micro_u", u)
    out.rows("micro_trace.csv", _TRACE_HEADER, _trace_rows(trace))
    print(f"L-scheme: {trace.iterations} iterations, converged={trace.converged}, "
          f"fitted ratio {trace.fitted_ratio():.4f}, b={trace.contraction_factor:.4f}, "
          f"omega_bar={trace.omega_bar:.4f}")


def cmd_newton(cfg, out):
    mesh = _perforated(cfg)
    with stage("newton"):
        u, info = solve_newton(mesh, cfg.micro(), tol=cfg.newton_tol, max_newton=cfg.newton_max, return_info=True)
    out.field("newton_u", u)
    out.rows("newton_residuals.csv", ("iteration", "relative_residual"), enumerate(info.residuals))
    print(f"Newton: {info.iterations} iterations, final relative residual {info.residuals[-1]:.3e}")


def cmd_macro(cfg, out):
    _, tensor = _tensor(cfg)
    square = generate_square(cfg.macro_n)
    with stage("macro L-scheme"):
        u, trace = run_macro_lscheme(square, _macro_config(cfg, tensor), keep_iterates=False)
    out.field("macro_u", u)
    out.rows("macro_trace.csv", _TRACE_HEADER, _trace_rows(trace))
    print(f"macro L-scheme: {trace.iterations} iterations, converged={trace.converged}, "
          f"fitted ratio {trace.fitted_ratio():.4f}, b_macro={trace.contraction_factor:.4f}")


def _print_report(report):
    print(",".join(report.columns))
    for r in report.rows:
        print(",".join(ex._fmt(r[c]) for c in report.columns))
    print(f"wall time {report.wall_time:.1f} s")


def cmd_table1(cfg, out):
    _, tensor = _tensor(cfg)
    with stage("table1"):
        report = ex.run_table1(cfg.table1_epsilons, cfg.table1_k, cfg.setup(), tensor)
    report.to_csv(out.path("table1.csv"))
    _print_report(report)


def cmd_table2(cfg, out):
    _, tensor = _tensor(cfg)
    with stage("table2"):
        report = ex.run_table2(cfg.epsilon, cfg.table2_ks, cfg.setup(), tensor)
    report.to_csv(out.path("table2.csv"))
    _print_report(report)


def cmd_contraction(cfg, out):
    mesh = _perforated(cfg)
    with stage("micro contraction"):
        micro = ex.run_contraction_report(mesh, cfg.micro())
    micro.to_csv(out.path("contraction_micro.csv"))
    _, tensor = _tensor(cfg)
    square = generate_square(cfg.macro_n)
    with stage("macro contraction"):
        macro = ex.run_contraction_report(square, _macro_config(cfg, tensor, alpha_case=AlphaCase.POSITIVE))
    macro.to_csv(out.path("contraction_macro.csv"))
    out.rows(
        "contraction_summary.csv",
        ("problem", "fitted_ratio", "b", "omega_bar", "analytic_linear_factor", "fitted_constant"),
        [
            ("micro", micro.fitted_ratio, micro.contraction_factor, micro.omega_bar, micro.analytic_linear_factor, micro.fitted_constant),
            ("macro_alpha_positive", macro.fitted_ratio, macro.contraction_factor, macro.omega_bar,
             macro.analytic_linear_factor, macro.fitted_constant),
        ],
    )
    print(f"micro: fitted ratio {micro.fitted_ratio:.4f}, b={micro.contraction_factor:.4f}, omega_bar={micro.omega_bar:.4f}")
    print(f"macro (alpha>0): fitted ratio {macro.fitted_ratio:.6f}, analytic {macro.analytic_linear_factor:.6f}")


def cmd_convergence(cfg, out):
    _, tensor = _tensor(cfg)
    with stage("corrector rate"):
        rate = ex.run_corrector_rate(cfg.rate_epsilons, None, cfg.setup(), tensor)
    rows = list(zip(rate.epsilons, rate.l2_errors, rate.h1_errors))
    out.rows("convergence.csv", ("epsilon", "l2_error", "h1_error"), rows)
    out.rows("convergence_rates.csv", ("norm", "slope"), [("l2", rate.l2_slope), ("h1", rate.h1_slope)])
    print(f"L2 slope {rate.l2_slope:.3f}, H1 slope {rate.h1_slope:.3f}")


COMMANDS = {name: globals()[f"cmd_{name}"] for name in SUBCOMMANDS}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lscheme-homog", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=SUBCOMMANDS)
    parser.add_argument("--config", help="key = value configuration file")
    for f in dataclasses.fields(RunConfig):
        flags = dict.fromkeys((f"--{f.name}", f"--{f.name.replace('_', '-')}"))
        parser.add_argument(*flags, dest=f.name, default=None, metavar="VALUE")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config") and v is not None}
    try:
        cfg = parse_config(args.config, overrides)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    start = time.perf_counter()
    try:
        out = Output(cfg, args.command)
        COMMANDS[args.command](cfg, out)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out.manifest()
    print(f"outputs written to {out.dir} ({time.perf_counter() - start:.1f} s)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
