"""Error metrics, table reproductions, the epsilon-sweep rate study and
contraction reports."""
from __future__ import annotations

import csv
import dataclasses
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import fem
from .fem import FeField
from .macro import (
    AlphaCase,
    HomogenizedTensor,
    MacroConfig,
    homogenized_tensor,
    macro_contraction_factor,
    run_macro_lscheme,
    solve_cell_problems,
)
from .mesh import PerforationSpec, generate_cell, generate_perforated, generate_square
from .micro import MicroConfig, recursion_bound, run_lscheme, solve_newton
from .reaction import gamma_value

TABLE1_EPSILONS = (0.5, 0.25, 1.0 / 6.0, 0.1)


# ---------------------------------------------------------------- metrics


def _sample_pair(u: FeField, v: FeField, gradient: bool):
    """Values (or gradients) of u and v at the quadrature points of u's mesh."""
    mids, weights = fem.quadrature_points(u.mesh)
    tris = u.mesh.triangles
    if not gradient:
        uq = 0.5 * (u.values[tris] + u.values[np.roll(tris, -1, axis=1)])
        if v.mesh is u.mesh:
            vq = 0.5 * (v.values[tris] + v.values[np.roll(tris, -1, axis=1)])
        else:
            vq = fem.evaluate(v, mids)
        return uq, vq, weights
    gu = np.repeat(u.gradients()[:, None, :], 3, axis=1)
    if v.mesh is u.mesh:
        gv = np.repeat(v.gradients()[:, None, :], 3, axis=1)
    else:
        gv = fem.evaluate_gradient(v, mids)
    return gu, gv, weights


def _weighted_norm(x, weights):
    if x.ndim == 3:
        x = np.sqrt((x * x).sum(axis=-1))
    return math.sqrt(float(np.sum(weights * x * x)))


def error_e1(u: FeField, v: FeField, gradient=False) -> float:
    """||u - v|| in L2 over u's mesh (or of the gradients)."""
    uq, vq, w = _sample_pair(u, v, gradient)
    return _weighted_norm(uq - vq, w)


def error_e2(u: FeField, v: FeField, gradient=False) -> float:
    """E1(u, v) / ||u||, same quadrature."""
    uq, vq, w = _sample_pair(u, v, gradient)
    return _weighted_norm(uq - vq, w) / _weighted_norm(uq, w)


def error_pair(u: FeField, v: FeField, gradient=False):
    """(E1, E2, ||u||) from one sampling pass."""
    uq, vq, w = _sample_pair(u, v, gradient)
    e1 = _weighted_norm(uq - vq, w)
    norm = _weighted_norm(uq, w)
    return e1, e1 / norm, norm


# ---------------------------------------------------------------- reports


@dataclass
class ErrorReport:
    """Rows keyed by (epsilon, k); ``columns`` fixes the CSV layout."""

    columns: tuple
    rows: list = field(default_factory=list)
    wall_time: float = 0.0

    def add(self, **values):
        missing = set(self.columns) - set(values)
        if missing:
            raise ValueError(f"row lacks columns {sorted(missing)}")
        self.rows.append(values)

    def column(self, name) -> np.ndarray:
        return np.array([row[name] for row in self.rows], dtype=float)

    def row(self, epsilon=None, k=None) -> dict:
        for r in self.rows:
            if (epsilon is None or math.isclose(r["epsilon"], epsilon)) and (k is None or r["k"] == k):
                return r
        raise KeyError((epsilon, k))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.columns)
            for r in self.rows:
                writer.writerow([_fmt(r[c]) for c in self.columns])


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.6g}"


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        return [
            {k: float(v) if k not in ("converged",) else v == "true" for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]


# ---------------------------------------------------------------- setup


@dataclass
class StudySetup:
    """Everything the table runs need besides the list of epsilons."""

    hole_radius: float = 0.4
    n_per_cell: int = 16
    cell_n: int = 128
    macro_n: int = 128
    micro: MicroConfig = field(default_factory=MicroConfig)
    newton_tol: float = 1e-10

    def micro_config(self, epsilon) -> MicroConfig:
        return dataclasses.replace(self.micro, epsilon=epsilon)

    def macro_config(self, tensor: HomogenizedTensor, k_max=None, stop_tol=None) -> MacroConfig:
        m = self.micro
        return MacroConfig(
            tensor,
            AlphaCase.ZERO if m.alpha == 0 else AlphaCase.POSITIVE,
            eta=m.eta,
            reaction=m.reaction,
            schedule=m.schedule,
            source=m.source,
            k_max=m.k_max if k_max is None else k_max,
            stop_tol=m.stop_tol if stop_tol is None else stop_tol,
            solver_tol=m.solver_tol,
        )

    def tensor(self) -> HomogenizedTensor:
        cell = generate_cell(self.cell_n, self.hole_radius)
        coef = self.micro.coefficient
        return homogenized_tensor(solve_cell_problems(cell, coef), coef)

    def perforated_mesh(self, epsilon):
        return generate_perforated(self.n_per_cell, PerforationSpec(epsilon, self.hole_radius))


def _macro_iterates(setup: StudySetup, tensor, k):
    square = generate_square(setup.macro_n)
    _, trace = run_macro_lscheme(square, setup.macro_config(tensor, k_max=k, stop_tol=0.0), diagnostics=False)
    return [FeField(square, it) for it in trace.iterates], trace


TABLE1_COLUMNS = ("epsilon", "k", "e1_l2", "e1_grad_l2", "e2_l2", "e2_grad_l2", "ref_l2", "ref_grad_l2", "max_h",
                  "newton_iterations", "macro_iterations")


def run_table1(epsilons=TABLE1_EPSILONS, k=2, setup: StudySetup | None = None, tensor=None) -> ErrorReport:
    """E1/E2 between the Newton micro solution and the k-th macro iterate."""
    setup = setup or StudySetup()
    start = time.perf_counter()
    tensor = tensor or setup.tensor()
    macro_fields, _ = _macro_iterates(setup, tensor, k)
    u0k = macro_fields[k - 1]
    report = ErrorReport(TABLE1_COLUMNS)
    for eps in epsilons:
        mesh = setup.perforated_mesh(eps)
        u_eps, info = solve_newton(mesh, setup.micro_config(eps), tol=setup.newton_tol, return_info=True)
        e1, e2, n1 = error_pair(u_eps, u0k)
        g1, g2, ng = error_pair(u_eps, u0k, gradient=True)
        report.add(epsilon=eps, k=k, e1_l2=e1, e1_grad_l2=g1, e2_l2=e2, e2_grad_l2=g2, ref_l2=n1, ref_grad_l2=ng,
                   max_h=mesh.max_h(), newton_iterations=info.iterations, macro_iterations=k)
    report.wall_time = time.perf_counter() - start
    return report


TABLE2_COLUMNS = ("epsilon", "k", "e2_micro_macro", "e2_newton_lscheme", "e2_grad_newton_lscheme",
                  "e1_micro_macro", "e1_newton_lscheme", "e1_grad_newton_lscheme", "norm_micro_iterate",
                  "norm_newton", "norm_grad_newton", "max_h")


def run_table2(epsilon=0.25, ks=(1, 2, 3, 4), setup: StudySetup | None = None, tensor=None) -> ErrorReport:
    """Relative errors between linearized micro/macro iterates and the Newton solution."""
    setup = setup or StudySetup()
    start = time.perf_counter()
    tensor = tensor or setup.tensor()
    k_top = max(ks)
    macro_fields, _ = _macro_iterates(setup, tensor, k_top)
    mesh = setup.perforated_mesh(epsilon)
    cfg = dataclasses.replace(setup.micro_config(epsilon), k_max=k_top, stop_tol=0.0)
    _, trace = run_lscheme(mesh, cfg, diagnostics=False)
    u_eps = solve_newton(mesh, setup.micro_config(epsilon), tol=setup.newton_tol)
    report = ErrorReport(TABLE2_COLUMNS)
    for k in ks:
        uk = FeField(mesh, trace.iterates[k - 1])
        e1_mm, e2_mm, n_k = error_pair(uk, macro_fields[k - 1])
        e1_nl, e2_nl, n_newton = error_pair(u_eps, uk)
        g1_nl, g2_nl, ng_newton = error_pair(u_eps, uk, gradient=True)
        report.add(epsilon=epsilon, k=k, e2_micro_macro=e2_mm, e2_newton_lscheme=e2_nl,
                   e2_grad_newton_lscheme=g2_nl, e1_micro_macro=e1_mm, e1_newton_lscheme=e1_nl,
                   e1_grad_newton_lscheme=g1_nl, norm_micro_iterate=n_k, norm_newton=n_newton,
                   norm_grad_newton=ng_newton, max_h=mesh.max_h())
    report.wall_time = time.perf_counter() - start
    return report


# ---------------------------------------------------------------- rates


def fit_rate(epsilons, errors) -> float:
    """Slope of log(error) against log(epsilon)."""
    if len(epsilons) < 2:
        raise ValueError("a rate fit needs at least two points")
    return float(np.polyfit(np.log(np.asarray(epsilons, float)), np.log(np.asarray(errors, float)), 1)[0])


@dataclass
class CorrectorRate:
    epsilons: np.ndarray
    l2_errors: np.ndarray
    h1_errors: np.ndarray
    l2_slope: float
    h1_slope: float


def run_corrector_rate(epsilons=(0.5, 0.25, 0.1), k=None, setup: StudySetup | None = None, tensor=None):
    """Fit ||u_eps - u_0^k|| ~ eps^s in L2 and in the gradient seminorm.

    ``k=None`` runs the macro iteration to convergence so the linearization
    error is below the homogenization error.
    """
    setup = setup or StudySetup()
    tensor = tensor or setup.tensor()
    square = generate_square(setup.macro_n)
    cfg = setup.macro_config(tensor) if k is None else setup.macro_config(tensor, k_max=k, stop_tol=0.0)
    u0, _ = run_macro_lscheme(square, cfg, keep_iterates=False, diagnostics=False)
    l2, h1 = [], []
    for eps in epsilons:
        mesh = setup.perforated_mesh(eps)
        u_eps = solve_newton(mesh, setup.micro_config(eps), tol=setup.newton_tol)
        l2.append(error_e1(u_eps, u0))
        h1.append(error_e1(u_eps, u0, gradient=True))
    eps = np.asarray(epsilons, float)
    if len(eps) < 2:
        return CorrectorRate(eps, np.array(l2), np.array(h1), math.nan, math.nan)
    return CorrectorRate(eps, np.array(l2), np.array(h1), fit_rate(eps, l2), fit_rate(eps, h1))


# ---------------------------------------------------------------- contraction


@dataclass
class ContractionReport:
    k: np.ndarray
    l2_diffs: np.ndarray
    grad_diffs: np.ndarray
    ratios: np.ndarray  # nan where undefined (k < 3)
    fitted_ratio: float
    contraction_factor: float  # b
    omega_bar: float
    measured: np.ndarray  # weighted energy of w^k
    bound: np.ndarray  # recursion bound with the fitted constant
    fitted_constant: float
    analytic_linear_factor: float = math.nan

    def rows(self):
        for i, k in enumerate(self.k):
            yield {
                "k": int(k),
                "l2_diff": self.l2_diffs[i],
                "grad_diff": self.grad_diffs[i],
                "ratio": self.ratios[i],
                "measured": self.measured[i],
                "bound": self.bound[i],
            }

    def to_csv(self, path) -> None:
        report = ErrorReport(("k", "l2_diff", "grad_diff", "ratio", "measured", "bound"), list(self.rows()))
        report.to_csv(path)


def run_contraction_report(mesh, config, k_from=2) -> ContractionReport:
    """Run the micro (MicroConfig) or macro (MacroConfig) iteration and compare
    the measured successive differences with the theoretical recursion bound."""
    if isinstance(config, MicroConfig):
        _, trace = run_lscheme(mesh, config, keep_iterates=False)
        stab_total = config.eta + config.reaction.delta1
        weight = trace.gamma_min / (stab_total + trace.gamma_min / trace.c_p)
        linear = math.nan
        has_reaction = True
    else:
        _, trace = run_macro_lscheme(mesh, config, keep_iterates=False)
        coerc = config.tensor.coercivity
        weight = coerc / (coerc / trace.c_p + config.stabilization)
        linear = macro_contraction_factor(mesh, config) if config.alpha_case is AlphaCase.POSITIVE else math.nan
        has_reaction = config.alpha_case is AlphaCase.ZERO
    l2 = trace.l2_diffs()
    grad = trace.grad_diffs()
    ks = np.arange(1, len(l2) + 1)
    measured = weight * grad**2 + l2**2
    b = np.full(len(ks), trace.contraction_factor)
    sigma = config.reaction.sigma
    a = np.zeros(len(ks))
    if has_reaction:
        for k in ks[1:]:
            g_prev, g = gamma_value(config.schedule, k - 1), gamma_value(config.schedule, k)
            a[k - 1] = g_prev ** (2 * sigma) / g
    q1 = float(measured[0]) if len(l2) else 0.0
    base = recursion_bound(np.zeros(len(ks)), b, q1)
    shape = recursion_bound(a, b, 0.0)
    need = [(measured[i] - base[i]) / shape[i] for i in range(2, len(ks)) if shape[i] > 0]
    c_fit = max([0.0] + need)
    ratios = np.array([r.ratio if r.ratio is not None else math.nan for r in trace.records])
    return ContractionReport(
        ks, l2, grad, ratios, trace.fitted_ratio(k_from), trace.contraction_factor, trace.omega_bar,
        measured, base + c_fit * shape, c_fit, linear,
    )
