"""Periodic cell problems, the homogenized tensor and the macroscopic
linearized iteration on the unperforated square."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import fem
from .fem import FeField
from .mesh import Mesh, Tag
from .micro import IterationRecord, LSchemeTrace, oscillatory_coefficient
from .reaction import GammaSchedule, ReactionSpec, ScheduleKind, gamma_value, regularized_value


@dataclass(eq=False)
class CellFunctions:
    """Periodic, zero-mean correctors chi_1, chi_2 on the cell mesh."""

    chi: tuple
    mesh: Mesh

    def mean(self, i) -> float:
        return float(fem.lumped_mass(self.mesh) @ self.chi[i].values)


def _cell_rhs(mesh, coefficient, i):
    # -int A e_i . grad(phi)
    area, grads, mids = fem._geometry(mesh)
    weight = coefficient(mids[..., 0], mids[..., 1]).mean(axis=1) * area
    local = -weight[:, None] * grads[:, :, i]
    return np.bincount(mesh.triangles.ravel(), weights=local.ravel(), minlength=mesh.n_nodes)


def solve_cell_problems(cell_mesh: Mesh, coefficient=oscillatory_coefficient, tol=1e-12) -> CellFunctions:
    """Solve div(A (grad chi_i + e_i)) = 0 in the perforated cell with zero
    flux on the hole, periodicity and zero mean, for i = 1, 2."""
    K = fem.assemble_stiffness(cell_mesh, coefficient)
    chis = []
    for i in range(2):
        system = fem.apply_periodic_and_mean(K, _cell_rhs(cell_mesh, coefficient, i), cell_mesh)
        chis.append(FeField(cell_mesh, system.solve(tol=tol)))
    return CellFunctions(tuple(chis), cell_mesh)


@dataclass(frozen=True)
class HomogenizedTensor:
    a0: np.ndarray
    porosity: float
    voigt: float = math.nan  # int_{Y_l} A dy

    @property
    def coercivity(self) -> float:
        """Smallest eigenvalue of the symmetric part of A0."""
        return float(np.linalg.eigvalsh(0.5 * (self.a0 + self.a0.T))[0])

    def is_positive_definite(self) -> bool:
        try:
            np.linalg.cholesky(0.5 * (self.a0 + self.a0.T))
        except np.linalg.LinAlgError:
            return False
        return True


def homogenized_tensor(cells: CellFunctions, coefficient=oscillatory_coefficient) -> HomogenizedTensor:
    """a0_ij = int_{Y_l} A(y) (delta_ij + d chi_j / d y_i) dy, with the porosity
    taken as the measure of the meshed cell."""
    mesh = cells.mesh
    area, _, mids = fem._geometry(mesh)
    weight = coefficient(mids[..., 0], mids[..., 1]).mean(axis=1) * area
    a0 = np.empty((2, 2))
    for j in range(2):
        g = cells.chi[j].gradients()
        for i in range(2):
            a0[i, j] = np.sum(weight * ((i == j) + g[:, i]))
    return HomogenizedTensor(a0, float(area.sum()), float(weight.sum()))


class AlphaCase(enum.Enum):
    POSITIVE = "positive"
    ZERO = "zero"


@dataclass
class MacroConfig:
    tensor: HomogenizedTensor
    alpha_case: AlphaCase = AlphaCase.ZERO
    eta: float = 0.4
    reaction: ReactionSpec = field(default_factory=ReactionSpec)
    schedule: GammaSchedule = field(default_factory=GammaSchedule)
    source: object = 1.0
    k_max: int = 30
    stop_tol: float = 1e-8
    solver_tol: float = 1e-12

    def __post_init__(self):
        self.alpha_case = AlphaCase(self.alpha_case)
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")

    @property
    def porosity(self) -> float:
        return self.tensor.porosity

    @property
    def stabilization(self) -> float:
        """Coefficient of the zero-order term: eta|Y_l| or (eta + delta1)|Y_l|."""
        base = self.eta if self.alpha_case is AlphaCase.POSITIVE else self.eta + self.reaction.delta1
        return base * self.porosity


class _MacroOperators:
    def __init__(self, mesh: Mesh, config: MacroConfig):
        self.mass = fem.mass_matrix(mesh)
        self.lumped = fem.lumped_mass(mesh)
        self.load = config.porosity * fem.assemble_load(mesh, config.source)
        stiff = fem.assemble_stiffness(mesh, config.tensor.a0)
        self.system = fem.apply_dirichlet(
            stiff + config.stabilization * self.mass, np.zeros(mesh.n_nodes), mesh, Tag.EXTERIOR
        )
        self.free = np.setdiff1d(np.arange(mesh.n_nodes), fem.dirichlet_dofs(mesh, Tag.EXTERIOR))


def _operators(mesh, config):
    key = ("macro", config.tensor.a0.tobytes(), config.porosity, config.alpha_case, config.stabilization,
           id(config.source), repr(config.source))
    ops = mesh._cache.get(key)
    if ops is None:
        ops = mesh._cache[key] = _MacroOperators(mesh, config)
    return ops


def _macro_step(ops, config: MacroConfig, prev, k):
    rhs = ops.load + config.stabilization * (ops.mass @ prev)
    if config.alpha_case is AlphaCase.ZERO:
        gamma = gamma_value(config.schedule, k)
        rhs = rhs - config.porosity * ops.lumped * regularized_value(config.reaction, gamma, prev)
    x = fem.solve_spd(ops.system.matrix, rhs[ops.free], tol=config.solver_tol, x0=prev[ops.free])
    return ops.system.expand(x)


def macro_lscheme_step(square_mesh: Mesh, config: MacroConfig, previous: FeField, k: int) -> FeField:
    """One step of the homogenized linearized equation, zero Dirichlet on the square."""
    if k < 1:
        raise ValueError("iteration index starts at k=1")
    return FeField(square_mesh, _macro_step(_operators(square_mesh, config), config, previous.values, k))


def macro_contraction_factor(mesh: Mesh, config: MacroConfig) -> float:
    """stab / (|A0| / c_p + stab) with |A0| the coercivity constant of A0."""
    c_p = fem.estimate_poincare(mesh, Tag.EXTERIOR).c_p
    s = config.stabilization
    return s / (config.tensor.coercivity / c_p + s)


def run_macro_lscheme(square_mesh: Mesh, config: MacroConfig, keep_iterates=True, diagnostics=True):
    """Macroscopic iteration from u^0 = 0; returns ``(field, trace)``.

    ``trace.contraction_factor`` holds the macro factor (eta or eta + delta1)|Y_l| /
    (|A0|/c_p + ...) and ``omega_bar`` adds omega for the geometric schedule.
    """
    ops = _operators(square_mesh, config)
    trace = LSchemeTrace(stabilization=config.stabilization, gamma_min=config.tensor.coercivity)
    if diagnostics:
        trace.c_p = fem.estimate_poincare(square_mesh, Tag.EXTERIOR).c_p
        trace.contraction_factor = macro_contraction_factor(square_mesh, config)
        if config.schedule.kind is ScheduleKind.GEOMETRIC:
            trace.omega_bar = config.schedule.omega + math.sqrt(trace.contraction_factor)
    prev = np.zeros(square_mesh.n_nodes)
    last = None
    for k in range(1, config.k_max + 1):
        cur = _macro_step(ops, config, prev, k)
        w = FeField(square_mesh, cur - prev)
        l2 = fem.l2_norm(w)
        norm = fem.l2_norm(FeField(square_mesh, cur))
        rel = l2 / norm if norm > 0 else 0.0
        ratio = l2 / last if (k >= 3 and last) else None
        trace.records.append(IterationRecord(k, l2, fem.h1_seminorm(w), rel, ratio))
        if keep_iterates:
            trace.iterates.append(cur)
        prev, last = cur, l2
        if rel < config.stop_tol:
            trace.converged = True
            break
    return FeField(square_mesh, prev), trace


@dataclass
class LinfDiagnostic:
    k: np.ndarray
    d: np.ndarray
    exponent: float  # fitted p in d_k ~ C (k+1)^-p
    geometric_ratio: float  # fitted q in d_k ~ C q^k


def linf_stability_diagnostic(iterates, k_from=2, k_to=None) -> LinfDiagnostic:
    """Max-norm successive differences d_k = max |u^k - u^{k-1}| (u^0 = 0) and
    power-law / geometric fits of their decay over k_from..k_to."""
    arrs = [np.zeros_like(np.asarray(iterates[0]))] + [np.asarray(v) for v in iterates]
    d = np.array([np.max(np.abs(arrs[k] - arrs[k - 1])) for k in range(1, len(arrs))])
    ks = np.arange(1, len(d) + 1)
    k_to = k_to or ks[-1]
    sel = (ks >= k_from) & (ks <= k_to) & (d > 0)
    if sel.sum() < 2:
        return LinfDiagnostic(ks, d, math.nan, math.nan)
    expo = -np.polyfit(np.log(ks[sel] + 1.0), np.log(d[sel]), 1)[0]
    ratio = math.exp(np.polyfit(ks[sel], np.log(d[sel]), 1)[0])
    return LinfDiagnostic(ks, d, float(expo), float(ratio))
