"""Microscopic problem on the perforated domain.

    -div(A(x/eps) grad u) + eps**alpha R(u) = f   in the perforated domain
    u = 0 on the exterior boundary, zero flux on the hole boundaries

solved by the stabilized linearization (L-scheme) with a regularized
reaction, and by semismooth Newton as a reference.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import fem
from .fem import FeField, NonConvergenceError
from .mesh import Mesh, Tag
from .reaction import (
    GammaSchedule,
    ReactionSpec,
    ScheduleKind,
    gamma_value,
    reaction_derivative,
    reaction_value,
    regularized_value,
)


def oscillatory_coefficient(y1, y2):
    """A(y) = 1 / (2 + cos(2 pi y1) cos(2 pi y2)), values in [1/3, 1]."""
    return 1.0 / (2.0 + np.cos(2.0 * np.pi * y1) * np.cos(2.0 * np.pi * y2))


def constant_coefficient(value):
    def coef(y1, y2):
        return np.full(np.shape(y1), float(value))

    coef.value = float(value)
    return coef


def scaled_coefficient(coefficient, epsilon):
    """x -> A(x / epsilon)."""

    def coef(x, y):
        return coefficient(x / epsilon, y / epsilon)

    return coef


@dataclass
class MicroConfig:
    epsilon: float = 0.25
    alpha: float = 0.0
    eta: float = 0.4
    reaction: ReactionSpec = field(default_factory=ReactionSpec)
    schedule: GammaSchedule = field(default_factory=GammaSchedule)
    source: object = 1.0
    coefficient: object = oscillatory_coefficient
    k_max: int = 30
    stop_tol: float = 1e-8
    solver_tol: float = 1e-12
    # overrides eta + eps**alpha * delta1 when set
    stabilization: float | None = None

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be nonnegative, got {self.alpha}")
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if not (0 < self.epsilon <= 1):
            raise ValueError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")
        if self.stabilization is not None and not self.stabilization > self.reaction_scale * self.reaction.delta1:
            raise ValueError("stabilization must exceed eps**alpha * delta1")

    @property
    def reaction_scale(self) -> float:
        return self.epsilon**self.alpha

    @property
    def M(self) -> float:
        if self.stabilization is not None:
            return self.stabilization
        return self.eta + self.reaction_scale * self.reaction.delta1


@dataclass
class IterationRecord:
    k: int
    l2_diff: float
    grad_diff: float
    rel_diff: float
    ratio: float | None = None


@dataclass
class LSchemeTrace:
    """Per-iteration successive differences plus the theoretical constants."""

    records: list = field(default_factory=list)
    contraction_factor: float = math.nan  # b = M / (gamma_min / C_p + M)
    omega_bar: float = math.nan
    gamma_min: float = math.nan
    c_p: float = math.nan
    stabilization: float = math.nan
    converged: bool = False
    iterates: list = field(default_factory=list, repr=False)

    @property
    def iterations(self) -> int:
        return len(self.records)

    def l2_diffs(self) -> np.ndarray:
        return np.array([r.l2_diff for r in self.records])

    def grad_diffs(self) -> np.ndarray:
        return np.array([r.grad_diff for r in self.records])

    def ratios(self) -> dict:
        return {r.k: r.ratio for r in self.records if r.ratio is not None}

    def fitted_ratio(self, k_from=2, k_to=None, floor=1e-13) -> float:
        """Geometric decay factor from a log-linear fit of ||u^k - u^{k-1}||."""
        ks, ds = [], []
        scale = max((r.l2_diff for r in self.records), default=0.0)
        for r in self.records:
            if r.k >= k_from and (k_to is None or r.k <= k_to) and r.l2_diff > floor * scale:
                ks.append(r.k)
                ds.append(r.l2_diff)
        if len(ks) < 2:
            return math.nan
        return float(math.exp(np.polyfit(ks, np.log(ds), 1)[0]))


class _MicroOperators:
    def __init__(self, mesh: Mesh, config: MicroConfig):
        coef = scaled_coefficient(config.coefficient, config.epsilon)
        self.stiffness = fem.assemble_stiffness(mesh, coef)
        self.mass = fem.mass_matrix(mesh)
        self.lumped = fem.lumped_mass(mesh)
        self.load = fem.assemble_load(mesh, config.source)
        M = config.M
        self.system = fem.apply_dirichlet(self.stiffness + M * self.mass, np.zeros(mesh.n_nodes), mesh, Tag.EXTERIOR)
        self.stiff_free = fem.apply_dirichlet(self.stiffness, np.zeros(mesh.n_nodes), mesh, Tag.EXTERIOR).matrix
        self.free = np.setdiff1d(np.arange(mesh.n_nodes), fem.dirichlet_dofs(mesh, Tag.EXTERIOR))
        mids, _ = fem.quadrature_points(mesh)
        self.gamma_min = float(coef(mids[..., 0], mids[..., 1]).min())


def _operators(mesh: Mesh, config: MicroConfig) -> _MicroOperators:
    key = ("micro", id(config.coefficient), config.epsilon, config.M, id(config.source), repr(config.source))
    ops = mesh._cache.get(key)
    if ops is None:
        ops = mesh._cache[key] = _MicroOperators(mesh, config)
    return ops


def _step(ops: _MicroOperators, config: MicroConfig, prev: np.ndarray, k: int) -> np.ndarray:
    gamma = gamma_value(config.schedule, k)
    M = config.M
    react = regularized_value(config.reaction, gamma, prev)
    rhs = ops.load + M * (ops.mass @ prev) - config.reaction_scale * ops.lumped * react
    rhs_free = rhs[ops.free]
    x = fem.solve_spd(ops.system.matrix, rhs_free, tol=config.solver_tol, x0=prev[ops.free])
    return ops.system.expand(x)


def lscheme_step(mesh: Mesh, config: MicroConfig, previous: FeField, k: int) -> FeField:
    """One linearized solve: (a + M <.,.>) u^k = f + M u^{k-1} - eps^alpha R_{gamma_k}(u^{k-1})."""
    if k < 1:
        raise ValueError("iteration index starts at k=1")
    if previous.mesh is not mesh:
        raise ValueError("previous iterate must live on the same mesh")
    return FeField(mesh, _step(_operators(mesh, config), config, previous.values, k))


def theoretical_constants(mesh: Mesh, config: MicroConfig, ops=None):
    """gamma_min, C_p, b = M/(gamma_min/C_p + M) and omega_bar = omega + sqrt(b)."""
    ops = ops or _operators(mesh, config)
    c_p = fem.estimate_poincare(mesh, Tag.EXTERIOR).c_p
    M = config.M
    b = M / (ops.gamma_min / c_p + M)
    omega = config.schedule.omega if config.schedule.kind is ScheduleKind.GEOMETRIC else math.nan
    return ops.gamma_min, c_p, b, omega + math.sqrt(b)


def run_lscheme(mesh: Mesh, config: MicroConfig, keep_iterates=True, diagnostics=True):
    """Iterate from u^0 = 0 until the relative L2 successive difference drops
    below ``stop_tol`` or ``k_max`` is reached.  Returns ``(field, trace)``;
    ``trace.converged`` is False when k_max was hit."""
    ops = _operators(mesh, config)
    trace = LSchemeTrace(stabilization=config.M, gamma_min=ops.gamma_min)
    if diagnostics:
        trace.gamma_min, trace.c_p, trace.contraction_factor, trace.omega_bar = theoretical_constants(
            mesh, config, ops
        )
    prev = np.zeros(mesh.n_nodes)
    last = None
    for k in range(1, config.k_max + 1):
        cur = _step(ops, config, prev, k)
        w = FeField(mesh, cur - prev)
        l2 = fem.l2_norm(w)
        norm = fem.l2_norm(FeField(mesh, cur))
        rel = l2 / norm if norm > 0 else 0.0
        ratio = l2 / last if (k >= 3 and last) else None
        trace.records.append(IterationRecord(k, l2, fem.h1_seminorm(w), rel, ratio))
        if keep_iterates:
            trace.iterates.append(cur)
        prev, last = cur, l2
        if rel < config.stop_tol:
            trace.converged = True
            break
    return FeField(mesh, prev), trace


@dataclass
class NewtonInfo:
    iterations: int
    residuals: list
    halvings: int


def solve_newton(mesh: Mesh, config: MicroConfig, tol=1e-10, max_newton=50, return_info=False):
    """Semismooth Newton on K u + eps^alpha B(u) = load with nodal reaction
    quadrature; starts from the linear solve with the reaction dropped."""
    ops = _operators(mesh, config)
    free = ops.free
    K = ops.stiff_free
    load = ops.load[free]
    w = config.reaction_scale * ops.lumped[free]
    spec = config.reaction

    def residual(x):
        return K @ x + w * reaction_value(spec, x) - load

    lnorm = np.linalg.norm(load)
    if lnorm == 0.0:
        out = FeField(mesh, np.zeros(mesh.n_nodes))
        return (out, NewtonInfo(0, [0.0], 0)) if return_info else out
    x = fem.solve_spd(K, load, tol=config.solver_tol)
    F = residual(x)
    fn = np.linalg.norm(F)
    history = [fn / lnorm]
    halvings = 0
    it = 0
    while fn / lnorm > tol:
        if it >= max_newton:
            raise NonConvergenceError(f"Newton did not converge in {max_newton} steps", fn / lnorm, it)
        J = (K + sp.diags(w * reaction_derivative(spec, x))).tocsr()
        dx = fem.solve_spd(J, -F, tol=min(config.solver_tol, 1e-3 * tol))
        t = 1.0
        for _ in range(21):
            trial = x + t * dx
            Ft = residual(trial)
            if np.linalg.norm(Ft) <= (1.0 - 1e-4 * t) * fn:
                break
            t *= 0.5
            halvings += 1
        else:
            raise NonConvergenceError("Newton line search exhausted 20 halvings", fn / lnorm, it)
        x, F = trial, Ft
        fn = np.linalg.norm(F)
        history.append(fn / lnorm)
        it += 1
    out = FeField(mesh, ops.system.expand(x))
    if return_info:
        return out, NewtonInfo(it, history, halvings)
    return out


def recursion_bound(a, b, q1):
    """B_k = a_k + sum_{j=2}^{k-1} a_j prod_{i=j+1}^k b_i + q1 prod_{i=2}^k b_i.

    ``a`` and ``b`` are indexed from k=1 (``a[0]`` is a_1).  Entry k-1 of the
    result is B_k; B_1 = q1 and B_2 = a_2 + b_2 q1 follow from the same formula.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a < 0) or np.any(b < 0) or q1 < 0:
        raise ValueError("recursion inputs must be nonnegative")
    n = len(a)
    out = np.empty(n)
    if n:
        out[0] = q1
    for k in range(2, n + 1):
        total = a[k - 1]
        for j in range(2, k):
            total += a[j - 1] * np.prod(b[j:k])
        total += q1 * np.prod(b[1:k])
        out[k - 1] = total
    return out
