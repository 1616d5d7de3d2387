"""P1 finite elements: assembly, constraints, a Jacobi-preconditioned CG
solver, norms, point evaluation and a Poincare-constant estimator."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

from .mesh import Mesh, Tag


class EllipticityError(ValueError):
    pass


class OutOfDomainError(ValueError):
    pass


class NonConvergenceError(RuntimeError):
    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


INSIDE_TOL = 1e-9


# ---------------------------------------------------------------- geometry


def _geometry(mesh: Mesh):
    """Per-triangle areas, P1 basis gradients (T, 3, 2) and edge midpoints (T, 3, 2)."""
    cache = mesh._cache
    if "geometry" not in cache:
        p = mesh.nodes[mesh.triangles]
        area = mesh.signed_areas()
        grads = np.empty((len(p), 3, 2))
        for i in range(3):
            a, b = p[:, (i + 1) % 3], p[:, (i + 2) % 3]
            grads[:, i, 0] = (a[:, 1] - b[:, 1]) / (2.0 * area)
            grads[:, i, 1] = (b[:, 0] - a[:, 0]) / (2.0 * area)
        mids = np.stack([0.5 * (p[:, i] + p[:, (i + 1) % 3]) for i in range(3)], axis=1)
        cache["geometry"] = (area, grads, mids)
    return cache["geometry"]


def quadrature_points(mesh: Mesh):
    """Edge-midpoint rule: points (T, 3, 2) and weights (T, 3)."""
    area, _, mids = _geometry(mesh)
    return mids, np.repeat(area[:, None] / 3.0, 3, axis=1)


# value of basis i at midpoint q (midpoint q joins vertices q and q+1)
_BASIS_AT_MIDS = np.array([[0.5, 0.0, 0.5], [0.5, 0.5, 0.0], [0.0, 0.5, 0.5]])


def _sample(func, points):
    """Evaluate a scalar field (number or callable of (x, y)) at points (..., 2)."""
    if callable(func):
        flat = points.reshape(-1, 2)
        vals = np.asarray(func(flat[:, 0], flat[:, 1]), dtype=float)
        return np.broadcast_to(vals, flat.shape[:1]).reshape(points.shape[:-1])
    return np.full(points.shape[:-1], float(func))


def _scatter(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.n_nodes
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


# ---------------------------------------------------------------- assembly


def local_stiffness(points, coefficient=1.0) -> np.ndarray:
    """Element stiffness matrix of one triangle (3x3) for a constant coefficient."""
    m = Mesh(np.asarray(points, float), [[0, 1, 2]], np.zeros((0, 2)), np.zeros(0))
    return assemble_stiffness(m, coefficient).toarray()


def assemble_stiffness(mesh: Mesh, coefficient=1.0) -> sp.csr_matrix:
    """Stiffness matrix of int A grad(u).grad(v).

    ``coefficient`` is a positive number, a constant 2x2 tensor, or a callable
    ``A(x, y)`` evaluated at the three edge midpoints of every triangle.
    """
    area, grads, mids = _geometry(mesh)
    coef = coefficient
    if not callable(coef) and np.ndim(coef) == 2:
        tensor = np.asarray(coef, dtype=float)
        tensor = 0.5 * (tensor + tensor.T)
        if np.linalg.eigvalsh(tensor)[0] <= 0:
            raise EllipticityError(f"coefficient tensor is not positive definite: {tensor.tolist()}")
        flux = grads @ tensor
        local = np.einsum("tid,tjd->tij", flux, grads) * area[:, None, None]
    else:
        vals = _sample(coef, mids)
        if np.any(~(vals > 0)):
            raise EllipticityError(f"coefficient must be strictly positive, min sample {vals.min():g}")
        weight = vals.mean(axis=1) * area
        local = np.einsum("tid,tjd->tij", grads, grads) * weight[:, None, None]
    local = 0.5 * (local + local.transpose(0, 2, 1))
    return _scatter(mesh, local)


def assemble_mass(mesh: Mesh) -> sp.csr_matrix:
    """Consistent P1 mass matrix, exact closed form (area/12)*[[2,1,1],...]."""
    area, _, _ = _geometry(mesh)
    ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    return _scatter(mesh, area[:, None, None] * ref[None])


def lumped_mass(mesh: Mesh) -> np.ndarray:
    """Row sums of the mass matrix (nodal quadrature weights)."""
    area, _, _ = _geometry(mesh)
    return np.bincount(mesh.triangles.ravel(), weights=np.repeat(area / 3.0, 3), minlength=mesh.n_nodes)


def assemble_load(mesh: Mesh, source=1.0) -> np.ndarray:
    """Load vector int f phi_i with the edge-midpoint rule."""
    area, _, mids = _geometry(mesh)
    fq = _sample(source, mids)
    local = (fq @ _BASIS_AT_MIDS.T) * (area / 3.0)[:, None]
    return np.bincount(mesh.triangles.ravel(), weights=local.ravel(), minlength=mesh.n_nodes)


# ---------------------------------------------------------------- constraints


@dataclass
class ConstrainedSystem:
    """Reduced system ``matrix @ x = rhs``; full dofs are ``prolong @ x + offset``."""

    matrix: object
    rhs: np.ndarray
    prolong: sp.csr_matrix
    offset: np.ndarray
    diag: np.ndarray | None = None

    def expand(self, x) -> np.ndarray:
        return self.prolong @ np.asarray(x) + self.offset

    def restrict(self, full) -> np.ndarray:
        """Reduced coordinates of a full vector that satisfies the constraints."""
        return self.prolong.T @ (np.asarray(full) - self.offset) / np.asarray(self.prolong.sum(axis=0)).ravel()

    def solve(self, tol=1e-10, max_iter=None, x0=None) -> np.ndarray:
        return self.expand(solve_spd(self.matrix, self.rhs, tol=tol, max_iter=max_iter, x0=x0, diag=self.diag))


def _tags(tag) -> tuple:
    items = tag if isinstance(tag, (tuple, list, set, frozenset)) else (tag,)
    out = []
    for t in items:
        try:
            out.append(Tag[t] if isinstance(t, str) else Tag(t))
        except (KeyError, ValueError):
            raise ValueError(f"unknown boundary tag {t!r}") from None
    if not out:
        raise ValueError("no boundary tag given")
    return tuple(sorted(set(out)))


def dirichlet_dofs(mesh: Mesh, tag) -> np.ndarray:
    """Nodes on edges carrying ``tag`` (one tag or a collection of tags)."""
    tags = _tags(tag)
    for t in tags:
        if not mesh.has_tag(t):
            raise ValueError(f"tag {t.name} is not present in the mesh")
    return np.unique(np.concatenate([mesh.nodes_with_tag(t) for t in tags]))


def apply_dirichlet(matrix, rhs, mesh: Mesh, tag=Tag.EXTERIOR, value=0.0) -> ConstrainedSystem:
    """Symmetric elimination of the dofs on boundary edges carrying ``tag``."""
    fixed = dirichlet_dofs(mesh, tag)
    n = mesh.n_nodes
    free = np.setdiff1d(np.arange(n), fixed)
    offset = np.zeros(n)
    offset[fixed] = value
    matrix = sp.csr_matrix(matrix)
    kff = matrix[free][:, free].tocsr()
    rhs_f = np.asarray(rhs, float)[free] - matrix[free][:, fixed] @ offset[fixed]
    prolong = sp.csr_matrix((np.ones(len(free)), (free, np.arange(len(free)))), shape=(n, len(free)))
    return ConstrainedSystem(kff, rhs_f, prolong, offset)


def periodic_prolongation(mesh: Mesh) -> sp.csr_matrix:
    """Folding matrix P (full x masters): slaves take the value of their master."""
    if mesh.periodic_pairs is None or len(mesh.periodic_pairs) == 0:
        raise ValueError("mesh carries no periodic pairs")
    n = mesh.n_nodes
    parent = np.arange(n)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b in mesh.periodic_pairs:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    roots = np.array([find(i) for i in range(n)])
    masters, col = np.unique(roots, return_inverse=True)
    return sp.csr_matrix((np.ones(n), (np.arange(n), col.ravel())), shape=(n, len(masters)))


def apply_periodic_and_mean(matrix, rhs, mesh: Mesh) -> ConstrainedSystem:
    """Fold periodic slaves into masters and impose zero mean.

    The mean constraint enters through one Lagrange multiplier, eliminated
    in closed form: with m the mean functional and 1 the constant vector,
    lambda = 1.b / 1.m and the remaining system (K + m m^T) x = b - lambda m
    is symmetric positive definite.
    """
    P = periodic_prolongation(mesh)
    kr = (P.T @ sp.csr_matrix(matrix) @ P).tocsr()
    br = P.T @ np.asarray(rhs, float)
    m = P.T @ lumped_mass(mesh)
    lam = br.sum() / m.sum()
    br = br - lam * m
    n = kr.shape[0]
    op = LinearOperator((n, n), matvec=lambda x: kr @ x + m * (m @ x), dtype=float)
    diag = kr.diagonal() + m * m
    return ConstrainedSystem(op, br, P, np.zeros(mesh.n_nodes), diag=diag)


# ---------------------------------------------------------------- solver


def pcg(matrix, rhs, tol=1e-10, max_iter=None, x0=None, diag=None):
    """Jacobi-preconditioned conjugate gradients.

    Returns ``(x, iterations, relative_residual)``; raises NonConvergenceError
    when ``max_iter`` is exhausted.
    """
    b = np.asarray(rhs, dtype=float)
    n = b.shape[0]
    if max_iter is None:
        max_iter = max(100, int(50 * math.sqrt(max(n, 1))))
    if diag is None:
        diag = matrix.diagonal()
    inv_d = 1.0 / np.asarray(diag, dtype=float)
    bnorm = np.linalg.norm(b)
    if n == 0 or bnorm == 0.0:
        return np.zeros(n), 0, 0.0
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - matrix @ x
    z = inv_d * r
    d = z.copy()
    rz = r @ z
    res = np.linalg.norm(r) / bnorm
    k = 0
    while res > tol:
        if k >= max_iter:
            raise NonConvergenceError(
                f"CG did not converge in {max_iter} iterations (relative residual {res:.3e})", res, k
            )
        ad = matrix @ d
        alpha = rz / (d @ ad)
        x += alpha * d
        r -= alpha * ad
        k += 1
        res = np.linalg.norm(r) / bnorm
        z = inv_d * r
        rz_new = r @ z
        d = z + (rz_new / rz) * d
        rz = rz_new
    return x, k, res


def solve_spd(matrix, rhs, tol=1e-10, max_iter=None, x0=None, diag=None) -> np.ndarray:
    """Solve an SPD system to relative residual ``tol``."""
    return pcg(matrix, rhs, tol=tol, max_iter=max_iter, x0=x0, diag=diag)[0]


# ---------------------------------------------------------------- fields


@dataclass(eq=False)
class FeField:
    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_nodes,):
            raise ValueError(f"field needs {self.mesh.n_nodes} nodal values, got shape {self.values.shape}")

    @classmethod
    def interpolate(cls, mesh: Mesh, func):
        return cls(mesh, _sample(func, mesh.nodes))

    def gradients(self) -> np.ndarray:
        """Element-wise constant gradients, shape (T, 2)."""
        _, grads, _ = _geometry(self.mesh)
        return np.einsum("ti,tid->td", self.values[self.mesh.triangles], grads)

    def __call__(self, points):
        return evaluate(self, points)


def mass_matrix(mesh: Mesh):
    if "mass" not in mesh._cache:
        mesh._cache["mass"] = assemble_mass(mesh)
    return mesh._cache["mass"]


def laplace_matrix(mesh: Mesh):
    if "laplace" not in mesh._cache:
        mesh._cache["laplace"] = assemble_stiffness(mesh, 1.0)
    return mesh._cache["laplace"]


def l2_norm(field: FeField) -> float:
    v = field.values
    return math.sqrt(max(float(v @ (mass_matrix(field.mesh) @ v)), 0.0))


def h1_seminorm(field: FeField) -> float:
    v = field.values
    return math.sqrt(max(float(v @ (laplace_matrix(field.mesh) @ v)), 0.0))


# ---------------------------------------------------------------- evaluation


class PointLocator:
    """Uniform background grid of candidate triangles for point location."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        p = mesh.nodes[mesh.triangles]
        self.lo = mesh.nodes.min(axis=0)
        span = mesh.nodes.max(axis=0) - self.lo
        self.nb = max(1, int(math.sqrt(mesh.n_triangles / 2.0)))
        self.size = np.where(span > 0, span, 1.0) / self.nb
        pad = 1e-9 * self.size
        lo_idx = self._cell((p.min(axis=1) - pad))
        hi_idx = self._cell((p.max(axis=1) + pad))
        buckets, tris = [], []
        spans = hi_idx - lo_idx
        for dx in range(spans[:, 0].max() + 1):
            for dy in range(spans[:, 1].max() + 1):
                ok = (dx <= spans[:, 0]) & (dy <= spans[:, 1])
                t = np.flatnonzero(ok)
                buckets.append((lo_idx[t, 0] + dx) * self.nb + lo_idx[t, 1] + dy)
                tris.append(t)
        buckets = np.concatenate(buckets)
        tris = np.concatenate(tris)
        order = np.lexsort((tris, buckets))
        buckets, tris = buckets[order], tris[order]
        counts = np.bincount(buckets, minlength=self.nb * self.nb)
        width = counts.max()
        table = -np.ones((self.nb * self.nb, width), dtype=np.int64)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        slot = np.arange(len(buckets)) - starts[buckets]
        table[buckets, slot] = tris
        self.table = table
        # barycentric transforms: lambda_{1,2} = T^{-1} (x - p0)
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        self.p0 = p[:, 0]
        self.inv = np.stack(
            [np.stack([d2[:, 1], -d2[:, 0]], -1), np.stack([-d1[:, 1], d1[:, 0]], -1)], axis=1
        ) / det[:, None, None]

    def _cell(self, x):
        idx = np.floor((x - self.lo) / self.size).astype(np.int64)
        return np.clip(idx, 0, self.nb - 1)

    def locate(self, points, tol=INSIDE_TOL):
        """Containing triangle and barycentric coordinates for each point."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        c = self._cell(pts)
        cand = self.table[c[:, 0] * self.nb + c[:, 1]]
        safe = np.where(cand >= 0, cand, 0)
        rel = pts[:, None, :] - self.p0[safe]
        l12 = np.einsum("pcij,pcj->pci", self.inv[safe], rel)
        lam = np.concatenate([1.0 - l12.sum(-1, keepdims=True), l12], axis=-1)
        score = np.where(cand >= 0, lam.min(-1), -np.inf)
        best = score.argmax(axis=1)
        rows = np.arange(len(pts))
        if np.any(score[rows, best] < -tol):
            bad = pts[score[rows, best] < -tol][0]
            raise OutOfDomainError(f"point ({bad[0]:.6g}, {bad[1]:.6g}) lies outside the mesh")
        return cand[rows, best], lam[rows, best]


def locator(mesh: Mesh) -> PointLocator:
    if "locator" not in mesh._cache:
        mesh._cache["locator"] = PointLocator(mesh)
    return mesh._cache["locator"]


def evaluate(field: FeField, points):
    """P1 interpolation of ``field`` at one point (returns float) or many (array)."""
    pts = np.asarray(points, dtype=float)
    tri, lam = locator(field.mesh).locate(pts)
    vals = np.einsum("pi,pi->p", field.values[field.mesh.triangles[tri]], lam)
    return float(vals[0]) if pts.ndim == 1 else vals.reshape(pts.shape[:-1])


def evaluate_gradient(field: FeField, points):
    """Gradient of the containing triangle at each point, shape (..., 2)."""
    pts = np.asarray(points, dtype=float)
    tri, _ = locator(field.mesh).locate(pts)
    return field.gradients()[tri].reshape(pts.shape[:-1] + (2,))


# ---------------------------------------------------------------- Poincare


@dataclass(frozen=True)
class PoincareEstimate:
    c_p: float
    mesh: Mesh
    tag: Tag
    iterations: int


def estimate_poincare(mesh: Mesh, tag=Tag.EXTERIOR, tol=1e-9, max_iter=500) -> PoincareEstimate:
    """c_p = 1/lambda_min of K x = lambda M x with zero values on ``tag``,
    by inverse power iteration."""
    tags = _tags(tag)
    key = ("poincare", tags)
    if key in mesh._cache:
        return mesh._cache[key]
    system = apply_dirichlet(laplace_matrix(mesh), np.zeros(mesh.n_nodes), mesh, tag, 0.0)
    k = system.matrix
    m = system.prolong.T @ mass_matrix(mesh) @ system.prolong
    x = np.ones(k.shape[0])
    x /= math.sqrt(x @ (m @ x))
    lam = (x @ (k @ x))
    for it in range(1, max_iter + 1):
        y = solve_spd(k, m @ x, tol=1e-12, x0=x / lam)
        y /= math.sqrt(y @ (m @ y))
        lam_new = y @ (k @ y)
        x = y
        if abs(lam_new - lam) <= tol * lam_new:
            est = PoincareEstimate(1.0 / lam_new, mesh, tags[0] if len(tags) == 1 else tags, it)
            mesh._cache[key] = est
            return est
        lam = lam_new
    raise NonConvergenceError(f"inverse power iteration stagnated after {max_iter} steps", None, max_iter)
