import math

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as sla
from hypothesis import given, settings, strategies as st

from lscheme_homog import fem
from lscheme_homog.fem import FeField
from lscheme_homog.mesh import Mesh, PerforationSpec, Tag, generate_cell, generate_perforated, generate_square

REF = Mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]], [[0, 1], [1, 2], [2, 0]], [1, 1, 1])


def poisson_center_series(terms=400):
    """u(1/2,1/2) for -lap u = 1 on the unit square, zero boundary values."""
    total = 0.0
    for m in range(1, terms, 2):
        n = np.arange(1, terms, 2)
        total += np.sum(16.0 / (np.pi**4 * m * n * (m * m + n * n)) * np.sin(m * np.pi / 2) * np.sin(n * np.pi / 2))
    return total


def test_reference_stiffness():
    k = fem.local_stiffness(REF.nodes)
    assert np.allclose(k, [[1, -0.5, -0.5], [-0.5, 0.5, 0], [-0.5, 0, 0.5]], atol=1e-15)
    assert np.allclose(fem.assemble_stiffness(REF, 1.0).toarray(), k)


def test_reference_mass_and_load():
    mass = fem.assemble_mass(REF).toarray()
    assert np.allclose(mass, 0.5 / 12 * np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]))
    assert np.allclose(fem.assemble_load(REF, 1.0), 0.5 / 3)


@pytest.mark.parametrize("mesh", [generate_square(8), generate_cell(16, 0.4)])
def test_stiffness_properties(mesh):
    coef = lambda x, y: 1.0 / (2.0 + np.cos(2 * np.pi * x) * np.cos(2 * np.pi * y))
    k = fem.assemble_stiffness(mesh, coef)
    assert abs(k - k.T).max() < 1e-14
    assert np.abs(k @ np.ones(mesh.n_nodes)).max() < 1e-12
    k1 = fem.assemble_stiffness(mesh, 1.0)
    k2 = fem.assemble_stiffness(mesh, 2.0 * np.eye(2))
    assert abs(k2 - 2 * k1).max() < 1e-14


def test_stiffness_rejects_nonpositive():
    with pytest.raises(fem.EllipticityError):
        fem.assemble_stiffness(generate_square(2), lambda x, y: x - 0.5)
    with pytest.raises(fem.EllipticityError):
        fem.assemble_stiffness(generate_square(2), np.array([[1.0, 0.0], [0.0, -1.0]]))


def test_mass_sums(perforated):
    assert abs(fem.assemble_mass(generate_square(16)).sum() - 1.0) < 1e-12
    m = perforated(0.25)
    assert abs(fem.assemble_mass(m).sum() - m.area()) < 1e-12
    assert abs(fem.assemble_load(m, 1.0).sum() - m.area()) < 1e-12
    assert not np.any(fem.assemble_load(m, 0.0))


def test_poisson_center_value():
    mesh = generate_square(32)
    k = fem.assemble_stiffness(mesh, 1.0)
    system = fem.apply_dirichlet(k, fem.assemble_load(mesh, 1.0), mesh, Tag.EXTERIOR, 0.0)
    assert abs(system.matrix - system.matrix.T).max() == 0
    u = FeField(mesh, system.solve())
    center = fem.evaluate(u, [0.5, 0.5])
    assert abs(center - poisson_center_series()) < 2e-3
    assert center == pytest.approx(u.values.max())


def test_dirichlet_all_nodes_and_value():
    mesh = generate_square(1)
    system = fem.apply_dirichlet(fem.assemble_stiffness(mesh, 1.0), np.ones(4), mesh, Tag.EXTERIOR, 0.7)
    assert np.all(system.solve() == 0.7)
    mesh = generate_square(4)
    system = fem.apply_dirichlet(fem.assemble_stiffness(mesh, 1.0), np.zeros(mesh.n_nodes), mesh, "EXTERIOR", 1.5)
    assert np.allclose(system.solve(), 1.5, atol=1e-9)


def test_dirichlet_unknown_tag():
    mesh = generate_square(2)
    with pytest.raises(ValueError):
        fem.apply_dirichlet(fem.assemble_stiffness(mesh, 1.0), np.zeros(9), mesh, Tag.HOLE)
    with pytest.raises(ValueError):
        fem.apply_dirichlet(fem.assemble_stiffness(mesh, 1.0), np.zeros(9), mesh, "INLET")


def test_periodic_mean_constant_rhs():
    mesh = generate_cell(16, 0.3)
    k = fem.assemble_stiffness(mesh, 1.0)
    system = fem.apply_periodic_and_mean(k, np.ones(mesh.n_nodes), mesh)
    x = system.solve(tol=1e-12)
    assert abs(fem.lumped_mass(mesh) @ x) < 1e-10
    a, b = mesh.periodic_pairs.T
    assert np.array_equal(x[a], x[b])


def test_periodic_requires_pairs():
    mesh = generate_square(4)
    with pytest.raises(ValueError):
        fem.apply_periodic_and_mean(fem.assemble_stiffness(mesh, 1.0), np.zeros(mesh.n_nodes), mesh)


def test_solver_trivial_systems():
    x, it, res = fem.pcg(sp.identity(5, format="csr"), np.arange(5.0))
    assert it == 1 and np.allclose(x, np.arange(5.0))
    d = sp.diags(np.arange(1.0, 11.0)).tocsr()
    b = np.linspace(1, 2, 10)
    x, _, res = fem.pcg(d, b, tol=1e-12)
    assert res < 1e-12 and np.allclose(x, b / np.arange(1.0, 11.0))


def test_solver_nonconvergence():
    mesh = generate_square(16)
    system = fem.apply_dirichlet(fem.assemble_stiffness(mesh, 1.0), fem.assemble_load(mesh, 1.0), mesh, Tag.EXTERIOR)
    with pytest.raises(fem.NonConvergenceError) as err:
        fem.solve_spd(system.matrix, system.rhs, tol=1e-12, max_iter=2)
    assert err.value.residual > 1e-12


def test_solver_deterministic():
    mesh = generate_square(16)
    system = fem.apply_dirichlet(fem.assemble_stiffness(mesh, 1.0), fem.assemble_load(mesh, 1.0), mesh, Tag.EXTERIOR)
    assert np.array_equal(system.solve(), system.solve())


@given(st.integers(min_value=2, max_value=40), st.integers(min_value=0, max_value=10**6))
@settings(max_examples=25, deadline=None)
def test_solver_residual_property(n, seed):
    rng = np.random.default_rng(seed)
    a = sp.random(n, n, density=0.3, random_state=rng)
    mat = (a @ a.T + sp.identity(n)).tocsr()
    b = rng.standard_normal(n)
    x, _, res = fem.pcg(mat, b, tol=1e-10)
    assert np.linalg.norm(mat @ x - b) <= 1.01e-10 * np.linalg.norm(b)


def test_norms():
    mesh = generate_square(8)
    c = FeField(mesh, np.full(mesh.n_nodes, 3.0))
    assert fem.l2_norm(c) == pytest.approx(3.0)
    assert fem.h1_seminorm(c) < 1e-12
    x = FeField.interpolate(mesh, lambda x, y: x)
    assert fem.h1_seminorm(x) == pytest.approx(1.0)
    cell = generate_cell(16, 0.4)
    assert fem.l2_norm(FeField(cell, np.full(cell.n_nodes, 2.0))) == pytest.approx(2 * math.sqrt(cell.area()))


def test_evaluate(perforated):
    mesh = perforated(0.5)
    f = FeField.interpolate(mesh, lambda x, y: x + y)
    assert fem.evaluate(f, mesh.nodes[17]) == f.values[17]
    rng = np.random.default_rng(0)
    tri = rng.integers(mesh.n_triangles, size=200)
    w = rng.dirichlet(np.ones(3), size=200)
    pts = np.einsum("pi,pid->pd", w, mesh.nodes[mesh.triangles[tri]])
    assert np.abs(fem.evaluate(f, pts) - pts.sum(axis=1)).max() < 1e-12
    g = FeField.interpolate(mesh, lambda x, y: np.sin(3 * x) * y)
    a, b = mesh.edges()[0][mesh.edges()[1] == 2][5]
    mid = 0.5 * (mesh.nodes[a] + mesh.nodes[b])
    assert fem.evaluate(g, mid) == pytest.approx(0.5 * (g.values[a] + g.values[b]), abs=1e-14)


def test_evaluate_out_of_domain(perforated):
    mesh = perforated(0.5)
    f = FeField(mesh, np.zeros(mesh.n_nodes))
    with pytest.raises(fem.OutOfDomainError):
        fem.evaluate(f, [0.25, 0.25])  # hole center
    with pytest.raises(fem.OutOfDomainError):
        fem.evaluate(f, [1.1, 0.5])


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
@settings(max_examples=30, deadline=None)
def test_evaluate_reproduces_linears(a, b, c):
    mesh = generate_cell(8, 0.3)
    f = FeField.interpolate(mesh, lambda x, y: a * x + b * y + c)
    pts = np.random.default_rng(1).random((50, 2))
    pts = pts[np.hypot(*(pts - 0.5).T) > 0.31]
    assert np.abs(fem.evaluate(f, pts) - (a * pts[:, 0] + b * pts[:, 1] + c)).max() < 1e-12
    assert np.allclose(fem.evaluate_gradient(f, pts), [a, b], atol=1e-12)


def _manufactured(n):
    mesh = generate_square(n)
    src = lambda x, y: 2 * np.pi**2 * np.sin(np.pi * x) * np.sin(np.pi * y)
    system = fem.apply_dirichlet(fem.assemble_stiffness(mesh, 1.0), fem.assemble_load(mesh, src), mesh, Tag.EXTERIOR)
    u = FeField(mesh, system.solve(tol=1e-12))
    mids, w = fem.quadrature_points(mesh)
    x, y = mids[..., 0], mids[..., 1]
    tris = mesh.triangles
    uq = 0.5 * (u.values[tris] + u.values[np.roll(tris, -1, axis=1)])
    err_l2 = math.sqrt(np.sum(w * (uq - np.sin(np.pi * x) * np.sin(np.pi * y)) ** 2))
    g = u.gradients()[:, None, :]
    gx = np.pi * np.cos(np.pi * x) * np.sin(np.pi * y)
    gy = np.pi * np.sin(np.pi * x) * np.cos(np.pi * y)
    err_h1 = math.sqrt(np.sum(w * ((g[..., 0] - gx) ** 2 + (g[..., 1] - gy) ** 2)))
    return err_l2, err_h1


def manufactured_orders():
    errs = np.array([_manufactured(n) for n in (8, 16, 32, 64)])
    orders = np.log2(errs[:-1] / errs[1:])
    return orders[:, 0], orders[:, 1]


def test_manufactured_convergence():
    l2, h1 = manufactured_orders()
    assert np.all(l2 >= 1.8) and np.all(h1 >= 0.9)


def test_poincare_square():
    exact = 1 / (2 * np.pi**2)
    c64 = fem.estimate_poincare(generate_square(64)).c_p
    c128 = fem.estimate_poincare(generate_square(128)).c_p
    assert abs(c64 - exact) / exact < 0.02
    assert abs(c64 - c128) / c64 < 0.02


def test_poincare_perforated(perforated):
    mesh = perforated(0.25)
    square = fem.estimate_poincare(generate_square(64)).c_p
    both = fem.estimate_poincare(mesh, (Tag.EXTERIOR, Tag.HOLE), tol=1e-8, max_iter=5000)
    # oracle: shift-invert Lanczos on the same pencil
    system = fem.apply_dirichlet(fem.laplace_matrix(mesh), np.zeros(mesh.n_nodes), mesh, (Tag.EXTERIOR, Tag.HOLE))
    m = system.prolong.T @ fem.mass_matrix(mesh) @ system.prolong
    lam = sla.eigsh(system.matrix, k=1, M=m, sigma=0, which="LM")[0][0]
    assert both.c_p == pytest.approx(1 / lam, rel=1e-4)
    # clamped holes shrink the constant (domain monotonicity)
    assert both.c_p <= 1.05 * square
    # holes with the natural condition enlarge it
    assert fem.estimate_poincare(mesh).c_p > square


def test_poincare_stagnation():
    with pytest.raises(fem.NonConvergenceError):
        fem.estimate_poincare(generate_square(16), tol=1e-15, max_iter=2)
