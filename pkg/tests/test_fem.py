import numpy as np
import pytest
import scipy.sparse as sp

from lsrb import fem, mesh


@pytest.fixture(scope="module")
def space():
    return fem.product_space(mesh.unit_square_mesh(4))


def linear_flux(p):
    return np.stack([1.0 + 2.0 * p[..., 0] - p[..., 1], 0.5 - p[..., 0] + 3.0 * p[..., 1]], axis=-1)


def rt_flux(p):
    # a + b x lies in RT0 on every cell; div = 2b
    return np.stack([0.3 + 1.5 * p[..., 0], -0.7 + 1.5 * p[..., 1]], axis=-1)


def test_dof_layout(space):
    m = space.mesh
    assert space.n_flux == m.n_edges
    assert space.n_scalar == m.n_vertices
    assert space.n_dofs == m.n_edges + m.n_vertices
    assert space.scalar_offset == m.n_edges
    x = np.arange(space.n_dofs, dtype=float)
    assert len(space.flux_part(x)) == m.n_edges
    assert len(space.scalar_part(x)) == m.n_vertices


def test_rt_interpolant_reproduces_rt_fields(space):
    x = fem.interpolate(space, flux=rt_flux, scalar=lambda p: 2 * p[:, 0] - p[:, 1])
    rng = np.random.default_rng(0)
    cells = rng.integers(0, space.mesh.n_cells, 20)
    lam = rng.dirichlet(np.ones(3), 20)
    pts = np.einsum("ki,kid->kd", lam, space.mesh.vertices[space.mesh.cells[cells]])
    q, u = fem.evaluate(space, x, pts, cells)
    np.testing.assert_allclose(q, rt_flux(pts), atol=1e-13)
    np.testing.assert_allclose(u, 2 * pts[:, 0] - pts[:, 1], atol=1e-13)
    np.testing.assert_allclose(fem.cell_divergence(space, x), 3.0, atol=1e-12)


def test_divergence_theorem_for_linear_field(space):
    # cellwise divergence of the interpolant equals the mean divergence (= 5)
    x = fem.interpolate(space, flux=linear_flux)
    np.testing.assert_allclose(fem.cell_divergence(space, x), 5.0, atol=1e-12)


def test_form_values_against_exact_integrals(space):
    x = fem.interpolate(space, flux=rt_flux, scalar=lambda p: p[:, 0] + p[:, 1])
    qq = x @ (fem.assemble_form(space, "q.q") @ x)
    # int (0.3 + 1.5x)^2 + (-0.7 + 1.5y)^2 over the unit square
    exact = (0.09 + 0.45 + 0.75) + (0.49 - 1.05 + 0.75)
    assert qq == pytest.approx(exact, rel=1e-12)
    assert x @ (fem.assemble_form(space, "div.div") @ x) == pytest.approx(9.0, rel=1e-12)
    assert x @ (fem.assemble_form(space, "grad.grad") @ x) == pytest.approx(2.0, rel=1e-12)
    assert x @ (fem.assemble_form(space, "u.u") @ x) == pytest.approx(7.0 / 6.0, rel=1e-12)
    # 2 (q, grad u) = 2 int (0.3 + 1.5x) + (-0.7 + 1.5y)
    assert x @ (fem.assemble_form(space, "q.grad") @ x) == pytest.approx(2 * 1.1, rel=1e-12)


def test_forms_symmetric_and_gram_positive(space):
    for term in fem.FORM_TERMS:
        A = fem.assemble_form(space, term)
        assert abs(A - A.T).max() < 1e-14
    G = fem.x_norm_gram(space).toarray()
    assert np.linalg.eigvalsh(G).min() > 0


def test_region_and_coefficient():
    m = mesh.unit_square_mesh(4, lambda p: np.where(p[:, 0] < 0.5, 1, 2))
    V = fem.product_space(m)
    A1 = fem.assemble_form(V, "grad.grad", region=1)
    A2 = fem.assemble_form(V, "grad.grad", region=2)
    A = fem.assemble_form(V, "grad.grad")
    assert abs(A1 + A2 - A).max() < 1e-13
    B = fem.assemble_form(V, "grad.grad", coef=lambda p: np.where(p[..., 0] < 0.5, 3.0, 1.0))
    assert abs(B - (3 * A1 + A2)).max() < 1e-13


def test_rhs_terms(space):
    g = np.array([0.0, -1.0])
    b = fem.assemble_rhs(space, "g.q", g)
    x = fem.interpolate(space, flux=rt_flux)
    # int -(-0.7 + 1.5 y) = -0.05
    assert x @ b == pytest.approx(-0.05, rel=1e-12)
    c = fem.assemble_rhs(space, "g.grad", g)
    y = fem.interpolate(space, scalar=lambda p: p[:, 1] ** 1)
    assert y @ c == pytest.approx(-1.0, rel=1e-12)
    with pytest.raises(ValueError):
        fem.assemble_rhs(space, "g.div", g)


def test_unknown_term(space):
    with pytest.raises(ValueError):
        fem.assemble_form(space, "curl.curl")


def test_essential_bc_and_solve(space):
    A = fem.x_norm_gram(space)
    b = np.ones(space.n_dofs)
    V = space.with_essential(np.array([0, 5, space.n_dofs - 1]))
    Ab, bb = fem.apply_essential_bc(A, b, V)
    x = fem.solve_spd(Ab, bb)
    np.testing.assert_allclose(x[V.essential_dofs], 0.0)
    free = V.free_dofs
    r = (A @ x - b)[free]
    assert np.linalg.norm(r) < 1e-10 * np.linalg.norm(b)
    assert abs(Ab - Ab.T).max() < 1e-14


def test_prolongation_is_exact(space):
    fine_mesh, parent = mesh.refine_uniform(space.mesh)
    fine = fem.product_space(fine_mesh)
    P = fem.prolongation(space, fine, parent)
    rng = np.random.default_rng(3)
    x = rng.standard_normal(space.n_dofs)
    y = P @ x
    cells = rng.integers(0, fine_mesh.n_cells, 30)
    lam = rng.dirichlet(np.ones(3), 30)
    pts = np.einsum("ki,kid->kd", lam, fine_mesh.vertices[fine_mesh.cells[cells]])
    qf, uf = fem.evaluate(fine, y, pts, cells)
    qc, uc = fem.evaluate(space, x, pts, parent[cells])
    np.testing.assert_allclose(qf, qc, atol=1e-12)
    np.testing.assert_allclose(uf, uc, atol=1e-12)
    # norms are preserved by the nested embedding
    Gc, Gf = fem.x_norm_gram(space), fem.x_norm_gram(fine)
    assert y @ (Gf @ y) == pytest.approx(x @ (Gc @ x), rel=1e-12)


def test_quadrature_fields_match_evaluate(space):
    x = np.random.default_rng(1).standard_normal(space.n_dofs)
    pts, w, q, grad, div = fem.quadrature_fields(space, x)
    assert w.sum() == pytest.approx(1.0)
    cells = np.repeat(np.arange(space.mesh.n_cells), pts.shape[1])
    qe, _ = fem.evaluate(space, x, pts.reshape(-1, 2), cells)
    np.testing.assert_allclose(q.reshape(-1, 2), qe, atol=1e-12)
    np.testing.assert_allclose(div, fem.cell_divergence(space, x), atol=1e-12)


def test_interval_space():
    V = fem.interval_product_space(mesh.interval_mesh(10))
    assert V.n_dofs == 22
    assert len(V.free_dofs) == 20
    M = fem.assemble_form(V, "q.q")
    one = np.zeros(V.n_dofs)
    one[:11] = 1.0
    assert one @ (M @ one) == pytest.approx(1.0)
    K = fem.assemble_form(V, "grad.grad")
    x = np.zeros(V.n_dofs)
    x[11:] = np.linspace(0, 1, 11)
    assert x @ (K @ x) == pytest.approx(1.0)
    C = fem.assemble_form(V, "q.grad")
    assert (one + x) @ (C @ (one + x)) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        fem.assemble_rhs(V, "g.q", 1.0)


def test_solve_spd_rejects_indefinite():
    from lsrb.linalg import MatrixNotSPDError

    with pytest.raises(MatrixNotSPDError):
        fem.solve_spd(sp.diags([1.0, -1.0]).tocsc(), np.ones(2))
