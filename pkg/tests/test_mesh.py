import numpy as np
import pytest

from lsrb import mesh


@pytest.mark.parametrize("n", [2, 4, 10])
def test_unit_square_counts(n):
    m = mesh.unit_square_mesh(n)
    assert m.n_vertices == (n + 1) ** 2
    assert m.n_cells == 2 * n * n
    assert m.n_edges == 3 * n * n + 2 * n
    assert m.areas.sum() == pytest.approx(1.0, abs=1e-14)
    assert np.all(m.areas > 0)
    assert m.h == pytest.approx(np.sqrt(2) / n)


def test_boundary_tags():
    n = 6
    m = mesh.unit_square_mesh(n)
    tags = m.boundary_edge_tag
    for tag in (mesh.BOTTOM, mesh.RIGHT, mesh.TOP, mesh.LEFT):
        assert np.sum(tags == tag) == n
    assert len(m.boundary_edges) == 4 * n
    assert np.all(tags[m.edge_cells[:, 1] >= 0] == mesh.INTERIOR)


def test_edge_signs_opposite_on_shared_edges():
    m = mesh.unit_square_mesh(4)
    sign = np.zeros((m.n_edges, 2))
    count = np.zeros(m.n_edges, dtype=int)
    for c in range(m.n_cells):
        for i in range(3):
            e = m.cell_edges[c, i]
            sign[e, count[e]] = m.cell_edge_sign[c, i]
            count[e] += 1
    interior = count == 2
    assert np.all(sign[interior, 0] == -sign[interior, 1])


def test_local_edge_opposite_vertex():
    m = mesh.unit_square_mesh(4)
    for c in range(m.n_cells):
        for i in range(3):
            assert m.cells[c, i] not in m.edges[m.cell_edges[c, i]]


def test_edge_normals_unit_and_orthogonal():
    m = mesh.unit_square_mesh(4)
    d = m.vertices[m.edges[:, 1]] - m.vertices[m.edges[:, 0]]
    nrm = m.edge_normals
    np.testing.assert_allclose(np.hypot(nrm[:, 0], nrm[:, 1]), 1.0)
    np.testing.assert_allclose(np.einsum("ed,ed->e", nrm, d), 0.0, atol=1e-15)


def test_subdomain_rule_applied():
    m = mesh.unit_square_mesh(4, lambda p: np.where(p[:, 0] < 0.5, 1, 2))
    left = m.centroids[:, 0] < 0.5
    assert np.all(m.cell_subdomain[left] == 1)
    assert np.all(m.cell_subdomain[~left] == 2)


def test_refine_uniform():
    coarse = mesh.unit_square_mesh(4, lambda p: (p[:, 1] > 0.5).astype(int))
    fine, parent = mesh.refine_uniform(coarse)
    assert fine.n_cells == 4 * coarse.n_cells
    assert fine.n_cells_per_side == 8
    np.testing.assert_allclose(fine.areas, coarse.areas[parent] / 4)
    np.testing.assert_array_equal(fine.cell_subdomain, coarse.cell_subdomain[parent])
    np.testing.assert_array_equal(fine.vertices[: coarse.n_vertices], coarse.vertices)
    # children lie inside their parents
    for c in range(0, fine.n_cells, 7):
        P = coarse.vertices[coarse.cells[parent[c]]]
        for x in fine.vertices[fine.cells[c]]:
            J = np.column_stack([P[1] - P[0], P[2] - P[0]])
            lam = np.linalg.solve(J, x - P[0])
            assert lam.min() >= -1e-12 and lam.sum() <= 1 + 1e-12
    # same vertex set as a structured mesh twice as fine
    direct = mesh.unit_square_mesh(8)
    a = np.round(fine.vertices, 12)
    b = np.round(direct.vertices, 12)
    assert {tuple(v) for v in a} == {tuple(v) for v in b}


@pytest.mark.parametrize("n", [0, 1, 3])
def test_bad_sizes(n):
    with pytest.raises(ValueError):
        mesh.unit_square_mesh(n)


def test_clockwise_cells_rejected():
    with pytest.raises(ValueError):
        mesh.TriMesh(np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]]), np.array([[0, 1, 2]]), [0])


def test_interval_mesh():
    m = mesh.interval_mesh(8)
    assert m.n_intervals == 8
    assert m.h == pytest.approx(1 / 8)
    with pytest.raises(ValueError):
        mesh.interval_mesh(1)
    with pytest.raises(ValueError):
        mesh.IntervalMesh(np.array([0.0, 0.7, 0.5, 1.0]))


def test_write_csv(tmp_path):
    m = mesh.unit_square_mesh(2)
    m.write_csv(tmp_path)
    assert len((tmp_path / "vertices.csv").read_text().splitlines()) == 10
    assert len((tmp_path / "cells.csv").read_text().splitlines()) == 9


@pytest.mark.parametrize("levels", [0, 1, 2])
def test_euler_relation_and_min_area(levels):
    m = mesh.unit_square_mesh(4)
    a0 = m.areas.min()
    for _ in range(levels):
        m, _ = mesh.refine_uniform(m)
    assert m.n_vertices - m.n_edges + m.n_cells == 1
    assert m.areas.min() == a0 / 4**levels
