"""Lowest-order Raviart-Thomas and P1 spaces, assembly, boundary conditions.

Flux unknowns are RT0 edge fluxes (integral of ``q.n`` over the edge, with
the global lower-to-higher vertex orientation); scalar unknowns are P1 nodal
values. Product-space vectors store the flux block first.

Bilinear form terms on the product space ``(q, u) x (p, v)``:

``"q.q"``        (q, p)
``"div.div"``    (div q, div p)
``"q.grad"``     (q, grad v) + (grad u, p)   (symmetric coupling)
``"grad.grad"``  (grad u, grad v)
``"u.u"``        (u, v)

Linear form terms pair a vector datum ``g`` with the test function:
``"g.q"`` is (g, p) and ``"g.grad"`` is (g, grad v).

The same names are used on the 1D product space ``(q, u)`` with both
components continuous P1, where ``div`` and ``grad`` both mean d/dx.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Union

import numpy as np
import scipy.sparse as sp

from .linalg import factorize_spd
from .mesh import IntervalMesh, TriMesh

RT0 = "RT0"
P1 = "P1"
RT0_P1 = "RT0xP1"
P1_1D = "P1_1D"
P1_P1_1D = "P1xP1_1D"

FORM_TERMS = ("q.q", "div.div", "q.grad", "grad.grad", "u.u")
RHS_TERMS = ("g.q", "g.grad")

# degree-2 rule: barycentric points (2/3, 1/6, 1/6) and permutations
_QB = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
_QW = np.full(3, 1 / 3)

Region = Union[None, int, Iterable[int], Callable[[np.ndarray], np.ndarray]]
Coefficient = Union[None, float, Callable[[np.ndarray], np.ndarray]]


@dataclass(frozen=True, eq=False)
class FeSpace:
    """A finite element space on a triangle mesh or a 1D interval mesh.

    ``essential_dofs`` holds globally constrained degrees of freedom; all
    prescribed values are zero (homogeneous essential conditions).
    """

    kind: str
    mesh: Union[TriMesh, IntervalMesh]
    essential_dofs: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self) -> None:
        if self.kind not in (RT0, P1, RT0_P1, P1_1D, P1_P1_1D):
            raise ValueError(f"unknown space kind {self.kind!r}")
        one_d = self.kind in (P1_1D, P1_P1_1D)
        if one_d != isinstance(self.mesh, IntervalMesh):
            raise ValueError(f"{self.kind} does not live on {type(self.mesh).__name__}")
        object.__setattr__(
            self, "essential_dofs", np.unique(np.asarray(self.essential_dofs, dtype=np.int64))
        )

    @property
    def dim(self) -> int:
        return 1 if isinstance(self.mesh, IntervalMesh) else 2

    @property
    def n_flux(self) -> int:
        if self.kind in (RT0, RT0_P1):
            return self.mesh.n_edges
        if self.kind == P1_P1_1D:
            return len(self.mesh.nodes)
        return 0

    @property
    def n_scalar(self) -> int:
        if self.kind in (P1, RT0_P1):
            return self.mesh.n_vertices
        if self.kind in (P1_1D, P1_P1_1D):
            return len(self.mesh.nodes)
        return 0

    @property
    def flux_offset(self) -> int:
        return 0

    @property
    def scalar_offset(self) -> int:
        return self.n_flux

    @property
    def n_dofs(self) -> int:
        return self.n_flux + self.n_scalar

    @property
    def free_dofs(self) -> np.ndarray:
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[self.essential_dofs] = False
        return np.flatnonzero(mask)

    def with_essential(self, dofs) -> "FeSpace":
        return replace(self, essential_dofs=np.asarray(dofs, dtype=np.int64))

    def flux_part(self, x: np.ndarray) -> np.ndarray:
        return x[: self.n_flux]

    def scalar_part(self, x: np.ndarray) -> np.ndarray:
        return x[self.n_flux :]


def product_space(mesh: TriMesh, essential_dofs=()) -> FeSpace:
    return FeSpace(RT0_P1, mesh, np.asarray(essential_dofs, dtype=np.int64))


class _Geometry:
    """Per-cell quantities of a triangle mesh at the quadrature points."""

    def __init__(self, mesh: TriMesh):
        P = mesh.vertices[mesh.cells]  # (C, 3, 2)
        self.P = P
        self.area = mesh.areas
        J = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=2)  # columns
        Jinv = np.linalg.inv(J)
        g12 = Jinv  # rows are grad(lambda_1), grad(lambda_2)
        g0 = -g12.sum(axis=1, keepdims=True)
        self.grad = np.concatenate([g0, g12], axis=1)  # (C, 3, 2)
        self.points = np.einsum("qi,cid->cqd", _QB, P)  # (C, Q, 2)
        self.weights = self.area[:, None] * _QW[None, :]  # (C, Q)
        self.sign = mesh.cell_edge_sign.astype(float)
        # rt[c, q, i, :] = s_i (x_q - P_i) / (2|T|)
        diff = self.points[:, :, None, :] - P[:, None, :, :]
        self.rt = diff * (self.sign / (2 * self.area[:, None]))[:, None, :, None]
        self.div = self.sign / self.area[:, None]  # (C, 3)


def _geometry(mesh: TriMesh) -> _Geometry:
    geo = mesh.__dict__.get("_geometry_cache")
    if geo is None:
        geo = _Geometry(mesh)
        object.__setattr__(mesh, "_geometry_cache", geo)
    return geo


def _region_mask(tags: np.ndarray, region: Region) -> np.ndarray:
    if region is None:
        return np.ones(len(tags), dtype=bool)
    if callable(region):
        return np.asarray(region(tags), dtype=bool)
    if np.isscalar(region):
        return tags == region
    return np.isin(tags, list(region))


def _coef_values(coef: Coefficient, points: np.ndarray) -> np.ndarray:
    shape = points.shape[:-1]
    if coef is None:
        return np.ones(shape)
    if callable(coef):
        return np.broadcast_to(np.asarray(coef(points), dtype=float), shape)
    return np.full(shape, float(coef))


def _scatter(rows, cols, vals, n) -> sp.csr_matrix:
    return sp.coo_matrix(
        (vals.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)
    ).tocsr()


def assemble_form(
    space: FeSpace, term: str, region: Region = None, coef: Coefficient = None
) -> sp.csr_matrix:
    """Assemble one parameter-independent bilinear form term.

    ``region`` selects cells by subdomain tag; ``coef`` is an optional weight
    evaluated at the quadrature points (array of shape ``(..., dim)`` in).
    """
    if term not in FORM_TERMS:
        raise ValueError(f"unknown form term {term!r}")
    if space.dim == 1:
        return _assemble_form_1d(space, term, region, coef)
    needs_flux = term in ("q.q", "div.div", "q.grad")
    needs_scalar = term in ("q.grad", "grad.grad", "u.u")
    if (needs_flux and space.n_flux == 0) or (needs_scalar and space.n_scalar == 0):
        raise ValueError(f"term {term!r} does not apply to a {space.kind} space")

    mesh = space.mesh
    geo = _geometry(mesh)
    mask = _region_mask(mesh.cell_subdomain, region)
    kw = (_coef_values(coef, geo.points) * geo.weights)[mask]  # (C, Q)
    fdofs = (space.flux_offset + mesh.cell_edges)[mask]
    sdofs = (space.scalar_offset + mesh.cells)[mask]
    n = space.n_dofs

    if term == "q.q":
        rt = geo.rt[mask]
        local = np.einsum("cq,cqid,cqjd->cij", kw, rt, rt)
        r, c = fdofs, fdofs
    elif term == "div.div":
        dv = geo.div[mask]
        local = kw.sum(axis=1)[:, None, None] * dv[:, :, None] * dv[:, None, :]
        r, c = fdofs, fdofs
    elif term == "grad.grad":
        g = geo.grad[mask]
        local = kw.sum(axis=1)[:, None, None] * np.einsum("cid,cjd->cij", g, g)
        r, c = sdofs, sdofs
    elif term == "u.u":
        local = np.einsum("cq,qi,qj->cij", kw, _QB, _QB)
        r, c = sdofs, sdofs
    else:  # q.grad
        block = np.einsum("cq,cqid,cjd->cij", kw, geo.rt[mask], geo.grad[mask])
        A = _scatter(
            np.repeat(fdofs[:, :, None], 3, axis=2),
            np.repeat(sdofs[:, None, :], 3, axis=1),
            block,
            n,
        )
        return (A + A.T).tocsr()
    rows = np.repeat(r[:, :, None], 3, axis=2)
    cols = np.repeat(c[:, None, :], 3, axis=1)
    return _scatter(rows, cols, local, n)


def _vector_datum(g, points: np.ndarray) -> np.ndarray:
    if callable(g):
        return np.broadcast_to(np.asarray(g(points), dtype=float), points.shape)
    return np.broadcast_to(np.asarray(g, dtype=float), points.shape)


def assemble_rhs(
    space: FeSpace, term: str, g, region: Region = None, coef: Coefficient = None
) -> np.ndarray:
    """Assemble ``(coef * g, p)`` (term ``"g.q"``) or ``(coef * g, grad v)`` (``"g.grad"``)."""
    if term not in RHS_TERMS:
        raise ValueError(f"unknown right-hand side term {term!r}")
    if space.dim == 1:
        return _assemble_rhs_1d(space, term, g, region, coef)
    if (term == "g.q" and space.n_flux == 0) or (term == "g.grad" and space.n_scalar == 0):
        raise ValueError(f"term {term!r} does not apply to a {space.kind} space")
    mesh = space.mesh
    geo = _geometry(mesh)
    mask = _region_mask(mesh.cell_subdomain, region)
    kw = (_coef_values(coef, geo.points) * geo.weights)[mask]
    gv = _vector_datum(g, geo.points)[mask]  # (C, Q, 2)
    b = np.zeros(space.n_dofs)
    if term == "g.q":
        local = np.einsum("cq,cqd,cqid->ci", kw, gv, geo.rt[mask])
        np.add.at(b, (space.flux_offset + mesh.cell_edges)[mask], local)
    else:
        local = np.einsum("cq,cqd,cid->ci", kw, gv, geo.grad[mask])
        np.add.at(b, (space.scalar_offset + mesh.cells)[mask], local)
    return b


def x_norm_gram(space: FeSpace) -> sp.csr_matrix:
    """Gram matrix of the H(div) x H^1 inner product (per component for single spaces)."""
    terms = []
    if space.n_flux:
        terms += ["q.q", "div.div"]
    if space.n_scalar:
        terms += ["u.u", "grad.grad"]
    return sum(assemble_form(space, t) for t in terms).tocsr()


def apply_essential_bc(
    A: sp.spmatrix, b: np.ndarray, space: FeSpace, values: np.ndarray | None = None
) -> tuple[sp.csr_matrix, np.ndarray]:
    """Symmetric elimination of the space's essential dofs."""
    dofs = space.essential_dofs
    A = sp.csr_matrix(A, copy=True)
    b = np.array(b, dtype=float, copy=True)
    if len(dofs) == 0:
        return A, b
    vals = np.zeros(len(dofs)) if values is None else np.asarray(values, dtype=float)
    b -= A[:, dofs] @ vals
    keep = np.ones(space.n_dofs)
    keep[dofs] = 0.0
    D = sp.diags(keep)
    A = (D @ A @ D).tocsr()
    fixed = np.zeros(space.n_dofs)
    fixed[dofs] = 1.0
    A = (A + sp.diags(fixed)).tocsr()
    A.eliminate_zeros()
    b[dofs] = vals
    return A, b


def solve_spd(A, b: np.ndarray) -> np.ndarray:
    """Direct solve of a symmetric positive definite system."""
    b = np.asarray(b, dtype=float)
    solve = factorize_spd(A)
    x = solve(b)
    r = np.linalg.norm(A @ x - b)
    nb = np.linalg.norm(b)
    if nb > 0 and r > 1e-10 * nb:
        # one step of iterative refinement
        x += solve(b - A @ x)
    return x


# ---------------------------------------------------------------- interpolation


def interpolate(space: FeSpace, flux=None, scalar=None) -> np.ndarray:
    """Canonical interpolant: edge fluxes (2-point Gauss) and nodal values."""
    x = np.zeros(space.n_dofs)
    if space.dim == 1:
        nodes = space.mesh.nodes
        if flux is not None and space.n_flux:
            x[: space.n_flux] = flux(nodes)
        if scalar is not None and space.n_scalar:
            x[space.scalar_offset :] = scalar(nodes)
        return x
    mesh = space.mesh
    if flux is not None and space.n_flux:
        a = mesh.vertices[mesh.edges[:, 0]]
        d = mesh.vertices[mesh.edges[:, 1]] - a
        nrm = np.column_stack([d[:, 1], -d[:, 0]])  # |e| * unit normal
        total = np.zeros(mesh.n_edges)
        for t in (0.5 - 0.5 / np.sqrt(3), 0.5 + 0.5 / np.sqrt(3)):
            val = np.asarray(flux(a + t * d), dtype=float)
            total += 0.5 * np.einsum("ed,ed->e", val, nrm)
        x[: space.n_flux] = total
    if scalar is not None and space.n_scalar:
        x[space.scalar_offset :] = scalar(mesh.vertices)
    return x


def locate(mesh: TriMesh, points: np.ndarray) -> np.ndarray:
    """Index of a cell containing each point (brute force; for tests and probes)."""
    points = np.atleast_2d(points)
    P = mesh.vertices[mesh.cells]
    out = np.empty(len(points), dtype=np.int64)
    for k, x in enumerate(points):
        lam = _barycentric(P, x[None, :].repeat(len(P), axis=0))
        out[k] = int(np.argmax(lam.min(axis=1)))
    return out


def _barycentric(P: np.ndarray, x: np.ndarray) -> np.ndarray:
    J = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=2)
    l12 = np.linalg.solve(J, (x - P[:, 0])[..., None])[..., 0]
    return np.column_stack([1.0 - l12.sum(axis=1), l12])


def evaluate(
    space: FeSpace, coeffs: np.ndarray, points: np.ndarray, cells: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Point values ``(q(x), u(x))`` of a product-space function inside ``cells``."""
    mesh = space.mesh
    points = np.atleast_2d(points)
    if cells is None:
        cells = locate(mesh, points)
    P = mesh.vertices[mesh.cells[cells]]
    lam = _barycentric(P, points)
    q = np.zeros((len(points), 2))
    u = np.zeros(len(points))
    if space.n_flux:
        e = mesh.cell_edges[cells]
        s = mesh.cell_edge_sign[cells]
        area = mesh.areas[cells]
        c = coeffs[space.flux_offset + e] * s
        for i in range(3):
            q += c[:, i : i + 1] * (points - P[:, i]) / (2 * area[:, None])
    if space.n_scalar:
        u = np.einsum("ki,ki->k", lam, coeffs[space.scalar_offset + mesh.cells[cells]])
    return q, u


def cell_divergence(space: FeSpace, coeffs: np.ndarray) -> np.ndarray:
    mesh = space.mesh
    c = coeffs[space.flux_offset + mesh.cell_edges] * mesh.cell_edge_sign
    return c.sum(axis=1) / mesh.areas


def quadrature_fields(space: FeSpace, coeffs: np.ndarray):
    """Values of a product-space function at the cell quadrature points.

    Returns ``(points, weights, q, grad_u, div_q)`` with shapes ``(C, Q, 2)``,
    ``(C, Q)``, ``(C, Q, 2)``, ``(C, 2)`` and ``(C,)``.
    """
    mesh = space.mesh
    geo = _geometry(mesh)
    flux = coeffs[space.flux_offset + mesh.cell_edges]  # (C, 3)
    q = np.einsum("cqid,ci->cqd", geo.rt, flux)
    div = np.einsum("ci,ci->c", geo.div, flux)
    grad = np.einsum("cid,ci->cd", geo.grad, coeffs[space.scalar_offset + mesh.cells])
    return geo.points, geo.weights, q, grad, div


# ---------------------------------------------------------------- prolongation


def prolongation(coarse: FeSpace, fine: FeSpace, parent_map: np.ndarray) -> sp.csr_matrix:
    """Matrix mapping coarse coefficients to the identical function on the fine space.

    ``parent_map`` comes from :func:`lsrb.mesh.refine_uniform`; every fine
    cell must lie inside its parent.
    """
    if coarse.kind != fine.kind:
        raise ValueError("spaces must use the same element kinds")
    cm, fm = coarse.mesh, fine.mesh
    parent_map = np.asarray(parent_map, dtype=np.int64)
    if len(parent_map) != fm.n_cells:
        raise ValueError("parent map does not match the fine mesh")
    Pc = cm.vertices[cm.cells[parent_map]]  # (Cf, 3, 2)
    fine_pts = fm.vertices[fm.cells]  # (Cf, 3, 2)
    lam = np.stack([_barycentric(Pc, fine_pts[:, k]) for k in range(3)], axis=1)
    if lam.min() < -1e-10:
        raise ValueError("meshes are not nested")

    rows, cols, vals = [], [], []
    if coarse.n_scalar:
        r = fine.scalar_offset + fm.cells[:, :, None].repeat(3, axis=2)
        c = coarse.scalar_offset + cm.cells[parent_map][:, None, :].repeat(3, axis=1)
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(lam.ravel())
    if coarse.n_flux:
        fe = fm.cell_edges  # (Cf, 3)
        mid = fm.edge_midpoints[fe]  # (Cf, 3, 2)
        nrm = fm.edge_normals[fe] * fm.edge_lengths[fe][..., None]
        sign = cm.cell_edge_sign[parent_map].astype(float)
        area = cm.areas[parent_map]
        # flux of coarse basis j through fine edge k: |e| n.(s_j (m - P_j) / 2|T|)
        diff = mid[:, :, None, :] - Pc[:, None, :, :]  # (Cf, k, j, 2)
        flux = np.einsum("ckjd,ckd->ckj", diff, nrm) * (sign / (2 * area[:, None]))[:, None, :]
        r = fine.flux_offset + fe[:, :, None].repeat(3, axis=2)
        c = coarse.flux_offset + cm.cell_edges[parent_map][:, None, :].repeat(3, axis=1)
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(flux.ravel())
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    keep = np.abs(vals) > 1e-14
    rows, cols, vals = rows[keep], cols[keep], vals[keep]
    key = rows * coarse.n_dofs + cols
    _, first = np.unique(key, return_index=True)
    return sp.csr_matrix(
        (vals[first], (rows[first], cols[first])), shape=(fine.n_dofs, coarse.n_dofs)
    )


# ---------------------------------------------------------------- 1D


def interval_product_space(mesh: IntervalMesh) -> FeSpace:
    """(q, u) both continuous P1 with ``u(0) = u(1) = 0``."""
    nn = len(mesh.nodes)
    return FeSpace(P1_P1_1D, mesh, np.array([nn, 2 * nn - 1]))


def _assemble_form_1d(space: FeSpace, term: str, region: Region, coef: Coefficient):
    if region is not None:
        raise ValueError("1D spaces have no subdomains")
    if coef is not None:
        raise ValueError("1D assembly supports constant coefficients only")
    x = space.mesh.nodes
    h = np.diff(x)
    ne = len(h)
    conn = np.column_stack([np.arange(ne), np.arange(1, ne + 1)])
    mass = h[:, None, None] * np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    stiff = np.array([[1.0, -1.0], [-1.0, 1.0]]) / h[:, None, None]
    # (phi_i, psi_j') for P1 hats
    cross = np.broadcast_to(np.array([[-0.5, 0.5], [-0.5, 0.5]]), (ne, 2, 2))
    qo, so = space.flux_offset, space.scalar_offset
    has_q = space.n_flux > 0
    if term in ("q.q", "div.div", "q.grad") and not has_q:
        raise ValueError(f"term {term!r} does not apply to a {space.kind} space")
    local, r, c = {
        "q.q": (mass, qo + conn, qo + conn),
        "div.div": (stiff, qo + conn, qo + conn),
        "grad.grad": (stiff, so + conn, so + conn),
        "u.u": (mass, so + conn, so + conn),
        "q.grad": (cross, qo + conn, so + conn),
    }[term]
    rows = np.repeat(r[:, :, None], 2, axis=2)
    cols = np.repeat(c[:, None, :], 2, axis=1)
    A = _scatter(rows, cols, np.asarray(local), space.n_dofs)
    return (A + A.T).tocsr() if term == "q.grad" else A


def _assemble_rhs_1d(space, term, g, region, coef):
    raise ValueError("1D spaces carry no right-hand side terms")
