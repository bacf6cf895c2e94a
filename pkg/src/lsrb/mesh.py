"""Structured triangulations of the unit square and uniform 1D interval meshes."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

# boundary edge tags; 0 marks interior edges
INTERIOR = 0
BOTTOM = 1
RIGHT = 2
TOP = 3
LEFT = 4

SubdomainRule = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Conforming triangulation with counter-clockwise cells.

    Edges are stored with global orientation from the lower to the higher
    vertex index. ``cell_edges[c, i]`` is the edge opposite local vertex
    ``i`` and ``cell_edge_sign[c, i]`` is +1 when the outward normal of
    cell ``c`` on that edge agrees with the global edge normal.
    """

    vertices: np.ndarray
    cells: np.ndarray
    cell_subdomain: np.ndarray
    edges: np.ndarray = field(init=False)
    cell_edges: np.ndarray = field(init=False)
    cell_edge_sign: np.ndarray = field(init=False)
    edge_cells: np.ndarray = field(init=False)
    boundary_edge_tag: np.ndarray = field(init=False)
    n_cells_per_side: int | None = None

    def __post_init__(self) -> None:
        vertices = np.ascontiguousarray(self.vertices, dtype=float)
        cells = np.ascontiguousarray(self.cells, dtype=np.int64)
        if cells.ndim != 2 or cells.shape[1] != 3:
            raise ValueError("cells must be an (n, 3) array")
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(
            self, "cell_subdomain", np.asarray(self.cell_subdomain, dtype=np.int64)
        )
        if np.any(self.areas <= 0.0):
            raise ValueError("cells must be counter-clockwise with positive area")

        # local edge i is opposite local vertex i: (v[i+1], v[i+2])
        a = cells[:, [1, 2, 0]]
        b = cells[:, [2, 0, 1]]
        lo = np.minimum(a, b).ravel()
        hi = np.maximum(a, b).ravel()
        keys = lo * len(vertices) + hi
        uniq, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
        edges = np.column_stack([lo[first], hi[first]])
        cell_edges = inverse.reshape(-1, 3)
        sign = np.where(a < b, 1, -1).astype(np.int64)

        n_edges = len(edges)
        counts = np.bincount(inverse, minlength=n_edges)
        if np.any(counts > 2):
            raise ValueError("non-manifold edge: shared by more than two cells")
        order = np.argsort(inverse, kind="stable")
        owner = np.repeat(np.arange(len(cells)), 3)[order]
        start = np.concatenate([[0], np.cumsum(counts)[:-1]])
        edge_cells = -np.ones((n_edges, 2), dtype=np.int64)
        edge_cells[:, 0] = owner[start]
        two = counts == 2
        edge_cells[two, 1] = owner[start[two] + 1]

        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "cell_edges", cell_edges)
        object.__setattr__(self, "cell_edge_sign", sign)
        object.__setattr__(self, "edge_cells", edge_cells)
        object.__setattr__(self, "boundary_edge_tag", self._tag_boundary(counts))

    def _tag_boundary(self, counts: np.ndarray) -> np.ndarray:
        tags = np.zeros(len(self.edges), dtype=np.int64)
        mid = self.edge_midpoints
        tol = 1e-12
        on_boundary = counts == 1
        for tag, hit in (
            (BOTTOM, np.abs(mid[:, 1]) < tol),
            (RIGHT, np.abs(mid[:, 0] - 1.0) < tol),
            (TOP, np.abs(mid[:, 1] - 1.0) < tol),
            (LEFT, np.abs(mid[:, 0]) < tol),
        ):
            tags[on_boundary & hit] = tag
        return tags

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def areas(self) -> np.ndarray:
        p = self.vertices[self.cells]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.cells].mean(axis=1)

    @property
    def edge_midpoints(self) -> np.ndarray:
        return 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])

    @property
    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @property
    def edge_normals(self) -> np.ndarray:
        """Unit normals of the global edge orientation (tangent rotated clockwise)."""
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        n = np.column_stack([d[:, 1], -d[:, 0]])
        return n / np.hypot(n[:, 0], n[:, 1])[:, None]

    @property
    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_cells[:, 1] < 0)

    @property
    def h(self) -> float:
        return float(self.edge_lengths.max())

    def write_csv(self, directory: str | Path) -> None:
        """Dump ``vertices.csv`` and ``cells.csv`` for plotting."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "vertices.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "x", "y"])
            for i, (x, y) in enumerate(self.vertices):
                w.writerow([i, repr(float(x)), repr(float(y))])
        with open(directory / "cells.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "v0", "v1", "v2", "tag"])
            for i, (cell, tag) in enumerate(zip(self.cells, self.cell_subdomain)):
                w.writerow([i, *map(int, cell), int(tag)])


@dataclass(frozen=True)
class IntervalMesh:
    nodes: np.ndarray

    def __post_init__(self) -> None:
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes[0] != 0.0 or nodes[-1] != 1.0 or np.any(np.diff(nodes) <= 0):
            raise ValueError("nodes must increase strictly from 0 to 1")
        object.__setattr__(self, "nodes", nodes)

    @property
    def h(self) -> float:
        return float(np.max(np.diff(self.nodes)))

    @property
    def n_intervals(self) -> int:
        return len(self.nodes) - 1


def single_domain(points: np.ndarray) -> np.ndarray:
    return np.zeros(len(points), dtype=np.int64)


def unit_square_mesh(n: int, subdomain_rule: SubdomainRule = single_domain) -> TriMesh:
    """Structured mesh of ``2 n**2`` right triangles.

    Each grid square is split along its lower-left to upper-right diagonal.
    Subdomain tags come from evaluating ``subdomain_rule`` at cell centroids.
    """
    if n < 2 or n % 2:
        raise ValueError(f"n must be even and >= 2, got {n}")
    t = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(t, t)
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    j, i = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    v00 = (j * (n + 1) + i).ravel()
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    cells = np.stack([lower, upper], axis=1).reshape(-1, 3)

    centroids = vertices[cells].mean(axis=1)
    tags = np.asarray(subdomain_rule(centroids), dtype=np.int64)
    return TriMesh(vertices, cells, tags, n_cells_per_side=n)


def refine_uniform(mesh: TriMesh) -> tuple[TriMesh, np.ndarray]:
    """Red refinement: every triangle is split into four congruent children.

    Returns the fine mesh and ``parent_map`` (fine cell -> coarse cell). The
    coarse vertices keep their indices; the midpoint of coarse edge ``e`` is
    vertex ``n_vertices + e``.
    """
    nv = mesh.n_vertices
    mids = mesh.edge_midpoints
    vertices = np.vstack([mesh.vertices, mids])
    v0, v1, v2 = mesh.cells.T
    m0, m1, m2 = (nv + mesh.cell_edges).T
    children = np.stack(
        [
            np.column_stack([v0, m2, m1]),
            np.column_stack([m2, v1, m0]),
            np.column_stack([m1, m0, v2]),
            np.column_stack([m0, m1, m2]),
        ],
        axis=1,
    ).reshape(-1, 3)
    parent_map = np.repeat(np.arange(mesh.n_cells), 4)
    n = mesh.n_cells_per_side
    fine = TriMesh(
        vertices,
        children,
        mesh.cell_subdomain[parent_map],
        n_cells_per_side=None if n is None else 2 * n,
    )
    return fine, parent_map


def interval_mesh(n: int) -> IntervalMesh:
    if n < 2:
        raise ValueError(f"need at least 2 subintervals, got {n}")
    return IntervalMesh(np.linspace(0.0, 1.0, n + 1))
