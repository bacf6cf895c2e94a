"""Parametrized least-squares problems as affine families of assembled forms.

The thermal block problems solve ``-div(kappa grad u) = 0`` on the unit square
with ``u = 0`` on the top side and unit inflow on the bottom side, written as
the first-order system

    kappa^{-1/2} q + kappa^{1/2} grad u = kappa^{-1/2} q_l,    div q = 0,

with the constant lifting ``q_l = (0, -1)`` and ``q.n = 0`` off the top side.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.stats import qmc

from . import fem
from .fem import FeSpace
from .mesh import TOP, IntervalMesh, TriMesh, interval_mesh, refine_uniform, unit_square_mesh

LIFTING = np.array([0.0, -1.0])

ThetaFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ParameterBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "lower", np.atleast_1d(np.asarray(self.lower, dtype=float)))
        object.__setattr__(self, "upper", np.atleast_1d(np.asarray(self.upper, dtype=float)))

    @property
    def dim(self) -> int:
        return len(self.lower)

    def contains(self, mu, rtol: float = 1e-12) -> bool:
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        slack = rtol * np.maximum(1.0, np.abs(self.upper))
        return (
            mu.shape == self.lower.shape
            and bool(np.all(mu >= self.lower - slack) and np.all(mu <= self.upper + slack))
        )

    def check(self, mu) -> np.ndarray:
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        if not self.contains(mu):
            raise ValueError(
                f"parameter {mu.tolist()} outside box "
                f"{self.lower.tolist()} .. {self.upper.tolist()}"
            )
        return mu

    @property
    def vertices(self) -> np.ndarray:
        corners = np.array(np.meshgrid(*zip(self.lower, self.upper), indexing="ij"))
        return corners.reshape(self.dim, -1).T


@dataclass(frozen=True)
class ParameterFamily:
    """Mesh-independent description of a problem's parameter dependence.

    ``theta_a`` and ``theta_f`` give the affine coefficients of the bilinear
    and linear forms; ``theta_y`` gives the coefficients of the data ``f``
    itself in ``Y`` so that ``(f, f)_Y = theta_y' f_gram theta_y``.
    """

    name: str
    box: ParameterBox
    theta_a: ThetaFn
    theta_f: ThetaFn
    theta_y: ThetaFn
    q_a: int
    q_f: int
    sampling: str


def _thermal_thetas(n_params: int):
    if n_params == 1:

        def theta_a(mu):
            (m,) = mu
            return np.array([1.0 / m, 1.0, m])

    else:

        def theta_a(mu):
            out = []
            for m in mu:
                out += [1.0 / m, m]
            return np.array(out + [1.0])

    def theta_f(mu):
        return np.concatenate([1.0 / np.asarray(mu, dtype=float), [1.0]])

    def theta_y(mu):
        return np.concatenate([1.0 / np.sqrt(np.asarray(mu, dtype=float)), [1.0]])

    return theta_a, theta_f, theta_y


def _family(name: str) -> ParameterFamily:
    if name == "thermal1":
        ta, tf, ty = _thermal_thetas(1)
        return ParameterFamily(name, ParameterBox([0.1], [10.0]), ta, tf, ty, 3, 2, "log")
    if name == "thermal3":
        ta, tf, ty = _thermal_thetas(3)
        return ParameterFamily(name, ParameterBox([0.2] * 3, [5.0] * 3), ta, tf, ty, 7, 4, "lhs")
    if name == "poisson1d":
        one = lambda mu: np.ones(1)  # noqa: E731
        return ParameterFamily(
            name, ParameterBox([0.0], [1.0]), one, lambda mu: np.zeros(0), lambda mu: np.zeros(0),
            1, 0, "uniform",
        )
    raise KeyError(f"unknown problem {name!r}")


def parameter_family(name: str) -> ParameterFamily:
    """Parameter dependence of a named problem; needs no mesh."""
    return _family(name)


@dataclass(frozen=True)
class AffineOperator:
    theta: ThetaFn
    terms: tuple

    @property
    def q(self) -> int:
        return len(self.terms)

    def __call__(self, mu) -> sp.csr_matrix:
        th = self.theta(np.atleast_1d(mu))
        out = th[0] * self.terms[0]
        for t, A in zip(th[1:], self.terms[1:]):
            out = out + t * A
        return out.tocsr()


@dataclass(frozen=True)
class AffineRhs:
    theta: ThetaFn
    terms: tuple
    theta_y: ThetaFn
    f_gram: np.ndarray

    @property
    def q(self) -> int:
        return len(self.terms)

    def __call__(self, mu) -> np.ndarray:
        th = self.theta(np.atleast_1d(mu))
        out = np.zeros_like(self.terms[0]) if self.terms else np.zeros(0)
        for t, b in zip(th, self.terms):
            out = out + t * b
        return out

    def f_norm_sq(self, mu) -> float:
        ty = self.theta_y(np.atleast_1d(mu))
        return float(ty @ self.f_gram @ ty)


@dataclass(frozen=True, eq=False)
class Discretization:
    """Affine forms assembled on one mesh level."""

    space: FeSpace
    operator: AffineOperator
    rhs: AffineRhs
    gram: sp.csr_matrix


@dataclass(frozen=True, eq=False)
class ProblemDef:
    """A parametrized problem on a primal space ``X^h`` and an error space ``Z^h``.

    ``cross`` holds the operator components with ``Z^h`` rows and ``X^h``
    columns, ``A_k^{ZX} = A_k^{ZZ} P``. Matrices are stored without boundary
    conditions; the spaces carry the essential dofs.
    """

    family: ParameterFamily
    n: int
    x: Discretization
    z: Discretization | None
    prolong: sp.csr_matrix | None
    cross: AffineOperator | None
    z_depth: int
    builder: Callable[[int], tuple[Discretization, sp.csr_matrix]] | None = field(
        default=None, repr=False
    )

    @property
    def name(self) -> str:
        return self.family.name

    @property
    def box(self) -> ParameterBox:
        return self.family.box

    @property
    def q_a(self) -> int:
        return self.x.operator.q

    @property
    def q_f(self) -> int:
        return self.x.rhs.q

    def refined(self, depth: int) -> tuple[Discretization, sp.csr_matrix]:
        """Discretization after ``depth`` uniform refinements, with prolongation from ``X^h``."""
        if self.builder is None:
            raise ValueError(f"{self.name} has no refinement hierarchy")
        return self.builder(depth)


# ----------------------------------------------------------------- thermal blocks


def _thermal1_rule(points: np.ndarray) -> np.ndarray:
    return np.where(points[:, 0] < 0.5, 1, 2)


def _thermal3_rule(points: np.ndarray) -> np.ndarray:
    left = points[:, 0] < 0.5
    low = points[:, 1] < 0.5
    return np.select([left & low, ~left & low, left & ~low], [1, 2, 3], default=4)


def thermal_space(mesh: TriMesh) -> FeSpace:
    """RT0 x P1 with ``u = 0`` on the top side and ``q.n = 0`` elsewhere on the boundary."""
    space = fem.product_space(mesh)
    bnd = mesh.boundary_edges
    flux_fixed = bnd[mesh.boundary_edge_tag[bnd] != TOP]
    top_vertices = np.flatnonzero(np.abs(mesh.vertices[:, 1] - 1.0) < 1e-12)
    return space.with_essential(
        np.concatenate([space.flux_offset + flux_fixed, space.scalar_offset + top_vertices])
    )


def _thermal_discretization(mesh: TriMesh, family: ParameterFamily) -> Discretization:
    n_params = family.box.dim
    fixed_tag = n_params + 1
    V = thermal_space(mesh)
    form = lambda term, region=None: fem.assemble_form(V, term, region)  # noqa: E731
    common = (
        form("q.grad")
        + form("q.q", fixed_tag)
        + form("grad.grad", fixed_tag)
        + form("div.div")
    ).tocsr()
    if n_params == 1:
        terms = (form("q.q", 1), common, form("grad.grad", 1))
    else:
        terms = []
        for tag in range(1, n_params + 1):
            terms += [form("q.q", tag), form("grad.grad", tag)]
        terms = tuple(terms + [common])

    rhs_terms = [fem.assemble_rhs(V, "g.q", LIFTING, tag) for tag in range(1, n_params + 1)]
    rhs_terms.append(
        fem.assemble_rhs(V, "g.q", LIFTING, fixed_tag) + fem.assemble_rhs(V, "g.grad", LIFTING)
    )
    # (f_m, f_m')_Y for f_m = (q_l restricted to subdomain m, 0) by quadrature
    geo_w = mesh.areas
    f_gram = np.diag(
        [geo_w[mesh.cell_subdomain == tag].sum() * (LIFTING @ LIFTING) for tag in range(1, fixed_tag + 1)]
    )
    return Discretization(
        V,
        AffineOperator(family.theta_a, tuple(terms)),
        AffineRhs(family.theta_f, tuple(rhs_terms), family.theta_y, f_gram),
        fem.x_norm_gram(V),
    )


def _thermal(name: str, n: int, z_depth: int) -> ProblemDef:
    if n < 2 or n % 2:
        raise ValueError(f"mesh size must be even, got {n}")
    if z_depth < 0:
        raise ValueError("z_depth must be non-negative")
    family = parameter_family(name)
    rule = _thermal1_rule if family.box.dim == 1 else _thermal3_rule
    coarse = unit_square_mesh(n, rule)
    x = _thermal_discretization(coarse, family)
    levels = {0: (coarse, sp.identity(x.space.n_dofs, format="csr"), x)}

    def builder(depth: int):
        for level in range(1, depth + 1):
            if level in levels:
                continue
            prev_mesh, prev_P, prev_disc = levels[level - 1]
            mesh, parent = refine_uniform(prev_mesh)
            disc = _thermal_discretization(mesh, family)
            step = fem.prolongation(prev_disc.space, disc.space, parent)
            levels[level] = (mesh, (step @ prev_P).tocsr(), disc)
        _, P, disc = levels[depth]
        return disc, P

    z, P = builder(z_depth)
    cross = AffineOperator(family.theta_a, tuple((A @ P).tocsr() for A in z.operator.terms))
    return ProblemDef(family, n, x, z, P, cross, z_depth, builder)


def thermal_block_1p(n: int = 16, z_depth: int = 2) -> ProblemDef:
    """Two-subdomain thermal block, ``kappa = mu`` for ``x < 1/2``, ``mu in [0.1, 10]``."""
    return _thermal("thermal1", n, z_depth)


def thermal_block_3p(n: int = 16, z_depth: int = 3) -> ProblemDef:
    """Four-subdomain thermal block with ``mu in [0.2, 5]^3`` and ``kappa = 1`` top right."""
    return _thermal("thermal3", n, z_depth)


def kappa_function(family: ParameterFamily, mu) -> Callable[[np.ndarray], np.ndarray]:
    """Pointwise conductivity ``kappa(x; mu)``."""
    mu = family.box.check(mu)
    rule = _thermal1_rule if family.box.dim == 1 else _thermal3_rule
    values = np.concatenate([mu, [1.0]])

    def kappa(points: np.ndarray) -> np.ndarray:
        flat = points.reshape(-1, 2)
        return values[rule(flat) - 1].reshape(points.shape[:-1])

    return kappa


def direct_assemble(problem: ProblemDef, mu, space: FeSpace | None = None):
    """Assemble ``a(.,.;mu)`` and ``F(.;mu)`` with ``kappa`` evaluated at quadrature points.

    Bypasses the affine split; used as an independent check on it.
    """
    if not problem.name.startswith("thermal"):
        raise ValueError("direct assembly is defined for the thermal blocks")
    kappa = kappa_function(problem.family, mu)
    V = problem.x.space if space is None else space
    inv = lambda p: 1.0 / kappa(p)  # noqa: E731
    A = (
        fem.assemble_form(V, "q.q", coef=inv)
        + fem.assemble_form(V, "q.grad")
        + fem.assemble_form(V, "grad.grad", coef=kappa)
        + fem.assemble_form(V, "div.div")
    ).tocsr()
    b = fem.assemble_rhs(V, "g.q", LIFTING, coef=inv) + fem.assemble_rhs(V, "g.grad", LIFTING)
    return A, b


def f_norm_sq_quadrature(problem: ProblemDef, mu) -> float:
    """``int kappa^{-1} |q_l|^2`` by cell quadrature on the primal mesh."""
    kappa = kappa_function(problem.family, mu)
    mesh = problem.x.space.mesh
    return float(np.sum(mesh.areas / kappa(mesh.centroids)) * (LIFTING @ LIFTING))


def residual_norm_sq_quadrature(problem: ProblemDef, mu, w: np.ndarray, space: FeSpace) -> float:
    """``||f - L w||_Y^2`` for ``w`` on ``space``, integrated pointwise.

    Squares the first-order residual at quadrature points instead of
    expanding the quadratic form, which avoids cancellation when the
    residual is small compared with ``f``.
    """
    kappa = kappa_function(problem.family, mu)
    pts, wts, q, grad, div = fem.quadrature_fields(space, w)
    k = kappa(pts)[..., None]
    r = (q - LIFTING) / np.sqrt(k) + np.sqrt(k) * grad[:, None, :]
    return float(np.sum(wts * np.sum(r**2, axis=-1)) + np.sum(space.mesh.areas * div**2))


def residual_factors(problem: ProblemDef, basis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Triangular factors of the affine residual components for ``w = v @ basis``.

    ``basis`` holds ``Z^h`` coefficient vectors as rows. On subdomain ``t`` the
    first-order residual is ``s_t (q - q_l) + grad u / s_t`` with ``s_t =
    theta_y(mu)[t]``, and ``div q`` everywhere. Stacking the weighted
    quadrature values of ``[q(basis), q_l, grad u(basis)]`` per subdomain and
    taking the R factor of a QR decomposition gives

        ||f - L w||^2 = sum_t ||R_t [s_t v, -s_t, v / s_t]||^2 + ||R_div v||^2,

    a sum of squares that stays accurate when the residual is small.

    Returns
    -------
    R : ndarray, shape (T, 2 nb + 1, 2 nb + 1)
    R_div : ndarray, shape (nb, nb)
    """
    space = problem.z.space
    mesh = space.mesh
    basis = np.atleast_2d(np.asarray(basis, dtype=float)).reshape(-1, space.n_dofs)
    nb = len(basis)
    wts = fem.quadrature_fields(space, np.zeros(space.n_dofs))[1]
    fields = [fem.quadrature_fields(space, b)[2:] for b in basis]
    C, Q = wts.shape
    flux = np.stack([f[0] for f in fields], axis=-1) if nb else np.zeros((C, Q, 2, 0))
    grad = np.stack([f[1] for f in fields], axis=-1) if nb else np.zeros((C, 2, 0))
    div = np.stack([f[2] for f in fields], axis=-1) if nb else np.zeros((C, 0))
    sw = np.sqrt(wts)[..., None, None]  # (C, Q, 1, 1)
    k = 2 * nb + 1

    def tri(M: np.ndarray, size: int) -> np.ndarray:
        R = np.linalg.qr(M, mode="r") if M.size else np.zeros((0, size))
        out = np.zeros((size, size))
        out[: len(R)] = R
        return out

    factors = []
    for tag in range(1, len(problem.family.theta_y(problem.box.lower)) + 1):
        cells = mesh.cell_subdomain == tag
        s = sw[cells]
        cols = np.concatenate(
            [
                s * flux[cells],
                s * np.broadcast_to(LIFTING[:, None], (1, 1, 2, 1)),
                s * np.broadcast_to(grad[cells][:, None], (cells.sum(), Q, 2, nb)),
            ],
            axis=-1,
        )
        factors.append(tri(cols.reshape(-1, k), k))
    R_div = tri(np.sqrt(mesh.areas)[:, None] * div, nb)
    return np.array(factors), R_div


# ----------------------------------------------------------------- 1D Poisson

ALPHA_POISSON_1D = 1.0 - (1.0 + np.sqrt(1.0 + 4.0 * np.pi**2)) / (2.0 * (1.0 + np.pi**2))


def poisson_1d(n: int = 64) -> ProblemDef:
    """``L(q, u) = (q + u', q')`` on ``(0, 1)`` with ``u(0) = u(1) = 0``; no parameter dependence."""
    family = parameter_family("poisson1d")
    V = fem.interval_product_space(interval_mesh(n))
    A = sum(fem.assemble_form(V, t) for t in ("q.q", "q.grad", "grad.grad", "div.div")).tocsr()
    disc = Discretization(
        V,
        AffineOperator(family.theta_a, (A,)),
        AffineRhs(family.theta_f, (), family.theta_y, np.zeros((0, 0))),
        fem.x_norm_gram(V),
    )
    return ProblemDef(family, n, disc, None, None, None, 0)


# ----------------------------------------------------------------- sampling


def sample_parameters(box: ParameterBox, count: int, seed: int, kind: str) -> list[np.ndarray]:
    """Deterministic parameter samples: ``log`` grid, ``loguniform``, ``lhs`` or ``uniform``."""
    if count < 1:
        raise ValueError("count must be positive")
    rng_seed = int(seed)
    if kind == "log":
        if box.dim != 1:
            raise ValueError("log grids are one-dimensional")
        pts = np.geomspace(box.lower[0], box.upper[0], count)[:, None]
    elif kind == "loguniform":
        u = np.random.default_rng(rng_seed).random((count, box.dim))
        pts = np.exp(np.log(box.lower) + u * (np.log(box.upper) - np.log(box.lower)))
    elif kind == "lhs":
        u = qmc.LatinHypercube(d=box.dim, seed=rng_seed).random(count)
        pts = qmc.scale(u, box.lower, box.upper)
    elif kind == "uniform":
        u = np.random.default_rng(rng_seed).random((count, box.dim))
        pts = box.lower + u * (box.upper - box.lower)
    else:
        raise ValueError(f"unknown sampling kind {kind!r}")
    return [np.array(p) for p in pts]


def sample_training_set(problem: ProblemDef, count: int, seed: int = 0) -> list[np.ndarray]:
    """Training parameters: a log-spaced grid in 1D, Latin hypercube plus box vertices otherwise."""
    if count < 2:
        raise ValueError("need at least two training parameters")
    family = problem.family
    if family.sampling == "lhs":
        pts = sample_parameters(family.box, count, seed, "lhs")
        return pts + [np.array(v) for v in family.box.vertices]
    return sample_parameters(family.box, count, seed, family.sampling)


PROBLEMS = {
    "thermal1": thermal_block_1p,
    "thermal3": thermal_block_3p,
    "poisson1d": poisson_1d,
}


def make_problem(name: str, n: int, z_depth: int | None = None) -> ProblemDef:
    """Problem by name; ``z_depth=None`` takes the problem's default error-space depth."""
    if name == "poisson1d":
        return poisson_1d(n)
    try:
        factory = PROBLEMS[name]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None
    return factory(n) if z_depth is None else factory(n, z_depth)
