"""Certified reduced basis for least-squares discretizations.

Offline, a greedy loop collects primal snapshots ``u^h`` on ``X^h`` and error
snapshots ``e_hat^h`` on the enriched space ``Z^h``, X-orthonormalizes both
and projects every affine component onto them. Online, two dense ``N x N``
solves give the reduced solution and the reduced error approximation, and the
certificate

    M^N = ||e_hat^N||_X + ||rho^N||_Y / sqrt(alpha_LB)

is evaluated from reduced quantities only.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as la

from . import fem
from .certify import effectivity_ceiling
from .problems import (
    ParameterFamily,
    ProblemDef,
    parameter_family,
    residual_factors,
    residual_norm_sq_quadrature,
)
from .scm import ScmModel, alpha_lb, scm_offline

log = logging.getLogger(__name__)

FORMAT_VERSION = 2
STOP_RTOL = 1e-8


class NearDependenceError(ValueError):
    """Snapshot is numerically in the span of the current basis."""


class CertificateUnavailableError(RuntimeError):
    """The coercivity lower bound is not positive, so no bound can be formed.

    The reduced solution is still attached as ``solution``.
    """

    def __init__(self, message: str, solution: "ReducedSolution", alpha_lb: float):
        super().__init__(message)
        self.solution = solution
        self.alpha_lb = alpha_lb


class UncertifiedModelError(RuntimeError):
    pass


@dataclass(frozen=True)
class ReducedSolution:
    c: np.ndarray
    c_hat: np.ndarray


@dataclass(frozen=True)
class Certificate:
    err_norm: float
    aux_res: float
    alpha_lb: float
    bound: float
    effectivity_ceiling: float


# ----------------------------------------------------------------- full order


def _solve_on(space: fem.FeSpace, A, b) -> np.ndarray:
    A, b = fem.apply_essential_bc(A, b, space)
    return fem.solve_spd(A, b)


def full_order_solve(problem: ProblemDef, mu) -> np.ndarray:
    """Least-squares solution on ``X^h``."""
    mu = problem.box.check(mu)
    return _solve_on(problem.x.space, problem.x.operator(mu), problem.x.rhs(mu))


def full_order_error_solve(problem: ProblemDef, mu, u: np.ndarray) -> np.ndarray:
    """Error approximation on ``Z^h`` for a primal function ``u`` on ``X^h``."""
    mu = problem.box.check(mu)
    z = problem.z
    b = z.rhs(mu) - problem.cross(mu) @ u
    return _solve_on(z.space, z.operator(mu), b)


def aux_residual_norm(problem: ProblemDef, mu, u: np.ndarray, e: np.ndarray) -> float:
    """``||f - L(u + e)||_Y`` for ``u`` on ``X^h`` and ``e`` on ``Z^h``, by full-order evaluation.

    The thermal blocks integrate the pointwise residual; other problems fall
    back to expanding the quadratic form.
    """
    mu = problem.box.check(mu)
    z = problem.z
    w = problem.prolong @ u + e
    if problem.name.startswith("thermal"):
        return math.sqrt(residual_norm_sq_quadrature(problem, mu, w, z.space))
    sq = z.rhs.f_norm_sq(mu) - 2.0 * (z.rhs(mu) @ w) + w @ (z.operator(mu) @ w)
    return math.sqrt(max(sq, 0.0))


def x_norm(gram, v: np.ndarray) -> float:
    return math.sqrt(max(float(v @ (gram @ v)), 0.0))


def full_order_indicator(problem: ProblemDef, mu, u, e, alpha: float) -> float:
    """``||rho^h|| / (sqrt(alpha) ||e_hat^h||)``; infinite when it cannot be formed."""
    rho = aux_residual_norm(problem, mu, u, e)
    return _indicator(rho, x_norm(problem.z.gram, e), alpha)


def _indicator(rho: float, err: float, alpha: float) -> float:
    if alpha <= 0.0:
        return math.inf
    if err == 0.0:
        return 0.0 if rho == 0.0 else math.inf
    return rho / (math.sqrt(alpha) * err)


# ----------------------------------------------------------------- basis


def orthonormalize(candidate: np.ndarray, basis: list[np.ndarray], gram) -> np.ndarray:
    """Gram-orthonormalize ``candidate`` against an orthonormal ``basis``.

    Modified Gram-Schmidt followed by one re-orthogonalization sweep.

    Raises
    ------
    NearDependenceError
        If less than ``1e-10`` of the candidate's norm survives projection.
    """
    v = np.array(candidate, dtype=float, copy=True)
    before = x_norm(gram, v)
    if before == 0.0:
        raise NearDependenceError("zero candidate")
    for _ in range(2):
        for b in basis:
            v -= (b @ (gram @ v)) * b
    after = x_norm(gram, v)
    if after < 1e-10 * before:
        raise NearDependenceError(f"candidate lies in the basis span (ratio {after / before:.2e})")
    return v / after


# ----------------------------------------------------------------- model


@dataclass
class RbModel:
    """Reduced data for online queries.

    Reduced blocks are indexed by affine component: ``a_xx[k, i, j] =
    a_k(xi_j, xi_i)``, ``a_zz[k, i, j] = a_k(phi_j, phi_i)``, ``a_zx[k, i, j] =
    a_k(xi_j, phi_i)``, ``f_x[m, i] = F_m(xi_i)`` and ``f_z[m, i] = F_m(phi_i)``.
    ``res_factor`` and ``div_factor`` come from
    :func:`lsrb.problems.residual_factors` on ``[P xi, phi]``. When they are
    absent the residual falls back to the expanded quadratic form. The bases
    themselves are optional; online queries never touch them.
    """

    problem: str
    n: int
    z_depth: int
    a_xx: np.ndarray
    a_zz: np.ndarray
    a_zx: np.ndarray
    f_x: np.ndarray
    f_z: np.ndarray
    f_gram: np.ndarray
    scm: ScmModel
    delta: float
    mu_selected: np.ndarray
    converged: bool = False
    delta_0: float = math.nan
    training_log: list[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    xi: np.ndarray | None = None
    phi: np.ndarray | None = None
    res_factor: np.ndarray | None = None
    div_factor: np.ndarray | None = None

    @property
    def family(self) -> ParameterFamily:
        return parameter_family(self.problem)

    @property
    def N(self) -> int:
        return self.a_xx.shape[1]

    @property
    def n_error(self) -> int:
        return self.a_zz.shape[1]

    @property
    def certified(self) -> bool:
        return self.delta < 1.0

    def save(self, path: str | Path) -> None:
        """Write a versioned ``.npz`` file; metadata is stored as a JSON string."""
        meta = {
            "version": FORMAT_VERSION,
            "problem": self.problem,
            "n": self.n,
            "z_depth": self.z_depth,
            "N": self.N,
            "n_error": self.n_error,
            "q_a": int(self.a_xx.shape[0]),
            "q_f": int(self.f_x.shape[0]),
            "delta": self.delta,
            "delta_0": self.delta_0,
            "converged": self.converged,
            "training_log": self.training_log,
            "config": self.config,
            "scm": {
                "problem": self.scm.problem,
                "eps_achieved": self.scm.eps_achieved,
                "n_eigensolves": self.scm.n_eigensolves,
                "gap_history": self.scm.gap_history,
            },
        }
        q = self.scm.q
        arrays = {
            "meta": np.array(json.dumps(meta)),
            "a_xx": self.a_xx,
            "a_zz": self.a_zz,
            "a_zx": self.a_zx,
            "f_x": self.f_x,
            "f_z": self.f_z,
            "f_gram": self.f_gram,
            "mu_selected": self.mu_selected,
            "scm_box_lower": self.scm.box_lower,
            "scm_box_upper": self.scm.box_upper,
            "scm_anchors": np.array(self.scm.anchors, dtype=float).reshape(-1, self.family.box.dim),
            "scm_anchor_alpha": np.array(self.scm.anchor_alpha, dtype=float),
            "scm_rayleigh": np.array(self.scm.rayleigh_points, dtype=float).reshape(-1, q),
        }
        if self.res_factor is not None:
            arrays["res_factor"] = self.res_factor
            arrays["div_factor"] = self.div_factor
        if self.xi is not None:
            arrays["xi"] = self.xi
        if self.phi is not None:
            arrays["phi"] = self.phi
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path: str | Path, bases: bool = False) -> "RbModel":
        """Read a model file. Basis arrays are only read when ``bases`` is true."""
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            if meta.get("version") != FORMAT_VERSION:
                raise ValueError(f"unsupported model file version {meta.get('version')!r}")
            sm = meta["scm"]
            scm = ScmModel(
                sm["problem"],
                data["scm_box_lower"],
                data["scm_box_upper"],
                list(data["scm_anchors"]),
                [float(a) for a in data["scm_anchor_alpha"]],
                list(data["scm_rayleigh"]),
                sm["eps_achieved"],
                sm["n_eigensolves"],
                sm["gap_history"],
            )
            get = lambda key: data[key] if bases and key in data.files else None  # noqa: E731
            return cls(
                meta["problem"],
                meta["n"],
                meta["z_depth"],
                data["a_xx"],
                data["a_zz"],
                data["a_zx"],
                data["f_x"],
                data["f_z"],
                data["f_gram"],
                scm,
                meta["delta"],
                data["mu_selected"],
                meta["converged"],
                meta["delta_0"],
                meta["training_log"],
                meta["config"],
                get("xi"),
                get("phi"),
                data["res_factor"] if "res_factor" in data.files else None,
                data["div_factor"] if "div_factor" in data.files else None,
            )


# ----------------------------------------------------------------- online


def _combine(theta: np.ndarray, blocks: np.ndarray) -> np.ndarray:
    return np.tensordot(theta, blocks, axes=1)


def _reduced_solve(model: RbModel, mu: np.ndarray):
    fam = model.family
    th_a = fam.theta_a(mu)
    th_f = fam.theta_f(mu)
    A_N = _combine(th_a, model.a_xx)
    b_N = _combine(th_f, model.f_x)
    c = la.solve(A_N, b_N) if model.N else np.zeros(0)

    A_hat = _combine(th_a, model.a_zz)
    G = model.a_zx @ c  # (Q_a, n_error)
    b_hat = _combine(th_f, model.f_z) - _combine(th_a, G)
    c_hat = la.solve(A_hat, b_hat) if model.n_error else np.zeros(0)

    ty = fam.theta_y(mu)
    ff = float(ty @ model.f_gram @ ty)
    if model.res_factor is None:
        # cancels when the residual is small next to f
        aux_sq = ff - float(b_N @ c) - float(b_hat @ c_hat)
    else:
        v = np.concatenate([c, c_hat])
        coef = np.concatenate(
            [ty[:, None] * v, -ty[:, None], v / ty[:, None]], axis=1
        )  # (T, 2 nb + 1)
        r = np.einsum("tij,tj->ti", model.res_factor, coef)
        aux_sq = float(np.sum(r**2) + np.sum((model.div_factor @ v) ** 2))
    return ReducedSolution(c, c_hat), aux_sq, ff


def _clamped_aux(aux_sq: float, ff: float) -> float:
    if aux_sq < 0.0:
        if -aux_sq > 1e-12 * ff:
            warnings.warn(
                f"squared auxiliary residual {aux_sq:.3e} clamped to zero", RuntimeWarning, stacklevel=3
            )
        return 0.0
    return math.sqrt(aux_sq)


def online_solve(
    model: RbModel, mu, alpha: float | None = None, require_certified: bool = True
) -> tuple[ReducedSolution, Certificate]:
    """Reduced solution and certificate at ``mu``.

    ``alpha`` overrides the SCM lower bound (used by the greedy loop, which
    evaluates it once per training point).

    Raises
    ------
    UncertifiedModelError
        If the model's final tolerance is not below one and ``require_certified``.
    CertificateUnavailableError
        If the coercivity lower bound is not positive.
    """
    if require_certified and not model.certified:
        raise UncertifiedModelError(f"model tolerance {model.delta:.4f} is not below 1")
    mu = model.family.box.check(mu)
    sol, aux_sq, ff = _reduced_solve(model, mu)
    aux = _clamped_aux(aux_sq, ff)
    err = float(np.linalg.norm(sol.c_hat))
    a_lb = alpha_lb(model.scm, mu) if alpha is None else alpha
    if a_lb <= 0.0:
        raise CertificateUnavailableError(
            f"coercivity lower bound {a_lb:.3e} is not positive at mu={mu.tolist()}", sol, a_lb
        )
    ceiling = effectivity_ceiling(model.delta) if model.certified else math.inf
    return sol, Certificate(err, aux, a_lb, err + aux / math.sqrt(a_lb), ceiling)


def estimate(model: RbModel, mu, require_certified: bool = True) -> Certificate:
    return online_solve(model, mu, require_certified=require_certified)[1]


def reconstruct(model: RbModel, sol: ReducedSolution) -> tuple[np.ndarray, np.ndarray]:
    """Full-order coefficient vectors of ``u^N`` and ``e_hat^N``; needs the bases."""
    if model.xi is None or model.phi is None:
        raise ValueError("model was loaded without bases")
    return sol.c @ model.xi, sol.c_hat @ model.phi


# ----------------------------------------------------------------- offline


class _Projector:
    """Accumulates basis vectors and their images under each affine component."""

    def __init__(self, problem: ProblemDef):
        self.problem = problem
        self.xi: list[np.ndarray] = []
        self.phi: list[np.ndarray] = []
        self.a_xi: list[list[np.ndarray]] = [[] for _ in problem.x.operator.terms]
        self.a_phi: list[list[np.ndarray]] = [[] for _ in problem.z.operator.terms]
        self.a_zx_xi: list[list[np.ndarray]] = [[] for _ in problem.cross.terms]

    def add_primal(self, xi: np.ndarray) -> None:
        self.xi.append(xi)
        for k, A in enumerate(self.problem.x.operator.terms):
            self.a_xi[k].append(A @ xi)
        for k, A in enumerate(self.problem.cross.terms):
            self.a_zx_xi[k].append(A @ xi)

    def add_error(self, phi: np.ndarray) -> None:
        self.phi.append(phi)
        for k, A in enumerate(self.problem.z.operator.terms):
            self.a_phi[k].append(A @ phi)

    def model(self, scm: ScmModel, delta: float, mu_selected, **kw) -> RbModel:
        pr = self.problem
        X = np.array(self.xi).reshape(-1, pr.x.space.n_dofs)
        Z = np.array(self.phi).reshape(-1, pr.z.space.n_dofs)
        res_factor, div_factor = residual_factors(pr, np.vstack([(pr.prolong @ X.T).T, Z]))
        proj = lambda B, images: np.array([B @ np.array(v).reshape(-1, B.shape[1]).T for v in images])  # noqa: E731
        return RbModel(
            problem=pr.name,
            n=pr.n,
            z_depth=pr.z_depth,
            a_xx=proj(X, self.a_xi),
            a_zz=proj(Z, self.a_phi),
            a_zx=proj(Z, self.a_zx_xi),
            f_x=np.array([X @ F for F in pr.x.rhs.terms]).reshape(-1, len(X)),
            f_z=np.array([Z @ F for F in pr.z.rhs.terms]).reshape(-1, len(Z)),
            f_gram=np.array(pr.x.rhs.f_gram, dtype=float),
            scm=scm,
            delta=delta,
            mu_selected=np.array(mu_selected, dtype=float).reshape(-1, pr.box.dim),
            xi=X,
            phi=Z,
            res_factor=res_factor,
            div_factor=div_factor,
            **kw,
        )


def greedy_offline(
    problem: ProblemDef,
    train: list,
    delta_0: float = 0.1,
    n_max: int = 30,
    scm: ScmModel | None = None,
    scm_eps: float = 0.3,
    config: dict | None = None,
) -> RbModel:
    """Greedy construction of the primal and error bases.

    The first training parameter seeds the basis. Each iteration evaluates the
    certificate and the indicator ``||rho^N|| / (sqrt(alpha_LB) ||e_hat^N||)``
    on the whole training set, stops when every indicator is at most
    ``delta``, and otherwise adds the snapshot pair at the unselected parameter
    with the largest bound (lowest index on ties). ``delta`` is raised to the
    full-order indicator of every snapshot, the seed included, when that is
    larger.

    The two snapshots are orthonormalized independently: when one is
    numerically in the span of its basis it is dropped and the other is still
    kept, so the error basis may end up larger than the primal one. A
    parameter whose snapshots are both dropped is marked exhausted.

    ``n_max`` caps the number of snapshot parameters. The returned model
    records whether the stopping test was met (``converged``); it is certified
    when the final ``delta`` is below one.
    """
    if not 0.0 < delta_0 < 1.0:
        raise ValueError("delta_0 must lie in (0, 1)")
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    if len(train) == 0:
        raise ValueError("training set is empty")
    train = [problem.box.check(mu) for mu in train]
    if scm is None:
        scm = scm_offline(problem, train, scm_eps)
    alphas = np.array([alpha_lb(scm, mu) for mu in train])

    proj = _Projector(problem)
    selected: list[int] = []
    exhausted: set[int] = set()
    delta = delta_0
    history: list[dict] = []

    def add_snapshot(i: int) -> tuple[float, bool, bool]:
        nonlocal delta
        mu = train[i]
        u = full_order_solve(problem, mu)
        e = full_order_error_solve(problem, mu, u)
        ind = full_order_indicator(problem, mu, u, e, alphas[i])
        raised = ind > delta
        if raised:
            delta = ind
        kept = []
        for vec, basis, gram, push in (
            (u, proj.xi, problem.x.gram, proj.add_primal),
            (e, proj.phi, problem.z.gram, proj.add_error),
        ):
            try:
                push(orthonormalize(vec, basis, gram))
                kept.append(True)
            except NearDependenceError as exc:
                log.info("greedy: snapshot at index %d dropped: %s", i, exc)
                kept.append(False)
        if any(kept):
            selected.append(i)
        else:
            exhausted.add(i)
        return ind, raised, kept

    seed_ind, seed_raised, seed_ok = add_snapshot(0)
    history.append(
        {
            "iter": 0,
            "N": 0,
            "n_error": 0,
            "max_estimator": math.nan,
            "max_indicator": math.nan,
            "delta": delta_0,
            "chosen": train[0].tolist(),
            "snapshot_indicator": seed_ind,
            "delta_raised": seed_raised,
            "primal_kept": seed_ok[0],
            "error_kept": seed_ok[1],
        }
    )
    converged = False
    model = None
    while True:
        model = proj.model(scm, delta, [train[i] for i in selected])
        bounds = np.empty(len(train))
        indicators = np.empty(len(train))
        for i, mu in enumerate(train):
            sol, aux_sq, ff = _reduced_solve(model, mu)
            aux = math.sqrt(max(aux_sq, 0.0))
            err = float(np.linalg.norm(sol.c_hat))
            indicators[i] = _indicator(aux, err, alphas[i])
            bounds[i] = err + aux / math.sqrt(alphas[i]) if alphas[i] > 0 else math.inf
        entry = {
            "iter": len(history),
            "N": model.N,
            "n_error": model.n_error,
            "max_estimator": float(bounds.max()),
            "max_indicator": float(indicators.max()),
            "delta": delta,
        }
        log.info("greedy: N=%d max bound %.4e max indicator %.4f delta %.4f",
                 model.N, entry["max_estimator"], entry["max_indicator"], delta)
        # reduced and full-order indicators agree only to roundoff at snapshots
        if np.all(indicators <= delta * (1.0 + STOP_RTOL)):
            converged = True
            entry.update(chosen=None, snapshot_indicator=None, delta_raised=False)
            history.append(entry)
            break
        open_ = [i for i in range(len(train)) if i not in selected and i not in exhausted]
        if len(selected) >= n_max or not open_:
            entry.update(chosen=None, snapshot_indicator=None, delta_raised=False)
            history.append(entry)
            break
        j = open_[int(np.argmax(bounds[open_]))]
        ind, raised, kept = add_snapshot(j)
        entry.update(
            chosen=train[j].tolist(),
            snapshot_indicator=ind,
            delta_raised=raised,
            primal_kept=kept[0],
            error_kept=kept[1],
        )
        history.append(entry)

    model.converged = converged
    model.delta = delta
    model.delta_0 = delta_0
    model.training_log = history
    model.config = dict(config or {})
    if not model.certified:
        log.warning("greedy: final delta %.4f >= 1; refine Z^h to certify", delta)
    return model
