"""Successive constraint method for lower bounds of the discrete coercivity constant.

For ``a(v, v; mu) = sum_k theta_k(mu) a_k(v, v)`` the coercivity constant is
the minimum over ``v`` of ``sum_k theta_k(mu) y_k(v)`` with Rayleigh
coordinates ``y_k(v) = a_k(v, v) / ||v||_X^2``. Relaxing the set of
attainable ``y`` to a box intersected with the half-spaces
``sum_k theta_k(mu_j) y_k >= alpha^h(mu_j)`` at anchor parameters gives a
linear program whose value bounds ``alpha^h(mu)`` from below. The bound is
rigorous for the discrete constant only; the continuous constant is below
``alpha^h`` by a higher-order discretization term, so certificates built on
it are asymptotically rigorous.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .linalg import LinearProgram, eig_smallest, lp_min, spectral_interval
from .problems import ParameterFamily, ProblemDef, parameter_family

log = logging.getLogger(__name__)


@dataclass
class ScmModel:
    problem: str
    box_lower: np.ndarray
    box_upper: np.ndarray
    anchors: list[np.ndarray] = field(default_factory=list)
    anchor_alpha: list[float] = field(default_factory=list)
    rayleigh_points: list[np.ndarray] = field(default_factory=list)
    eps_achieved: float = np.inf
    n_eigensolves: int = 0
    gap_history: list[float] = field(default_factory=list)

    @property
    def family(self) -> ParameterFamily:
        return parameter_family(self.problem)

    @property
    def q(self) -> int:
        return len(self.box_lower)

    def linear_program(self, mu) -> LinearProgram:
        fam = self.family
        c = fam.theta_a(np.atleast_1d(mu))
        G = np.array([fam.theta_a(a) for a in self.anchors]).reshape(-1, self.q)
        return LinearProgram(c, self.box_lower, self.box_upper, G, np.array(self.anchor_alpha))


def _free(problem: ProblemDef):
    free = problem.x.space.free_dofs
    M = problem.x.gram[free][:, free]
    return free, M


def alpha_h(problem: ProblemDef, mu) -> float:
    """Discrete coercivity constant: smallest eigenvalue of ``(A(mu), M_X)`` on free dofs."""
    return _alpha_h_pair(problem, mu)[0]


def _alpha_h_pair(problem: ProblemDef, mu) -> tuple[float, np.ndarray]:
    mu = problem.box.check(mu)
    free, M = _free(problem)
    A = problem.x.operator(mu)[free][:, free]
    res = eig_smallest(A, M)
    return res.eigenvalue, res.eigenvector


def rayleigh_coordinates(problem: ProblemDef, v_free: np.ndarray) -> np.ndarray:
    free, M = _free(problem)
    norm2 = v_free @ (M @ v_free)
    return np.array(
        [v_free @ (A[free][:, free] @ v_free) / norm2 for A in problem.x.operator.terms]
    )


def alpha_lb(model: ScmModel, mu) -> float:
    """LP lower bound for ``alpha^h(mu)``; may be non-positive (no certificate then)."""
    mu = model.family.box.check(mu)
    value, _ = lp_min(model.linear_program(mu))
    return value


def alpha_ub(model: ScmModel, mu) -> float:
    if not model.rayleigh_points:
        return np.inf
    th = model.family.theta_a(np.atleast_1d(mu))
    return float(min(th @ y for y in model.rayleigh_points))


def relative_gap(lb: float, ub: float) -> float:
    if not np.isfinite(ub):
        return np.inf
    return (ub - lb) / ub


def scm_box(problem: ProblemDef) -> tuple[np.ndarray, np.ndarray]:
    free, M = _free(problem)
    lo, hi = [], []
    for A in problem.x.operator.terms:
        a, b = spectral_interval(A[free][:, free], M)
        lo.append(a)
        hi.append(b)
    return np.array(lo), np.array(hi)


def scm_offline(
    problem: ProblemDef,
    candidates: list,
    eps: float = 0.3,
    max_anchors: int | None = None,
) -> ScmModel:
    """Greedy SCM: add the candidate with the largest relative gap until all gaps are <= ``eps``.

    The first candidate seeds the anchor set; ties go to the lowest index.
    """
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    if len(candidates) == 0:
        raise ValueError("need at least one candidate parameter")
    candidates = [problem.box.check(c) for c in candidates]
    lo, hi = scm_box(problem)
    model = ScmModel(problem.name, lo, hi, n_eigensolves=2 * len(lo))
    limit = len(candidates) if max_anchors is None else max_anchors
    chosen = 0
    while True:
        mu = candidates[chosen]
        alpha, v = _alpha_h_pair(problem, mu)
        model.n_eigensolves += 1
        model.anchors.append(mu)
        model.anchor_alpha.append(alpha)
        model.rayleigh_points.append(rayleigh_coordinates(problem, v))

        gaps = np.array(
            [relative_gap(alpha_lb(model, c), alpha_ub(model, c)) for c in candidates]
        )
        worst = float(gaps.max())
        model.gap_history.append(worst)
        model.eps_achieved = worst
        log.info("scm: %d anchors, max relative gap %.4f", len(model.anchors), worst)
        if worst <= eps or len(model.anchors) >= limit:
            return model
        chosen = int(np.argmax(gaps))
