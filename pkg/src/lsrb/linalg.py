"""Small linear algebra kernels: SPD factorization, pencil eigenvalues, dense LPs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.sparse.linalg import splu


class MatrixNotSPDError(np.linalg.LinAlgError):
    """Raised when a symmetric factorization meets a non-positive pivot."""


class ConvergenceError(RuntimeError):
    pass


class InfeasibleLPError(ValueError):
    pass


class UnboundedLPError(ValueError):
    pass


Solver = Callable[[np.ndarray], np.ndarray]


def _as_csc(A) -> sp.csc_matrix:
    if sp.issparse(A):
        return sp.csc_matrix(A, dtype=float)
    return sp.csc_matrix(np.asarray(A, dtype=float))


def factorize_spd(A) -> Solver:
    """Factor a symmetric matrix, refusing anything that is not positive definite.

    The LU factorization runs with a symmetric fill-reducing ordering and no
    row pivoting, so ``U``'s diagonal holds the ``LDL^T`` pivots and their
    signs give the inertia.
    """
    A = _as_csc(A)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("matrix must be square")
    try:
        lu = splu(
            A,
            permc_spec="MMD_AT_PLUS_A",
            diag_pivot_thresh=0.0,
            options=dict(SymmetricMode=True),
        )
    except RuntimeError as exc:  # exactly singular
        raise MatrixNotSPDError(str(exc)) from exc
    if not np.array_equal(lu.perm_r, lu.perm_c):
        raise MatrixNotSPDError("factorization needed off-diagonal pivoting")
    pivots = lu.U.diagonal()
    scale = np.abs(A.diagonal()).max() if n else 1.0
    if np.any(pivots <= 1e-14 * scale):
        raise MatrixNotSPDError(f"non-positive pivot {pivots.min():.3e}")
    return lu.solve


@dataclass(frozen=True)
class EigResult:
    eigenvalue: float
    eigenvector: np.ndarray
    residual_norm: float
    iterations: int = 0


def _m_orthonormalize(Y: np.ndarray, M) -> np.ndarray:
    G = Y.T @ (M @ Y)
    G = 0.5 * (G + G.T)
    s, U = la.eigh(G)
    keep = s > 1e-13 * s.max()
    return Y @ (U[:, keep] / np.sqrt(s[keep]))


def _ritz(Q: np.ndarray, A, M) -> tuple[np.ndarray, np.ndarray]:
    H = Q.T @ (A @ Q)
    w, V = la.eigh(0.5 * (H + H.T))
    return w, Q @ V


def _residual(A, M, lam: float, v: np.ndarray) -> float:
    return float(np.linalg.norm(A @ v - lam * (M @ v)))


def _is_spd(A) -> bool:
    try:
        factorize_spd(A)
    except MatrixNotSPDError:
        return False
    return True


def _tighten_shift(A, M, lo: float, hi: float, width: float, max_steps: int = 60) -> float:
    """Bisect ``[lo, hi]`` keeping ``A - lo M`` positive definite; returns the final ``lo``.

    Sylvester's law of inertia makes a successful positive definite
    factorization of ``A - s M`` a certificate that ``s`` lies below the
    spectrum, so the result is a guaranteed lower bound.
    """
    for _ in range(max_steps):
        if hi - lo <= width:
            break
        mid = 0.5 * (lo + hi)
        if _is_spd(A - mid * M):
            lo = mid
        else:
            hi = mid
    return lo


def eig_smallest(
    A,
    M,
    shift: float = 0.0,
    block: int = 6,
    tol: float = 1e-9,
    maxiter: int = 1000,
    seed: int = 0,
    adapt_every: int = 20,
) -> EigResult:
    """Smallest eigenpair of the pencil ``(A, M)`` by shift-invert subspace iteration.

    ``A - shift*M`` must be positive definite, i.e. ``shift`` lies below the
    spectrum; the eigenvector is returned with unit ``M``-norm. When
    convergence is slow (a small relative gap above the smallest eigenvalue)
    the shift is moved up towards the current Ritz value every
    ``adapt_every`` iterations, staying below the spectrum by inertia tests.
    """
    A = _as_csc(A)
    M = _as_csc(M)
    n = A.shape[0]
    if n <= block + 2:
        w, V = la.eigh(A.toarray(), M.toarray())
        v = V[:, 0]
        return EigResult(float(w[0]), v, _residual(A, M, w[0], v))
    solve = factorize_spd(A - shift * M if shift else A)
    X = np.random.default_rng(seed).standard_normal((n, block))
    lam_old = np.inf
    res = np.inf
    for it in range(1, maxiter + 1):
        Y = np.column_stack([solve(M @ x) for x in X.T])
        Q = _m_orthonormalize(Y, M)
        w, X = _ritz(Q, A, M)
        lam = float(w[0])
        res = _residual(A, M, lam, X[:, 0])
        scale = max(1.0, abs(lam))
        if res <= tol * scale or (abs(lam - lam_old) <= 1e-15 * scale and res <= 1e3 * tol):
            return EigResult(lam, X[:, 0], res, it)
        lam_old = lam
        if adapt_every and it % adapt_every == 0 and len(w) > 1:
            gap = max(float(w[1]) - lam, 1e-12 * scale)
            new = _tighten_shift(A, M, shift, lam, max(1e-2 * gap, 1e-10 * scale))
            if new > shift:
                shift = new
                solve = factorize_spd(A - shift * M)
    raise ConvergenceError(
        f"inverse iteration did not converge in {maxiter} steps (residual {res:.2e})"
    )


def eig_largest(
    A,
    M,
    block: int = 6,
    tol: float = 1e-9,
    maxiter: int = 3000,
    seed: int = 0,
) -> EigResult:
    """Largest eigenpair of ``(A, M)`` by block power iteration on ``M^{-1} A``.

    A first sweep estimates the spectral radius; the iteration then runs on
    ``A + r M`` so that the algebraically largest eigenvalue dominates.
    """
    A = _as_csc(A)
    M = _as_csc(M)
    n = A.shape[0]
    if n <= block + 2:
        w, V = la.eigh(A.toarray(), M.toarray())
        v = V[:, -1]
        return EigResult(float(w[-1]), v, _residual(A, M, w[-1], v))
    solve_m = factorize_spd(M)
    rng = np.random.default_rng(seed)

    def sweep(B, X, iters):
        w = None
        for _ in range(iters):
            Y = np.column_stack([solve_m(B @ x) for x in X.T])
            Q = _m_orthonormalize(Y, M)
            w, X = _ritz(Q, B, M)
        return w, X

    w, _ = sweep(A, rng.standard_normal((n, block)), 8)
    radius = float(np.abs(w).max())
    B = A + radius * M
    X = rng.standard_normal((n, block))
    lam_old = np.inf
    res = np.inf
    for it in range(1, maxiter + 1):
        w, X = sweep(B, X, 1)
        lam = float(w[-1]) - radius
        v = X[:, -1]
        res = _residual(A, M, lam, v)
        if res <= tol * max(1.0, abs(lam)) or (
            abs(lam - lam_old) <= 1e-15 * max(1.0, abs(lam)) and res <= 1e3 * tol
        ):
            return EigResult(lam, v, res, it)
        lam_old = lam
    raise ConvergenceError(
        f"power iteration did not converge in {maxiter} steps (residual {res:.2e})"
    )


def _power_estimate(A, M, sweeps: int = 40, block: int = 6, seed: int = 1) -> float:
    """Largest Ritz value after a fixed number of block power sweeps on ``A + r M``."""
    solve_m = factorize_spd(M)
    X = np.random.default_rng(seed).standard_normal((A.shape[0], block))
    radius = 0.0
    B = A
    w = None
    for k in range(sweeps):
        if k == 8:
            radius = float(np.abs(w).max())
            B = A + radius * M
        Y = np.column_stack([solve_m(B @ x) for x in X.T])
        w, X = _ritz(_m_orthonormalize(Y, M), B, M)
    return float(w[-1]) - radius


def _bracketed_bottom(A, M, hi: float, scale: float, tol: float) -> float:
    # hi is an upper estimate of the smallest eigenvalue; walk below it with
    # inertia tests, bisect the bracket, then refine by shift-invert.
    margin = 1e-6 * scale
    for _ in range(20):
        lo = hi - margin
        if _is_spd(A - lo * M):
            break
        hi, margin = lo, 10.0 * margin
    else:
        raise ConvergenceError("could not find a shift below the spectrum")
    lo = _tighten_shift(A, M, lo, hi, 1e-7 * scale)
    return max(eig_smallest(A, M, shift=lo, tol=tol).eigenvalue, lo)


def spectral_interval(A, M, tol: float = 1e-9) -> tuple[float, float]:
    """Extreme eigenvalues of a symmetric (possibly indefinite or singular) pencil.

    Fixed-length power iteration gives estimates of both ends that lie inside
    the spectrum. Each end is then bracketed from outside by inertia tests of
    ``A - s M`` (a successful Cholesky-type factorization means ``s`` is below
    the spectrum), bisected, and refined by shift-invert iteration.
    """
    A = _as_csc(A)
    M = _as_csc(M)
    top_est = _power_estimate(A, M)
    bottom_est = -_power_estimate(-A, M)
    scale = max(1.0, abs(top_est), abs(bottom_est))
    bottom = _bracketed_bottom(A, M, bottom_est, scale, tol)
    top = -_bracketed_bottom(-A, M, -top_est, scale, tol)
    return bottom, top


@dataclass
class LinearProgram:
    """``min c.y`` subject to ``lower <= y <= upper`` and ``G y >= h``."""

    c: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    G: np.ndarray
    h: np.ndarray

    def __post_init__(self) -> None:
        self.c = np.asarray(self.c, dtype=float)
        q = len(self.c)
        self.lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (q,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, dtype=float), (q,)).copy()
        self.G = np.asarray(self.G, dtype=float).reshape(-1, q)
        self.h = np.asarray(self.h, dtype=float).reshape(-1)
        if len(self.h) != len(self.G):
            raise ValueError("G and h have inconsistent row counts")
        if np.any(~np.isfinite(self.lower)):
            raise ValueError("lower bounds must be finite")
        if np.any(self.upper < self.lower):
            raise InfeasibleLPError("empty box")

    @property
    def n_constraints(self) -> int:
        return int(np.isfinite(self.upper).sum() + len(self.lower) + len(self.G))


def _pivot(T: np.ndarray, row: int, col: int) -> None:
    T[row] /= T[row, col]
    others = np.arange(len(T)) != row
    T[others] -= np.outer(T[others, col], T[row])


def _simplex(T: np.ndarray, basis: list[int], allowed: np.ndarray, eps: float) -> None:
    """Bland's-rule primal simplex on tableau ``T`` (last row = reduced costs)."""
    m = len(basis)
    for _ in range(50_000):
        cost = T[-1, :-1]
        entering = np.flatnonzero((cost < -eps) & allowed)
        if len(entering) == 0:
            return
        col = int(entering[0])
        a = T[:m, col]
        rows = np.flatnonzero(a > eps)
        if len(rows) == 0:
            raise UnboundedLPError("objective is unbounded below")
        ratios = T[rows, -1] / a[rows]
        best = ratios.min()
        ties = rows[ratios <= best + eps * max(1.0, abs(best))]
        row = int(min(ties, key=lambda r: basis[r]))
        _pivot(T, row, col)
        basis[row] = col
    raise ConvergenceError("simplex iteration limit reached")


def lp_min(lp: LinearProgram, eps: float = 1e-11) -> tuple[float, np.ndarray]:
    """Solve a small dense LP by the two-phase tableau simplex method."""
    q = len(lp.c)
    width = lp.upper - lp.lower
    finite = np.flatnonzero(np.isfinite(width))
    # rows: z_i <= width_i (slack) and G z >= h - G lower (surplus)
    rhs_g = lp.h - lp.G @ lp.lower
    n_box, n_g = len(finite), len(lp.G)
    m = n_box + n_g
    n_struct = q + n_box + n_g
    need_art = [i for i in range(n_g) if rhs_g[i] > 0]
    n_art = len(need_art)
    ncols = n_struct + n_art
    T = np.zeros((m + 1, ncols + 1))
    basis: list[int] = []
    for r, i in enumerate(finite):
        T[r, i] = 1.0
        T[r, q + r] = 1.0
        T[r, -1] = width[i]
        basis.append(q + r)
    art_col = {}
    for j, i in enumerate(need_art):
        art_col[i] = n_struct + j
    for i in range(n_g):
        r = n_box + i
        surplus = q + n_box + i
        if rhs_g[i] > 0:
            T[r, :q] = lp.G[i]
            T[r, surplus] = -1.0
            T[r, art_col[i]] = 1.0
            T[r, -1] = rhs_g[i]
            basis.append(art_col[i])
        else:
            T[r, :q] = -lp.G[i]
            T[r, surplus] = 1.0
            T[r, -1] = -rhs_g[i]
            basis.append(surplus)

    scale = max(1.0, np.abs(T[:m]).max()) if m else 1.0
    tol = eps * scale
    if n_art:
        T[-1, n_struct:ncols] = 1.0
        for i in need_art:
            T[-1] -= T[n_box + i]
        _simplex(T, basis, np.ones(ncols, dtype=bool), tol)
        if T[-1, -1] < -1e-9 * scale:
            raise InfeasibleLPError("constraints admit no feasible point")
        # drive remaining artificials out of the basis
        for r, b in enumerate(basis):
            if b >= n_struct:
                cand = np.flatnonzero(np.abs(T[r, :n_struct]) > tol)
                if len(cand):
                    _pivot(T, r, int(cand[0]))
                    basis[r] = int(cand[0])
    T[-1] = 0.0
    T[-1, :q] = lp.c
    for r, b in enumerate(basis):
        if T[-1, b] != 0.0:
            T[-1] -= T[-1, b] * T[r]
    allowed = np.zeros(ncols, dtype=bool)
    allowed[:n_struct] = True
    _simplex(T, basis, allowed, tol)

    z = np.zeros(ncols)
    for r, b in enumerate(basis):
        z[b] = T[r, -1]
    y = lp.lower + z[:q]
    y = np.minimum(np.maximum(y, lp.lower), lp.upper)
    return float(lp.c @ y), y
