"""Error bounds for least-squares discretizations, independent of any mesh.

With ``e`` the true error, ``r = L e`` the residual, ``e_hat`` an
approximation of ``e`` and ``rho = r - L e_hat`` the auxiliary residual,

    ||e||_X <= ||r||_Y / sqrt(alpha)                     (loose)
    ||e||_X <= ||e_hat||_X + ||rho||_Y / sqrt(alpha)     (tight)

and whenever ``||rho||_Y <= delta sqrt(alpha) ||e_hat||_X`` with
``delta < 1`` the tight bound overestimates ``||e||_X`` by at most the factor
``(1 + delta) / (1 - delta)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .linalg import eig_smallest


@dataclass(frozen=True)
class BoundInputs:
    err_approx_norm: float
    aux_res_norm: float
    alpha: float
    res_norm: float | None = None

    def __post_init__(self) -> None:
        if self.alpha <= 0.0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        for name in ("err_approx_norm", "aux_res_norm", "res_norm"):
            value = getattr(self, name)
            if value is not None and value < 0.0:
                raise ValueError(f"{name} must be non-negative, got {value}")


def loose_bound(res_norm: float, alpha: float) -> float:
    """Residual-only bound ``||r|| / sqrt(alpha)``."""
    if alpha <= 0.0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    return res_norm / math.sqrt(alpha)


def tight_bound(inputs: BoundInputs) -> float:
    return inputs.err_approx_norm + inputs.aux_res_norm / math.sqrt(inputs.alpha)


def effectivity_ceiling(delta: float) -> float:
    """Largest possible ratio of the tight bound to the true error, ``(1 + delta) / (1 - delta)``."""
    if not 0.0 <= delta < 1.0:
        raise ValueError(f"delta must lie in [0, 1), got {delta}")
    return (1.0 + delta) / (1.0 - delta)


# ----------------------------------------------------------------- tridiagonal example


@dataclass(frozen=True)
class TridiagRecord:
    n: int
    error: float
    residual: float
    lambda1: float
    ratio: float
    lower_bound: float


def tridiag_matrix(n: int) -> sp.csr_matrix:
    return sp.diags([-np.ones(n - 1), 2.0 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]).tocsr()


def tridiag_closed_form(n: int) -> TridiagRecord:
    lam = 4.0 * math.sin(math.pi / (2 * (n + 1))) ** 2
    residual = math.sqrt(16 * n - 14) / n
    return TridiagRecord(
        n,
        1.0 / math.sqrt(n),
        residual,
        lam,
        residual / math.sqrt(lam),
        4.0 * math.sqrt(n - 1) / math.pi,
    )


def tridiag_demo(n: int) -> TridiagRecord:
    """Perturb the solution of ``tridiag(-1, 2, -1) u = (1, 0, ..., 0, 1)`` by ``(-1)^i / n``.

    Error, residual and smallest eigenvalue are computed from the assembled
    matrix; :func:`tridiag_closed_form` gives the same quantities analytically.
    """
    if n < 2:
        raise ValueError(f"n must be at least 2, got {n}")
    A = tridiag_matrix(n)
    f = np.zeros(n)
    f[[0, -1]] = 1.0
    u = np.ones(n)
    i = np.arange(1, n + 1)
    u_hat = 1.0 + (-1.0) ** i / n
    error = float(np.linalg.norm(u - u_hat))
    residual = float(np.linalg.norm(f - A @ u_hat))
    lam = eig_smallest(A, sp.identity(n, format="csc"), tol=1e-12).eigenvalue
    return TridiagRecord(
        n,
        error,
        residual,
        lam,
        loose_bound(residual, lam),
        4.0 * math.sqrt(n - 1) / math.pi,
    )


def write_tridiag_csv(records, path: str | Path, header: str = "") -> None:
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(header)
        w = csv.writer(fh)
        w.writerow(["n", "error", "residual", "lambda1", "ratio", "lower_bound"])
        for r in records:
            w.writerow(
                [r.n, repr(r.error), repr(r.residual), repr(r.lambda1), repr(r.ratio), repr(r.lower_bound)]
            )
