"""Dense linear solves for the assembled nonlocal systems."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

__all__ = ["LinearSystem", "SingularSystemError", "ConvergenceError", "solve_linear"]


@dataclass(frozen=True)
class LinearSystem:
    matrix: np.ndarray
    rhs: np.ndarray

    @property
    def dimension(self) -> int:
        return self.rhs.shape[0]

    def residual(self, u: np.ndarray) -> float:
        """Relative residual ``|Mu - b| / |b|`` (absolute when ``b = 0``)."""
        r = np.linalg.norm(self.matrix @ u - self.rhs)
        nb = np.linalg.norm(self.rhs)
        return float(r / nb) if nb > 0 else float(r)


class SingularSystemError(np.linalg.LinAlgError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (final relative residual {residual:.3e})")
        self.residual = residual


def solve_linear(
    system: LinearSystem,
    method: str = "lu",
    *,
    restart: int = 30,
    tol: float = 1e-12,
    maxiter: int = 500,
) -> np.ndarray:
    """Solve ``M u = b`` by LU factorization or restarted GMRES.

    ``maxiter`` counts GMRES restart cycles.  GMRES is unpreconditioned and
    starts from zero.
    """
    M, b = system.matrix, system.rhs
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] != b.shape[0]:
        raise ValueError(f"incompatible system shapes {M.shape} and {b.shape}")
    if not (np.all(np.isfinite(M)) and np.all(np.isfinite(b))):
        raise ValueError("linear system has non-finite entries")

    if method == "lu":
        try:
            with warnings.catch_warnings():
                # singularity is reported below as an exception instead
                warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
                lu, piv = scipy.linalg.lu_factor(M, check_finite=False)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise SingularSystemError(str(exc)) from exc
        diag = np.abs(np.diag(lu))
        if diag.min() <= np.finfo(float).eps * diag.max() * M.shape[0]:
            raise SingularSystemError("matrix is singular to working precision")
        return scipy.linalg.lu_solve((lu, piv), b, check_finite=False)

    if method == "gmres":
        if not np.any(b):
            return np.zeros_like(b)
        u, info = scipy.sparse.linalg.gmres(
            M, b, rtol=tol, atol=0.0, restart=restart, maxiter=maxiter
        )
        res = system.residual(u)
        if info != 0 or res > max(tol, 1e-10) * 10:
            raise ConvergenceError(f"GMRES({restart}) did not converge in {maxiter} cycles", res)
        return u

    raise ValueError(f"unknown linear method {method!r}; use 'lu' or 'gmres'")
