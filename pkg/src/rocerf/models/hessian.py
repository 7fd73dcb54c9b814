"""Factored (H + damping I) solves for the influence cache.

Logistic regression gets an exact dense Cholesky factor. The network never
materializes H: solves run conjugate gradient on Hessian-vector products.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from ..data import Dataset
from ..errors import CgNonConvergence, NotPositiveDefinite


class DenseHessianFactor:
    def __init__(self, H: np.ndarray, damping: float = 0.0):
        self.H = np.array(H, dtype=np.float64)
        self.damping = float(damping)
        self.dim = self.H.shape[0]
        A = self.H + self.damping * np.eye(self.dim)
        try:
            self._cho = cho_factor(A, lower=True)
        except LinAlgError as exc:
            raise NotPositiveDefinite(f"Hessian is not positive definite: {exc}") from exc
        pivots = np.diag(self._cho[0])
        if not np.all(pivots > 0):
            raise NotPositiveDefinite("non-positive Cholesky pivot")

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self.H @ v + self.damping * v

    def solve(self, v: np.ndarray) -> np.ndarray:
        """Solve (H + damping I) u = v; ``v`` may hold several right-hand sides as columns."""
        return cho_solve(self._cho, v)


class CgHessianFactor:
    """Damped CG solver over a Hessian-vector product callable."""

    def __init__(self, hvp, dim: int, damping: float = 1e-2, rtol: float = 1e-10,
                 max_iter: int | None = None):
        self.hvp = hvp
        self.dim = int(dim)
        self.damping = float(damping)
        self.rtol = rtol
        self.max_iter = max_iter or 10 * self.dim

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self.hvp(v) + self.damping * v

    def solve(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.ndim == 2:
            return np.column_stack([self.solve(v[:, j]) for j in range(v.shape[1])])
        return conjugate_gradient(self.matvec, v, self.rtol, self.max_iter)


def conjugate_gradient(matvec, b: np.ndarray, rtol: float = 1e-10, max_iter: int = 1000):
    """Plain CG for a symmetric operator; raises when the residual stalls.

    Negative curvature (possible when the damping is too small for a
    non-convex loss) is reported as non-convergence rather than ignored.
    """
    x = np.zeros_like(b)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return x
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    for _ in range(max_iter):
        Ap = matvec(p)
        curv = float(p @ Ap)
        if curv <= 0:
            raise CgNonConvergence(
                "operator is not positive definite along a CG direction; increase damping",
                residual=np.sqrt(rs) / bnorm,
            )
        alpha = rs / curv
        x += alpha * p
        r -= alpha * Ap
        rs_new = float(r @ r)
        if np.sqrt(rs_new) <= rtol * bnorm:
            return x
        p = r + (rs_new / rs) * p
        rs = rs_new
    raise CgNonConvergence(
        f"CG did not reach relative residual {rtol:g} in {max_iter} iterations",
        residual=np.sqrt(rs) / bnorm,
    )


def build_hessian_factor(model, train: Dataset, damping: float | None = None):
    """Factor the mean training-loss Hessian at the trained parameters.

    ``damping=None`` means 0 for logistic regression and 1e-2 for the network.
    """
    if model.family == "logreg":
        return DenseHessianFactor(model.hessian(train), 0.0 if damping is None else damping)
    return CgHessianFactor(model.hvp_operator(train), model.n_params,
                           1e-2 if damping is None else damping)
