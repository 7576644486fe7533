"""Constrained linear solves ``K c + R^T lam = F, R c = G``."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class KKTError(RuntimeError):
    """Singular or inaccurate saddle-point factorization."""


class ALConvergenceError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


@dataclass
class SaddleProblem:
    K: sp.spmatrix
    F: np.ndarray
    R: sp.spmatrix
    G: np.ndarray

    def __post_init__(self):
        self.K = sp.csr_matrix(self.K)
        self.R = sp.csr_matrix(self.R)
        self.F = np.asarray(self.F, dtype=float)
        self.G = np.asarray(self.G, dtype=float)
        n = self.K.shape[0]
        if self.K.shape != (n, n) or self.F.shape != (n,):
            raise ValueError("K must be square and match F")
        if self.R.shape[1] != n or self.R.shape[0] != self.G.shape[0]:
            raise ValueError("R and G dimensions do not match K")

    def residuals(self, c, lam):
        """Relative residuals of the two KKT blocks."""
        r1 = self.K @ c + self.R.T @ lam - self.F
        r2 = self.R @ c - self.G
        k, rr = _absmax(self.K), _absmax(self.R)
        s1 = k * _absmax(c) + rr * _absmax(lam) + _absmax(self.F)
        s2 = rr * _absmax(c) + _absmax(self.G)
        rel1 = _absmax(r1) / max(s1, 1e-300)
        rel2 = _absmax(r2) / max(s2, 1e-300)
        return rel1, rel2


def _absmax(a) -> float:
    if sp.issparse(a):
        return float(abs(a).max()) if a.nnz else 0.0
    return float(np.abs(a).max(initial=0.0))


@dataclass
class ALConfig:
    mu: float = 1e-6
    tol: float = 1e-12
    max_outer: int = 200

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("penalty mu must be positive")


class KKTSolver:
    """Factor a KKT matrix once and solve for several right-hand sides."""

    def __init__(self, K, R, refine: int = 2):
        K = sp.csr_matrix(K)
        R = sp.csr_matrix(R)
        self.n, self.m = K.shape[0], R.shape[0]
        self.K, self.R = K, R
        self.A = sp.bmat([[K, R.T], [R, None]], format="csc") if self.m else K.tocsc()
        self.refine = refine
        try:
            self._lu = spla.splu(self.A)
        except RuntimeError as exc:
            raise KKTError(
                f"KKT factorization failed ({exc}); the constraints may be rank deficient "
                "or K lost coercivity on ker R (loss of discrete convexity?)"
            ) from exc
        diag = np.abs(self._lu.U.diagonal())
        if not np.all(np.isfinite(diag)) or diag.min() <= 1e-14 * diag.max():
            raise KKTError(
                "KKT matrix is numerically singular; try the augmented-Lagrangian solver or "
                "check convexity of the current iterate"
            )

    def solve(self, F, G):
        rhs = np.r_[F, G]
        x = self._lu.solve(rhs)
        for _ in range(self.refine):
            x += self._lu.solve(rhs - self.A @ x)
        if not np.all(np.isfinite(x)):
            raise KKTError("KKT solve produced non-finite values")
        return x[: self.n], x[self.n:]


def solve_kkt(p: SaddleProblem, check: bool = True):
    """Direct sparse solve of the saddle-point system; returns ``(c, lam)``."""
    c, lam = KKTSolver(p.K, p.R).solve(p.F, p.G)
    if check:
        r1, r2 = p.residuals(c, lam)
        if r1 > 1e-10 or r2 > 1e-10:
            raise KKTError(f"KKT residuals too large: {r1:.2e}, {r2:.2e}")
    return c, lam


@dataclass
class ALResult:
    c: np.ndarray
    lam: np.ndarray
    iterations: int
    constraint_residuals: list = field(default_factory=list)


def solve_augmented_lagrangian(p: SaddleProblem, cfg: ALConfig | None = None) -> ALResult:
    """Method of multipliers with a fixed penalty ``1/mu``.

    Each outer step solves ``(K + R^T R / mu) c = F - R^T lam + R^T G / mu`` and
    updates ``lam += (R c - G) / mu``; the matrix is factored once.
    """
    cfg = cfg or ALConfig()
    K, R, F, G = p.K, p.R, p.F, p.G
    A = (K + (R.T @ R) / cfg.mu).tocsc()
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        raise KKTError(f"augmented matrix is singular ({exc})") from exc

    def apply_inverse(b):
        x = lu.solve(b)
        x += lu.solve(b - A @ x)
        return x

    lam = np.zeros(R.shape[0])
    target = cfg.tol * (1.0 + np.linalg.norm(G))
    history = []
    c = np.zeros(K.shape[0])
    for it in range(1, cfg.max_outer + 1):
        c = apply_inverse(F - R.T @ lam + (R.T @ G) / cfg.mu)
        defect = R @ c - G
        history.append(float(np.linalg.norm(defect)))
        lam = lam + defect / cfg.mu
        if history[-1] <= target:
            return ALResult(c, lam, it, history)
    raise ALConvergenceError(
        f"augmented Lagrangian did not converge in {cfg.max_outer} iterations "
        f"(constraint residual {history[-1]:.3e})",
        history[-1],
    )
