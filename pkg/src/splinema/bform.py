"""Bernstein-Bezier polynomials on triangles.

Coefficients of a degree ``d`` polynomial are stored in lexicographic
descending order of the multi-index ``(a1, a2, a3)`` with ``a1 + a2 + a3 = d``:
``(d,0,0), (d-1,1,0), (d-1,0,1), (d-2,2,0), ...``. The same ordering is used
everywhere in the package.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import factorial
from typing import NamedTuple

import numpy as np


class BarycentricPoint(NamedTuple):
    b1: float
    b2: float
    b3: float

    def validate(self, tol: float = 1e-14) -> "BarycentricPoint":
        if abs(self.b1 + self.b2 + self.b3 - 1.0) > tol or min(self) < -tol:
            raise ValueError(f"not a barycentric point: {tuple(self)}")
        return self


def ncoeffs(d: int) -> int:
    return (d + 1) * (d + 2) // 2


@lru_cache(maxsize=None)
def multi_indices(d: int) -> np.ndarray:
    """(ncoeffs(d), 3) array of multi-indices in storage order."""
    return np.array(
        [(i, j, d - i - j) for i in range(d, -1, -1) for j in range(d - i, -1, -1)],
        dtype=np.int64,
    )


@lru_cache(maxsize=None)
def index_map(d: int) -> dict:
    return {tuple(int(x) for x in a): n for n, a in enumerate(multi_indices(d))}


@lru_cache(maxsize=None)
def _multinomials(d: int) -> np.ndarray:
    return np.array([factorial(d) / np.prod([factorial(int(x)) for x in a])
                     for a in multi_indices(d)])


@dataclass(frozen=True)
class BTriPoly:
    """A polynomial on one triangle in Bernstein form."""

    degree: int
    coefficients: np.ndarray
    triangle: int = 0

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float)
        if self.degree < 0 or c.shape != (ncoeffs(self.degree),):
            raise ValueError(
                f"degree {self.degree} needs {ncoeffs(self.degree)} coefficients, got {c.shape}"
            )
        object.__setattr__(self, "coefficients", c)


def bernstein_basis(d: int, bary: np.ndarray) -> np.ndarray:
    """Values of all degree-``d`` Bernstein polynomials at points ``(..., 3)``."""
    bary = np.asarray(bary, dtype=float)
    alpha = multi_indices(d)
    powers = np.prod(bary[..., None, :] ** alpha, axis=-1)
    return _multinomials(d) * powers


def de_casteljau(d: int, coeffs: np.ndarray, b) -> float:
    """Evaluate by repeated convex combination of neighbouring coefficients."""
    b1, b2, b3 = b
    layer = {tuple(a): float(c) for a, c in zip(multi_indices(d).tolist(), coeffs)}
    for k in range(d, 0, -1):
        layer = {
            (i, j, k - 1 - i - j): b1 * layer[(i + 1, j, k - 1 - i - j)]
            + b2 * layer[(i, j + 1, k - 1 - i - j)]
            + b3 * layer[(i, j, k - i - j)]
            for i in range(k - 1, -1, -1)
            for j in range(k - 1 - i, -1, -1)
        }
    return layer[(0, 0, 0)]


def eval(p: BTriPoly, x) -> float:  # noqa: A001 - mirrors the operation name
    return de_casteljau(p.degree, p.coefficients, BarycentricPoint(*x).validate(1e-12))


def derivative_coefficients(d: int, coeffs: np.ndarray, k: int) -> np.ndarray:
    """B-form of the partial derivative with respect to barycentric ``b_k``.

    Returns degree ``d-1`` coefficients ``d * c_{beta + e_k}``.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if d == 0:
        return np.zeros(1)
    idx = index_map(d)
    shift = np.eye(3, dtype=np.int64)[k]
    return d * np.array([coeffs[idx[tuple(int(x) for x in beta + shift)]]
                         for beta in multi_indices(d - 1)])


def barycentric_gradients(tri: np.ndarray) -> np.ndarray:
    """Constant Cartesian gradients of the barycentric coordinates.

    ``tri`` is a (3, 2) array of vertices or an (nt, 3, 2) stack; the result
    has shape (..., 3, 2).
    """
    tri = np.asarray(tri, dtype=float)
    A = np.concatenate([np.swapaxes(tri, -1, -2), np.ones(tri.shape[:-2] + (1, 3))], axis=-2)
    inv = np.linalg.inv(A)  # rows: b_k = inv[k] @ (x, y, 1)
    return inv[..., :, :2]


def cartesian_to_barycentric(tri: np.ndarray, xy) -> np.ndarray:
    tri = np.asarray(tri, dtype=float)
    A = np.vstack([tri.T, np.ones(3)])
    xy = np.atleast_2d(xy)
    rhs = np.vstack([xy.T, np.ones(len(xy))])
    return np.linalg.solve(A, rhs).T


def grad(p: BTriPoly, x, tri_geometry) -> np.ndarray:
    """Cartesian gradient at barycentric point ``x`` of triangle ``tri_geometry``."""
    G = barycentric_gradients(tri_geometry)
    d = p.degree
    if d == 0:
        return np.zeros(2)
    partials = [de_casteljau(d - 1, derivative_coefficients(d, p.coefficients, k), x)
                for k in range(3)]
    return np.asarray(partials) @ G


def hess(p: BTriPoly, x, tri_geometry) -> np.ndarray:
    """Cartesian Hessian; zero for degree below 2."""
    d = p.degree
    if d < 2:
        return np.zeros((2, 2))
    G = barycentric_gradients(tri_geometry)
    B = np.empty((3, 3))
    for k in range(3):
        dk = derivative_coefficients(d, p.coefficients, k)
        for m in range(k, 3):
            B[k, m] = B[m, k] = de_casteljau(d - 2, derivative_coefficients(d - 1, dk, m), x)
    H = G.T @ B @ G
    return 0.5 * (H + H.T)


@lru_cache(maxsize=64)
def basis_tables(d: int, bary_key: tuple):
    """Cached :func:`basis_derivatives` for a fixed point set (quadrature)."""
    return basis_derivatives(d, np.array(bary_key, dtype=float).reshape(-1, 3))


def basis_derivatives(d: int, bary: np.ndarray):
    """Bernstein values and barycentric derivatives at points ``(nq, 3)``.

    Returns ``(B, dB, ddB)`` with shapes (nq, nb), (3, nq, nb) and
    (3, 3, nq, nb), derivatives taken with respect to ``b1, b2, b3``
    treated as independent variables.
    """
    bary = np.asarray(bary, dtype=float).reshape(-1, 3)
    nq, nb = len(bary), ncoeffs(d)
    B = bernstein_basis(d, bary)
    dB = np.zeros((3, nq, nb))
    ddB = np.zeros((3, 3, nq, nb))
    alpha = multi_indices(d)
    eye = np.eye(3, dtype=np.int64)
    if d >= 1:
        low = bernstein_basis(d - 1, bary)
        idx1 = index_map(d - 1)
        for a, al in enumerate(alpha):
            for k in range(3):
                if al[k] > 0:
                    dB[k, :, a] = d * low[:, idx1[tuple(int(x) for x in al - eye[k])]]
    if d >= 2:
        low2 = bernstein_basis(d - 2, bary)
        idx2 = index_map(d - 2)
        for a, al in enumerate(alpha):
            for k in range(3):
                for m in range(3):
                    beta = al - eye[k] - eye[m]
                    if beta.min() >= 0:
                        ddB[k, m, :, a] = d * (d - 1) * low2[:, idx2[tuple(int(x) for x in beta)]]
    return B, dB, ddB


# --- quadrature -----------------------------------------------------------

MAX_QUADRATURE_DEGREE = 20


@dataclass(frozen=True)
class QuadratureRule:
    """Rule on the reference triangle; weights sum to one."""

    points: np.ndarray  # (nq, 3) barycentric
    weights: np.ndarray
    exactness_degree: int

    def __len__(self):
        return len(self.weights)


@lru_cache(maxsize=None)
def quadrature_for(degree_needed: int) -> QuadratureRule:
    """Symmetric triangle rule exact for polynomials of ``degree_needed``.

    Degree 1 is the centroid rule; higher degrees use the fully symmetric
    Xiao-Gimbutas rules shipped with :mod:`modepy`.
    """
    if not 1 <= degree_needed <= MAX_QUADRATURE_DEGREE:
        raise ValueError(
            f"no quadrature rule for degree {degree_needed}; supported 1..{MAX_QUADRATURE_DEGREE}"
        )
    if degree_needed == 1:
        return QuadratureRule(np.full((1, 3), 1.0 / 3.0), np.ones(1), 1)
    import modepy

    rule = modepy.XiaoGimbutasSimplexQuadrature(degree_needed, 2)
    # modepy's reference triangle is (-1,-1), (1,-1), (-1,1) with area 2
    x, y = rule.nodes
    b2 = (x + 1.0) / 2.0
    b3 = (y + 1.0) / 2.0
    pts = np.column_stack([1.0 - b2 - b3, b2, b3])
    w = np.asarray(rule.weights) / 2.0
    return QuadratureRule(pts, w / w.sum(), int(rule.exact_to))
