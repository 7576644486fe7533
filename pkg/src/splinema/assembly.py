"""Element-level forms of the discrete Monge-Ampere problem.

All matrices live on the unconstrained (discontinuous) coefficient space, so
they are block diagonal with one dense block per triangle. Every form uses
the same quadrature rule, exact for the polynomial integrands of degree
``3d - 4`` (and at least ``2d`` for the mass matrix).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .spline_space import SplineFunction, SplineSpace

DIM = 2


def cofactor2(H: np.ndarray) -> np.ndarray:
    """Cofactor matrix of (a stack of) symmetric 2x2 matrices."""
    H = np.asarray(H, dtype=float)
    C = np.empty_like(H)
    C[..., 0, 0] = H[..., 1, 1]
    C[..., 1, 1] = H[..., 0, 0]
    C[..., 0, 1] = -H[..., 0, 1]
    C[..., 1, 0] = -H[..., 1, 0]
    return C


def det2(H: np.ndarray) -> np.ndarray:
    return H[..., 0, 0] * H[..., 1, 1] - H[..., 0, 1] * H[..., 1, 0]


def quadrature_degree(d: int) -> int:
    return max(3 * d - 4, 2 * d)


def _block_diag(blocks: np.ndarray) -> sp.csr_matrix:
    nt, nb, _ = blocks.shape
    base = (np.arange(nt) * nb)[:, None, None]
    rows = np.broadcast_to(base + np.arange(nb)[None, :, None], blocks.shape)
    cols = np.broadcast_to(base + np.arange(nb)[None, None, :], blocks.shape)
    return sp.csr_matrix((blocks.ravel(), (rows.ravel(), cols.ravel())), shape=(nt * nb, nt * nb))


class Assembler:
    """Quadrature tables for one space, reused by every form."""

    def __init__(self, space: SplineSpace, degree_needed: int | None = None):
        self.space = space
        self.rule = space.quadrature(degree_needed or quadrature_degree(space.degree))
        self.phi, self.dphi, self.ddphi = space.tables(self.rule.points)
        self.wq = self.rule.weights[None, :] * space.areas[:, None]  # (nt, nq)
        self.xq = space.physical_points(self.rule.points)  # (nt, nq, 2)

    def fields(self, v: SplineFunction):
        c = v.local
        grad = np.einsum("ta,tqax->tqx", c, self.dphi)
        hess = np.einsum("ta,tqaxy->tqxy", c, self.ddphi)
        return grad, hess

    def source(self, f) -> np.ndarray:
        x, y = self.xq[..., 0], self.xq[..., 1]
        return np.asarray(f(x, y), dtype=float) * np.ones(x.shape)

    def load(self, values: np.ndarray) -> np.ndarray:
        """``int values * phi_j`` for quadrature-point values (nt, nq)."""
        return np.einsum("tq,tq,qa->ta", self.wq, values, self.phi).ravel()

    def residual(self, v: SplineFunction, f) -> np.ndarray:
        """``-1/2 int (cof D2 v) Dv . Dphi_j - int f phi_j`` for every basis function."""
        grad, hess = self.fields(v)
        flux = np.einsum("tqxy,tqy->tqx", cofactor2(hess), grad)
        r = -np.einsum("tq,tqx,tqax->ta", self.wq, flux, self.dphi).ravel() / DIM
        return r - self.load(self.source(f))

    def det_residual(self, v: SplineFunction, f) -> np.ndarray:
        """Non-divergence form ``int (det D2 v - f) phi_j``."""
        _, hess = self.fields(v)
        return self.load(det2(hess) - self.source(f))

    def cof_stiffness(self, v: SplineFunction) -> sp.csr_matrix:
        _, hess = self.fields(v)
        cof = cofactor2(hess)
        blocks = np.einsum("tq,tqxy,tqay,tqbx->tab", self.wq, cof, self.dphi, self.dphi)
        return _block_diag(0.5 * (blocks + blocks.transpose(0, 2, 1)))

    @cached_property
    def laplace(self) -> sp.csr_matrix:
        blocks = np.einsum("tq,tqax,tqbx->tab", self.wq, self.dphi, self.dphi)
        return _block_diag(0.5 * (blocks + blocks.transpose(0, 2, 1)))

    @cached_property
    def mass(self) -> sp.csr_matrix:
        blocks = np.einsum("tq,qa,qb->tab", self.wq, self.phi, self.phi)
        return _block_diag(blocks)


@dataclass
class AssembledForms:
    K_cof: sp.csr_matrix
    K_lap: sp.csr_matrix
    M: sp.csr_matrix
    residual: np.ndarray
    load: np.ndarray


def assembler_for(space: SplineSpace) -> Assembler:
    """The default assembler of ``space``, built on first use."""
    cached = space.__dict__.get("_assembler")
    if cached is None:
        cached = space.__dict__["_assembler"] = Assembler(space)
    return cached


def assemble_residual(space: SplineSpace, v: SplineFunction, f) -> np.ndarray:
    return assembler_for(space).residual(v, f)


def assemble_cof_stiffness(space: SplineSpace, v: SplineFunction) -> sp.csr_matrix:
    return assembler_for(space).cof_stiffness(v)


def assemble_laplace_and_mass(space: SplineSpace):
    a = assembler_for(space)
    return a.laplace, a.mass


def assemble_all(space: SplineSpace, v: SplineFunction, f) -> AssembledForms:
    a = assembler_for(space)
    return AssembledForms(a.cof_stiffness(v), a.laplace, a.mass, a.residual(v, f),
                          a.load(a.source(f)))
