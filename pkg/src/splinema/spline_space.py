"""C1 spline spaces as constrained piecewise-polynomial coefficient vectors.

Each triangle owns its own block of ``(d+1)(d+2)/2`` Bernstein coefficients;
continuity, C1 smoothness and Dirichlet data are linear side conditions
``R c = G``. The rows produced here are linearly independent: duplicate
vertex continuity rows are skipped, and the C1 rows near each vertex (which
carry the classical dependencies of C1 spline spaces) are filtered by a
local rank test.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from math import comb

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .bform import (
    barycentric_gradients,
    basis_derivatives,
    basis_tables,
    bernstein_basis,
    index_map,
    multi_indices,
    ncoeffs,
    quadrature_for,
)
from .mesh import Triangulation

_RANK_TOL = 1e-9


class ConstraintError(RuntimeError):
    pass


@dataclass(frozen=True)
class ConstraintSystem:
    """Side conditions ``R c = G``; the first ``n_smooth`` rows are C0/C1."""

    R: sp.csr_matrix
    G: np.ndarray
    n_smooth: int

    @property
    def shape(self):
        return self.R.shape


class _Rows:
    """Sparse row accumulator."""

    def __init__(self):
        self.rows, self.cols, self.vals = [], [], []
        self.n = 0

    def add(self, entries):
        for col, val in entries:
            self.rows.append(self.n)
            self.cols.append(col)
            self.vals.append(val)
        self.n += 1

    def matrix(self, ncols):
        return sp.csr_matrix((self.vals, (self.rows, self.cols)), shape=(self.n, ncols))


class SplineSpace:
    """Degree-``d`` C1 splines on a triangulation, in spline-element form."""

    def __init__(self, mesh: Triangulation, degree: int = 5):
        if degree < 1:
            raise ValueError("degree must be at least 1")
        self.mesh = mesh
        self.degree = degree
        self.nb = ncoeffs(degree)
        self.dof_count = mesh.nt * self.nb
        self.geometry = mesh.vertices[mesh.triangles]  # (nt, 3, 2)
        self.bary_grads = barycentric_gradients(self.geometry)  # (nt, 3, 2)
        self.areas = mesh.signed_areas()
        self._build_points()

    # -- indexing ----------------------------------------------------------

    def dof(self, t: int, powers: dict) -> int:
        """Global coefficient index of triangle ``t`` for ``{vertex: power}``."""
        alpha = tuple(powers.get(int(v), 0) for v in self.mesh.triangles[t])
        return t * self.nb + index_map(self.degree)[alpha]

    def _build_points(self):
        d = self.degree
        alpha = multi_indices(d)
        keys = {}
        index = np.empty((self.mesh.nt, self.nb), dtype=np.int64)
        for t, tri in enumerate(self.mesh.triangles.tolist()):
            for a, al in enumerate(alpha.tolist()):
                key = tuple(sorted((v, p) for v, p in zip(tri, al) if p))
                index[t, a] = keys.setdefault(key, len(keys))
        self.point_index = index
        self.n_points = len(keys)
        self.domain_points = np.einsum("ak,tkx->tax", alpha / d, self.geometry)

    # -- constraints ---------------------------------------------------------

    @cached_property
    def _smoothness(self):
        mesh, d = self.mesh, self.degree
        rows = _Rows()
        parent = {}

        def find(x):
            while parent.get(x, x) != x:
                parent[x] = parent.get(parent[x], parent[x])
                x = parent[x]
            return x

        groups: dict[int, list] = {}
        for e in mesh.interior_edges:
            v1, v2 = (int(v) for v in mesh.edges[e])
            t, s = (int(x) for x in mesh.edge_triangles[e])
            for i in range(d + 1):
                powers = {v1: d - i, v2: i}
                a, b = self.dof(t, powers), self.dof(s, powers)
                if i in (0, d):
                    ra, rb = find(a), find(b)
                    if ra == rb:
                        continue
                    parent[ra] = rb
                rows.add([(a, 1.0), (b, -1.0)])
            if d < 2:
                continue
            u = int(next(v for v in mesh.triangles[t] if v not in (v1, v2)))
            w = int(next(v for v in mesh.triangles[s] if v not in (v1, v2)))
            tri = mesh.vertices[[v1, v2, u]]
            lam = np.linalg.solve(np.vstack([tri.T, np.ones(3)]), np.r_[mesh.vertices[w], 1.0])
            for j in range(d):
                i = d - 1 - j
                entries = [
                    (self.dof(s, {v1: i, v2: j, w: 1}), 1.0),
                    (self.dof(t, {v1: i + 1, v2: j}), -lam[0]),
                    (self.dof(t, {v1: i, v2: j + 1}), -lam[1]),
                    (self.dof(t, {v1: i, v2: j, u: 1}), -lam[2]),
                ]
                owner = None
                if j == 0 or (d >= 5 and j == 1):
                    owner = v1
                elif j == d - 1 or (d >= 5 and j == d - 2):
                    owner = v2
                if owner is None:
                    rows.add(entries)
                else:
                    groups.setdefault(owner, []).append(entries)

        kept_by_vertex = {}
        for v, cand in groups.items():
            kept = _select_independent(self._to_points(cand), [])
            kept_by_vertex[v] = [cand[k] for k in kept]
            for k in kept:
                rows.add(cand[k])
        return rows.matrix(self.dof_count), kept_by_vertex

    def _to_points(self, row_list):
        out = []
        for entries in row_list:
            acc = {}
            for col, val in entries:
                p = int(self.point_index.flat[col])
                acc[p] = acc.get(p, 0.0) + val
            out.append(acc)
        return out

    def _point_matrix(self, R: sp.csr_matrix) -> np.ndarray:
        """Dense rows of ``R`` expressed over global domain points."""
        P = sp.csr_matrix((np.ones(self.dof_count), (np.arange(self.dof_count),
                           self.point_index.ravel())), shape=(self.dof_count, self.n_points))
        return (R @ P).toarray()

    @property
    def smoothness_rows(self) -> sp.csr_matrix:
        return self._smoothness[0]

    @cached_property
    def _boundary_layout(self):
        """Boundary points per edge and the pins to keep near each vertex."""
        mesh, d = self.mesh, self.degree
        edge_points = []
        for e in mesh.boundary_edges:
            v1, v2 = (int(v) for v in mesh.edges[e])
            t = int(mesh.edge_triangles[e, 0])
            edge_points.append((v1, v2, [self.dof(t, {v1: d - i, v2: i}) for i in range(d + 1)]))

        pin_dof = {}
        for v1, v2, dofs in edge_points:
            for col in dofs:
                pin_dof.setdefault(int(self.point_index.flat[col]), col)

        # pins adjacent to each boundary vertex: the vertex and ring-1 points
        near = {}
        for v1, v2, dofs in edge_points:
            near.setdefault(v1, [dofs[0]]).append(dofs[1])
            near.setdefault(v2, [dofs[-1]]).append(dofs[-2])
        kept_c1 = self._smoothness[1]
        dropped = set()
        if d == 2:
            # ring-1 neighbourhoods of an edge's two ends share its midpoint,
            # so dependencies are not local to one vertex
            pts = list(pin_dof)
            S = self.smoothness_rows
            dropped = set(pts) - set(_independent_pins(self._point_matrix(S), pts, self.n_points))
            near = {}
        for v, cols in near.items():
            pts = list(dict.fromkeys(int(self.point_index.flat[c]) for c in cols))
            c1 = self._to_points(kept_c1.get(v, []))
            pins = [{p: 1.0} for p in pts]
            kept = set(_select_independent(c1 + pins, range(len(c1))))
            dropped.update(p for k, p in enumerate(pts) if len(c1) + k not in kept)
        pins = [(p, col) for p, col in pin_dof.items() if p not in dropped]
        return edge_points, pins

    def boundary_values(self, g) -> dict:
        """Trace coefficients of g_h keyed by global point.

        Each boundary edge is interpolated at ``d+1`` equally spaced points.
        Where two boundary edges meet on a straight line, the two adjacent
        coefficients are nudged minimally so the trace is C1 there.
        """
        d = self.degree
        s = np.linspace(0.0, 1.0, d + 1)
        Vinv = interpolation_matrix(d)
        edge_points, _ = self._boundary_layout
        X = self.mesh.vertices
        values = {}
        by_vertex = {}
        for v1, v2, dofs in edge_points:
            x = X[v1][None, :] + s[:, None] * (X[v2] - X[v1])[None, :]
            samples = np.broadcast_to(np.asarray(g(x[:, 0], x[:, 1]), dtype=float), (d + 1,))
            coef = Vinv @ samples
            coef[0] = float(g(X[v1][0], X[v1][1]))
            coef[-1] = float(g(X[v2][0], X[v2][1]))
            pts = [int(self.point_index.flat[c]) for c in dofs]
            values.update(zip(pts, coef))
            L = float(np.linalg.norm(X[v2] - X[v1]))
            by_vertex.setdefault(v1, []).append((pts[1], X[v2] - X[v1], L))
            by_vertex.setdefault(v2, []).append((pts[-2], X[v1] - X[v2], L))
        if d >= 3:
            for v, nb in by_vertex.items():
                if len(nb) != 2:
                    continue
                (pl, dl, Ll), (pr, dr, Lr) = nb
                cross = dl[0] * dr[1] - dl[1] * dr[0]
                if abs(cross) > 1e-12 * Ll * Lr or dl @ dr > 0:
                    continue
                cv = values[int(self.point_index.flat[self.dof_at_vertex(v)])]
                a = np.array([1.0 / Ll, 1.0 / Lr])
                c = np.array([values[pl], values[pr]])
                c += (cv * a.sum() - a @ c) / (a @ a) * a
                values[pl], values[pr] = c
        return values

    def dof_at_vertex(self, v: int) -> int:
        t = int(np.flatnonzero((self.mesh.triangles == v).any(axis=1))[0])
        return self.dof(t, {v: self.degree})

    def boundary_rows(self, g=None):
        """Pin rows on boundary coefficients and their right-hand side."""
        _, pins = self._boundary_layout
        rows = _Rows()
        for _, col in pins:
            rows.add([(col, 1.0)])
        if g is None:
            G = np.zeros(len(pins))
        else:
            values = self.boundary_values(g)
            G = np.array([values[p] for p, _ in pins])
        return rows.matrix(self.dof_count), G

    def constraints(self, g=None) -> ConstraintSystem:
        S = self.smoothness_rows
        B, G = self.boundary_rows(g)
        return ConstraintSystem(sp.vstack([S, B]).tocsr(), np.r_[np.zeros(S.shape[0]), G], S.shape[0])

    # -- evaluation ----------------------------------------------------------

    def tables(self, bary: np.ndarray):
        """Basis values, Cartesian gradients and Hessians at reference points.

        Returns ``phi (nq, nb)``, ``dphi (nt, nq, nb, 2)`` and
        ``ddphi (nt, nq, nb, 2, 2)``.
        """
        B, dB, ddB = basis_tables(self.degree, tuple(np.asarray(bary, float).ravel()))
        G = self.bary_grads
        dphi = np.einsum("kqa,tkx->tqax", dB, G)
        ddphi = np.einsum("kmqa,tkx,tmy->tqaxy", ddB, G, G)
        return B, dphi, ddphi

    def quadrature(self, degree_needed: int):
        return quadrature_for(min(degree_needed, 20))

    def physical_points(self, bary: np.ndarray) -> np.ndarray:
        return np.einsum("qk,tkx->tqx", bary, self.geometry)


@dataclass
class SplineFunction:
    """Coefficient vector over a :class:`SplineSpace`."""

    space: SplineSpace
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.space.dof_count,):
            raise ValueError("coefficient vector has the wrong length")

    @property
    def local(self) -> np.ndarray:
        return self.coeffs.reshape(self.space.mesh.nt, self.space.nb)

    def smoothness_defect(self) -> float:
        return float(np.abs(self.space.smoothness_rows @ self.coeffs).max(initial=0.0))

    def is_conforming(self, rtol: float = 1e-9) -> bool:
        return self.smoothness_defect() <= rtol * max(1.0, np.linalg.norm(self.coeffs))

    def at_reference(self, bary: np.ndarray):
        """Values, gradients, Hessians at reference points in every triangle."""
        phi, dphi, ddphi = self.space.tables(bary)
        c = self.local
        return (
            c @ phi.T,
            np.einsum("ta,tqax->tqx", c, dphi),
            np.einsum("ta,tqaxy->tqxy", c, ddphi),
        )

    def evaluate_in(self, tri_idx: np.ndarray, bary: np.ndarray, derivatives: int = 0):
        """Evaluate at given (triangle, barycentric) pairs."""
        tri_idx = np.asarray(tri_idx)
        c = self.local[tri_idx]
        d = self.space.degree
        val = np.einsum("pa,pa->p", c, bernstein_basis(d, bary))
        if derivatives == 0:
            return val
        out = [val]
        G = self.space.bary_grads[tri_idx]
        _, dB, ddB = basis_derivatives(d, bary)
        out.append(np.einsum("kpa,pa,pkx->px", dB, c, G))
        if derivatives >= 2:
            out.append(np.einsum("kmpa,pa,pkx,pmy->pxy", ddB, c, G, G))
        return tuple(out)

    def __call__(self, x, y=None):
        pts = np.column_stack([np.ravel(x), np.ravel(y)]) if y is not None else np.atleast_2d(x)
        idx, bary = self.space.mesh.locate(pts)
        if (idx < 0).any():
            raise ValueError("point outside the mesh")
        return self.evaluate_in(idx, bary)


def _select_independent(rows: list, forced) -> list:
    """Greedy selection of linearly independent sparse rows.

    Rows listed in ``forced`` are considered first. Returns kept indices.
    """
    order = list(forced) + [k for k in range(len(rows)) if k not in set(forced)]
    cols = sorted({c for r in rows for c in r})
    pos = {c: n for n, c in enumerate(cols)}
    A = np.zeros((len(rows), len(cols)))
    for k, r in enumerate(rows):
        for c, v in r.items():
            A[k, pos[c]] = v
    kept, rank = [], 0
    for k in order:
        trial = A[kept + [k]]
        s = np.linalg.svd(trial, compute_uv=False)
        r = int((s > _RANK_TOL * max(1.0, s[0])).sum())
        if r > rank:
            kept.append(k)
            rank = r
    return kept


def _independent_pins(base: np.ndarray, pts: list, n_points: int) -> list:
    """Points whose pin rows are independent of ``base`` and of each other."""
    E = np.zeros((len(pts), n_points))
    E[np.arange(len(pts)), pts] = 1.0
    if base.size:
        U, sv, _ = np.linalg.svd(base.T, full_matrices=False)
        U = U[:, sv > _RANK_TOL * max(1.0, sv[0])]
        E = E - (E @ U) @ U.T
    _, r, piv = scipy.linalg.qr(E.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int((diag > _RANK_TOL * max(1.0, diag[0] if len(diag) else 1.0)).sum())
    return [pts[k] for k in sorted(piv[:rank])]


def interpolation_matrix(d: int) -> np.ndarray:
    """Inverse of the 1D Bernstein collocation matrix at equally spaced points."""
    s = np.linspace(0.0, 1.0, d + 1)
    V = np.array([[comb(d, k) * si**k * (1 - si) ** (d - k) for k in range(d + 1)] for si in s])
    return np.linalg.inv(V)


def smoothness_constraints(space: SplineSpace) -> sp.csr_matrix:
    return space.smoothness_rows


def boundary_constraints(space: SplineSpace, g):
    return space.boundary_rows(g)


def project_to_space(space: SplineSpace, target, constraints: ConstraintSystem | None = None):
    """Constrained L2 fit of an analytic ``target(x, y)`` into the C1 space.

    Without ``constraints`` only the smoothness rows are imposed.
    """
    from .linalg import SaddleProblem, solve_kkt, KKTError

    rule = space.quadrature(2 * space.degree + 2)
    phi = bernstein_basis(space.degree, rule.points)
    X = space.physical_points(rule.points)
    w = rule.weights[None, :] * space.areas[:, None]
    vals = np.asarray(target(X[..., 0], X[..., 1]), dtype=float) * np.ones(w.shape)
    Mloc = np.einsum("tq,qa,qb->tab", w, phi, phi)
    F = np.einsum("tq,tq,qa->ta", w, vals, phi).ravel()
    K = sp.block_diag(list(Mloc), format="csr")
    if constraints is None:
        R, G = space.smoothness_rows, np.zeros(space.smoothness_rows.shape[0])
    else:
        R, G = constraints.R, constraints.G
    try:
        c, _ = solve_kkt(SaddleProblem(K, F, R, G))
    except KKTError as exc:
        raise ConstraintError(f"projection failed: rank-deficient constraint block ({exc})") from exc
    return SplineFunction(space, c)
