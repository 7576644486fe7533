"""Triangulations of polygonal 2D domains.

A :class:`Triangulation` stores vertices, counterclockwise triangles and the
edge connectivity needed to write smoothness conditions across interior
edges. Local edge ``i`` of a triangle is the edge opposite its local vertex
``i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay


class MeshError(ValueError):
    """Raised for malformed or inconsistently oriented meshes."""


@dataclass(frozen=True, eq=False)
class Triangulation:
    """Immutable 2D triangulation with edge adjacency.

    Parameters
    ----------
    vertices : (nv, 2) array
    triangles : (nt, 3) int array, counterclockwise vertex indices

    Derived attributes
    ------------------
    edges : (ne, 2) int array of sorted vertex pairs
    edge_triangles : (ne, 2) int array, incident triangles, ``-1`` if absent
    triangle_edges : (nt, 3) int array, edge opposite each local vertex
    boundary_edges : int array of edges with a single incident triangle
    """

    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray = field(init=False)
    edge_triangles: np.ndarray = field(init=False)
    triangle_edges: np.ndarray = field(init=False)
    boundary_edges: np.ndarray = field(init=False)

    def __post_init__(self):
        vertices = np.ascontiguousarray(self.vertices, dtype=float)
        triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError("vertices must have shape (nv, 2)")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise MeshError("triangles must have shape (nt, 3)")
        if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise MeshError("triangle references a missing vertex")
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "triangles", triangles)

        areas = self.signed_areas()
        hmax = self.diameters().max() if len(triangles) else 0.0
        bad = np.flatnonzero(areas <= 1e-14 * hmax**2)
        if bad.size:
            raise MeshError(
                f"triangle {bad[0]} is clockwise or degenerate (signed area {areas[bad[0]]:.3e})"
            )

        local = np.array([[1, 2], [2, 0], [0, 1]])
        pairs = np.sort(triangles[:, local], axis=2).reshape(-1, 2)
        edges, inverse, counts = np.unique(pairs, axis=0, return_inverse=True, return_counts=True)
        inverse = inverse.ravel()
        if counts.max(initial=0) > 2:
            raise MeshError("non-manifold mesh: an edge has more than two triangles")
        triangle_edges = inverse.reshape(-1, 3)
        edge_triangles = np.full((len(edges), 2), -1, dtype=np.int64)
        owner = np.repeat(np.arange(len(triangles)), 3)
        for e, t in zip(inverse, owner):
            slot = 0 if edge_triangles[e, 0] < 0 else 1
            edge_triangles[e, slot] = t
        for name, value in (
            ("edges", edges),
            ("edge_triangles", edge_triangles),
            ("triangle_edges", triangle_edges),
            ("boundary_edges", np.flatnonzero(counts == 1)),
        ):
            object.__setattr__(self, name, value)

    @property
    def nv(self) -> int:
        return len(self.vertices)

    @property
    def nt(self) -> int:
        return len(self.triangles)

    @property
    def interior_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_triangles[:, 1] >= 0)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def diameters(self) -> np.ndarray:
        """Longest edge of each triangle."""
        p = self.vertices[self.triangles]
        lengths = np.linalg.norm(p[:, [1, 2, 0]] - p, axis=2)
        return lengths.max(axis=1)

    @property
    def h_max(self) -> float:
        return float(self.diameters().max())

    @property
    def h_min(self) -> float:
        return float(self.diameters().min())

    @property
    def quasi_uniformity(self) -> float:
        return self.h_max / self.h_min

    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.edges[self.boundary_edges])

    def area(self) -> float:
        return float(self.signed_areas().sum())

    def locate(self, points: np.ndarray, tol: float = 1e-12):
        """Return (triangle index, barycentric coordinates) for each point.

        Points outside every triangle get index ``-1``.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        p = self.vertices[self.triangles]
        # barycentric coordinates of every point in every triangle
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        idx = np.full(len(points), -1, dtype=np.int64)
        bary = np.zeros((len(points), 3))
        for start in range(0, len(points), 256):
            chunk = points[start:start + 256]
            r = chunk[:, None, :] - p[None, :, 0, :]
            b2 = (r[..., 0] * d2[:, 1] - r[..., 1] * d2[:, 0]) / det
            b3 = (d1[:, 0] * r[..., 1] - d1[:, 1] * r[..., 0]) / det
            b1 = 1.0 - b2 - b3
            worst = np.minimum(np.minimum(b1, b2), b3)
            best = worst.argmax(axis=1)
            rows = np.arange(len(chunk))
            inside = worst[rows, best] >= -tol
            idx[start:start + len(chunk)] = np.where(inside, best, -1)
            bary[start:start + len(chunk)] = np.stack(
                [b1[rows, best], b2[rows, best], b3[rows, best]], axis=1
            )
        return idx, bary


def build_square_mesh(m: int) -> Triangulation:
    """Uniform mesh of the unit square.

    The square is cut into ``m x m`` cells of side ``1/m`` and every cell is
    split by its negative-slope diagonal.
    """
    if m < 1:
        raise ValueError("m must be a positive integer")
    s = np.linspace(0.0, 1.0, m + 1)
    X, Y = np.meshgrid(s, s, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(m), np.arange(m), indexing="xy")
    i, j = i.ravel(), j.ravel()
    v00 = j * (m + 1) + i
    v10 = v00 + 1
    v01 = v00 + m + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v01])
    upper = np.column_stack([v10, v11, v01])
    triangles = np.empty((2 * m * m, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper
    return Triangulation(vertices, triangles)


def _disk_from_rings(counts, radius: float) -> Triangulation:
    """Delaunay mesh of the centre plus ring ``k`` carrying ``counts[k-1]`` points."""
    R = len(counts)
    points = [np.zeros((1, 2))]
    for k, n in enumerate(counts, start=1):
        theta = 2 * np.pi * (np.arange(n) + 0.5 * (k % 2)) / n
        r = radius * k / R
        points.append(np.column_stack([r * np.cos(theta), r * np.sin(theta)]))
    vertices = np.vstack(points)
    tri = Delaunay(vertices, qhull_options="Qbb Qc Qz Q12 Qt").simplices
    p = vertices[tri]
    area = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                  - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
    tri = np.where((area < 0)[:, None], tri[:, [0, 2, 1]], tri)
    keep = np.abs(area) > 1e-12 * radius**2 / R**2
    return Triangulation(vertices, tri[keep])


def build_disk_mesh(rings: int, radius: float = 1.0) -> Triangulation:
    """Quasi-uniform mesh of a disk from concentric rings of points.

    Ring ``k`` carries ``6k`` equally spaced points, each ring rotated by a
    half step relative to the previous one; the triangles are the Delaunay
    triangulation of the point set. The boundary is the polygon through the
    outer ring.
    """
    if rings < 1:
        raise ValueError("rings must be a positive integer")
    return _disk_from_rings([6 * k for k in range(1, rings + 1)], radius)


def build_disk_mesh_nt(n_triangles: int, radius: float = 1.0) -> Triangulation:
    """Ring-based disk mesh with exactly ``n_triangles`` triangles.

    A triangulation of a convex point set with ``nb`` hull points and ``ni``
    interior points has ``2 ni + nb - 2`` triangles, so the ring sizes are
    chosen to hit that count with roughly equilateral elements.
    """
    if n_triangles < 6 or n_triangles % 2:
        raise ValueError("n_triangles must be an even integer >= 6")
    best = None
    for nb in range(6, n_triangles + 3, 2):
        ni = (n_triangles + 2 - nb) // 2
        if ni < 1:
            break
        R = max(1, round(nb / (2 * np.pi) / (np.sqrt(3) / 2)))
        counts = [max(3, round(nb * k / R)) for k in range(1, R)]
        gap = ni - 1 - sum(counts)
        score = abs(gap) / max(ni, 1)
        if R == 1:
            score = 0.0 if ni == 1 else np.inf
        if best is None or score < best[0]:
            best = (score, nb, counts, gap)
    _, nb, counts, gap = best
    # spread the remaining points over the rings, outermost first
    k = len(counts) - 1
    while gap and counts:
        step = 1 if gap > 0 else -1
        if counts[k] + step >= 3:
            counts[k] += step
            gap -= step
        k = k - 1 if k > 0 else len(counts) - 1
    mesh = _disk_from_rings(counts + [nb], radius)
    if mesh.nt != n_triangles:
        raise MeshError(f"disk mesher produced {mesh.nt} triangles instead of {n_triangles}")
    return mesh


def refine_uniform(t: Triangulation) -> Triangulation:
    """Split every triangle into four congruent children at edge midpoints.

    Parent vertices keep their indices; midpoint of edge ``e`` becomes
    vertex ``nv + e``.
    """
    mid = 0.5 * (t.vertices[t.edges[:, 0]] + t.vertices[t.edges[:, 1]])
    vertices = np.vstack([t.vertices, mid])
    a, b, c = t.triangles.T
    # triangle_edges[:, i] is opposite local vertex i
    mbc, mca, mab = (t.nv + t.triangle_edges[:, i] for i in range(3))
    children = np.stack(
        [
            np.column_stack([a, mab, mca]),
            np.column_stack([mab, b, mbc]),
            np.column_stack([mca, mbc, c]),
            np.column_stack([mbc, mca, mab]),
        ],
        axis=1,
    ).reshape(-1, 3)
    return Triangulation(vertices, children)


def read_mesh(path) -> Triangulation:
    """Read the plain-text ``nv nt`` / ``x y`` / ``i j k`` mesh format.

    Text after ``#`` on any line is ignored; blank lines are skipped.
    """
    rows = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.split("#", 1)[0].strip()
            if text:
                rows.append((lineno, text.split()))
    if not rows:
        raise MeshError(f"{path}: empty mesh file")

    def parse(lineno, fields, kind, count):
        if len(fields) != count:
            raise MeshError(f"{path}, line {lineno}: expected {count} fields, got {len(fields)}")
        try:
            return [kind(x) for x in fields]
        except ValueError:
            raise MeshError(f"{path}, line {lineno}: cannot parse {' '.join(fields)!r}") from None

    nv, nt = parse(*rows[0], int, 2)
    if len(rows) != 1 + nv + nt:
        last = rows[-1][0]
        raise MeshError(f"{path}, line {last}: expected {nv} vertex and {nt} triangle lines")
    vertices = np.array([parse(*r, float, 2) for r in rows[1:1 + nv]])
    triangles = np.array([parse(*r, int, 3) for r in rows[1 + nv:]], dtype=np.int64)
    if triangles.size and (triangles.min() < 0 or triangles.max() >= nv):
        bad = int(np.flatnonzero((triangles < 0).any(1) | (triangles >= nv).any(1))[0])
        raise MeshError(f"{path}, line {rows[1 + nv + bad][0]}: vertex index out of range")
    return Triangulation(vertices.reshape(-1, 2), triangles.reshape(-1, 3))


def write_mesh(t: Triangulation, path) -> None:
    lines = [f"{t.nv} {t.nt}"]
    lines += [f"{float(x)!r} {float(y)!r}" for x, y in t.vertices]
    lines += [f"{i} {j} {k}" for i, j, k in t.triangles]
    Path(path).write_text("\n".join(lines) + "\n")
