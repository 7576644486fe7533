import numpy as np
import pytest
import scipy.sparse.linalg as spla

from splinema.mesh import build_square_mesh
from splinema.spline_space import SplineFunction, SplineSpace


ACCEPTANCE_LINES: list[str] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running solver checks")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture(scope="session")
def square4_d5():
    return SplineSpace(build_square_mesh(4), 5)


@pytest.fixture(scope="session")
def square2_d5():
    return SplineSpace(build_square_mesh(2), 5)


def project_kernel(R, c):
    """Orthogonal projection of ``c`` onto ``ker R``."""
    RRt = spla.splu((R @ R.T).tocsc())
    return c - R.T @ RRt.solve(R @ c)


def random_conforming(space, rng, scale=1.0):
    c = project_kernel(space.smoothness_rows, scale * rng.standard_normal(space.dof_count))
    return SplineFunction(space, c)


def random_interior(space, rng):
    """Random C1 spline vanishing on the boundary."""
    R = space.constraints(None).R
    return SplineFunction(space, project_kernel(R, rng.standard_normal(space.dof_count)))


def sample_polynomial(space, func):
    """Per-triangle B-form of a global polynomial of degree <= d (exact fit)."""
    from splinema.bform import bernstein_basis, multi_indices

    d = space.degree
    bary = multi_indices(d) / d
    B = bernstein_basis(d, bary)
    X = space.physical_points(bary)
    vals = func(X[..., 0], X[..., 1]) * np.ones(X.shape[:2])
    return SplineFunction(space, np.linalg.solve(B, vals.T).T.ravel())


def edge_jumps(space, v, n=None, edges=None):
    """Max value and gradient jumps across interior edges at sample points."""
    mesh = space.mesh
    n = n or space.degree + 2
    s = np.linspace(0.0, 1.0, n)
    edges = mesh.interior_edges if edges is None else edges
    jv = jg = 0.0
    for e in edges:
        a, b = mesh.vertices[mesh.edges[e]]
        pts = a[None, :] + s[:, None] * (b - a)[None, :]
        vals = []
        for t in mesh.edge_triangles[e]:
            tri = mesh.vertices[mesh.triangles[t]]
            A = np.vstack([tri.T, np.ones(3)])
            bary = np.linalg.solve(A, np.vstack([pts.T, np.ones(n)])).T
            vals.append(v.evaluate_in(np.full(n, t), bary, derivatives=1))
        jv = max(jv, np.abs(vals[0][0] - vals[1][0]).max())
        jg = max(jg, np.abs(vals[0][1] - vals[1][1]).max())
    return jv, jg
