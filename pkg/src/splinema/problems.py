"""Benchmark problems, error norms and convergence studies."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .assembly import det2
from .iterate import IterateConfig, NonConvergence, StepError, solve
from .mesh import Triangulation, build_disk_mesh, build_square_mesh
from .spline_space import SplineFunction, SplineSpace

log = logging.getLogger(__name__)

CSV_HEADER = ["h", "dof", "n_it", "l2", "rate_l2", "h1", "rate_h1", "h2", "rate_h2", "time_s"]


@dataclass
class ProblemSpec:
    """Data of a Dirichlet Monge-Ampere problem.

    ``u``, ``u_grad`` and ``u_hess`` take arrays ``x, y`` and return arrays
    of shape ``x.shape``, ``x.shape + (2,)`` and ``x.shape + (2, 2)``.
    """

    name: str
    domain: str
    f: Callable
    g: Callable
    u: Callable | None = None
    u_grad: Callable | None = None
    u_hess: Callable | None = None
    convexity: str = "convex"

    @property
    def has_exact(self) -> bool:
        return self.u is not None

    def mesh(self, level: int) -> Triangulation:
        """Mesh with ``h = 2**-level`` (square) or ``2**level`` rings (disk)."""
        if self.domain == "square":
            return build_square_mesh(2**level)
        if self.domain == "disk":
            return build_disk_mesh(2**level)
        raise ValueError(f"problem {self.name} has no built-in mesh for domain {self.domain!r}")


def _stack_grad(gx, gy):
    return np.stack(np.broadcast_arrays(gx, gy), axis=-1)


def _stack_hess(hxx, hxy, hyy):
    hxx, hxy, hyy = np.broadcast_arrays(hxx, hxy, hyy)
    return np.stack([np.stack([hxx, hxy], -1), np.stack([hxy, hyy], -1)], -2)


def _test1():
    def u(x, y):
        return np.exp((x**2 + y**2) / 2)

    def grad(x, y):
        e = u(x, y)
        return _stack_grad(x * e, y * e)

    def hess(x, y):
        e = u(x, y)
        return _stack_hess((1 + x**2) * e, x * y * e, (1 + y**2) * e)

    def f(x, y):
        return (1 + x**2 + y**2) * np.exp(x**2 + y**2)

    return ProblemSpec("test1", "square", f, u, u, grad, hess)


def _test3():
    return ProblemSpec("test3", "square", lambda x, y: np.ones_like(np.asarray(x, float)),
                       lambda x, y: np.zeros_like(np.asarray(x, float)))


def _test4():
    def u(x, y):
        return -np.sqrt(2 - x**2 - y**2)

    def grad(x, y):
        s = np.sqrt(2 - x**2 - y**2)
        return _stack_grad(x / s, y / s)

    def hess(x, y):
        q = 2 - x**2 - y**2
        s3 = q**1.5
        return _stack_hess((2 - y**2) / s3, x * y / s3, (2 - x**2) / s3)

    def f(x, y):
        return 2.0 / (2 - x**2 - y**2) ** 2

    return ProblemSpec("test4", "square", f, u, u, grad, hess)


def _test5():
    def u(x, y):
        return x**2 + y**2 - 1

    # g is the smooth extension u of the zero data on the circle, so the
    # polygonal boundary of the mesh carries u's own values
    return ProblemSpec(
        "test5", "disk",
        lambda x, y: 4.0 * np.ones_like(np.asarray(x, float)),
        u,
        u,
        lambda x, y: _stack_grad(2 * x, 2 * y),
        lambda x, y: _stack_hess(2 + 0 * x, 0 * x, 2 + 0 * x),
    )


def _test6():
    return ProblemSpec("test6", "square", lambda x, y: np.zeros_like(np.asarray(x, float)),
                       lambda x, y: np.abs(np.asarray(x, float) - 0.5), convexity="degenerate")


def _quadratic():
    def u(x, y):
        return x**2 + y**2

    return ProblemSpec(
        "quadratic", "square",
        lambda x, y: 4.0 * np.ones_like(np.asarray(x, float)),
        u, u,
        lambda x, y: _stack_grad(2 * x, 2 * y),
        lambda x, y: _stack_hess(2 + 0 * x, 0 * x, 2 + 0 * x),
    )


_BUILTINS = {
    "test1": _test1,
    "test3": _test3,
    "test4": _test4,
    "test5": _test5,
    "test6": _test6,
    "quadratic": _quadratic,
}

# nu per refinement level used in the published Test 4 runs
TEST4_PTC_NU = {1: 0.0, 2: 0.0, 3: 0.0, 4: 3.0}
TEST4_MARCH_NU = {1: 2.0, 2: 2.0, 3: 4.5, 4: 11.5}


def builtin(name: str) -> ProblemSpec:
    try:
        return _BUILTINS[name]()
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {', '.join(_BUILTINS)}") from None


def problem_names():
    return list(_BUILTINS)


def self_check(p: ProblemSpec, n: int = 100, seed: int = 0):
    """Max of |det D2u - f| (relative) inside and |u - g| on the boundary."""
    rng = np.random.default_rng(seed)
    if p.domain == "square":
        x, y = rng.uniform(0.01, 0.99, (2, n))
        s = rng.uniform(0, 1, n)
        side = rng.integers(0, 4, n)
        bx = np.choose(side, [s, np.ones(n), s, np.zeros(n)])
        by = np.choose(side, [np.zeros(n), s, np.ones(n), s])
    else:
        r = np.sqrt(rng.uniform(0, 0.98, n))
        t = rng.uniform(0, 2 * np.pi, n)
        x, y = r * np.cos(t), r * np.sin(t)
        t = rng.uniform(0, 2 * np.pi, n)
        bx, by = np.cos(t), np.sin(t)
    fx = p.f(x, y)
    det_err = np.max(np.abs(det2(p.u_hess(x, y)) - fx) / np.maximum(1.0, np.abs(fx)))
    bnd_err = np.max(np.abs(p.u(bx, by) - p.g(bx, by)))
    return float(det_err), float(bnd_err)


@dataclass
class ErrorReport:
    h: float
    dof: int
    l2: float
    h1: float
    h2: float
    n_it: int = 0
    time_s: float = 0.0
    rate_l2: float | None = None
    rate_h1: float | None = None
    rate_h2: float | None = None
    status: str = "ok"

    def row(self):
        def fmt(x):
            return "" if x is None or math.isnan(x) else f"{x:.5e}"

        return [f"{self.h:.5e}", str(self.dof), str(self.n_it), fmt(self.l2), fmt(self.rate_l2),
                fmt(self.h1), fmt(self.rate_h1), fmt(self.h2), fmt(self.rate_h2), fmt(self.time_s)]


def error_norms(space: SplineSpace, u_h: SplineFunction, exact: ProblemSpec | tuple,
                h: float | None = None) -> ErrorReport:
    """L2, H1 and broken H2 norms of ``u - u_h`` by quadrature of degree 2d+2.

    ``exact`` is a :class:`ProblemSpec` or a ``(u, grad, hess)`` triple.
    """
    if isinstance(exact, ProblemSpec):
        exact = (exact.u, exact.u_grad, exact.u_hess)
    u, ug, uh = exact
    rule = space.quadrature(2 * space.degree + 2)
    X = space.physical_points(rule.points)
    x, y = X[..., 0], X[..., 1]
    w = rule.weights[None, :] * space.areas[:, None]
    val, grad, hess = u_h.at_reference(rule.points)
    e0 = np.broadcast_to(u(x, y), x.shape) - val
    e1 = np.broadcast_to(ug(x, y), grad.shape) - grad
    e2 = np.broadcast_to(uh(x, y), hess.shape) - hess
    l2 = np.sum(w * e0**2)
    semi1 = np.sum(w * np.sum(e1**2, axis=-1))
    semi2 = np.sum(w * np.sum(e2**2, axis=(-1, -2)))
    return ErrorReport(
        h=space.mesh.h_max if h is None else h,
        dof=space.dof_count,
        l2=float(np.sqrt(l2)),
        h1=float(np.sqrt(l2 + semi1)),
        h2=float(np.sqrt(l2 + semi1 + semi2)),
    )


def _rate(prev, cur, hp, hc):
    if prev is None or cur is None or prev <= 0 or cur <= 0 or hp == hc:
        return None
    return math.log(prev / cur) / math.log(hp / hc)


def convergence_study(problem: ProblemSpec, cfg: IterateConfig, degree: int = 5,
                      levels=(1, 2, 3), nu_by_level: dict | None = None,
                      meshes: list | None = None) -> list[ErrorReport]:
    """Solve on successive refinements and report errors with log2 rates.

    A failing level is recorded with ``status`` set to the error message and
    the study continues.
    """
    reports: list[ErrorReport] = []
    meshes = meshes or [problem.mesh(lv) for lv in levels]
    for lv, mesh in zip(levels, meshes):
        level_cfg = cfg
        if nu_by_level and lv in nu_by_level:
            nu = nu_by_level[lv]
            method = cfg.method
            if nu == 0:
                method = "newton"
            elif method == "newton":
                method = "ptc-laplace"
            level_cfg = replace(cfg, method=method, nu=nu)
        space = SplineSpace(mesh, degree)
        h = 2.0**-lv if problem.domain == "square" else mesh.h_max
        t0 = time.perf_counter()
        try:
            u_h, trace = solve(space, problem.f, problem.g, level_cfg)
            status, n_it = "ok", trace.steps
        except (NonConvergence, StepError) as exc:
            log.warning("level %s failed: %s", lv, exc)
            u_h = getattr(exc, "solution", None)
            trace = getattr(exc, "trace", None)
            status, n_it = str(exc), (trace.steps if trace else 0)
        elapsed = time.perf_counter() - t0
        if problem.has_exact and u_h is not None:
            rep = error_norms(space, u_h, problem, h=h)
        else:
            nan = float("nan")
            rep = ErrorReport(h=h, dof=space.dof_count, l2=nan, h1=nan, h2=nan)
        rep.n_it, rep.time_s, rep.status = n_it, elapsed, status
        if reports:
            prev = reports[-1]
            rep.rate_l2 = _rate(prev.l2, rep.l2, prev.h, rep.h)
            rep.rate_h1 = _rate(prev.h1, rep.h1, prev.h, rep.h)
            rep.rate_h2 = _rate(prev.h2, rep.h2, prev.h, rep.h)
        reports.append(rep)
    return reports


def write_study_csv(reports: list[ErrorReport], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for rep in reports:
            writer.writerow(rep.row())
