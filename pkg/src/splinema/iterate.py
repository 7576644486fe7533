"""Nonlinear iterations for the discrete Monge-Ampere problem.

Every method solves the same discrete equations: find a C1 spline ``u``
with the prescribed trace such that

    r(u)_j = -1/2 int (cof D2 u) Du . D psi_j - int f psi_j = 0

for all test functions ``psi_j`` vanishing on the boundary. With ``K_cof``
the cofactor-weighted stiffness at the current iterate, ``K_lap`` the
Laplacian stiffness and ``M`` the mass matrix, each step solves for an
increment ``theta`` with zero trace:

    newton          K_cof theta = r
    ptc-laplace     (nu K_lap + K_cof) theta = r
    ptc-identity    (nu M + K_cof) theta = r
    march-laplace   nu K_lap theta = r
    march-mass      nu M theta = r

The linearization of ``r`` in direction ``w`` is ``-K_cof w`` on the test
space, so the weak ``-nu Delta`` term enters with a plus sign and all step
matrices are positive definite for convex iterates. In concave mode the
``nu`` term changes sign, which is the same scheme applied to ``-u``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import assembler_for
from .linalg import (
    ALConfig,
    KKTError,
    KKTSolver,
    SaddleProblem,
    solve_augmented_lagrangian,
)
from .spline_space import ConstraintSystem, SplineFunction, SplineSpace

log = logging.getLogger(__name__)

METHODS = ("newton", "ptc-laplace", "ptc-identity", "march-laplace", "march-mass")
DEFAULT_NU = {
    "newton": 0.0,
    "ptc-laplace": 1.0,
    "ptc-identity": 1.0,
    "march-laplace": 50.0,
    "march-mass": 50.0,
}
DIVERGENCE_FACTOR = 1e3


class NonConvergence(RuntimeError):
    def __init__(self, message, trace=None, solution=None):
        super().__init__(message)
        self.trace = trace
        self.solution = solution


class DivergenceDetected(NonConvergence):
    pass


class StepError(RuntimeError):
    def __init__(self, message, step, report=None):
        super().__init__(message)
        self.step = step
        self.report = report


@dataclass
class IterateConfig:
    method: str = "newton"
    nu: float | None = None
    tol: float = 1e-10
    max_iter: int = 500
    monitor_convexity: bool = True
    concave: bool = False
    linear_solver: str = "kkt"
    divergence_factor: float | None = DIVERGENCE_FACTOR

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.nu is None:
            self.nu = DEFAULT_NU[self.method]
        self.nu = float(self.nu)
        if self.method == "newton" and self.nu != 0.0:
            raise ValueError("newton requires nu = 0")
        if self.method != "newton" and not self.nu > 0.0:
            raise ValueError(f"{self.method} requires nu > 0")
        if self.linear_solver not in ("kkt", "al"):
            raise ValueError("linear_solver must be 'kkt' or 'al'")

    @property
    def orientation(self) -> float:
        return -1.0 if self.concave else 1.0


@dataclass
class ConvexityReport:
    min_eig: float
    max_eig: float
    min_laplacian: float
    max_laplacian: float
    negative_fraction: float


@dataclass
class IterationTrace:
    residual: list = field(default_factory=list)
    increment_h1: list = field(default_factory=list)
    min_eig: list = field(default_factory=list)
    max_eig: list = field(default_factory=list)
    min_lap: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)
    converged: bool = False

    @property
    def steps(self) -> int:
        return max(len(self.residual) - 1, 0)

    def append(self, residual, increment, report, elapsed):
        self.residual.append(float(residual))
        self.increment_h1.append(float(increment))
        self.min_eig.append(report.min_eig if report else float("nan"))
        self.max_eig.append(report.max_eig if report else float("nan"))
        self.min_lap.append(report.min_laplacian if report else float("nan"))
        self.wall_time.append(float(elapsed))

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("k,residual,increment_h1,min_eig,min_lap\n")
            for k, row in enumerate(zip(self.residual, self.increment_h1, self.min_eig, self.min_lap)):
                fh.write(f"{k}," + ",".join(f"{x:.6e}" for x in row) + "\n")

    def geometric_ratio(self, last: int = 50) -> float:
        """Least-squares fit of ``res_k ~ C s^k`` over the final ``last`` steps."""
        r = np.asarray(self.residual[-last:])
        r = r[r > 0]
        if len(r) < 2:
            return float("nan")
        slope = np.polyfit(np.arange(len(r)), np.log(r), 1)[0]
        return float(np.exp(slope))


class Discretization:
    """Constraint system, projector and step solvers for one space and ``g``."""

    def __init__(self, space: SplineSpace, g=None, constraints: ConstraintSystem | None = None):
        self.space = space
        self.forms = assembler_for(space)
        self.constraints = constraints or space.constraints(g)
        R = self.constraints.R
        self._RRt = spla.splu((R @ R.T).tocsc())

    @property
    def R(self) -> sp.csr_matrix:
        return self.constraints.R

    def project(self, r: np.ndarray) -> np.ndarray:
        """Orthogonal projection onto ``ker R`` (the constrained test space)."""
        return r - self.R.T @ self._RRt.solve(self.R @ r)

    def residual(self, u: SplineFunction, f) -> np.ndarray:
        return self.forms.residual(u, f)

    def residual_norm(self, u: SplineFunction, f) -> float:
        return float(np.linalg.norm(self.project(self.residual(u, f))))

    def boundary_defect(self, u: SplineFunction) -> float:
        return float(np.abs(self.R @ u.coeffs - self.constraints.G).max(initial=0.0))

    def solve_increment(self, A, r, solver="kkt", factored: KKTSolver | None = None):
        if solver == "al":
            res = solve_augmented_lagrangian(SaddleProblem(A, r, self.R, np.zeros(self.R.shape[0])),
                                             ALConfig())
            return res.c
        kkt = factored or KKTSolver(A, self.R)
        theta, _ = kkt.solve(r, np.zeros(self.R.shape[0]))
        return theta

    def h1_seminorm(self, c: np.ndarray) -> float:
        return float(np.sqrt(max(c @ (self.forms.laplace @ c), 0.0)))


def convexity_monitor(space: SplineSpace, v: SplineFunction) -> ConvexityReport:
    """Hessian eigenvalue extremes over all quadrature points."""
    if space.degree < 2:
        raise ValueError("convexity monitor needs degree >= 2")
    _, hess = assembler_for(space).fields(v)
    a, b, c = hess[..., 0, 0], hess[..., 0, 1], hess[..., 1, 1]
    mean = 0.5 * (a + c)
    rad = np.hypot(0.5 * (a - c), b)
    lam1, lam2 = mean - rad, mean + rad
    lap = a + c
    return ConvexityReport(
        min_eig=float(lam1.min()),
        max_eig=float(lam2.max()),
        min_laplacian=float(lap.min()),
        max_laplacian=float(lap.max()),
        negative_fraction=float((lam1 < 0).mean()),
    )


def initial_guess(space: SplineSpace, f, g, concave: bool = False,
                  disc: Discretization | None = None) -> SplineFunction:
    """Discrete Poisson solve for ``Delta u = 2 sqrt(f)``, ``u = g`` on the boundary.

    In concave mode the right-hand side is negated.
    """
    disc = disc or Discretization(space, g)
    forms = disc.forms
    fq = forms.source(f)
    if fq.min() < -1e-12:
        raise ValueError(f"f is negative ({fq.min():.3e}) at a quadrature point")
    rhs = 2.0 * np.sqrt(np.clip(fq, 0.0, None))
    sign = -1.0 if concave else 1.0
    # weak form of Delta u = rhs: -K_lap u = int rhs psi
    F = -sign * forms.load(rhs)
    kkt = KKTSolver(forms.laplace, disc.R)
    c, _ = kkt.solve(F, disc.constraints.G)
    return SplineFunction(space, c)


def _step_matrix(disc: Discretization, u_k: SplineFunction, nu: float, variant: str,
                 orientation: float, with_cof: bool):
    forms = disc.forms
    L = forms.laplace if variant == "laplace" else forms.mass
    A = orientation * nu * L
    if with_cof:
        A = A + forms.cof_stiffness(u_k) if nu else forms.cof_stiffness(u_k)
    return A.tocsr()


def step_ptc(space, u_k: SplineFunction, f, nu: float, variant: str = "laplace", *,
             disc: Discretization | None = None, concave: bool = False, solver: str = "kkt"):
    """One pseudo-transient continuation step; ``nu = 0`` is a Newton step."""
    if variant not in ("laplace", "identity"):
        raise ValueError("variant must be 'laplace' or 'identity'")
    disc = disc or Discretization(space, constraints=_homogeneous(space))
    r = disc.residual(u_k, f)
    A = _step_matrix(disc, u_k, nu, variant, -1.0 if concave else 1.0, with_cof=True)
    theta = disc.solve_increment(A, r, solver)
    return SplineFunction(space, u_k.coeffs + theta)


def step_march(space, u_k: SplineFunction, f, nu: float, variant: str = "laplace", *,
               disc: Discretization | None = None, concave: bool = False,
               factored: KKTSolver | None = None, solver: str = "kkt"):
    """One pseudo-time marching step with a Laplacian or mass preconditioner."""
    if variant not in ("laplace", "mass"):
        raise ValueError("variant must be 'laplace' or 'mass'")
    if not nu > 0:
        raise ValueError("time marching needs nu > 0")
    disc = disc or Discretization(space, constraints=_homogeneous(space))
    r = disc.residual(u_k, f)
    if factored is None and solver == "kkt":
        factored = KKTSolver(_step_matrix(disc, u_k, nu, variant, -1.0 if concave else 1.0, False),
                             disc.R)
    A = None if solver == "kkt" else _step_matrix(disc, u_k, nu, variant,
                                                   -1.0 if concave else 1.0, False)
    theta = disc.solve_increment(A, r, solver, factored=factored)
    return SplineFunction(space, u_k.coeffs + theta)


def _homogeneous(space: SplineSpace) -> ConstraintSystem:
    cached = space.__dict__.get("_homogeneous_constraints")
    if cached is None:
        cached = space.__dict__["_homogeneous_constraints"] = space.constraints(None)
    return cached


def solve(space: SplineSpace, f, g, cfg: IterateConfig | None = None,
          u0: SplineFunction | None = None, disc: Discretization | None = None):
    """Iterate until the projected residual is below ``cfg.tol``.

    Returns ``(u, trace)``. Raises :class:`NonConvergence` when ``max_iter``
    is exhausted and :class:`DivergenceDetected` when the residual becomes
    non-finite or grows by ``cfg.divergence_factor`` (default 1e3) over its
    running minimum; ``divergence_factor=None`` disables the growth check.
    """
    cfg = cfg or IterateConfig()
    disc = disc or Discretization(space, g)
    orient = cfg.orientation
    start = time.perf_counter()
    u = u0 if u0 is not None else initial_guess(space, f, g, concave=cfg.concave, disc=disc)
    trace = IterationTrace()

    marching = cfg.method.startswith("march")
    variant = cfg.method.split("-")[1] if "-" in cfg.method else "laplace"
    factored = None
    if marching and cfg.linear_solver == "kkt":
        factored = KKTSolver(_step_matrix(disc, u, cfg.nu, variant, orient, False), disc.R)

    increment = float("nan")
    best = np.inf
    for k in range(cfg.max_iter + 1):
        r = disc.residual(u, f)
        res = float(np.linalg.norm(disc.project(r)))
        report = convexity_monitor(space, u) if cfg.monitor_convexity and space.degree >= 2 else None
        trace.append(res, increment, report, time.perf_counter() - start)
        log.debug("step %d residual %.3e increment %.3e", k, res, increment)
        grew = cfg.divergence_factor is not None and res > cfg.divergence_factor * best
        if not np.isfinite(res) or grew:
            raise DivergenceDetected(
                f"{cfg.method}: residual {res:.3e} at step {k} (minimum {best:.3e})", trace, u)
        best = min(best, res)
        if res <= cfg.tol:
            trace.converged = True
            return u, trace
        if k == cfg.max_iter:
            break
        try:
            if marching:
                A = None if factored else _step_matrix(disc, u, cfg.nu, variant, orient, False)
                theta = disc.solve_increment(A, r, cfg.linear_solver, factored=factored)
            else:
                A = _step_matrix(disc, u, cfg.nu, variant, orient, with_cof=True)
                theta = disc.solve_increment(A, r, cfg.linear_solver)
        except (KKTError, RuntimeError) as exc:
            raise StepError(f"step {k}: linear solve failed: {exc}", k, report) from exc
        increment = disc.h1_seminorm(theta)
        u = SplineFunction(space, u.coeffs + theta)
    raise NonConvergence(
        f"{cfg.method}: residual {trace.residual[-1]:.3e} > tol {cfg.tol:.1e} "
        f"after {cfg.max_iter} steps",
        trace,
        u,
    )
