"""C1 Bernstein-Bezier spline solvers for the 2D Monge-Ampere equation."""

from .fd_oracle import Grid2D, compare_to_spline, fd_march
from .iterate import (
    DivergenceDetected,
    IterateConfig,
    IterationTrace,
    NonConvergence,
    convexity_monitor,
    initial_guess,
    solve,
    step_march,
    step_ptc,
)
from .mesh import Triangulation, build_disk_mesh, build_square_mesh, read_mesh, refine_uniform, write_mesh
from .problems import ErrorReport, ProblemSpec, builtin, convergence_study, error_norms
from .spline_space import SplineFunction, SplineSpace, project_to_space

__version__ = "0.1.0"

__all__ = [
    "DivergenceDetected",
    "ErrorReport",
    "Grid2D",
    "IterateConfig",
    "IterationTrace",
    "NonConvergence",
    "ProblemSpec",
    "SplineFunction",
    "SplineSpace",
    "Triangulation",
    "build_disk_mesh",
    "build_square_mesh",
    "builtin",
    "compare_to_spline",
    "convergence_study",
    "convexity_monitor",
    "error_norms",
    "fd_march",
    "initial_guess",
    "project_to_space",
    "read_mesh",
    "refine_uniform",
    "solve",
    "step_march",
    "step_ptc",
    "write_mesh",
]
