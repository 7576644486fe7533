"""Command-line front end.

Subcommands: ``solve``, ``study``, ``compare``, ``export-surface`` and
``fd-check``. Exit status is 0 on success, 2 when a solver fails to
converge (outputs are still written) and 1 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .assembly import assembler_for
from .fd_oracle import FDNonConvergence, compare_to_spline, fd_march, grid_error
from .iterate import METHODS, IterateConfig, NonConvergence, StepError, solve
from .mesh import MeshError, Triangulation, build_disk_mesh, build_square_mesh, read_mesh
from .problems import (
    ProblemSpec,
    builtin,
    convergence_study,
    error_norms,
    problem_names,
    self_check,
    write_study_csv,
)
from .spline_space import SplineFunction, SplineSpace

log = logging.getLogger("splinema")

EXIT_OK, EXIT_USAGE, EXIT_NONCONVERGED = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse with exit status 1 on bad arguments."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class RunConfig:
    subcommand: str
    problem: str | None
    mesh_path: str | None
    method: str
    nu: float | None
    degree: int
    h: float | None
    levels: int | None
    tol: float
    max_iter: int
    out: str | None
    threads: int
    concave: bool
    seed: int

    @classmethod
    def from_args(cls, ns: argparse.Namespace) -> "RunConfig":
        cfg = cls(
            subcommand=ns.command, problem=ns.problem, mesh_path=ns.mesh, method=ns.method,
            nu=ns.nu, degree=ns.degree, h=ns.h, levels=ns.levels, tol=ns.tol,
            max_iter=ns.max_iter, out=ns.out, threads=ns.threads, concave=ns.concave,
            seed=ns.seed,
        )
        cfg.validate()
        return cfg

    def validate(self):
        if self.problem is None:
            raise UsageError("--problem is required (with --mesh it supplies f and g)")
        if self.problem not in problem_names():
            raise UsageError(f"unknown problem {self.problem!r}; choose from {', '.join(problem_names())}")
        if self.degree < 2:
            raise UsageError("--degree must be at least 2")
        if self.h is not None and not 0 < self.h <= 1:
            raise UsageError("--h must lie in (0, 1]")
        if self.levels is not None and self.levels < 1:
            raise UsageError("--levels must be positive")
        if self.threads < 1:
            raise UsageError("--threads must be positive")
        if self.max_iter < 0:
            raise UsageError("--max-iter must be non-negative")
        prob = builtin(self.problem)
        if self.mesh_path is None and prob.domain not in ("square", "disk"):
            raise UsageError(f"problem {self.problem} needs --mesh")
        if self.subcommand == "fd-check" and (prob.domain != "square" or self.mesh_path):
            raise UsageError("fd-check runs on the unit square only")
        if self.subcommand == "study" and self.mesh_path:
            raise UsageError("study builds its own meshes; --mesh is not supported")
        try:
            IterateConfig(self.method, self.nu)
        except ValueError as exc:
            raise UsageError(str(exc)) from None

    def iterate_config(self, method: str | None = None) -> IterateConfig:
        method = method or self.method
        nu = self.nu if method == self.method else None
        return IterateConfig(method, nu, tol=self.tol, max_iter=self.max_iter, concave=self.concave)

    @property
    def prob(self) -> ProblemSpec:
        return builtin(self.problem)

    def mesh(self) -> Triangulation:
        if self.mesh_path:
            return read_mesh(self.mesh_path)
        h = self.h if self.h is not None else 0.25
        n = max(1, round(1.0 / h))
        return build_square_mesh(n) if self.prob.domain == "square" else build_disk_mesh(n)

    def out_path(self, default: str) -> Path:
        return Path(self.out) if self.out else Path(default)


def _common(p: argparse.ArgumentParser):
    p.add_argument("--problem", help=f"built-in problem ({', '.join(problem_names())})")
    p.add_argument("--mesh", help="mesh file; f and g are taken from --problem")
    p.add_argument("--method", default="newton", choices=METHODS)
    p.add_argument("--nu", type=float, default=None, help="pseudo-time parameter")
    p.add_argument("--degree", type=int, default=5)
    size = p.add_mutually_exclusive_group()
    size.add_argument("--h", type=float, default=None, help="mesh size 1/m")
    size.add_argument("--levels", type=int, default=None, help="refinement levels for a study")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--out", default=None, help="output file or directory")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--concave", action="store_true", help="select the concave branch")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="splinema", description="C1 spline solver for the 2D Monge-Ampere equation")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "solve": "solve one problem and write the solution and trace",
        "study": "convergence study over uniform refinements, CSV output",
        "compare": "run every iterative method on one problem",
        "export-surface": "solve and write a triangulated surface and y = x section",
        "fd-check": "cross-check against the finite-difference solver",
    }
    for name, text in helps.items():
        _common(sub.add_parser(name, help=text))
    return parser


def _solve(cfg: RunConfig, method: str | None = None):
    """Returns ``(space, u, trace, error)`` where ``error`` is None on success."""
    prob = cfg.prob  # with --mesh, f and g still come from --problem
    space = SplineSpace(cfg.mesh(), cfg.degree)
    try:
        u, trace = solve(space, prob.f, prob.g, cfg.iterate_config(method))
        return space, u, trace, None
    except NonConvergence as exc:
        return space, exc.solution, exc.trace, exc
    except StepError as exc:
        return space, None, None, exc


def save_solution(space: SplineSpace, u: SplineFunction, path: Path):
    np.savez(path, vertices=space.mesh.vertices, triangles=space.mesh.triangles,
             degree=space.degree, coeffs=u.coeffs)


def load_solution(path) -> SplineFunction:
    data = np.load(path)
    mesh = Triangulation(data["vertices"], data["triangles"])
    return SplineFunction(SplineSpace(mesh, int(data["degree"])), data["coeffs"])


def export_surface(u_h: SplineFunction, mesh: Triangulation, path, s: int = 4,
                   n_section: int = 201) -> tuple[Path, Path]:
    """Write a triangulated surface of ``u_h`` and its section along ``y = x``.

    Each triangle is split into ``s**2`` subtriangles. The surface file has a
    header comment, then one ``x y z`` line per vertex and one ``f i j k``
    line per face (0-based). The section file next to it (suffix
    ``.section``) has ``x z`` lines along the diagonal.
    """
    path = Path(path)
    if s < 1:
        raise ValueError("subdivision s must be positive")
    # barycentric lattice of one triangle
    lattice = [(i, j) for i in range(s + 1) for j in range(s + 1 - i)]
    index = {ij: n for n, ij in enumerate(lattice)}
    bary = np.array([[s - i - j, i, j] for i, j in lattice], dtype=float) / s
    faces = []
    for i in range(s):
        for j in range(s - i):
            faces.append((index[i, j], index[i + 1, j], index[i, j + 1]))
            if i + j < s - 1:
                faces.append((index[i + 1, j], index[i + 1, j + 1], index[i, j + 1]))
    faces = np.array(faces)
    nt, nl = mesh.nt, len(lattice)
    tri = np.repeat(np.arange(nt), nl)
    B = np.tile(bary, (nt, 1))
    P = np.einsum("pk,pkx->px", B, mesh.vertices[mesh.triangles[tri]])
    Z = u_h.evaluate_in(tri, B)
    F = (faces[None, :, :] + (np.arange(nt) * nl)[:, None, None]).reshape(-1, 3)
    with open(path, "w") as fh:
        fh.write(f"# {len(P)} vertices {len(F)} faces\n")
        np.savetxt(fh, np.column_stack([P, Z]), fmt="%.12e")
        np.savetxt(fh, F, fmt="f %d %d %d")

    lo = max(mesh.vertices[:, 0].min(), mesh.vertices[:, 1].min())
    hi = min(mesh.vertices[:, 0].max(), mesh.vertices[:, 1].max())
    t = np.linspace(lo, hi, n_section)
    idx, b = mesh.locate(np.column_stack([t, t]), tol=1e-9)
    keep = idx >= 0
    z = u_h.evaluate_in(idx[keep], b[keep])
    section = path.with_name(path.name + ".section")
    np.savetxt(section, np.column_stack([t[keep], z]), fmt="%.12e")
    return path, section


def h1_norm(space: SplineSpace, c: np.ndarray) -> float:
    """Full H1 norm of the spline with coefficients ``c``."""
    forms = assembler_for(space)
    return math.sqrt(max(c @ (forms.mass @ c) + c @ (forms.laplace @ c), 0.0))


def _report(label, space, u, trace, prob):
    parts = [label, f"dof={space.dof_count}"]
    if trace is not None:
        parts.append(f"steps={trace.steps} residual={trace.residual[-1]:.3e}")
    if prob.has_exact and u is not None:
        err = error_norms(space, u, prob)
        parts.append(f"L2={err.l2:.4e} H1={err.h1:.4e} H2={err.h2:.4e}")
    print(" ".join(parts))


def cmd_solve(cfg: RunConfig) -> int:
    prob = cfg.prob
    if prob.has_exact:
        det_err, bnd_err = self_check(prob, seed=cfg.seed)
        log.info("problem self-check: det %.2e, boundary %.2e", det_err, bnd_err)
    space, u, trace, err = _solve(cfg)
    out = cfg.out_path(".")
    out.mkdir(parents=True, exist_ok=True)
    if trace is not None:
        trace.to_csv(out / "trace.csv")
    if u is not None:
        save_solution(space, u, out / "solution.npz")
    _report(cfg.method, space, u, trace, prob)
    if err is not None:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_study(cfg: RunConfig) -> int:
    prob = cfg.prob
    levels = tuple(range(1, (cfg.levels or 3) + 1))
    reports = convergence_study(prob, cfg.iterate_config(), degree=cfg.degree, levels=levels)
    path = cfg.out_path(f"study_{prob.name}_{cfg.method}.csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    write_study_csv(reports, path)
    for rep in reports:
        print(",".join(rep.row()), "" if rep.status == "ok" else f"# {rep.status}")
    return EXIT_OK if all(r.status == "ok" for r in reports) else EXIT_NONCONVERGED


def cmd_compare(cfg: RunConfig) -> int:
    prob = cfg.prob
    results = {}
    for method in METHODS:
        space, u, trace, err = _solve(cfg, method)
        results[method] = (u, trace, err)
    ref = results["newton"][0]
    path = cfg.out_path(f"compare_{prob.name}.csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    status = EXIT_OK
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "nu", "n_it", "residual", "h1_diff_newton", "l2", "status"])
        for method, (u, trace, err) in results.items():
            nu = cfg.iterate_config(method).nu
            diff = l2 = float("nan")
            if u is not None and ref is not None:
                diff = h1_norm(space, u.coeffs - ref.coeffs)
            if u is not None and prob.has_exact:
                l2 = error_norms(space, u, prob).l2
            res = trace.residual[-1] if trace else float("nan")
            w.writerow([method, nu, trace.steps if trace else 0, f"{res:.5e}", f"{diff:.5e}",
                        f"{l2:.5e}", "ok" if err is None else str(err)])
            print(f"{method:14s} nu={nu:<6g} steps={trace.steps if trace else 0:<5d} "
                  f"residual={res:.3e} |u-u_newton|_H1={diff:.3e}" + ("" if err is None else "  FAILED"))
            if err is not None:
                status = EXIT_NONCONVERGED
    return status


def cmd_export(cfg: RunConfig) -> int:
    space, u, trace, err = _solve(cfg)
    if u is None:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NONCONVERGED
    surf, section = export_surface(u, space.mesh, cfg.out_path(f"surface_{cfg.problem}.txt"))
    print(f"wrote {surf} and {section}")
    if err is not None:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_fd_check(cfg: RunConfig) -> int:
    prob = cfg.prob
    N = round(1.0 / cfg.h) + 1 if cfg.h else 65
    nu = cfg.nu if cfg.nu and cfg.method.startswith("march") else 50.0
    try:
        grid = fd_march(prob.f, prob.g, N, nu, tol=min(cfg.tol, 1e-10), max_iter=max(cfg.max_iter, 1))
    except FDNonConvergence as exc:
        print(f"error: finite-difference solver: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    spline_cfg = RunConfig(**{**cfg.__dict__, "h": 0.125})
    space, u, trace, err = _solve(spline_cfg)
    line = f"N={N} nu={nu:g} fd_steps={grid.iterations}"
    if prob.has_exact:
        line += f" fd_max_error={grid_error(grid, prob.u):.4e}"
    if u is not None:
        line += f" spline_discrepancy={compare_to_spline(grid, u):.4e}"
    print(line)
    return EXIT_OK if err is None else EXIT_NONCONVERGED


COMMANDS = {
    "solve": cmd_solve,
    "study": cmd_study,
    "compare": cmd_compare,
    "export-surface": cmd_export,
    "fd-check": cmd_fd_check,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.from_args(ns)
        with threadpool_limits(limits=cfg.threads):
            return COMMANDS[cfg.subcommand](cfg)
    except (UsageError, MeshError, OSError) as exc:
        print(f"splinema: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main():
    sys.exit(run())
