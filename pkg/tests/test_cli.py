import csv

import numpy as np
import pytest

from conftest import sample_polynomial
from splinema.cli import EXIT_NONCONVERGED, EXIT_OK, EXIT_USAGE, export_surface, load_solution, run
from splinema.mesh import build_square_mesh, write_mesh
from splinema.problems import builtin


def _surface(path):
    lines = path.read_text().splitlines()
    nv = int(lines[0].split()[1])
    xyz = np.loadtxt(lines[1:1 + nv])
    faces = [ln for ln in lines[1 + nv:] if ln.startswith("f ")]
    return xyz, faces


class TestExitCodes:
    def test_solve_ok(self, tmp_path):
        assert run(["solve", "--problem", "test1", "--h", "0.5", "--out", str(tmp_path)]) == EXIT_OK
        assert (tmp_path / "trace.csv").exists()
        u = load_solution(tmp_path / "solution.npz")
        p = builtin("test1")
        assert abs(u(np.array([0.5]), np.array([0.5]))[0] - p.u(0.5, 0.5)) <= 1e-4

    @pytest.mark.parametrize("argv", [
        ["solve", "--bogus"],
        ["solve"],
        ["solve", "--problem", "test9"],
        ["solve", "--problem", "test1", "--method", "newton", "--nu", "2"],
        ["solve", "--problem", "test1", "--h", "0.5", "--levels", "2"],
        ["solve", "--problem", "test1", "--degree", "1"],
        ["fd-check", "--problem", "test5"],
        ["solve", "--problem", "test1", "--mesh", "/nonexistent/mesh.txt"],
    ])
    def test_usage(self, argv, capsys):
        assert run(argv) == EXIT_USAGE

    def test_nonconvergence(self, tmp_path):
        argv = ["solve", "--problem", "test1", "--h", "0.5", "--method", "march-laplace",
                "--max-iter", "2", "--out", str(tmp_path)]
        assert run(argv) == EXIT_NONCONVERGED
        assert (tmp_path / "solution.npz").exists()

    def test_mesh_file(self, tmp_path):
        mesh_file = tmp_path / "m.txt"
        write_mesh(build_square_mesh(2), mesh_file)
        argv = ["solve", "--problem", "quadratic", "--mesh", str(mesh_file), "--out", str(tmp_path)]
        assert run(argv) == EXIT_OK


class TestStudy:
    def test_csv_rows(self, tmp_path):
        out = tmp_path / "s.csv"
        argv = ["study", "--problem", "test1", "--levels", "3", "--degree", "3", "--out", str(out)]
        assert run(argv) == EXIT_OK
        rows = list(csv.reader(out.open()))
        assert len(rows) == 4 and rows[0][0] == "h"


class TestExport:
    def test_constant_surface(self, square2_d5, tmp_path):
        u = sample_polynomial(square2_d5, lambda x, y: 1 + 0 * x)
        surf, section = export_surface(u, square2_d5.mesh, tmp_path / "c.txt", s=3)
        xyz, faces = _surface(surf)
        assert np.abs(xyz[:, 2] - 1).max() <= 1e-13
        assert len(faces) == square2_d5.mesh.nt * 9
        assert np.abs(np.loadtxt(section)[:, 1] - 1).max() <= 1e-13

    def test_disk_surface_matches_exact(self, tmp_path):
        out = tmp_path / "disk.txt"
        argv = ["export-surface", "--problem", "test5", "--h", "0.5", "--out", str(out)]
        assert run(argv) == EXIT_OK
        xyz, _ = _surface(out)
        exact = builtin("test5").u(xyz[:, 0], xyz[:, 1])
        assert np.abs(xyz[:, 2] - exact).max() <= 1e-10

    def test_section_symmetric(self, tmp_path):
        # a few steps suffice; the iterate inherits the point symmetry of the data
        out = tmp_path / "t3.txt"
        argv = ["export-surface", "--problem", "test3", "--h", "0.25", "--method", "ptc-laplace",
                "--nu", "7.5", "--max-iter", "5", "--out", str(out)]
        assert run(argv) in (EXIT_OK, EXIT_NONCONVERGED)
        t, z = np.loadtxt(str(out) + ".section").T
        np.testing.assert_allclose(t, 1 - t[::-1], atol=1e-12)
        assert np.abs(z - z[::-1]).max() <= 1e-8
        assert z[len(z) // 2] < 0

    def test_rejects_zero_subdivision(self, square2_d5, tmp_path):
        u = sample_polynomial(square2_d5, lambda x, y: x)
        with pytest.raises(ValueError):
            export_surface(u, square2_d5.mesh, tmp_path / "x.txt", s=0)


class TestFDCheck:
    def test_runs(self, capsys):
        assert run(["fd-check", "--problem", "test1", "--h", "0.0625"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "fd_max_error" in out and "spline_discrepancy" in out
