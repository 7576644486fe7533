import numpy as np
import pytest
import scipy.sparse as sp

from splinema.linalg import (
    ALConfig,
    ALConvergenceError,
    KKTError,
    KKTSolver,
    SaddleProblem,
    solve_augmented_lagrangian,
    solve_kkt,
)


def random_instance(rng, n=40, m=12):
    A = rng.standard_normal((n, n))
    K = sp.csr_matrix(A @ A.T + n * np.eye(n))
    R = sp.csr_matrix(rng.standard_normal((m, n)))
    return SaddleProblem(K, rng.standard_normal(n), R, rng.standard_normal(m))


class TestKKT:
    def test_no_constraints(self, rng):
        p = random_instance(rng, m=0)
        p = SaddleProblem(p.K, p.F, sp.csr_matrix((0, 40)), np.zeros(0))
        c, lam = solve_kkt(p)
        np.testing.assert_allclose(c, np.linalg.solve(p.K.toarray(), p.F), rtol=1e-12)
        assert lam.size == 0

    def test_hand_solved(self):
        n = 5
        R = sp.csr_matrix(([1.0], ([0], [0])), shape=(1, n))
        c, lam = solve_kkt(SaddleProblem(sp.identity(n), np.zeros(n), R, np.array([5.0])))
        np.testing.assert_allclose(c, [5, 0, 0, 0, 0], atol=1e-14)
        np.testing.assert_allclose(lam, [-5.0], atol=1e-14)

    def test_random_residuals(self, rng):
        p = random_instance(rng)
        c, lam = solve_kkt(p)
        r1, r2 = p.residuals(c, lam)
        assert r1 <= 1e-10 and r2 <= 1e-10

    def test_factor_once_many_rhs(self, rng):
        p = random_instance(rng)
        kkt = KKTSolver(p.K, p.R)
        for _ in range(3):
            F, G = rng.standard_normal(40), rng.standard_normal(12)
            c, lam = kkt.solve(F, G)
            assert max(SaddleProblem(p.K, F, p.R, G).residuals(c, lam)) <= 1e-10

    def test_singular_reports_coercivity(self):
        K = sp.csr_matrix(np.diag([1.0, 0.0, 1.0]))
        R = sp.csr_matrix(np.array([[1.0, 0.0, 0.0]]))
        with pytest.raises(KKTError, match="singular|coercivity"):
            solve_kkt(SaddleProblem(K, np.ones(3), R, np.zeros(1)))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            SaddleProblem(sp.identity(3), np.ones(2), sp.csr_matrix((1, 3)), np.zeros(1))


class TestAugmentedLagrangian:
    def test_trivial(self, rng):
        p = random_instance(rng)
        res = solve_augmented_lagrangian(SaddleProblem(p.K, np.zeros(40), p.R, np.zeros(12)))
        assert res.iterations == 1
        np.testing.assert_allclose(res.c, 0.0, atol=1e-14)

    def test_agrees_with_kkt(self, rng):
        p = random_instance(rng)
        c, lam = solve_kkt(p)
        res = solve_augmented_lagrangian(p)
        assert np.linalg.norm(res.c - c) <= 1e-8 * np.linalg.norm(c)
        assert np.linalg.norm(res.lam - lam) <= 1e-6 * np.linalg.norm(lam)

    def test_constraint_residuals_decrease(self, rng):
        p = random_instance(rng)
        res = solve_augmented_lagrangian(p, ALConfig(mu=1e-2, tol=1e-13))
        h = np.array(res.constraint_residuals)
        assert len(h) > 2
        assert np.all(np.diff(h) < 0)

    def test_non_convergence_carries_residual(self, rng):
        p = random_instance(rng)
        with pytest.raises(ALConvergenceError) as info:
            solve_augmented_lagrangian(p, ALConfig(mu=10.0, tol=1e-14, max_outer=2))
        assert info.value.residual > 0

    def test_rejects_nonpositive_penalty(self):
        with pytest.raises(ValueError):
            ALConfig(mu=0.0)
