import numpy as np
import pytest

from nvcssl.errors import NumericError, ValidationError
from nvcssl.group_solver import (
    GramCache,
    GroupProblem,
    available_backends,
    backend_name,
    block_majorizers,
    kkt_residual,
    objective,
    set_backend,
    solve_group_lasso,
)

from oracles import group_objective, prox_gradient_reference


def random_problem(rng, N=30, p=5, d=3, weight_scale=2.0, sparse_truth=True, **kw):
    U = rng.standard_normal((N, p * d))
    gamma = np.zeros(p * d)
    if sparse_truth:
        for k in range(p // 2 + 1):
            gamma[k * d:(k + 1) * d] = rng.standard_normal(d)
    y = U @ gamma + 0.5 * rng.standard_normal(N)
    w = weight_scale * rng.uniform(0.5, 1.5, size=p)
    return GroupProblem(Y=y, U=U, weights=w, d=d, **kw)


class TestSolveBasics:
    def test_zero_data_gives_zero(self):
        rng = np.random.default_rng(0)
        prob = GroupProblem(Y=np.zeros(20), U=rng.standard_normal((20, 6)),
                            weights=np.array([1.0, 1.0]), d=3)
        res = solve_group_lasso(prob)
        assert np.all(res.gamma == 0.0)
        assert res.converged

    def test_orthonormal_block_closed_form(self):
        # U'U = I: solution is the group soft threshold of z = U'y
        rng = np.random.default_rng(1)
        A = rng.standard_normal((12, 3))
        Q, _ = np.linalg.qr(A)
        y = rng.standard_normal(12)
        z = Q.T @ y
        for w in (0.1, 0.5 * np.linalg.norm(z), 2.0 * np.linalg.norm(z)):
            prob = GroupProblem(Y=y, U=Q, weights=np.array([w]), d=3, tol=1e-12,
                                max_iter=1000)
            res = solve_group_lasso(prob)
            shrink = max(1.0 - w / np.linalg.norm(z), 0.0)
            assert np.allclose(res.gamma, shrink * z, atol=1e-10)
            assert kkt_residual(res.gamma, prob) <= 1e-10

    def test_weight_above_gradient_zeroes_block(self):
        rng = np.random.default_rng(2)
        prob = random_problem(rng, weight_scale=1e3)
        res = solve_group_lasso(prob)
        assert np.all(res.gamma == 0.0)
        assert kkt_residual(res.gamma, prob) == 0.0

    def test_tiny_weights_match_least_squares(self):
        rng = np.random.default_rng(3)
        N, p, d = 40, 3, 2
        U = rng.standard_normal((N, p * d))
        y = rng.standard_normal(N)
        prob = GroupProblem(Y=y, U=U, weights=np.full(p, 1e-12), d=d,
                            tol=1e-12, max_iter=20000)
        res = solve_group_lasso(prob)
        ls = np.linalg.lstsq(U, y, rcond=None)[0]
        assert np.max(np.abs(res.gamma - ls)) <= 1e-6

    def test_residual_consistent(self):
        rng = np.random.default_rng(4)
        prob = random_problem(rng)
        res = solve_group_lasso(prob)
        assert np.allclose(res.residual, prob.Y - prob.U @ res.gamma, atol=1e-10)

    def test_nonfinite_rejected(self):
        with pytest.raises(NumericError):
            GroupProblem(Y=np.array([1.0, np.inf]), U=np.ones((2, 2)),
                         weights=np.array([1.0]), d=2)

    def test_bad_weights_rejected(self):
        with pytest.raises(ValidationError):
            GroupProblem(Y=np.ones(2), U=np.ones((2, 2)),
                         weights=np.array([0.0]), d=2)


class TestWarmStartAndMonotonicity:
    def test_objective_never_above_warm_start(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            warm = rng.standard_normal(15)
            prob = random_problem(rng, warm_start=warm)
            res = solve_group_lasso(prob)
            assert objective(res.gamma, prob) <= objective(warm, prob) + 1e-10

    def test_resolve_from_solution_is_stable(self):
        rng = np.random.default_rng(6)
        prob = random_problem(rng)
        res = solve_group_lasso(prob)
        prob2 = GroupProblem(Y=prob.Y, U=prob.U, weights=prob.weights, d=prob.d,
                             warm_start=res.gamma, tol=prob.tol)
        res2 = solve_group_lasso(prob2)
        assert np.max(np.abs(res2.gamma - res.gamma)) <= prob.tol
        assert set(np.nonzero(res2.gamma)[0]) == set(np.nonzero(res.gamma)[0])

    def test_truncated_solve_still_descends(self):
        rng = np.random.default_rng(7)
        warm = rng.standard_normal(15)
        prob = random_problem(rng, warm_start=warm, max_iter=2)
        res = solve_group_lasso(prob)
        assert not res.converged
        assert objective(res.gamma, prob) <= objective(warm, prob) + 1e-10


class TestKkt:
    def test_interior_zero_certificate(self):
        rng = np.random.default_rng(8)
        U = rng.standard_normal((20, 6))
        y = rng.standard_normal(20)
        z = U.T @ y
        w = 2.0 * max(np.linalg.norm(z[:3]), np.linalg.norm(z[3:]))
        prob = GroupProblem(Y=y, U=U, weights=np.array([w, w]), d=3)
        assert kkt_residual(np.zeros(6), prob) == 0.0

    def test_perturbation_increases_residual(self):
        rng = np.random.default_rng(9)
        prob = random_problem(rng, weight_scale=1.0)
        prob.tol = 1e-10
        prob.max_iter = 5000
        res = solve_group_lasso(prob)
        base = kkt_residual(res.gamma, prob)
        active = [k for k in range(prob.p)
                  if np.linalg.norm(res.gamma[k * prob.d:(k + 1) * prob.d]) > 0]
        bumped = res.gamma.copy()
        bumped[active[0] * prob.d] += 1e-3
        assert kkt_residual(bumped, prob) > base

    def test_solver_meets_kkt_tolerance(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            prob = random_problem(rng, weight_scale=1.0, tol=1e-10, max_iter=20000)
            res = solve_group_lasso(prob)
            assert kkt_residual(res.gamma, prob) <= 1e-6


class TestAgainstProxGradientOracle:
    def test_objective_matches_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            N = int(rng.integers(10, 31))
            p = int(rng.integers(2, 6))
            d = int(rng.integers(1, 4))
            prob = random_problem(rng, N=N, p=p, d=d, weight_scale=1.5,
                                  tol=1e-12, max_iter=50000)
            res = solve_group_lasso(prob)
            _, obj_ref = prox_gradient_reference(prob.U, prob.Y, prob.weights, prob.d)
            obj = objective(res.gamma, prob)
            assert abs(obj - obj_ref) <= 1e-6


class TestBackends:
    def test_backends_agree(self):
        if "cython" not in available_backends():
            pytest.skip("compiled kernel not built")
        rng = np.random.default_rng(12)
        prob = random_problem(rng, tol=1e-10, max_iter=10000)
        set_backend("cython")
        res_cy = solve_group_lasso(prob)
        set_backend("python")
        res_py = solve_group_lasso(prob)
        set_backend("cython")
        assert np.max(np.abs(res_cy.gamma - res_py.gamma)) <= 1e-9

    def test_gram_cached_solve_matches_plain(self):
        rng = np.random.default_rng(13)
        base = random_problem(rng, tol=1e-10, max_iter=10000)
        plain = solve_group_lasso(base)
        cache = GramCache(base.U, base.d)
        cached_prob = GroupProblem(Y=base.Y, U=base.U, weights=base.weights, d=base.d,
                                   tol=1e-10, max_iter=10000, gram=cache)
        cached = solve_group_lasso(cached_prob)
        assert np.max(np.abs(cached.gamma - plain.gamma)) <= 1e-9
        assert np.allclose(cached.residual, base.Y - base.U @ cached.gamma, atol=1e-8)
        # re-solve through the same cache with new weights, warm-started
        cached_prob2 = GroupProblem(Y=base.Y, U=base.U, weights=0.5 * base.weights,
                                    d=base.d, warm_start=cached.gamma,
                                    tol=1e-10, max_iter=10000, gram=cache)
        res2 = solve_group_lasso(cached_prob2)
        ref2 = solve_group_lasso(GroupProblem(Y=base.Y, U=base.U,
                                              weights=0.5 * base.weights, d=base.d,
                                              tol=1e-10, max_iter=10000))
        assert np.max(np.abs(res2.gamma - ref2.gamma)) <= 1e-8

    def test_python_backend_gram_matches(self):
        rng = np.random.default_rng(14)
        base = random_problem(rng, tol=1e-10, max_iter=10000)
        set_backend("python")
        try:
            plain = solve_group_lasso(base)
            cache = GramCache(base.U, base.d)
            cached = solve_group_lasso(
                GroupProblem(Y=base.Y, U=base.U, weights=base.weights, d=base.d,
                             tol=1e-10, max_iter=10000, gram=cache))
        finally:
            if "cython" in available_backends():
                set_backend("cython")
        assert np.max(np.abs(cached.gamma - plain.gamma)) <= 1e-9


def test_block_majorizers_dominate_gram():
    rng = np.random.default_rng(15)
    U = rng.standard_normal((25, 12))
    L = block_majorizers(U, 4)
    for k in range(3):
        Uk = U[:, 4 * k:4 * (k + 1)]
        top = np.linalg.eigvalsh(Uk.T @ Uk)[-1]
        assert L[k] >= top - 1e-10


def test_backend_name_reports():
    assert backend_name() in ("cython", "python")
