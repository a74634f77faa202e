import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sparse_ilc.criterion import FUSED, IDENTITY, SPARSE_FUSED, CriterionSpec, RegularizerSpec, WeightSpec
from sparse_ilc.lti import LiftedOperator
from sparse_ilc.solvers import (
    GeneralizedLasso,
    InfeasibleError,
    SolverOptions,
    UpdateSolver,
    debias,
    kkt_residual,
    lasso_lambda_max,
    norm_optimal_gains,
    snap_zeros,
    soft_threshold,
    solve_constrained_l1,
    solve_fused_via_increments,
    solve_update,
)
from oracles import KINDS, grid_minimum, objective_pq, random_model, random_spec, with_lam


def instance(rng, n, kind, w_df=0.0, w_f=0.0):
    J = random_model(rng, n)
    spec = random_spec(rng, n, kind, w_f=w_f, w_df=w_df)
    e, fj = rng.normal(scale=0.4, size=n), rng.normal(scale=0.3, size=n)
    return J, spec, e, fj


def test_soft_threshold_is_prox(rng):
    x = rng.normal(size=50)
    k = 0.3
    y = soft_threshold(x, k)
    # prox optimality: x - y in k * subdifferential |y|
    g = (x - y) / k
    assert np.all(np.abs(g) <= 1 + 1e-12)
    nz = y != 0
    np.testing.assert_allclose(g[nz], np.sign(y[nz]))
    with pytest.raises(ValueError):
        soft_threshold(x, -1.0)


def test_snap_zeros_is_relative():
    x = snap_zeros(np.array([1e3, 1e-7, -2e-6]), 1e-9)
    np.testing.assert_array_equal(x, [1e3, 0.0, -2e-6])


def test_kkt_residual_identity_closed_form(rng):
    n = 8
    P = np.eye(n) * 2.0
    q = rng.normal(size=n)
    lam = 0.5
    x = rng.normal(size=n)
    x[:3] = 0.0
    res, g = kkt_residual(P, q, np.eye(n), lam, x)
    grad = P @ x - q
    expect = np.where(x != 0, np.abs(grad + lam * np.sign(x)), np.maximum(np.abs(grad) - lam, 0.0))
    assert res == pytest.approx(float(np.max(expect)), rel=1e-12)
    assert np.all(np.abs(g) <= 1 + 1e-12)
    # the exact minimizer (soft threshold) has zero residual
    xs = soft_threshold(q / 2.0, lam / 2.0)
    assert kkt_residual(P, q, np.eye(n), lam, xs)[0] < 1e-14


def test_norm_optimal_gains_closed_form(rng):
    n = 10
    J = random_model(rng, n)
    We, Wf, Wd = WeightSpec.scaled(1.3), WeightSpec.scaled(0.2), WeightSpec.scaled(0.5)
    gains = norm_optimal_gains(J, We, Wf, Wd)
    spec = CriterionSpec(n, We, Wf, Wd)
    e, fj = rng.normal(size=n), rng.normal(size=n)
    sol = solve_update(spec, e, fj, J)
    np.testing.assert_allclose(gains.Q @ (fj + gains.L @ e), sol.f, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("seed,kind", list(enumerate(KINDS)))
def test_grid_oracle_small(seed, kind):
    rng = np.random.default_rng(100 + seed)
    for _ in range(8):
        n = int(rng.integers(1, 3))
        J, spec, e, fj = instance(rng, n, kind)
        spec = with_lam(spec, float(rng.uniform(0.0, 0.6)))
        P, q = spec.hessian(J), spec.linear_term(J, e, fj)
        D = spec.reg.matrix(n)
        xg, vg = grid_minimum(P, q, D, spec.lam)
        sol = solve_update(spec, e, fj, J)
        vs = float(objective_pq(P, q, D, spec.lam, sol.f)[0])
        assert vs <= vg + 1e-12
        assert np.max(np.abs(sol.f - xg)) <= 2e-2


@pytest.mark.parametrize("seed,kind", list(enumerate(KINDS)))
def test_kkt_medium(seed, kind):
    rng = np.random.default_rng(7 + seed)
    for _ in range(6):
        n = int(rng.integers(3, 21))
        J, spec, e, fj = instance(rng, n, kind, w_df=float(rng.choice([0.0, 0.3])))
        P, q = spec.hessian(J), spec.linear_term(J, e, fj)
        lam = float(rng.uniform(0.02, 0.5)) * float(np.max(np.abs(q)))
        spec = with_lam(spec, lam)
        sol = solve_update(spec, e, fj, J)
        assert sol.converged
        res, _ = kkt_residual(P, q, spec.reg.matrix(n), lam, sol.f)
        assert res <= 1e-8


@given(st.integers(0, 2**32 - 1), st.sampled_from([IDENTITY, FUSED, SPARSE_FUSED]), st.integers(2, 12))
def test_update_never_worse_than_staying_or_zero(seed, kind, n):
    rng = np.random.default_rng(seed)
    J, spec, e, fj = instance(rng, n, kind)
    spec = with_lam(spec, float(rng.uniform(0, 1)))
    sol = solve_update(spec, e, fj, J)
    from sparse_ilc.criterion import evaluate_criterion

    tol = 1e-10 * max(1.0, abs(sol.objective))
    assert sol.objective <= evaluate_criterion(spec, e, fj, fj, J) + tol
    assert sol.objective <= evaluate_criterion(spec, e, fj, np.zeros(n), J) + tol


@given(st.integers(0, 2**32 - 1), st.integers(1, 15))
def test_lambda_max_gives_zero(seed, n):
    rng = np.random.default_rng(seed)
    J = random_model(rng, n)
    e = rng.normal(size=n)
    lmax = lasso_lambda_max(J, WeightSpec.identity(), e, np.zeros(n))
    spec = CriterionSpec(n, reg=RegularizerSpec(1.01 * lmax, IDENTITY))
    sol = solve_update(spec, e, np.zeros(n), J)
    assert not np.any(sol.f)
    spec = CriterionSpec(n, reg=RegularizerSpec(0.9 * lmax, IDENTITY))
    assert np.any(solve_update(spec, e, np.zeros(n), J).f)


def test_lambda_max_requires_identity(J64):
    with pytest.raises(ValueError):
        lasso_lambda_max(J64, WeightSpec.identity(), np.ones(64), np.zeros(64), FUSED)


@pytest.mark.parametrize("first", [False, True])
def test_fused_increment_transform(first):
    rng = np.random.default_rng(3)
    for _ in range(3):
        n = 24
        J = random_model(rng, n)
        e = rng.normal(size=n)
        fj = rng.normal(scale=0.1, size=n)
        spec = CriterionSpec(n, reg=RegularizerSpec(0.05, FUSED, include_first=first))
        a = solve_update(spec, e, fj, J)
        b = solve_fused_via_increments(spec, e, fj, J)
        assert np.linalg.norm(a.f - b.f) <= 1e-6 * np.linalg.norm(a.f)


def test_increment_transform_rejects_other_specs(J64):
    with pytest.raises(ValueError):
        solve_fused_via_increments(CriterionSpec(64, reg=RegularizerSpec(1.0, IDENTITY)), np.ones(64), np.zeros(64), J64)
    spec = CriterionSpec(64, W_f=WeightSpec.scaled(0.1), reg=RegularizerSpec(1.0, FUSED))
    with pytest.raises(ValueError):
        solve_fused_via_increments(spec, np.ones(64), np.zeros(64), J64)


@pytest.mark.parametrize("kind", [IDENTITY, FUSED])
def test_debias_keeps_structure_and_lowers_smooth_part(kind):
    rng = np.random.default_rng(11)
    n = 30
    J = random_model(rng, n)
    e = rng.normal(size=n)
    spec = CriterionSpec(n, reg=RegularizerSpec(0.3, kind))
    sol = solve_update(spec, e, np.zeros(n), J)
    db = debias(sol, spec, e, np.zeros(n), J)
    assert db.smooth <= sol.smooth + 1e-12
    if kind == IDENTITY:
        assert set(np.flatnonzero(db.f)) <= set(np.flatnonzero(sol.f))
    else:
        assert np.count_nonzero(np.abs(np.diff(db.f)) > 1e-9) <= np.count_nonzero(np.abs(np.diff(sol.f)) > 1e-9)


def test_constrained_l1():
    rng = np.random.default_rng(5)
    A = rng.normal(size=(20, 4))
    b = rng.normal(size=20)
    x_ls, *_ = np.linalg.lstsq(A, b, rcond=None)
    qmin = 0.5 * float(np.sum((b - A @ x_ls) ** 2))
    t = 1.2 * qmin
    sol = solve_constrained_l1(A, b, np.eye(4), t)
    assert sol.converged
    assert 0.5 * np.sum((b - A @ sol.f) ** 2) <= t * (1 + 1e-6)
    assert np.sum(np.abs(sol.f)) <= np.sum(np.abs(x_ls)) + 1e-12
    with pytest.raises(InfeasibleError):
        solve_constrained_l1(A, b, np.eye(4), 0.5 * qmin)
    big = solve_constrained_l1(A, b, np.eye(4), 0.5 * float(b @ b))
    assert not np.any(big.f)


def test_engine_reuses_factorization(rng):
    n = 12
    J = random_model(rng, n)
    spec = CriterionSpec(n, reg=RegularizerSpec(0.1, SPARSE_FUSED, fusion_weight=2.0))
    us = UpdateSolver(spec, J)
    a = us.solve(rng.normal(size=n), np.zeros(n))
    b = us.solve(rng.normal(size=n), a.f)
    assert a.converged and b.converged
    assert isinstance(us.engine, GeneralizedLasso)


def test_solver_options_validation():
    with pytest.raises(ValueError):
        SolverOptions(abs_tol=0)
    with pytest.raises(ValueError):
        SolverOptions(rho=-1)
    with pytest.raises(ValueError):
        SolverOptions(relaxation=2.0)
    with pytest.raises(ValueError):
        SolverOptions(max_iterations=0)


def test_shape_errors(J64):
    us = UpdateSolver(CriterionSpec(64), J64)
    with pytest.raises(ValueError):
        us.solve(np.zeros(3), np.zeros(64))
    with pytest.raises(ValueError):
        UpdateSolver(CriterionSpec(8), J64)
    assert isinstance(J64, LiftedOperator)
