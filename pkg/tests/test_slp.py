import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import make_dataset
from fiscalstate.data import StateSeries
from fiscalstate.errors import DomainError
from fiscalstate.lp import LpSpec, estimate_lp
from fiscalstate.slp import (bspline_basis, cross_validate, difference_penalty, estimate_slp,
                             fit_slp, penalized_ls, stack_system)


@pytest.mark.parametrize("H", [2, 5, 16, 20, 40])
def test_basis_shape_and_partition_of_unity(H):
    b = bspline_basis(H)
    assert b.K == H + 2
    assert b.matrix.shape == (H + 1, H + 2)
    np.testing.assert_allclose(b.matrix.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(b.matrix >= -1e-15)
    # cubic splines: at most four nonzero functions at any point
    assert np.all((b.matrix > 1e-14).sum(axis=1) <= 4)


def test_basis_evaluate_matches_matrix():
    b = bspline_basis(16)
    np.testing.assert_allclose(b.evaluate(np.arange(17)), b.matrix, atol=1e-14)
    np.testing.assert_allclose(b.evaluate([3.5]).sum(), 1.0)


def test_basis_rejects_short_horizon():
    with pytest.raises(DomainError):
        bspline_basis(1)


@pytest.mark.parametrize("r", [1, 2, 3])
def test_penalty_null_space(r):
    K = 10
    P = difference_penalty(K, r).block
    k = np.arange(K, dtype=float)
    for d in range(r):
        np.testing.assert_allclose(P @ k ** d, 0.0, atol=1e-9)
    assert np.linalg.matrix_rank(P) == K - r
    assert (k ** r) @ P @ (k ** r) > 0


@given(arrays(np.float64, 12, elements=st.floats(-100, 100)))
def test_third_difference_penalty_is_sum_of_squares(b):
    P = difference_penalty(12, 3).block
    brute = sum((b[i + 3] - 3 * b[i + 2] + 3 * b[i + 1] - b[i]) ** 2 for i in range(9))
    assert b @ P @ b == pytest.approx(brute, rel=1e-9, abs=1e-6)


def test_penalty_order_bounds():
    with pytest.raises(DomainError):
        difference_penalty(5, 5)
    with pytest.raises(DomainError):
        difference_penalty(5, 0)


def test_penalty_embed():
    pen = difference_penalty(6, 3)
    P = pen.embed(20, [2, 10])
    np.testing.assert_array_equal(P[2:8, 2:8], pen.block)
    np.testing.assert_array_equal(P[10:16, 10:16], pen.block)
    assert np.count_nonzero(P) == 2 * np.count_nonzero(pen.block)


def _lp_data(rng, T=200, state=False):
    shock = rng.standard_normal(T)
    y = np.convolve(shock, np.exp(-np.arange(12) / 4.0))[:T] + rng.standard_normal(T)
    ds = make_dataset({"y": y, "x": rng.standard_normal(T), "shock": shock})
    st_ = StateSeries((rng.random(T) < 0.5).astype(float), "dummy") if state else None
    return ds, st_


def test_stack_layouts(rng):
    ds, state = _lp_data(rng, state=True)
    H = 8
    spec = LpSpec("y", controls=("y", "x"), control_lags=2, horizon_max=H, state=state)
    K = H + 2
    ncol = 2 + 2 * 2
    full = stack_system(ds, spec, expand="all")
    assert full.X.shape[1] == 2 * ncol * K
    lean = stack_system(ds, spec)
    assert lean.X.shape[1] == 2 * (K + (ncol - 1) * (H + 1))
    assert full.X.shape[0] == lean.X.shape[0] == lean.nobs.sum()
    assert set(lean.penalized) == {"A", "B"}
    for sl in lean.penalized.values():
        assert sl.stop - sl.start == K
    for mu in (0.0, 5.0, 1e4):
        a = fit_slp(full, mu=mu)
        b = fit_slp(lean, mu=mu)
        for s in ("A", "B"):
            np.testing.assert_allclose(a.irf[s], b.irf[s], atol=1e-7)


def test_stack_rejects_bad_layout(rng):
    ds, _ = _lp_data(rng)
    spec = LpSpec("y", controls=("y",), horizon_max=6)
    with pytest.raises(DomainError):
        stack_system(ds, spec, expand="some")
    with pytest.raises(DomainError):
        stack_system(ds, spec, basis=bspline_basis(5))


def _random_problem(rng, n=40, p=12):
    X = rng.standard_normal((n, p))
    Z = rng.standard_normal(n)
    P = difference_penalty(p, 3).block
    return Z, X, P


def test_penalized_ls_dense_oracle(rng):
    Z, X, P = _random_problem(rng)
    mu = 3.7
    oracle = np.linalg.solve(X.T @ X + mu * P, X.T @ Z)
    np.testing.assert_allclose(penalized_ls(Z, X, P, mu), oracle, rtol=1e-9, atol=1e-11)


def test_penalized_ls_is_optimal(rng):
    Z, X, P = _random_problem(rng)
    mu = 2.0
    theta = penalized_ls(Z, X, P, mu)

    def objective(t):
        r = Z - X @ t
        return r @ r + mu * t @ P @ t

    base = objective(theta)
    for _ in range(50):
        assert objective(theta + 1e-3 * rng.standard_normal(theta.size)) >= base


def test_penalized_ls_min_norm_at_zero(rng):
    X = rng.standard_normal((30, 8))
    X = np.hstack([X, X[:, :2]])
    Z = rng.standard_normal(30)
    theta = penalized_ls(Z, X, np.zeros((10, 10)), 0.0)
    np.testing.assert_allclose(theta, np.linalg.pinv(X) @ Z, atol=1e-10)


def test_penalized_ls_rejects_negative_mu(rng):
    Z, X, P = _random_problem(rng)
    with pytest.raises(DomainError):
        penalized_ls(Z, X, P, -1.0)


def test_penalty_term_non_increasing(rng):
    Z, X, P = _random_problem(rng)
    terms = [(lambda t: t @ P @ t)(penalized_ls(Z, X, P, mu)) for mu in np.logspace(-3, 6, 30)]
    assert np.all(np.diff(terms) <= 1e-9 * max(terms))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100.0))
def test_orthogonal_design_closed_form(seed, mu):
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((30, 8)))
    Z = rng.standard_normal(30)
    P = difference_penalty(8, 2).block
    expect = np.linalg.solve(np.eye(8) + mu * P, Q.T @ Z)
    np.testing.assert_allclose(penalized_ls(Z, Q, P, mu), expect, atol=1e-9)


def test_cv_picks_top_for_noiseless_quadratic(rng):
    X = rng.standard_normal((60, 10))
    k = np.arange(10.0)
    Z = X @ (1.0 + 0.5 * k - 0.1 * k ** 2)
    P = difference_penalty(10, 3).block
    grid = np.logspace(-2, 4, 7)
    mu, curve = cross_validate(Z, X, P, grid, k=5)
    assert mu == grid[-1]
    assert [m for m, _ in curve] == list(grid)


def test_cv_single_point_grid(rng):
    Z, X, P = _random_problem(rng)
    mu, curve = cross_validate(Z, X, P, [7.5], k=4)
    assert mu == 7.5 and len(curve) == 1


def test_cv_empty_grid(rng):
    Z, X, P = _random_problem(rng)
    with pytest.raises(DomainError):
        cross_validate(Z, X, P, [], k=4)


def test_cv_groups_keep_quarters_together(rng):
    ds, _ = _lp_data(rng)
    system = stack_system(ds, LpSpec("y", controls=("y",), control_lags=1, horizon_max=6))
    fit = fit_slp(system, mu_grid=np.logspace(-1, 3, 5), folds=4)
    assert fit.mu in np.logspace(-1, 3, 5)
    assert len(fit.cv_curve) == 5


def test_estimate_slp_matches_lp_without_shrinkage(rng):
    ds, _ = _lp_data(rng, T=300)
    spec = LpSpec("y", controls=("y",), control_lags=2, horizon_max=10)
    lp = estimate_lp(ds, spec)
    slp = estimate_slp(ds, spec, mu=0.0)
    np.testing.assert_allclose(slp.estimate["linear"], lp.estimate["linear"], atol=1e-9)
    assert slp.method == "slp" and slp.mu == 0.0
    assert np.all(slp.se["linear"] > 0)


def test_estimate_slp_state_dependent(rng):
    ds, state = _lp_data(rng, T=300, state=True)
    spec = LpSpec("y", controls=("y",), control_lags=1, horizon_max=8, state=state)
    res = estimate_slp(ds, spec, mu_grid=np.logspace(-2, 4, 7))
    assert res.states == ["A", "B"]
    assert "A-B" in res.contrasts
    assert res.cv_curve is not None and res.mu in np.logspace(-2, 4, 7)


def test_heavy_shrinkage_gives_quadratic_irf(rng):
    ds, _ = _lp_data(rng)
    spec = LpSpec("y", controls=("y",), control_lags=1, horizon_max=10)
    irf = estimate_slp(ds, spec, mu=1e10).estimate["linear"]
    h = np.arange(11.0)
    coef = np.polyfit(h, irf, 2)
    np.testing.assert_allclose(np.polyval(coef, h), irf, atol=1e-5)
