import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fiscalstate.errors import (DomainError, EstimationError, SingularDesignError,
                                UnsupportedConfigurationError)
from fiscalstate.regression import (SIMPLIFIED_CRITICAL_VALUES, _mop_critical, effective_f,
                                    kfold_splits, newey_west, ols, tsls)


def test_ols_exact_fit_and_orthogonal(rng):
    X = rng.standard_normal((40, 2))
    fit = ols(X @ np.array([1.0, 2.0]), X)
    np.testing.assert_allclose(fit.coefficients, [1, 2], atol=1e-12)
    assert np.max(np.abs(fit.residuals)) < 1e-12
    Q, _ = np.linalg.qr(rng.standard_normal((40, 3)))
    fit = ols(Q[:, 2], Q[:, :2])
    assert np.max(np.abs(fit.coefficients)) < 1e-12


def test_ols_normal_equations(rng):
    X = rng.standard_normal((50, 3))
    y = rng.standard_normal(50)
    fit = ols(y, X, names=["a", "b", "c"])
    np.testing.assert_allclose(fit.coefficients, np.linalg.solve(X.T @ X, X.T @ y), rtol=1e-12)
    assert np.max(np.abs(X.T @ fit.residuals)) < 1e-10
    s2 = fit.residuals @ fit.residuals / 47
    np.testing.assert_allclose(fit.covariance, s2 * np.linalg.inv(X.T @ X), rtol=1e-10)
    assert fit["b"] == fit.coefficients[1]


def test_ols_singular_names_columns(rng):
    X = rng.standard_normal((30, 3))
    X = np.column_stack([X, X[:, 0] + X[:, 1]])
    with pytest.raises(SingularDesignError) as exc:
        ols(rng.standard_normal(30), X, names=["a", "b", "c", "d"])
    assert len(exc.value.columns) == 1
    assert exc.value.columns[0] in {"a", "b", "d"}
    with pytest.raises(EstimationError):
        ols(np.ones(2), np.ones((2, 2)))


def test_nw_zero_bandwidth_is_white(rng):
    X = rng.standard_normal((60, 3))
    u = rng.standard_normal(60)
    B = np.linalg.inv(X.T @ X)
    white = B @ (X.T * u ** 2) @ X @ B
    np.testing.assert_allclose(newey_west(X, u, 0), white, rtol=1e-12)


def test_nw_bandwidth_bounds(rng):
    X = rng.standard_normal((10, 2))
    with pytest.raises(DomainError):
        newey_west(X, np.ones(10), 10)
    with pytest.raises(DomainError):
        newey_west(X, np.ones(10), -1)


def test_nw_close_to_classical_iid():
    rng = np.random.default_rng(21)
    X = np.column_stack([np.ones(10000), rng.standard_normal(10000)])
    y = X @ [1.0, 0.5] + rng.standard_normal(10000)
    hac = ols(y, X, bandwidth=4)
    cls = ols(y, X)
    np.testing.assert_allclose(np.diag(hac.covariance), np.diag(cls.covariance), rtol=0.05)


@settings(max_examples=40)
@given(st.integers(0, 2 ** 31), st.integers(0, 25))
def test_nw_psd(seed, L):
    r = np.random.default_rng(seed)
    X = r.standard_normal((30, 3))
    V = newey_west(X, r.standard_normal(30), L)
    np.testing.assert_array_equal(V, V.T)
    assert np.linalg.eigvalsh(V)[0] > -1e-10


def test_tsls_own_instrument_is_ols(rng):
    n = 200
    W = np.column_stack([np.ones(n), rng.standard_normal(n)])
    g = rng.standard_normal(n)
    y = 2 * g + W @ [1.0, -1.0] + rng.standard_normal(n)
    iv = tsls(y, g, g, W)
    np.testing.assert_allclose(iv.coefficients, ols(y, np.column_stack([g, W])).coefficients, atol=1e-10)


def test_tsls_wald_ratio(rng):
    n = 500
    z = rng.standard_normal(n)
    x = z + rng.standard_normal(n)
    y = 1.5 * x + rng.standard_normal(n)
    iv = tsls(y, x, z)
    zc, xc, yc = z - z.mean(), x - x.mean(), y - y.mean()
    # no constant: the Wald ratio uses raw cross moments
    assert iv.coefficients[0] == pytest.approx((z @ y) / (z @ x), abs=1e-10)
    w = np.ones((n, 1))
    iv2 = tsls(y, x, z, w)
    assert iv2.coefficients[0] == pytest.approx((zc @ yc) / (zc @ xc), abs=1e-10)
    rf = ols(y, np.column_stack([z, w])).coefficients[0]
    fs = ols(x, np.column_stack([z, w])).coefficients[0]
    assert iv2.coefficients[0] == pytest.approx(rf / fs, abs=1e-10)


def test_tsls_underidentified(rng):
    with pytest.raises(EstimationError):
        tsls(rng.standard_normal(20), rng.standard_normal((20, 2)), rng.standard_normal(20))


def test_weak_instrument_flagged(rng):
    n = 300
    z = rng.standard_normal(n)
    x = rng.standard_normal(n)
    iv = tsls(x + rng.standard_normal(n), x, z, np.ones((n, 1)))
    assert iv.weak
    assert iv.effective_f >= 0


def test_effective_f_null_and_multi(rng):
    n = 400
    z = rng.standard_normal(n)
    g = rng.standard_normal(n)
    g = g - z * (z @ g) / (z @ z)
    fs = ols(g, z[:, None], bandwidth=0)
    stat, _ = effective_f(fs, [0])
    assert stat < 1e-20
    with pytest.raises(UnsupportedConfigurationError):
        effective_f([fs, fs], [0])


def test_critical_values_match_table():
    for k, value in SIMPLIFIED_CRITICAL_VALUES.items():
        assert _mop_critical(k) == pytest.approx(value, abs=1e-3)
    assert _mop_critical(1) == pytest.approx(23.109, abs=1e-3)


def test_kfold_examples():
    assert [f.size for f in kfold_splits(10, 5)] == [2] * 5
    assert sorted(f.size for f in kfold_splits(11, 5)) == [2, 2, 2, 2, 3]
    with pytest.raises(DomainError):
        kfold_splits(5, 1)
    with pytest.raises(DomainError):
        kfold_splits(5, 6)


@given(st.integers(2, 200), st.data(), st.booleans())
def test_kfold_partition(n, data, contiguous):
    k = data.draw(st.integers(2, n))
    folds = kfold_splits(n, k, contiguous=contiguous, seed=1)
    allidx = np.concatenate(folds)
    assert np.array_equal(np.sort(allidx), np.arange(n))
    sizes = [f.size for f in folds]
    assert max(sizes) - min(sizes) <= 1
    if contiguous:
        assert all(np.all(np.diff(f) == 1) for f in folds if f.size > 1)
