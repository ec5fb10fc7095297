"""Least squares, HAC covariance, two-stage least squares and weak-IV diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
from scipy.stats import ncx2

from .errors import DomainError, EstimationError, SingularDesignError, UnsupportedConfigurationError

RANK_TOL = 1e-10

# Montiel Olea-Pflueger simplified critical values for the effective F
# (TSLS, worst-case bias 10% of the OLS benchmark, 5% size), keyed by the
# number of instruments. They follow from ``_mop_critical`` with K_eff = K.
SIMPLIFIED_CRITICAL_VALUES = {1: 23.1085, 2: 19.2943}


@dataclass
class RegressionResult:
    coefficients: np.ndarray
    residuals: np.ndarray
    covariance: np.ndarray
    nobs: int
    dof: int
    names: list[str] = field(default_factory=list)
    exog: np.ndarray | None = field(default=None, repr=False)
    bandwidth: int | None = None

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    @property
    def tvalues(self) -> np.ndarray:
        return self.coefficients / self.se

    @property
    def fitted(self) -> np.ndarray:
        return self.exog @ self.coefficients

    def __getitem__(self, name: str) -> float:
        return float(self.coefficients[self.names.index(name)])


@dataclass
class IVResult:
    second_stage: RegressionResult
    first_stage: list[RegressionResult]
    effective_f: float
    effective_f_critical: float

    @property
    def weak(self) -> bool:
        """True when the effective F does not exceed its critical value."""
        return not self.effective_f > self.effective_f_critical

    @property
    def coefficients(self) -> np.ndarray:
        return self.second_stage.coefficients


def _names(k, names):
    if names is None:
        return [f"x{j}" for j in range(k)]
    names = list(names)
    if len(names) != k:
        raise ValueError(f"{len(names)} names for {k} columns")
    return names


def _check_xy(y, X):
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if y.ndim != 1 or X.shape[0] != y.size:
        raise ValueError(f"incompatible shapes y{y.shape}, X{X.shape}")
    return y, X


def _pivoted_qr(X, names):
    Q, R, piv = sla.qr(X, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    tol = RANK_TOL * (d[0] if d.size else 0.0)
    rank = int(np.sum(d > tol))
    if rank < X.shape[1]:
        bad = [names[j] for j in sorted(piv[rank:])]
        raise SingularDesignError(
            f"design is rank deficient (rank {rank} < {X.shape[1]}); dependent columns: {bad}", bad)
    return Q, R, piv


def ols(y, X, names: Sequence[str] | None = None, bandwidth: int | None = None) -> RegressionResult:
    """Ordinary least squares through a pivoted QR factorisation.

    ``bandwidth=None`` gives the classical covariance ``s^2 (X'X)^-1``; an
    integer gives the Newey-West covariance with that many lags.

    Raises
    ------
    SingularDesignError
        If ``X`` has numerical rank below its column count (tolerance
        ``1e-10`` times the largest pivot); the error names the columns.
    """
    y, X = _check_xy(y, X)
    n, k = X.shape
    names = _names(k, names)
    if n <= k:
        raise EstimationError(f"{n} observations for {k} regressors")
    Q, R, piv = _pivoted_qr(X, names)
    coef = np.empty(k)
    coef[piv] = sla.solve_triangular(R, Q.T @ y)
    resid = y - X @ coef
    if bandwidth is None:
        Rinv = sla.solve_triangular(R, np.eye(k))
        xtx_inv = np.empty((k, k))
        xtx_inv[np.ix_(piv, piv)] = Rinv @ Rinv.T
        cov = (resid @ resid / (n - k)) * xtx_inv
    else:
        cov = newey_west(X, resid, bandwidth)
    return RegressionResult(coef, resid, cov, n, n - k, names, X, bandwidth)


def hac_meat(scores, bandwidth: int) -> np.ndarray:
    """Bartlett-weighted long-run covariance of the rows of ``scores`` (unscaled)."""
    s = np.asarray(scores, dtype=float)
    if s.ndim == 1:
        s = s[:, None]
    S = s.T @ s
    for lag in range(1, bandwidth + 1):
        w = 1.0 - lag / (bandwidth + 1.0)
        G = s[lag:].T @ s[:-lag]
        S += w * (G + G.T)
    return S


def newey_west(X, residuals, bandwidth: int) -> np.ndarray:
    """Newey-West HAC covariance ``(X'X)^-1 S (X'X)^-1``.

    ``S`` sums the score autocovariances up to ``bandwidth`` lags with
    Bartlett weights ``1 - l/(bandwidth+1)``. No small-sample correction is
    applied, so ``bandwidth=0`` reproduces White's HC0 estimator.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    u = np.asarray(residuals, dtype=float)
    bandwidth = int(bandwidth)
    if bandwidth < 0:
        raise DomainError("bandwidth must be non-negative")
    if bandwidth >= X.shape[0]:
        raise DomainError(f"bandwidth {bandwidth} must be smaller than nobs {X.shape[0]}")
    bread = sla.pinvh(X.T @ X)
    cov = bread @ hac_meat(X * u[:, None], bandwidth) @ bread
    return 0.5 * (cov + cov.T)


def _as_2d(a, n, what):
    if a is None:
        return np.empty((n, 0))
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.shape[0] != n:
        raise ValueError(f"{what} has {a.shape[0]} rows, expected {n}")
    return a


def tsls(y, endogenous, instruments, exogenous=None, bandwidth: int = 0,
         names: Sequence[str] | None = None) -> IVResult:
    """Two-stage least squares with HAC inference.

    Coefficients are ordered ``[endogenous..., exogenous...]``. The
    covariance is Newey-West on the second-stage scores built from the
    first-stage fitted values and the structural residuals
    ``y - [endog, exog] b``. When there is a single endogenous regressor the
    effective F statistic of the excluded instruments is attached.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    G = _as_2d(endogenous, n, "endogenous")
    Z = _as_2d(instruments, n, "instruments")
    W = _as_2d(exogenous, n, "exogenous")
    p, q, m = G.shape[1], Z.shape[1], W.shape[1]
    if q < p:
        raise EstimationError(f"under-identified: {q} instruments for {p} endogenous regressors")
    names = _names(p + m, names)
    first_names = [f"iv{j}" for j in range(q)] + names[p:]
    first_design = np.hstack([Z, W])
    first = [ols(G[:, j], first_design, first_names, bandwidth=bandwidth) for j in range(p)]
    Ghat = np.column_stack([f.fitted for f in first]) if p else G
    Xhat = np.hstack([Ghat, W])
    _pivoted_qr(Xhat, names)
    coef, *_ = np.linalg.lstsq(Xhat, y, rcond=None)
    X = np.hstack([G, W])
    resid = y - X @ coef
    cov = newey_west(Xhat, resid, bandwidth)
    second = RegressionResult(coef, resid, cov, n, n - p - m, names, X, bandwidth)
    if p == 1:
        stat, crit = effective_f(first[0], list(range(q)))
    else:
        stat, crit = np.nan, np.nan
    return IVResult(second, first, stat, crit)


def _mop_critical(k_eff, tau=0.10, alpha=0.05):
    x = 1.0 / tau
    return float(ncx2.ppf(1.0 - alpha, k_eff, x * k_eff) / k_eff)


def effective_f(first_stage, instrument_block, hac_cov=None, tau: float = 0.10,
                alpha: float = 0.05) -> tuple[float, float]:
    """Montiel Olea-Pflueger effective first-stage F and its critical value.

    Parameters
    ----------
    first_stage : RegressionResult
        Regression of the single endogenous regressor on instruments and
        exogenous controls (``exog`` must be stored).
    instrument_block : sequence of int
        Columns of ``first_stage.exog`` holding the excluded instruments.
    hac_cov : ndarray, optional
        Robust covariance of the first-stage coefficients; defaults to
        ``first_stage.covariance``.

    Returns
    -------
    (statistic, critical)
        ``statistic - critical > 0`` indicates a relevant instrument at the
        ``tau`` worst-case bias threshold.
    """
    if isinstance(first_stage, (list, tuple)):
        if len(first_stage) != 1:
            raise UnsupportedConfigurationError(
                "effective F is only defined for a single endogenous regressor")
        first_stage = first_stage[0]
    idx = np.asarray(list(instrument_block), dtype=int)
    X = first_stage.exog
    V = np.asarray(first_stage.covariance if hac_cov is None else hac_cov)
    if V.shape[0] == X.shape[1]:
        V = V[np.ix_(idx, idx)]
    other = np.setdiff1d(np.arange(X.shape[1]), idx)
    Z = X[:, idx]
    if other.size:
        Wo = X[:, other]
        Z = Z - Wo @ np.linalg.lstsq(Wo, Z, rcond=None)[0]
    Q = Z.T @ Z
    pi = first_stage.coefficients[idx]
    denom = float(np.trace(V @ Q))
    stat = float(pi @ Q @ pi) / denom if denom > 0 else np.nan

    w, U = np.linalg.eigh(Q)
    Qh = (U * np.sqrt(np.clip(w, 0, None))) @ U.T
    S = Qh @ V @ Qh
    x = 1.0 / tau
    tr = np.trace(S)
    lam = np.linalg.eigvalsh(0.5 * (S + S.T))[-1]
    k_eff = tr ** 2 * (1 + 2 * x) / (np.trace(S.T @ S) + 2 * x * tr * lam)
    return stat, _mop_critical(k_eff, tau, alpha)


def kfold_splits(nobs: int, k: int, contiguous: bool = True, seed=None) -> list[np.ndarray]:
    """Partition ``range(nobs)`` into ``k`` folds.

    Fold sizes differ by at most one (the first ``nobs % k`` folds get the
    extra observation). With ``contiguous=False`` observations are shuffled
    first using ``seed``.
    """
    if not 2 <= k <= nobs:
        raise DomainError(f"need 2 <= k <= nobs, got k={k}, nobs={nobs}")
    order = np.arange(nobs)
    if not contiguous:
        order = np.random.default_rng(seed).permutation(nobs)
    sizes = np.full(k, nobs // k)
    sizes[: nobs % k] += 1
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    return [np.sort(order[bounds[i]:bounds[i + 1]]) for i in range(k)]
