"""Smooth local projections.

Every local-projection coefficient is expanded in a cubic B-spline basis of
the horizon, all horizons are stacked into one regression, and the shock
coefficients are shrunk toward a low-order polynomial with an r-th order
difference penalty. The shrinkage strength is chosen by k-fold
cross-validation over contiguous blocks of quarters.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.interpolate import BSpline

from .data import Dataset
from .errors import DomainError
from .lp import IrfResult, LpSpec, _assemble, _eval_labels, build_design, DegenerateStateWarning
from .regression import hac_meat, kfold_splits

DEGREE = 3
RCOND = 1e-11


@dataclass(frozen=True)
class BasisSet:
    """Cubic B-spline basis evaluated at the integer horizons ``0..H``.

    ``matrix[h, k]`` is ``B_k(h)``. The ``K = H + 2`` splines sit on
    equidistant knots with ``H - 1`` interior segments spanning ``[0, H]``,
    so the basis is a partition of unity at every horizon.
    """

    H: int
    knots: np.ndarray
    matrix: np.ndarray
    degree: int = DEGREE

    @property
    def K(self) -> int:
        return self.matrix.shape[1]

    @property
    def horizons(self) -> np.ndarray:
        return np.arange(self.H + 1)

    def evaluate(self, h) -> np.ndarray:
        h = np.atleast_1d(np.asarray(h, dtype=float))
        return BSpline.design_matrix(h, self.knots, self.degree, extrapolate=True).toarray()


def bspline_basis(H: int) -> BasisSet:
    """Cubic B-spline basis with ``K = H + 2`` functions for horizons ``0..H``."""
    if H < 2:
        raise DomainError(f"a cubic basis with K = H + 2 functions needs H >= 2, got {H}")
    segments = H - 1
    dx = H / segments
    knots = dx * np.arange(-DEGREE, segments + DEGREE + 1)
    B = BSpline.design_matrix(np.arange(H + 1, dtype=float), knots, DEGREE, extrapolate=True).toarray()
    return BasisSet(H, knots, B)


@dataclass(frozen=True)
class PenaltyMatrix:
    """r-th order difference penalty ``D_r' D_r`` for one coefficient block."""

    r: int
    D: np.ndarray

    @property
    def block(self) -> np.ndarray:
        return self.D.T @ self.D

    @property
    def K(self) -> int:
        return self.D.shape[1]

    def embed(self, n_params: int, starts) -> np.ndarray:
        """Full ``n_params`` square penalty with the block at each offset in ``starts``."""
        P = np.zeros((n_params, n_params))
        for s in starts:
            P[s:s + self.K, s:s + self.K] = self.block
        return P


def difference_penalty(K: int, r: int = 3) -> PenaltyMatrix:
    if not 1 <= r < K:
        raise DomainError(f"need 1 <= r < K, got r={r}, K={K}")
    return PenaltyMatrix(r, np.diff(np.eye(K), n=r, axis=0))


@dataclass
class StackedSystem:
    """All horizon regressions stacked, with basis-expanded columns.

    The shock column of each state block is expanded into ``K`` columns
    ``shock * B_k(h)``; other design columns are either expanded the same
    way or get one coefficient per horizon (see :func:`stack_system`). ``penalized[block]`` is the
    slice of the spline coefficients of that block. ``row_time`` (dataset position of ``t``) and ``row_horizon``
    identify where each stacked row came from.
    """

    Z: np.ndarray
    X: np.ndarray
    P: np.ndarray
    penalized: dict[str, slice]
    row_time: np.ndarray
    row_horizon: np.ndarray
    basis: BasisSet
    penalty: PenaltyMatrix
    blocks: list[str]
    base_labels: list[str]
    spec: LpSpec = field(repr=False, default=None)

    @property
    def nobs(self) -> np.ndarray:
        return np.bincount(self.row_horizon, minlength=self.basis.H + 1)


def stack_system(dataset: Dataset, spec: LpSpec, basis: BasisSet | None = None, r: int = 3,
                 expand: str = "shock") -> StackedSystem:
    """Stack the horizon ``0..H`` projections of ``spec`` into one system.

    ``expand="all"`` expands every design column in the basis (``K`` columns
    each). The default ``"shock"`` expands only the shock columns and gives
    the unpenalised columns one coefficient per horizon. Because the basis
    spans every profile over ``0..H`` both layouts yield the same fitted
    values and IRFs for any ``mu``, but the default has no null space in
    the unpenalised blocks, which keeps cross-validation fast.
    """
    if expand not in ("shock", "all"):
        raise DomainError(f"expand must be 'shock' or 'all', got {expand!r}")
    if basis is None:
        basis = bspline_basis(spec.horizon_max)
    if basis.H != spec.horizon_max:
        raise DomainError(f"basis built for H={basis.H}, spec has horizon_max={spec.horizon_max}")
    designs = [build_design(dataset, spec, h) for h in spec.horizons]
    active = [b for b in designs[0].blocks if all(b in d.active_blocks() for d in designs)]
    if len(active) < len(designs[0].blocks):
        warnings.warn(f"state block(s) {sorted(set(designs[0].blocks) - set(active))} are degenerate "
                      f"at some horizon and were dropped", DegenerateStateWarning, stacklevel=2)
    designs = [d.restrict(active) for d in designs]
    K, nh = basis.K, spec.horizon_max + 1
    d0 = designs[0]
    shock_cols = {d0.column(b, "shock"): b for b in active}
    # shock columns get K spline coefficients, every other column one coefficient per horizon
    spline = [expand == "all" or j in shock_cols for j in range(d0.X.shape[1])]
    widths = [K if sp else nh for sp in spline]
    offsets = np.concatenate([[0], np.cumsum(widths)])
    X = np.zeros((sum(d.rows.size for d in designs), offsets[-1]))
    r0 = 0
    for d in designs:
        rows = slice(r0, r0 + d.rows.size)
        for j in range(d.X.shape[1]):
            if spline[j]:
                X[rows, offsets[j]:offsets[j + 1]] = d.X[:, j:j + 1] * basis.matrix[d.horizon][None, :]
            else:
                X[rows, offsets[j] + d.horizon] = d.X[:, j]
        r0 += d.rows.size
    Z = np.concatenate([d.y for d in designs])
    row_time = np.concatenate([d.rows for d in designs])
    row_h = np.concatenate([np.full(d.rows.size, d.horizon) for d in designs])
    penalty = difference_penalty(K, r)
    penalized = {b: slice(int(offsets[j]), int(offsets[j + 1])) for j, b in shock_cols.items()}
    P = penalty.embed(X.shape[1], [sl.start for sl in penalized.values()])
    return StackedSystem(Z, X, P, penalized, row_time, row_h, basis, penalty, active,
                         d0.base_labels, spec)


def _penalty_root(P):
    w, U = np.linalg.eigh(0.5 * (P + P.T))
    keep = w > RCOND * max(w.max(initial=0.0), 1.0)
    return (U[:, keep] * np.sqrt(w[keep])).T


def _reduce(X, Z):
    """``(R, c)`` with ``||Z - X theta||^2 = ||c - R theta||^2 + const``."""
    Q, R = np.linalg.qr(X, mode="reduced")
    return R, Q.T @ Z


def _solve_reduced(R, c, L, mu):
    if mu > 0 and L.shape[0]:
        A = np.vstack([R, np.sqrt(mu) * L])
        b = np.concatenate([c, np.zeros(L.shape[0])])
    else:
        A, b = R, c
    theta, *_ = sla.lstsq(A, b, cond=RCOND, lapack_driver="gelsd")
    return theta


def _solve_normal(RtR, Rtc, P, mu):
    # fast path for CV; None when the normal matrix is not safely positive definite
    if not mu > 0:
        return None
    M = RtR + mu * P
    try:
        cf = sla.cho_factor(0.5 * (M + M.T), check_finite=False)
    except np.linalg.LinAlgError:
        return None
    d = np.diag(cf[0]) ** 2
    if d.min() <= 1e3 * np.finfo(float).eps * d.max():
        return None
    return sla.cho_solve(cf, Rtc, check_finite=False)


def penalized_ls(Z, X, P, mu: float) -> np.ndarray:
    """Minimise ``||Z - X theta||^2 + mu * theta' P theta``.

    The minimum-norm minimiser is returned, which matters at ``mu = 0`` (the
    basis over-parameterises the horizon profile) and for unpenalised blocks.
    """
    if mu < 0:
        raise DomainError("shrinkage mu must be non-negative")
    Z = np.asarray(Z, dtype=float)
    X = np.asarray(X, dtype=float)
    R, c = _reduce(X, Z)
    return _solve_reduced(R, c, _penalty_root(np.asarray(P, dtype=float)), mu)


def default_mu_grid(X, P, n: int = 25) -> np.ndarray:
    """25 log-spaced values over ``[1e-4, 1e6]`` scaled by ``||X'X|| / ||P||``."""
    scale = np.linalg.norm(X.T @ X) / max(np.linalg.norm(P), np.finfo(float).tiny)
    return scale * np.logspace(-4, 6, n)


def cross_validate(Z, X, P, mu_grid, k: int = 5, groups=None, contiguous: bool = True,
                   seed=None) -> tuple[float, list[tuple[float, float]]]:
    """Pick ``mu`` by k-fold cross-validated squared prediction error.

    ``groups`` labels each row with its originating quarter; folds are built
    over quarters so all horizons of one quarter fall in the same fold.
    Among (numerical) ties the largest ``mu`` wins.

    Returns ``(mu_star, [(mu, loss), ...])``.
    """
    Z = np.asarray(Z, dtype=float)
    X = np.asarray(X, dtype=float)
    grid = np.atleast_1d(np.asarray(mu_grid, dtype=float))
    if grid.size == 0:
        raise DomainError("mu_grid is empty")
    groups = np.arange(Z.size) if groups is None else np.asarray(groups)
    labels, inverse = np.unique(groups, return_inverse=True)
    folds = kfold_splits(labels.size, k, contiguous=contiguous, seed=seed)
    P = np.asarray(P, dtype=float)
    L = _penalty_root(P)
    loss = np.zeros(grid.size)
    for fold in folds:
        test = np.isin(inverse, fold)
        R, c = _reduce(X[~test], Z[~test])
        RtR, Rtc = R.T @ R, R.T @ c
        for i, mu in enumerate(grid):
            theta = _solve_normal(RtR, Rtc, P, mu)
            if theta is None:
                theta = _solve_reduced(R, c, L, mu)
            resid = Z[test] - X[test] @ theta
            loss[i] += resid @ resid
    tol = 1e-9 * loss.min() + 1e-12 * (Z @ Z)
    best = int(np.flatnonzero(loss <= loss.min() + tol).max())
    return float(grid[best]), [(float(m), float(v)) for m, v in zip(grid, loss)]


@dataclass
class SlpFit:
    theta: np.ndarray
    mu: float
    irf: dict[str, np.ndarray]
    system: StackedSystem = field(repr=False)
    cv_curve: list[tuple[float, float]] | None = None


def fit_slp(system: StackedSystem, mu: float | None = None, mu_grid=None, folds: int = 5,
            contiguous: bool = True, seed=None) -> SlpFit:
    """Estimate a stacked system; ``mu=None`` selects the shrinkage by cross-validation."""
    curve = None
    if mu is None:
        grid = default_mu_grid(system.X, system.P) if mu_grid is None else mu_grid
        mu, curve = cross_validate(system.Z, system.X, system.P, grid, folds,
                                   groups=system.row_time, contiguous=contiguous, seed=seed)
    theta = penalized_ls(system.Z, system.X, system.P, mu)
    B = system.basis.matrix
    irf = {b: B @ theta[s] for b, s in system.penalized.items()}
    return SlpFit(theta, float(mu), irf, system, curve)


def _time_hac(scores, row_time, bandwidth):
    lo = row_time.min()
    grid = np.zeros((row_time.max() - lo + 1, scores.shape[1]))
    np.add.at(grid, row_time - lo, scores)
    bandwidth = min(bandwidth, grid.shape[0] - 1)
    return hac_meat(grid, bandwidth)


def slp_irf(fit: SlpFit, basis: BasisSet | None = None, eval_points=None,
            ci_level: float | None = None) -> IrfResult:
    """IRFs ``beta_h = sum_k b_k B_k(h)`` with penalised-sandwich HAC errors.

    The covariance of ``theta`` is ``M^+ S M^+`` with ``M = X'X + mu P`` and
    ``S`` the Bartlett long-run covariance of the scores summed by quarter
    (bandwidth ``H + 1`` unless ``spec.hac_bandwidth`` is set).
    """
    system = fit.system
    spec = system.spec
    basis = system.basis if basis is None else basis
    X = system.X
    u = system.Z - X @ fit.theta
    M = X.T @ X + fit.mu * system.P
    Minv = sla.pinvh(0.5 * (M + M.T))
    bw = spec.horizon_max + 1 if spec.hac_bandwidth is None else int(spec.hac_bandwidth)
    meat = _time_hac(X * u[:, None], system.row_time, bw)
    V = Minv @ meat @ Minv
    blocks = list(system.penalized)
    per_h = []
    nobs = system.nobs
    for h in range(basis.H + 1):
        G = np.zeros((len(blocks), X.shape[1]))
        for i, b in enumerate(blocks):
            G[i, system.penalized[b]] = basis.matrix[h]
        per_h.append((blocks, G @ fit.theta, G @ V @ G.T, int(nobs[h])))
    pts = None
    if spec.kind == "continuous":
        pts = _eval_labels(spec.state, eval_points)
    return _assemble(per_h, np.arange(basis.H + 1), spec.kind,
                     spec.ci_level if ci_level is None else ci_level, eval_points=pts,
                     dependent=spec.dependent, method="slp", mu=fit.mu, cv_curve=fit.cv_curve)


def estimate_slp(dataset: Dataset, spec: LpSpec, r: int = 3, mu: float | None = None, mu_grid=None,
                 folds: int = 5, contiguous: bool = True, seed=None, eval_points=None,
                 expand: str = "shock") -> IrfResult:
    """Smooth-local-projection counterpart of :func:`fiscalstate.lp.estimate_lp`."""
    system = stack_system(dataset, spec, r=r, expand=expand)
    fit = fit_slp(system, mu=mu, mu_grid=mu_grid, folds=folds, contiguous=contiguous, seed=seed)
    return slp_irf(fit, eval_points=eval_points)
