"""Structural spending shocks: timing, sign and narrative sign restrictions."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
from scipy.stats import invwishart

from .data import Dataset, QuarterIndex, read_series, standardize_shock, write_series
from .errors import DomainError, EstimationError, IdentificationError

log = logging.getLogger(__name__)

VAR_VARIABLES = ("output", "spending", "tax", "debt")
DEFAULT_DRAWS = 50_000
SIGN_HORIZON = 4
CHUNK = 500
MAX_REDRAWS = 100


@dataclass(frozen=True)
class ShockSeries:
    """A standardized shock series on a quarterly index."""

    values: np.ndarray
    start: QuarterIndex
    name: str = "shock"
    stats: dict = field(default_factory=dict, compare=False)

    def __len__(self):
        return self.values.size

    def attach(self, dataset: Dataset, name: str | None = None) -> Dataset:
        return dataset.with_series(name or self.name, self.values, start=self.start)

    def write(self, path) -> None:
        write_series(path, self.start, self.values, self.name)

    @classmethod
    def read(cls, path) -> "ShockSeries":
        start, values, name = read_series(path)
        ok = np.flatnonzero(np.isfinite(values))
        return cls(values[ok[0]:ok[-1] + 1], start + int(ok[0]), name)


def _var_matrices(dataset: Dataset, variables: Sequence[str], lags: int):
    for v in variables:
        if v not in dataset:
            raise DomainError(f"VAR variable {v!r} not in dataset")
    lo, hi = dataset.valid_range(variables)
    Y = np.column_stack([dataset[v][lo:hi + 1] for v in variables])
    T, n = Y.shape
    if T - lags <= n * lags + 12:
        raise EstimationError(
            f"sample of {T} quarters too short for a {n}-variable VAR({lags})")
    X = np.hstack([np.ones((T - lags, 1))] + [Y[lags - j:T - j] for j in range(1, lags + 1)])
    return Y[lags:], X, dataset.start + (lo + lags)


def lag_matrices(B: np.ndarray, n: int, lags: int) -> np.ndarray:
    """Stack the VAR lag matrices ``A_1..A_p`` (shape ``p x n x n``) from ``B``."""
    return np.stack([B[1 + j * n:1 + (j + 1) * n].T for j in range(lags)])


def impulse_responses(A: np.ndarray, impact: np.ndarray, H: int) -> np.ndarray:
    """MA coefficients times impact, ``[h, variable, shock]`` for ``h < H``."""
    p, n, _ = A.shape
    psi = [np.eye(n)]
    for h in range(1, H):
        acc = np.zeros((n, n))
        for j in range(min(h, p)):
            acc += A[j] @ psi[h - 1 - j]
        psi.append(acc)
    return np.stack(psi) @ impact


@dataclass
class VarModel:
    """Reduced-form VAR with posterior draws ``(B, Sigma)``.

    ``B`` has rows ``[const, y_{t-1}, ..., y_{t-p}]`` and one column per
    variable. The arrays ``B_draws`` and ``sigma_draws`` are stacked over
    draws.
    """

    variables: tuple[str, ...]
    lags: int
    Y: np.ndarray
    X: np.ndarray
    start: QuarterIndex
    B_hat: np.ndarray
    sigma_hat: np.ndarray
    B_draws: np.ndarray
    sigma_draws: np.ndarray
    seed: int = 0
    n_redrawn: int = 0
    spending: str = "spending"

    @property
    def n_draws(self) -> int:
        return self.B_draws.shape[0]

    @property
    def nobs(self) -> int:
        return self.Y.shape[0]

    @property
    def spending_index(self) -> int:
        return self.variables.index(self.spending)

    def residuals(self, i: int) -> np.ndarray:
        return self.Y - self.X @ self.B_draws[i]

    def position(self, quarter) -> int:
        q = quarter if isinstance(quarter, QuarterIndex) else QuarterIndex.parse(quarter)
        pos = q - self.start
        if not 0 <= pos < self.nobs:
            raise DomainError(f"{q} outside the VAR residual sample {self.start}..{self.start + (self.nobs - 1)}")
        return pos


def _posterior_draw(B_hat, xtx_chol, S, df, rng):
    n = S.shape[0]
    sigma = np.atleast_2d(invwishart.rvs(df=df, scale=S, random_state=rng))
    sigma = 0.5 * (sigma + sigma.T)
    Ls = np.linalg.cholesky(sigma)
    B = B_hat + xtx_chol @ rng.standard_normal((B_hat.shape[0], n)) @ Ls.T
    return B, sigma


def estimate_bvar(dataset: Dataset, variables: Sequence[str] = VAR_VARIABLES, lags: int = 4,
                  n_draws: int = DEFAULT_DRAWS, seed: int = 0, spending: str = "spending") -> VarModel:
    """Posterior draws for a VAR under a diffuse normal-inverse-Wishart prior.

    ``Sigma | Y ~ IW(U'U, T - k)`` and ``vec(B) | Sigma, Y ~ N(vec(B_ols),
    Sigma (x) (X'X)^-1)``. Draw ``i`` uses its own generator seeded with
    ``(seed, 0, i)``, so the sequence does not depend on how draws are
    batched. A draw whose covariance is not positive definite is replaced
    and counted in ``n_redrawn``.
    """
    variables = tuple(variables)
    if spending not in variables:
        raise DomainError(f"spending variable {spending!r} not among {variables}")
    Y, X, start = _var_matrices(dataset, variables, lags)
    T, k = X.shape
    n = Y.shape[1]
    B_hat, *_ = np.linalg.lstsq(X, Y, rcond=None)
    U = Y - X @ B_hat
    S = U.T @ U
    sigma_hat = S / (T - k)
    xtx_chol = np.linalg.cholesky(np.linalg.inv(X.T @ X))
    df = T - k
    B_draws = np.empty((n_draws, k, n))
    sigma_draws = np.empty((n_draws, n, n))
    redrawn = 0
    for i in range(n_draws):
        for attempt in range(MAX_REDRAWS):
            rng = np.random.default_rng([seed, 0, i, attempt])
            try:
                B_draws[i], sigma_draws[i] = _posterior_draw(B_hat, xtx_chol, S, df, rng)
                break
            except np.linalg.LinAlgError:
                redrawn += 1
        else:
            raise EstimationError(f"draw {i}: no positive definite covariance after {MAX_REDRAWS} attempts")
    if redrawn:
        log.info("redrew %d non positive definite covariance draws", redrawn)
    return VarModel(variables, lags, Y, X, start, B_hat, sigma_hat, B_draws, sigma_draws,
                    seed, redrawn, spending)


def timing_shocks(dataset: Dataset, variables: Sequence[str] = VAR_VARIABLES, lags: int = 4,
                  spending: str = "spending", name: str = "timing") -> ShockSeries:
    """Recursive identification with spending ordered first.

    The spending shock is the first element of ``L^-1 u_t`` where ``L`` is
    the lower Cholesky factor of the OLS innovation covariance.
    """
    variables = tuple(variables)
    if spending not in variables:
        raise DomainError(f"spending variable {spending!r} not among {variables}")
    ordered = (spending,) + tuple(v for v in variables if v != spending)
    Y, X, start = _var_matrices(dataset, ordered, lags)
    B, *_ = np.linalg.lstsq(X, Y, rcond=None)
    U = Y - X @ B
    sigma = U.T @ U / (X.shape[0] - X.shape[1])
    try:
        L = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise EstimationError("innovation covariance is singular") from None
    eps = sla.solve_triangular(L, U.T, lower=True)
    return ShockSeries(standardize_shock(eps[0]), start, name)


@dataclass
class StructuralDraw:
    """One rotated candidate: ``u_t = impact @ eps_t``.

    ``shock`` is the column of ``impact`` taken to be the spending shock
    (``None`` until a sign check assigns it).
    """

    impact: np.ndarray
    irf: np.ndarray
    shocks: np.ndarray
    residuals: np.ndarray
    spending_index: int
    shock: int | None = None

    @property
    def spending_irf(self) -> np.ndarray:
        """Spending responses ``[h, shock]``."""
        return self.irf[:, self.spending_index, :]

    def standardized(self, j: int | None = None) -> np.ndarray:
        j = self.shock if j is None else j
        return standardize_shock(self.shocks[:, j])


def random_rotation(n: int, rng) -> np.ndarray:
    """Haar-distributed orthogonal matrix (QR of a Gaussian matrix, ``diag(R) > 0``)."""
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    return Q * np.sign(np.diag(R))


def structural_draw(model: VarModel, i: int, Q: np.ndarray, horizon: int = SIGN_HORIZON) -> StructuralDraw:
    """Candidate structural model for posterior draw ``i`` and rotation ``Q``.

    Columns keep the signs produced by the rotation. A column that passes
    the sign check has a positive impact on spending, which is the only
    sign normalization required.
    """
    n = len(model.variables)
    g = model.spending_index
    impact = np.linalg.cholesky(model.sigma_draws[i]) @ Q
    A = lag_matrices(model.B_draws[i], n, model.lags)
    irf = impulse_responses(A, impact, max(horizon, 1))
    u = model.residuals(i)
    eps = np.linalg.solve(impact, u.T).T
    return StructuralDraw(impact, irf, eps, u, g)


def sign_candidates(draw: StructuralDraw, horizon_quarters: int = SIGN_HORIZON) -> np.ndarray:
    """Columns whose spending response is positive for ``h = 0..horizon_quarters-1``."""
    if draw.irf.shape[0] < horizon_quarters:
        raise DomainError(f"IRFs computed to {draw.irf.shape[0] - 1}, need {horizon_quarters - 1}")
    return np.flatnonzero(np.all(draw.spending_irf[:horizon_quarters] > 0, axis=0))


def check_sign(draw: StructuralDraw, horizon_quarters: int = SIGN_HORIZON, column_rule: str = "unique") -> bool:
    """Accept iff exactly one column passes the spending sign restriction.

    With ``column_rule="first"`` ambiguous rotations keep the first passing
    column instead of being rejected. On acceptance ``draw.shock`` is set.
    """
    cols = sign_candidates(draw, horizon_quarters)
    if cols.size == 0 or (cols.size > 1 and column_rule == "unique"):
        return False
    draw.shock = int(cols[0])
    return True


@dataclass(frozen=True)
class NarrativeRestriction:
    """Sign of the spending shock at ``date``, optionally with dominance."""

    date: QuarterIndex
    shock_sign: int = 1
    dominance: bool = True

    def __post_init__(self):
        if not isinstance(self.date, QuarterIndex):
            object.__setattr__(self, "date", QuarterIndex.parse(str(self.date)))
        sign = {"+": 1, "-": -1}.get(self.shock_sign, self.shock_sign)
        if sign not in (1, -1):
            raise DomainError(f"shock_sign must be +1 or -1, got {self.shock_sign!r}")
        object.__setattr__(self, "shock_sign", int(sign))


DEFAULT_RESTRICTIONS = (NarrativeRestriction(QuarterIndex(1917, 2)),
                        NarrativeRestriction(QuarterIndex(1941, 4)))


def historical_decomposition(draw: StructuralDraw, t: int) -> np.ndarray:
    """Contributions ``impact[g, j] * eps_j,t`` to the spending forecast error at row ``t``.

    They sum to the reduced-form spending innovation ``u_g,t``.
    """
    g = draw.spending_index
    return draw.impact[g] * draw.shocks[t]


def check_narrative(draw: StructuralDraw, restrictions: Sequence[NarrativeRestriction],
                    positions: Sequence[int]) -> bool:
    """Sign and dominance checks on the assigned spending shock at restricted dates.

    ``positions`` are the residual-sample rows of the restriction dates
    (see :meth:`VarModel.position`).
    """
    j = draw.shock
    if j is None:
        return False
    for r, t in zip(restrictions, positions):
        if not r.shock_sign * draw.shocks[t, j] > 0:
            return False
        if r.dominance:
            c = historical_decomposition(draw, t)
            if not abs(c[j]) > abs(c.sum() - c[j]):
                return False
    return True


def _process_chunk(model, idx, restrictions, positions, seed, horizon, column_rule):
    n = len(model.variables)
    sign_ok, narr_ok, ambiguous, series = [], [], 0, []
    for i in idx:
        rng = np.random.default_rng([seed, 1, int(i)])
        draw = structural_draw(model, int(i), random_rotation(n, rng), horizon)
        cols = sign_candidates(draw, horizon)
        if cols.size > 1:
            ambiguous += 1
        if not check_sign(draw, horizon, column_rule):
            continue
        sign_ok.append(int(i))
        if check_narrative(draw, restrictions, positions):
            narr_ok.append(int(i))
            series.append(draw.standardized())
    return sign_ok, narr_ok, ambiguous, series


def narrative_shocks(model: VarModel, restrictions: Sequence[NarrativeRestriction] = DEFAULT_RESTRICTIONS,
                     seed: int | None = None, threads: int = 1, horizon_quarters: int = SIGN_HORIZON,
                     column_rule: str = "unique", name: str = "narrative") -> ShockSeries:
    """Median spending shock over draws passing sign then narrative checks.

    Each posterior draw gets one Haar rotation from a generator seeded with
    ``(seed, 1, i)``. Draws are processed in fixed chunks whose results are
    combined in draw order, so output does not depend on ``threads``.

    Raises
    ------
    IdentificationError
        If no draw is accepted; ``stats`` carries the acceptance counts.
    """
    seed = model.seed if seed is None else seed
    restrictions = tuple(restrictions)
    positions = [model.position(r.date) for r in restrictions]
    chunks = [np.arange(s, min(s + CHUNK, model.n_draws)) for s in range(0, model.n_draws, CHUNK)]

    def work(idx):
        return _process_chunk(model, idx, restrictions, positions, seed, horizon_quarters, column_rule)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    sign_ok = [i for p in parts for i in p[0]]
    narr_ok = [i for p in parts for i in p[1]]
    series = [s for p in parts for s in p[3]]
    stats = {
        "draws": model.n_draws,
        "redrawn": model.n_redrawn,
        "ambiguous": sum(p[2] for p in parts),
        "sign_accepted": len(sign_ok),
        "narrative_accepted": len(narr_ok),
    }
    assert set(narr_ok) <= set(sign_ok), "narrative-accepted draws must pass the sign check"
    log.info("identification: %s", stats)
    if not series:
        raise IdentificationError(f"no draw satisfied the restrictions ({stats})", stats)
    stats["restriction_rows"] = positions
    stats["accepted_draws"] = narr_ok
    stats["sign_accepted_draws"] = sign_ok
    med = np.median(np.vstack(series), axis=0)
    return ShockSeries(standardize_shock(med), model.start, name, stats)
