"""Local projections: linear, two-state, two-state-variable and continuous-state IRFs,
LP-IV cumulative multipliers and cross-state difference tests."""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.stats import norm

from .data import Dataset, StateSeries
from .errors import EstimationError, FiscalStateError
from .regression import effective_f, ols, tsls

DEFAULT_CONTROLS = ("output", "spending", "tax", "debt")
REPORT_HORIZONS = (0, 4, 8, 12, 16)
STAR_LEVELS = ((0.01, "***"), (0.05, "**"), (0.10, "*"))
DEGENERATE_TOL = 1e-8
MIN_EXTRA_ROWS = 8


class DegenerateStateWarning(UserWarning):
    """A state block has (numerically) zero weight in the estimation sample."""


class ExtrapolationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class LpSpec:
    """Specification of one local-projection run.

    ``state`` holds weights already lagged to the shock date (see
    :func:`fiscalstate.data.build_state`). With ``second_state`` the model is
    the two-state-variable ("horse race") form. ``hac_bandwidth=None`` uses
    ``h + 1`` lags at horizon ``h``.
    """

    dependent: str
    shock: str = "shock"
    controls: tuple[str, ...] = DEFAULT_CONTROLS
    control_lags: int = 4
    horizon_max: int = 16
    state: StateSeries | None = None
    second_state: StateSeries | None = None
    ci_level: float = 0.90
    cumulative: bool = False
    hac_bandwidth: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "controls", tuple(self.controls))
        if self.horizon_max < 0:
            raise ValueError("horizon_max must be >= 0")
        if self.control_lags < 1:
            raise ValueError("control_lags must be >= 1")
        if not 0 < self.ci_level < 1:
            raise ValueError("ci_level must lie in (0, 1)")
        if self.second_state is not None and self.state is None:
            raise ValueError("second_state requires state")

    @property
    def kind(self) -> str:
        if self.state is None:
            return "linear"
        if self.second_state is not None:
            return "horse_race"
        if self.state.mode == "continuous":
            return "continuous"
        return "two_state"

    @property
    def horizons(self) -> np.ndarray:
        return np.arange(self.horizon_max + 1)

    def bandwidth(self, h: int) -> int:
        return h + 1 if self.hac_bandwidth is None else int(self.hac_bandwidth)


def state_blocks(dataset: Dataset, spec: LpSpec) -> list[tuple[str, np.ndarray]]:
    """Block labels and the per-quarter weight multiplying each block."""
    ones = np.ones(len(dataset))
    kind = spec.kind
    if kind == "linear":
        return [("linear", ones)]
    w = spec.state.aligned(dataset)
    if kind == "two_state":
        return [("A", w), ("B", 1.0 - w)]
    if kind == "continuous":
        return [("A", ones), ("B", w)]
    return [("A", ones), ("B", w), ("C", spec.second_state.aligned(dataset))]


def _lead(z, h, cumulative):
    n = z.size
    out = np.full(n, np.nan)
    if h >= n:
        return out
    if cumulative:
        out[: n - h] = sliding_window_view(z, h + 1).sum(axis=1)
    else:
        out[: n - h] = z[h:]
    return out


def _lag(x, lag):
    out = np.full(x.size, np.nan)
    out[lag:] = x[: x.size - lag]
    return out


@dataclass
class Design:
    """Regression design at one horizon.

    Unpacks as ``y, X, labels``. ``rows`` are dataset positions of the
    quarters ``t`` used; ``block_weights[:, j]`` is the weight of block
    ``blocks[j]`` on each row. Columns are ordered block by block, each block
    being ``[const, shock, control lags...]``.
    """

    y: np.ndarray
    X: np.ndarray
    labels: list[str]
    rows: np.ndarray
    blocks: list[str]
    block_weights: np.ndarray
    base_labels: list[str]
    horizon: int = 0

    def __iter__(self):
        return iter((self.y, self.X, self.labels))

    @property
    def n_base(self) -> int:
        return len(self.base_labels)

    def column(self, block: str, name: str) -> int:
        return self.blocks.index(block) * self.n_base + self.base_labels.index(name)

    def active_blocks(self, tol: float = DEGENERATE_TOL) -> list[str]:
        scale = max(1.0, float(np.max(np.abs(self.block_weights)))) if self.block_weights.size else 1.0
        keep = np.max(np.abs(self.block_weights), axis=0) > tol * scale
        return [b for b, k in zip(self.blocks, keep) if k]

    def restrict(self, blocks: Sequence[str]) -> "Design":
        cols = np.concatenate([np.arange(self.n_base) + self.blocks.index(b) * self.n_base for b in blocks])
        bw = self.block_weights[:, [self.blocks.index(b) for b in blocks]]
        return Design(self.y, self.X[:, cols], [self.labels[c] for c in cols], self.rows,
                      list(blocks), bw, self.base_labels, self.horizon)


def _frame(dataset, spec, h, leads, contemporaneous):
    """Common usable sample for leads of ``leads`` and regressors dated t."""
    p = spec.control_lags
    cols = [_lead(dataset[name], h, spec.cumulative) for name in leads]
    contemp = [np.asarray(dataset[name], dtype=float) for name in contemporaneous]
    lags, lag_labels = [], []
    for c in spec.controls:
        x = dataset[c]
        for lag in range(1, p + 1):
            lags.append(_lag(x, lag))
            lag_labels.append(f"{c}.l{lag}")
    blocks = state_blocks(dataset, spec)
    weights = np.column_stack([w for _, w in blocks])
    stack = np.column_stack(cols + contemp + lags + [weights])
    ok = np.all(np.isfinite(stack), axis=1)
    rows = np.flatnonzero(ok)
    return (rows, [c[rows] for c in cols], [c[rows] for c in contemp],
            np.column_stack(lags)[rows] if lags else np.empty((rows.size, 0)),
            lag_labels, [b for b, _ in blocks], weights[rows])


def _interact(base, weights):
    return np.hstack([base * weights[:, [j]] for j in range(weights.shape[1])])


def build_design(dataset: Dataset, spec: LpSpec, h: int) -> Design:
    """Design of the horizon-``h`` projection.

    Each row is a quarter ``t`` with the dependent variable observed at
    ``t + h`` (or over ``t..t+h`` when ``spec.cumulative``), the shock at
    ``t``, ``control_lags`` lags of every control, and the state weight.

    Raises
    ------
    EstimationError
        If fewer than ``columns + 8`` quarters survive trimming.
    """
    rows, (y,), (shock,), lags, lag_labels, blocks, w = _frame(
        dataset, spec, h, [spec.dependent], [spec.shock])
    base = np.column_stack([np.ones(rows.size), shock, lags])
    base_labels = ["const", "shock"] + lag_labels
    X = _interact(base, w)
    labels = [f"{b}:{c}" for b in blocks for c in base_labels]
    if rows.size < X.shape[1] + MIN_EXTRA_ROWS:
        raise EstimationError(
            f"horizon {h}: only {rows.size} usable quarters for {X.shape[1]} regressors")
    return Design(y, X, labels, rows, blocks, w, base_labels, h)


def _drop_degenerate(design: Design, context: str) -> Design:
    active = design.active_blocks()
    if len(active) < len(design.blocks):
        dropped = [b for b in design.blocks if b not in active]
        warnings.warn(f"{context}: state block(s) {dropped} have zero weight in the sample "
                      f"and were dropped", DegenerateStateWarning, stacklevel=3)
        if not active:
            raise EstimationError(f"{context}: every state block is degenerate")
        return design.restrict(active)
    return design


@dataclass
class Contrast:
    """Linear contrast of state IRFs with its HAC standard error."""

    estimate: np.ndarray
    se: np.ndarray
    pvalue: np.ndarray

    @property
    def stars(self) -> list[str]:
        return [stars(p) for p in self.pvalue]


def stars(pvalue: float) -> str:
    """Significance marker: ``***`` p<0.01, ``**`` p<0.05, ``*`` p<0.10."""
    if not np.isfinite(pvalue):
        return ""
    for level, mark in STAR_LEVELS:
        if pvalue < level:
            return mark
    return ""


def _pvalue(est, se):
    with np.errstate(divide="ignore", invalid="ignore"):
        return 2.0 * norm.sf(np.abs(est / se))


@dataclass
class IrfResult:
    """Per-state impulse responses over horizons ``0..H``.

    ``estimate[state][h]`` and ``se[state][h]`` are point estimates and HAC
    standard errors; ``contrasts`` holds cross-state difference tests.
    """

    horizons: np.ndarray
    estimate: dict[str, np.ndarray]
    se: dict[str, np.ndarray]
    ci_level: float = 0.90
    contrasts: dict[str, Contrast] = field(default_factory=dict)
    nobs: np.ndarray | None = None
    kind: str = "linear"
    method: str = "lp"
    dependent: str = ""
    mu: float | None = None
    cv_curve: list[tuple[float, float]] | None = None

    @property
    def states(self) -> list[str]:
        return list(self.estimate)

    @property
    def z(self) -> float:
        return float(norm.ppf(0.5 + self.ci_level / 2.0))

    @property
    def ci_low(self) -> dict[str, np.ndarray]:
        return {s: self.estimate[s] - self.z * self.se[s] for s in self.estimate}

    @property
    def ci_high(self) -> dict[str, np.ndarray]:
        return {s: self.estimate[s] + self.z * self.se[s] for s in self.estimate}

    def _main(self) -> Contrast | None:
        return next(iter(self.contrasts.values()), None)

    @property
    def diff_estimate(self):
        c = self._main()
        return None if c is None else c.estimate

    @property
    def diff_se(self):
        c = self._main()
        return None if c is None else c.se

    @property
    def diff_pvalue(self):
        c = self._main()
        return None if c is None else c.pvalue

    @property
    def stars(self):
        c = self._main()
        return None if c is None else c.stars


@dataclass
class MultiplierResult(IrfResult):
    """Cumulative multipliers ``m_h`` per state plus first-stage diagnostics."""

    effective_f: dict[str, np.ndarray] = field(default_factory=dict)
    effective_f_critical: dict[str, np.ndarray] = field(default_factory=dict)


def _combinations(kind, eval_points=None):
    """Reported states and contrasts as weights on the block shock coefficients."""
    if kind == "linear":
        return {"linear": {"linear": 1.0}}, {}
    if kind == "two_state":
        return {"A": {"A": 1.0}, "B": {"B": 1.0}}, {"A-B": {"A": 1.0, "B": -1.0}}
    if kind == "horse_race":
        return ({"A": {"A": 1.0}, "B": {"B": 1.0}, "C": {"C": 1.0}},
                {"B": {"B": 1.0}, "C": {"C": 1.0}})
    states = {label: {"A": 1.0, "B": float(c)} for label, c in eval_points.items()}
    contrasts = {"B": {"B": 1.0}}
    if len(eval_points) == 2:
        (lo_l, lo), (hi_l, hi) = sorted(eval_points.items(), key=lambda kv: kv[1])
        contrasts[f"{hi_l}-{lo_l}"] = {"B": float(hi - lo)}
    return states, contrasts


def _linear_form(weights, blocks):
    if any(b not in blocks for b, w in weights.items() if w != 0):
        return None
    v = np.zeros(len(blocks))
    for b, w in weights.items():
        v[blocks.index(b)] = w
    return v


def _assemble(per_h, horizons, kind, ci_level, eval_points=None, cls=IrfResult, **extra):
    """Build a result from per-horizon ``(blocks, coef, cov, nobs)`` tuples."""
    state_w, contrast_w = _combinations(kind, eval_points)
    H = len(horizons)
    est = {s: np.full(H, np.nan) for s in state_w}
    se = {s: np.full(H, np.nan) for s in state_w}
    cest = {c: np.full(H, np.nan) for c in contrast_w}
    cse = {c: np.full(H, np.nan) for c in contrast_w}
    nobs = np.zeros(H, dtype=int)
    for i, (blocks, coef, cov, n) in enumerate(per_h):
        nobs[i] = n
        for wmap, e_out, s_out in ((state_w, est, se), (contrast_w, cest, cse)):
            for name, weights in wmap.items():
                v = _linear_form(weights, blocks)
                if v is None:
                    continue
                e_out[name][i] = v @ coef
                s_out[name][i] = np.sqrt(max(v @ cov @ v, 0.0))
    contrasts = {c: Contrast(cest[c], cse[c], _pvalue(cest[c], cse[c])) for c in contrast_w}
    return cls(np.asarray(horizons), est, se, ci_level, contrasts, nobs, kind, **extra)


def _map_horizons(fn, horizons, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, horizons))
    return [fn(h) for h in horizons]


def _shock_block(fit, design):
    idx = [design.column(b, "shock") for b in design.blocks]
    return fit.coefficients[idx], fit.covariance[np.ix_(idx, idx)]


def _annotate(exc, h):
    msg = str(exc)
    if not msg.startswith("horizon"):
        exc.args = (f"horizon {h}: {msg}",) + tuple(exc.args[1:])


def _fit_horizon(dataset, spec, h):
    try:
        design = _drop_degenerate(build_design(dataset, spec, h), f"horizon {h}")
        fit = ols(design.y, design.X, design.labels, bandwidth=spec.bandwidth(h))
    except FiscalStateError as exc:
        _annotate(exc, h)
        raise
    return design, fit


def estimate_lp(dataset: Dataset, spec: LpSpec, threads: int = 1) -> IrfResult:
    """Local-projection IRF of ``spec.dependent`` to ``spec.shock``.

    One OLS regression per horizon with Newey-West standard errors. For the
    two-state model the contrast ``A-B`` (state weight ``I`` minus ``1-I``)
    is tested from the joint covariance of the stacked regression.
    """
    if spec.kind == "continuous":
        return estimate_continuous(dataset, spec, threads=threads)

    def one(h):
        design, fit = _fit_horizon(dataset, spec, h)
        coef, cov = _shock_block(fit, design)
        return design.blocks, coef, cov, fit.nobs

    per_h = _map_horizons(one, spec.horizons, threads)
    return _assemble(per_h, spec.horizons, spec.kind, spec.ci_level, dependent=spec.dependent)


def estimate_horse_race(dataset: Dataset, spec: LpSpec, threads: int = 1) -> IrfResult:
    """Two-state-variable model: an always-on block plus two interaction blocks.

    States ``A``, ``B`` and ``C`` are the baseline response and the two
    interaction effects; contrasts ``B`` and ``C`` test each interaction
    against zero.
    """
    if spec.kind != "horse_race":
        raise ValueError("estimate_horse_race needs spec.state and spec.second_state")
    return estimate_lp(dataset, spec, threads=threads)


def default_eval_points(state: StateSeries) -> dict[str, float]:
    w = state.weight[np.isfinite(state.weight)]
    return {"p10": float(np.percentile(w, 10)), "p90": float(np.percentile(w, 90))}


def _eval_labels(state, eval_points):
    if eval_points is None:
        return default_eval_points(state)
    if isinstance(eval_points, Mapping):
        pts = {str(k): float(v) for k, v in eval_points.items()}
    else:
        pts = {f"c={float(c):g}": float(c) for c in eval_points}
    w = state.weight[np.isfinite(state.weight)]
    for label, c in pts.items():
        if not w.min() <= c <= w.max():
            warnings.warn(f"evaluation point {c:g} outside the observed state range "
                          f"[{w.min():g}, {w.max():g}]", ExtrapolationWarning, stacklevel=3)
    return pts


def estimate_continuous(dataset: Dataset, spec: LpSpec, eval_points=None, threads: int = 1) -> IrfResult:
    """Continuous-state model ``(a + b*shock + ...) + x_{t-1} (a' + b'*shock + ...)``.

    The IRF at state value ``c`` is ``b_h + c * b'_h`` with delta-method HAC
    variance. ``eval_points`` defaults to the 10th and 90th percentiles of the
    state; values outside the observed range trigger an
    :class:`ExtrapolationWarning`.
    """
    if spec.kind != "continuous":
        raise ValueError("estimate_continuous needs a continuous-mode state")
    pts = _eval_labels(spec.state, eval_points)

    def one(h):
        design, fit = _fit_horizon(dataset, spec, h)
        coef, cov = _shock_block(fit, design)
        return design.blocks, coef, cov, fit.nobs

    per_h = _map_horizons(one, spec.horizons, threads)
    return _assemble(per_h, spec.horizons, "continuous", spec.ci_level, eval_points=pts,
                     dependent=spec.dependent)


def estimate_multiplier(dataset: Dataset, spec: LpSpec, instruments: Sequence[str],
                        output: str = "output", spending: str = "spending",
                        eval_points=None, threads: int = 1) -> MultiplierResult:
    """State-dependent cumulative multipliers by LP-IV.

    At horizon ``h`` cumulative output ``sum_{i<=h} y_{t+i}`` is regressed on
    cumulative spending ``sum_{i<=h} g_{t+i}``, instrumented by the shock
    series in ``instruments``. Every regressor, instrument and the endogenous
    variable are interacted with the state blocks, so each block has its own
    multiplier. Weak instruments are reported through the effective F, not
    raised.
    """
    instruments = list(instruments)
    if not instruments:
        raise ValueError("at least one instrument is required")
    kind = spec.kind
    pts = _eval_labels(spec.state, eval_points) if kind == "continuous" else None
    cum_spec = replace(spec, cumulative=True)
    J = len(instruments)

    def one(h):
        rows, (Y, G), Zs, lags, lag_labels, blocks, w = _frame(
            dataset, cum_spec, h, [output, spending], instruments)
        base = np.column_stack([np.ones(rows.size), lags])
        design = Design(Y, _interact(base, w), [], rows, blocks, w, ["const"] + lag_labels, h)
        active = design.active_blocks()
        if len(active) < len(blocks):
            warnings.warn(f"horizon {h}: state block(s) {sorted(set(blocks) - set(active))} "
                          f"dropped", DegenerateStateWarning, stacklevel=2)
        keep = [blocks.index(b) for b in active]
        wk = w[:, keep]
        endog = G[:, None] * wk
        Z = np.column_stack([Zs[j] * wk[:, b] for b in range(len(keep)) for j in range(J)])
        exog = _interact(base, wk)
        if rows.size < exog.shape[1] + len(keep) + MIN_EXTRA_ROWS:
            raise EstimationError(f"horizon {h}: only {rows.size} usable quarters")
        names = [f"{b}:m" for b in active] + [f"{b}:{c}" for b in active for c in design.base_labels]
        try:
            iv = tsls(Y, endog, Z, exog, bandwidth=cum_spec.bandwidth(h), names=names)
        except FiscalStateError as exc:
            _annotate(exc, h)
            raise
        nb = len(active)
        ef, crit = {}, {}
        for b in range(nb):
            ef[active[b]], crit[active[b]] = effective_f(iv.first_stage[b], range(b * J, (b + 1) * J))
        return active, iv.coefficients[:nb], iv.second_stage.covariance[:nb, :nb], rows.size, ef, crit

    per_h = _map_horizons(one, spec.horizons, threads)
    res = _assemble([r[:4] for r in per_h], spec.horizons, kind, spec.ci_level, eval_points=pts,
                    cls=MultiplierResult, dependent=output, method="lp-iv")
    all_blocks = [b for b, _ in state_blocks(dataset, spec)]
    for b in all_blocks:
        res.effective_f[b] = np.array([r[4].get(b, np.nan) for r in per_h])
        res.effective_f_critical[b] = np.array([r[5].get(b, np.nan) for r in per_h])
    return res


def difference_table(result: IrfResult, horizons: Sequence[int] = REPORT_HORIZONS,
                     base: str | None = None, contrast: str | None = None) -> list[tuple]:
    """Rows ``(horizon, base_estimate, difference, stars)`` at report horizons.

    ``base`` defaults to the small-cost state ``B`` in the two-state model and
    to the baseline ``A`` otherwise; ``contrast`` defaults to the first one.
    """
    if not result.contrasts:
        raise ValueError("result has no difference tests")
    if base is None:
        base = "B" if result.kind == "two_state" else result.states[0]
    if contrast is None:
        contrast = next(iter(result.contrasts))
    c = result.contrasts[contrast]
    rows = []
    for h in horizons:
        if h > result.horizons[-1]:
            continue
        i = int(np.flatnonzero(result.horizons == h)[0])
        rows.append((int(h), float(result.estimate[base][i]), float(c.estimate[i]), stars(c.pvalue[i])))
    return rows


def format_difference_table(result: IrfResult, horizons: Sequence[int] = REPORT_HORIZONS,
                            digits: int = 2) -> str:
    base = "B" if result.kind == "two_state" else result.states[0]
    names = list(result.contrasts)
    tables = {c: difference_table(result, horizons, base, c) for c in names}
    head = ["h", f"{base}"] + [f"diff {c}" for c in names]
    lines = ["\t".join(head)]
    for i, row in enumerate(tables[names[0]]):
        cells = [str(row[0]), f"{row[1]:.{digits}f}"]
        for c in names:
            _, _, d, s = tables[c][i]
            cells.append(f"{d:.{digits}f}{s}")
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"
