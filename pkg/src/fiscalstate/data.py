"""Quarterly data ingestion, fiscal-cost construction, detrending and state variables."""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.linalg import solveh_banded
from scipy.special import expit

from .errors import DomainError, IngestionError

_QUARTER_RE = re.compile(r"^\s*(\d{3,4})\s*[Qq]([1-4])\s*$")
_MONTH_RE = re.compile(r"^\s*(\d{3,4})[-/M]?(\d{1,2})(?:[-/]\d{1,2})?\s*$")
_MISSING = {"", "na", "nan", "n/a", ".", "null", "none"}

STATE_MODES = ("dummy", "logit", "continuous")
BASELINE_GAMMA = 10.0


@dataclass(frozen=True, order=True)
class QuarterIndex:
    """A calendar quarter, e.g. ``QuarterIndex(1889, 1)`` for ``1889Q1``.

    Supports ``q + 3``, ``q - 1`` and ``q2 - q1`` (number of quarters between).
    """

    year: int
    quarter: int

    def __post_init__(self):
        if not 1 <= self.quarter <= 4:
            raise ValueError(f"quarter must be in 1..4, got {self.quarter}")

    @classmethod
    def parse(cls, text: str) -> "QuarterIndex":
        m = _QUARTER_RE.match(str(text))
        if m is None:
            raise ValueError(f"malformed quarter string {text!r}, expected e.g. '1889Q1'")
        return cls(int(m.group(1)), int(m.group(2)))

    @classmethod
    def from_ordinal(cls, n: int) -> "QuarterIndex":
        year, q = divmod(int(n), 4)
        return cls(year, q + 1)

    @property
    def ordinal(self) -> int:
        return self.year * 4 + self.quarter - 1

    def __add__(self, n: int) -> "QuarterIndex":
        if not isinstance(n, (int, np.integer)):
            return NotImplemented
        return QuarterIndex.from_ordinal(self.ordinal + int(n))

    def __sub__(self, other):
        if isinstance(other, QuarterIndex):
            return self.ordinal - other.ordinal
        if isinstance(other, (int, np.integer)):
            return QuarterIndex.from_ordinal(self.ordinal - int(other))
        return NotImplemented

    def __str__(self) -> str:
        return f"{self.year}Q{self.quarter}"


def quarter_range(start: QuarterIndex, n: int) -> list[QuarterIndex]:
    return [start + i for i in range(n)]


def _as_quarter(q) -> QuarterIndex:
    return q if isinstance(q, QuarterIndex) else QuarterIndex.parse(q)


def _edge_only_missing(values: np.ndarray) -> bool:
    ok = np.flatnonzero(np.isfinite(values))
    if ok.size == 0:
        return True
    return bool(np.all(np.isfinite(values[ok[0]:ok[-1] + 1])))


@dataclass(frozen=True)
class Dataset:
    """Named quarterly series sharing one contiguous quarter index.

    Series may start and end at different quarters (missing values, stored as
    NaN, are allowed at the edges only). Arrays are read-only; use
    :meth:`with_series` to derive a new dataset.
    """

    start: QuarterIndex
    series: Mapping[str, np.ndarray]
    length: int = field(init=False)

    def __post_init__(self):
        frozen = {}
        lengths = set()
        for name, values in self.series.items():
            arr = np.array(values, dtype=float)
            if arr.ndim != 1:
                raise IngestionError(f"series {name!r} is not one-dimensional")
            if not _edge_only_missing(arr):
                bad = _first_interior_gap(arr)
                raise IngestionError(
                    f"series {name!r} has an interior missing value at {self.start + bad}")
            arr.setflags(write=False)
            frozen[name] = arr
            lengths.add(arr.size)
        if len(lengths) > 1:
            raise IngestionError(f"series lengths differ: {sorted(lengths)}")
        object.__setattr__(self, "series", MappingProxyType(frozen))
        object.__setattr__(self, "length", lengths.pop() if lengths else 0)

    def __len__(self):
        return self.length

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.series[name]
        except KeyError:
            raise KeyError(f"series {name!r} not in dataset (have {sorted(self.series)})") from None

    def __contains__(self, name) -> bool:
        return name in self.series

    @property
    def names(self) -> list[str]:
        return list(self.series)

    @property
    def index(self) -> list[QuarterIndex]:
        return quarter_range(self.start, self.length)

    @property
    def end(self) -> QuarterIndex:
        return self.start + (self.length - 1)

    def position(self, quarter) -> int:
        pos = _as_quarter(quarter) - self.start
        if not 0 <= pos < self.length:
            raise IndexError(f"{quarter} outside dataset range {self.start}..{self.end}")
        return pos

    def with_series(self, name: str, values, start: QuarterIndex | None = None) -> "Dataset":
        """Return a copy with ``name`` added (or replaced).

        When ``start`` is given the values are aligned on the dataset index;
        quarters not covered become NaN and values outside the range are dropped.
        """
        values = np.asarray(values, dtype=float)
        if start is None:
            if values.size != self.length:
                raise IngestionError(
                    f"series {name!r} has length {values.size}, dataset has {self.length}")
            aligned = values
        else:
            aligned = np.full(self.length, np.nan)
            offset = start - self.start
            lo, hi = max(0, offset), min(self.length, offset + values.size)
            if hi > lo:
                aligned[lo:hi] = values[lo - offset:hi - offset]
        new = dict(self.series)
        new[name] = aligned
        return Dataset(self.start, new)

    def valid_range(self, names: Iterable[str]) -> tuple[int, int]:
        """Positions ``(first, last)`` where every named series is observed."""
        mask = np.ones(self.length, dtype=bool)
        for n in names:
            mask &= np.isfinite(self[n])
        ok = np.flatnonzero(mask)
        if ok.size == 0:
            raise IngestionError(f"series {list(names)} have no common observed quarter")
        return int(ok[0]), int(ok[-1])


def _first_interior_gap(arr):
    ok = np.flatnonzero(np.isfinite(arr))
    inner = ~np.isfinite(arr[ok[0]:ok[-1] + 1])
    return int(ok[0] + np.flatnonzero(inner)[0])


def _read_rows(path, delimiter=None):
    with open(path, newline="") as fh:
        text = fh.read()
    if not text.strip():
        raise IngestionError(f"{path}: empty file")
    if delimiter is None:
        try:
            delimiter = csv.Sniffer().sniff(text.splitlines()[0], delimiters=",;\t|").delimiter
        except csv.Error:
            delimiter = ","
    rows = [r for r in csv.reader(text.splitlines(), delimiter=delimiter) if any(c.strip() for c in r)]
    header = [h.strip() for h in rows[0]]
    return header, rows[1:]


def _parse_number(text, where):
    t = text.strip()
    if t.lower() in _MISSING:
        return np.nan
    try:
        return float(t)
    except ValueError:
        raise IngestionError(f"{where}: non-numeric value {text!r}") from None


def load_dataset(path, schema: Mapping[str, str] | None = None, *,
                 quarter_column: str = "quarter", delimiter: str | None = None) -> Dataset:
    """Read a delimiter-separated file with a ``YYYYQn`` quarter column.

    Parameters
    ----------
    path : str or path-like
    schema : mapping, optional
        ``{dataset_name: file_column}``. Defaults to every non-quarter column
        under its own name.
    quarter_column : str
        Name of the quarter column (case-insensitive).

    Raises
    ------
    IngestionError
        On a malformed quarter string, a duplicated quarter, a gap in the
        quarter sequence or an interior missing value. The message names the
        offending file row (1-based, header is row 1).
    """
    header, rows = _read_rows(path, delimiter)
    lower = [h.lower() for h in header]
    if quarter_column.lower() not in lower:
        raise IngestionError(f"{path}: no quarter column {quarter_column!r} in header {header}")
    qcol = lower.index(quarter_column.lower())
    if schema is None:
        schema = {h: h for i, h in enumerate(header) if i != qcol}
    cols = {}
    for name, column in schema.items():
        if column not in header:
            raise IngestionError(f"{path}: column {column!r} (for {name!r}) not found")
        cols[name] = header.index(column)

    parsed = []
    for lineno, row in enumerate(rows, start=2):
        try:
            q = QuarterIndex.parse(row[qcol])
        except (ValueError, IndexError):
            cell = row[qcol] if qcol < len(row) else ""
            raise IngestionError(f"{path}: row {lineno}: malformed quarter {cell!r}") from None
        vals = {}
        for name, c in cols.items():
            cell = row[c] if c < len(row) else ""
            vals[name] = _parse_number(cell, f"{path}: row {lineno}, column {header[c]!r}")
        parsed.append((q, lineno, vals))
    if not parsed:
        raise IngestionError(f"{path}: no data rows")

    parsed.sort(key=lambda item: item[0])
    for (q0, l0, _), (q1, l1, _) in zip(parsed, parsed[1:]):
        if q1 == q0:
            raise IngestionError(f"{path}: row {l1}: duplicate quarter {q1} (also row {l0})")
        if q1 - q0 != 1:
            raise IngestionError(f"{path}: row {l1}: gap in quarters between {q0} and {q1}")

    series = {name: np.array([v[name] for _, _, v in parsed]) for name in cols}
    for name, arr in series.items():
        if not _edge_only_missing(arr):
            lineno = parsed[_first_interior_gap(arr)][1]
            raise IngestionError(f"{path}: row {lineno}: interior missing value in {name!r}")
    return Dataset(parsed[0][0], series)


@dataclass(frozen=True)
class SecurityRecord:
    security_id: str
    quarter: QuarterIndex
    outstanding: float
    coupon_rate: float

    def __post_init__(self):
        if not self.outstanding >= 0:
            raise DomainError(f"security {self.security_id}: negative outstanding {self.outstanding}")
        if not self.coupon_rate >= 0:
            raise DomainError(f"security {self.security_id}: negative coupon rate {self.coupon_rate}")


def _record_quarter(text):
    """Quarter of a security snapshot, or None for a non-quarter-end month."""
    try:
        return QuarterIndex.parse(text)
    except ValueError:
        pass
    m = _MONTH_RE.match(text)
    if m is None or not 1 <= int(m.group(2)) <= 12:
        raise ValueError(text)
    month = int(m.group(2))
    if month % 3:
        return None
    return QuarterIndex(int(m.group(1)), month // 3)


def load_securities(path, delimiter: str | None = None) -> list[SecurityRecord]:
    """Read ``security_id,quarter,outstanding,coupon_rate`` records.

    The quarter column may also hold monthly dates (``1917-06``); only
    quarter-end months are kept, as snapshots of that quarter.
    """
    header, rows = _read_rows(path, delimiter)
    lower = [h.lower() for h in header]
    need = ("security_id", "quarter", "outstanding", "coupon_rate")
    missing = [c for c in need if c not in lower]
    if missing:
        raise IngestionError(f"{path}: missing columns {missing}")
    idx = {c: lower.index(c) for c in need}
    records = []
    for lineno, row in enumerate(rows, start=2):
        try:
            q = _record_quarter(row[idx["quarter"]])
        except (ValueError, IndexError):
            raise IngestionError(f"{path}: row {lineno}: malformed date {row[idx['quarter']]!r}") from None
        if q is None:
            continue
        b = _parse_number(row[idx["outstanding"]], f"{path}: row {lineno}")
        r = _parse_number(row[idx["coupon_rate"]], f"{path}: row {lineno}")
        try:
            records.append(SecurityRecord(row[idx["security_id"]].strip(), q, b, r))
        except DomainError as exc:
            raise IngestionError(f"{path}: row {lineno}: {exc}") from None
    return records


def compute_fiscal_cost(records: Iterable[SecurityRecord], gdp, start: QuarterIndex) -> np.ndarray:
    """Total interest charge on outstanding securities as a share of GDP.

    ``gdp`` is aligned on quarters starting at ``start``. Quarters without any
    record have a cost of zero; quarters with missing GDP give NaN.
    """
    gdp = np.asarray(gdp, dtype=float)
    observed = np.isfinite(gdp)
    if np.any(gdp[observed] <= 0):
        raise DomainError("GDP must be strictly positive")
    charge = np.zeros(gdp.size)
    for rec in records:
        pos = rec.quarter - start
        if not 0 <= pos < gdp.size:
            raise DomainError(f"security {rec.security_id} dated {rec.quarter} outside the GDP index")
        charge[pos] += rec.outstanding * rec.coupon_rate
    with np.errstate(invalid="ignore"):
        return charge / gdp


def gordon_krenn_scale(series, potential_gdp) -> np.ndarray:
    """Divide a real series by potential GDP."""
    series = np.asarray(series, dtype=float)
    potential_gdp = np.asarray(potential_gdp, dtype=float)
    if series.shape != potential_gdp.shape:
        raise DomainError(f"shape mismatch {series.shape} vs {potential_gdp.shape}")
    if np.any(potential_gdp[np.isfinite(potential_gdp)] <= 0):
        raise DomainError("potential GDP must be strictly positive")
    return series / potential_gdp


def linear_detrend(series) -> tuple[np.ndarray, np.ndarray]:
    """OLS fit on a constant and a linear time trend.

    Returns ``(trend, residual)``. Missing edge values are ignored in the fit;
    the trend is reported for every quarter, the residual is NaN where the
    input is.
    """
    y = np.asarray(series, dtype=float)
    ok = np.isfinite(y)
    if ok.sum() < 3:
        raise DomainError("linear_detrend needs at least 3 observations")
    t = np.arange(y.size, dtype=float)
    X = np.column_stack([np.ones(y.size), t])
    coef, *_ = np.linalg.lstsq(X[ok], y[ok], rcond=None)
    trend = X @ coef
    return trend, y - trend


def hp_filter(series, lamb: float = 1600.0) -> tuple[np.ndarray, np.ndarray]:
    r"""Hodrick-Prescott filter.

    The trend minimises

    .. math:: \sum_t (y_t - \tau_t)^2 + \lambda \sum_t (\Delta^2 \tau_t)^2

    and is obtained from the symmetric pentadiagonal system
    :math:`(I + \lambda D_2'D_2)\tau = y` by a banded Cholesky solve.

    Returns ``(trend, cycle)``.
    """
    y = np.asarray(series, dtype=float)
    if not lamb > 0:
        raise DomainError(f"HP smoothing parameter must be positive, got {lamb}")
    if y.size < 5:
        raise DomainError("hp_filter needs at least 5 observations")
    if not np.all(np.isfinite(y)):
        raise DomainError("hp_filter input must not contain missing values")
    n = y.size
    main = np.full(n, 6.0)
    main[[0, -1]] = 1.0
    main[[1, -2]] = 5.0
    off1 = np.full(n - 1, -4.0)
    off1[[0, -1]] = -2.0
    ab = np.zeros((3, n))
    ab[0, 2:] = lamb
    ab[1, 1:] = lamb * off1
    ab[2] = 1.0 + lamb * main
    trend = solveh_banded(ab, y)
    return trend, y - trend


def detrend(series, method: str = "linear", hp_lambda: float = 1600.0) -> np.ndarray:
    """Deviation of ``series`` from its linear or HP trend (NaN edges preserved)."""
    y = np.asarray(series, dtype=float)
    if method == "linear":
        return linear_detrend(y)[1]
    if method == "hp":
        ok = np.flatnonzero(np.isfinite(y))
        out = np.full(y.size, np.nan)
        if ok.size:
            out[ok[0]:ok[-1] + 1] = hp_filter(y[ok[0]:ok[-1] + 1], hp_lambda)[1]
        return out
    raise DomainError(f"unknown trend method {method!r} (use 'linear' or 'hp')")


@dataclass(frozen=True)
class StateSeries:
    """Per-quarter regime weight aligned on a dataset index.

    ``weight[t]`` is the value that multiplies the regressors dated ``t``; the
    ``lag`` shift has already been applied, so ``weight[t]`` is built from the
    state variable at ``t - lag``.
    """

    weight: np.ndarray
    mode: str
    start: QuarterIndex | None = None
    gamma: float | None = None
    lag: int = 1

    def __post_init__(self):
        if self.mode not in STATE_MODES:
            raise DomainError(f"unknown state mode {self.mode!r}")
        w = np.array(self.weight, dtype=float)
        w.setflags(write=False)
        object.__setattr__(self, "weight", w)
        obs = w[np.isfinite(w)]
        if self.mode == "dummy" and not np.all((obs == 0) | (obs == 1)):
            raise DomainError("dummy state weights must be 0 or 1")
        if self.mode == "logit" and np.any((obs < 0) | (obs > 1)):
            raise DomainError("logit state weights must lie in [0, 1]")

    def __len__(self):
        return self.weight.size

    def aligned(self, dataset: Dataset) -> np.ndarray:
        """Weights on the index of ``dataset`` (NaN where undefined)."""
        if self.start is None:
            if len(self) != len(dataset):
                raise DomainError(
                    f"state has {len(self)} quarters but dataset has {len(dataset)}; pass start=")
            return self.weight
        out = np.full(len(dataset), np.nan)
        offset = self.start - dataset.start
        lo, hi = max(0, offset), min(len(dataset), offset + len(self))
        if hi > lo:
            out[lo:hi] = self.weight[lo - offset:hi - offset]
        return out


def build_state(x, mode: str = "logit", gamma: float = BASELINE_GAMMA, lag: int = 1,
                start: QuarterIndex | None = None) -> StateSeries:
    """Turn a (detrended) state variable into regime weights.

    ``dummy`` gives ``1[x > 0]``, ``logit`` gives
    ``1 / (1 + exp(-gamma * x / sd(x)))`` with the full-sample standard
    deviation, ``continuous`` keeps ``x``. The result is shifted forward by
    ``lag`` quarters (the first ``lag`` weights are NaN).
    """
    x = np.asarray(x, dtype=float)
    if lag < 0:
        raise DomainError("lag must be non-negative")
    if mode == "dummy":
        w = np.where(np.isfinite(x), (x > 0).astype(float), np.nan)
    elif mode == "logit":
        sigma = np.nanstd(x)
        if not sigma > 0:
            raise DomainError("logit state needs a non-constant series (sd = 0)")
        w = expit(gamma * x / sigma)
    elif mode == "continuous":
        w = x.copy()
    else:
        raise DomainError(f"unknown state mode {mode!r}, expected one of {STATE_MODES}")
    if lag:
        shifted = np.full(w.size, np.nan)
        shifted[lag:] = w[:w.size - lag]
        w = shifted
    return StateSeries(w, mode, start=start, gamma=gamma if mode == "logit" else None, lag=lag)


def standardize_shock(raw) -> np.ndarray:
    """Scale a shock series to unit standard deviation (no demeaning)."""
    raw = np.asarray(raw, dtype=float)
    sd = np.nanstd(raw)
    if not sd > 0:
        raise DomainError("cannot standardize a zero-variance shock series")
    return raw / sd


def write_series(path, start: QuarterIndex, values: Sequence[float], name: str = "value") -> None:
    """Write a two-column ``quarter,value`` file at full double precision."""
    with open(path, "w", newline="") as fh:
        fh.write(f"quarter,{name}\n")
        for i, v in enumerate(values):
            v = float(v)
            fh.write(f"{start + i},{repr(v) if np.isfinite(v) else ''}\n")


def read_series(path) -> tuple[QuarterIndex, np.ndarray, str]:
    """Inverse of :func:`write_series`; returns ``(start, values, name)``."""
    header, _ = _read_rows(path)
    name = header[1] if len(header) > 1 else "value"
    ds = load_dataset(path, {name: header[1]}, quarter_column=header[0])
    return ds.start, np.array(ds[name]), name
