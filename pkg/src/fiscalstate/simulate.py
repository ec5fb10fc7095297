"""Data-generating processes with known impulse responses, for checks and demos."""

from __future__ import annotations

import numpy as np

from .data import Dataset, QuarterIndex, SecurityRecord


def var_irf(coefs, impact, H: int) -> np.ndarray:
    """True IRFs of a VAR(p): array ``[h, variable, shock]`` for ``h = 0..H``.

    ``coefs`` is a list of ``n x n`` lag matrices ``A_1..A_p``.
    """
    coefs = [np.asarray(a, dtype=float) for a in coefs]
    n = coefs[0].shape[0]
    psi = [np.eye(n)]
    for h in range(1, H + 1):
        psi.append(sum(coefs[j] @ psi[h - 1 - j] for j in range(min(h, len(coefs)))))
    return np.stack([p @ impact for p in psi])


def simulate_var(coefs, impact, T: int, rng, burn: int = 200, intercept=None, planted=None):
    """Simulate ``y_t = c + sum_j A_j y_{t-j} + impact @ e_t`` with standard normal ``e``.

    ``planted`` maps ``(t, shock)`` pairs (``t`` counted after the burn-in)
    to fixed shock values. Returns ``(y, e)`` with shapes ``(T, n)``.
    """
    coefs = [np.asarray(a, dtype=float) for a in coefs]
    n, p = coefs[0].shape[0], len(coefs)
    c = np.zeros(n) if intercept is None else np.asarray(intercept, dtype=float)
    e = rng.standard_normal((T + burn, n))
    for (t, j), value in (planted or {}).items():
        e[burn + t, j] = value
    u = e @ np.asarray(impact, dtype=float).T
    y = np.zeros((T + burn, n))
    for t in range(T + burn):
        acc = c + u[t]
        for j in range(1, p + 1):
            if t - j >= 0:
                acc = acc + coefs[j - 1] @ y[t - j]
        y[t] = acc
    return y[burn:], e[burn:]


def hump_irf(H: int, peak: float = 1.0) -> np.ndarray:
    """Hump-shaped response ``(1 + h) exp(-h / 5)`` scaled to the given peak."""
    h = np.arange(H + 1)
    beta = (1 + h) * np.exp(-h / 5)
    return peak * beta / beta.max()


def bell_irf(H: int, center: float = 6.0, width: float = 4.0, peak: float = 1.0) -> np.ndarray:
    """Bell-shaped hump ``peak * exp(-(h - center)^2 / (2 width^2))``."""
    h = np.arange(H + 1)
    return peak * np.exp(-(h - center) ** 2 / (2.0 * width ** 2))


def simulate_irf_dgp(beta, T: int, rng, noise_ar: float = 0.5, noise_sd: float = 1.0):
    """``z_t = sum_j beta_j shock_{t-j} + u_t`` with AR(1) noise ``u``.

    Returns ``(z, shock)``.
    """
    beta = np.asarray(beta, dtype=float)
    burn = beta.size + 50
    shock = rng.standard_normal(T + burn)
    v = rng.standard_normal(T + burn) * noise_sd
    u = np.zeros(T + burn)
    for t in range(1, T + burn):
        u[t] = noise_ar * u[t - 1] + v[t]
    z = np.convolve(shock, beta)[: T + burn] + u
    return z[burn:], shock[burn:]


# Lag-1 dynamics of (output, spending, tax, debt), all in ratio-to-potential units.
_FISCAL_A = np.array([
    [0.80, 0.15, -0.05, 0.00],
    [0.00, 0.85, 0.00, -0.02],
    [0.10, 0.00, 0.70, 0.00],
    [-0.05, 0.20, -0.20, 0.95],
])
_FISCAL_IMPACT = np.array([
    [1.00, 0.30, -0.10, 0.00],
    [0.10, 1.00, 0.00, 0.00],
    [0.20, 0.05, 0.60, 0.00],
    [0.00, 0.20, -0.20, 0.50],
]) * 0.5


# Large positive spending shocks at the default narrative dates.
EVENTS = {"1917Q2": 5.0, "1941Q4": 5.0}


def synthetic_fiscal_data(T: int = 240, seed: int = 0, start: QuarterIndex | str = "1950Q1",
                          n_securities: int = 6, events=EVENTS):
    """A synthetic quarterly fiscal dataset shaped like the historical inputs.

    Returns ``(dataset, records, true_spending_shock)`` where ``dataset`` has
    ``output, spending, tax, debt`` (ratios to potential), ``gdp`` (nominal),
    ``potential`` and a ``news`` shock series; ``records`` are security-level
    snapshots from which the fiscal cost can be rebuilt. Spending shocks of
    the given size are planted at the ``events`` quarters inside the sample.
    """
    rng = np.random.default_rng(seed)
    start = start if isinstance(start, QuarterIndex) else QuarterIndex.parse(start)
    planted = {}
    for q, size in (events or {}).items():
        t = QuarterIndex.parse(q) - start
        if 0 <= t < T:
            planted[(t, 1)] = size
    y, e = simulate_var([_FISCAL_A], _FISCAL_IMPACT, T, rng, planted=planted)
    t = np.arange(T)
    potential = 100.0 * np.exp(0.008 * t)
    gdp = potential * (1.0 + 0.01 * y[:, 0])
    news = 0.6 * e[:, 1] + 0.8 * rng.standard_normal(T)
    data = {
        "output": y[:, 0],
        "spending": y[:, 1],
        "tax": y[:, 2],
        "debt": y[:, 3],
        "gdp": gdp,
        "potential": potential,
        "news": news,
    }
    records = []
    rate_cycle = 0.04 + 0.02 * np.sin(2 * np.pi * t / 90.0) + 0.002 * np.cumsum(rng.standard_normal(T)) / np.sqrt(T)
    rate_cycle = np.clip(rate_cycle, 0.005, None)
    for i in range(T):
        q = start + i
        for s in range(n_securities):
            outstanding = gdp[i] * 0.5 / n_securities * (1 + 0.2 * np.sin(0.05 * i + s))
            coupon = rate_cycle[i] * (0.8 + 0.08 * s)
            records.append(SecurityRecord(f"S{s:02d}", q, float(outstanding), float(coupon)))
    return Dataset(start, data), records, e[:, 1]
