"""
Building a fiscal-cost state
============================

Start from security-level debt snapshots, aggregate them into a debt-cost
ratio, remove a trend and map the cycle into regime weights.
"""

import numpy as np

from fiscalstate import build_state, compute_fiscal_cost, detrend
from fiscalstate.simulate import synthetic_fiscal_data

ds, records, _ = synthetic_fiscal_data(T=240, seed=3, start="1890Q1")
print(f"{len(records)} security records, {len(ds)} quarters from {ds.start}")

# interest cost relative to nominal output, one value per quarter
cost = compute_fiscal_cost(records, ds["gdp"], ds.start)
print("fiscal cost, first quarters:", np.round(cost[:4], 5))

# two ways to take out the slow-moving component
for trend in ("linear", "hp"):
    cycle = detrend(cost, trend)
    state = build_state(cycle, "logit", gamma=10.0, lag=1)
    w = state.weight[np.isfinite(state.weight)]
    print(f"{trend:>6} trend: mean weight {w.mean():.3f}, "
          f"share of quarters above 0.9: {(w > 0.9).mean():.2f}")

# a dummy version is a hard split of the same cycle
dummy = build_state(detrend(cost, "linear"), "dummy")
print("dummy weights take values", np.unique(dummy.weight[1:]))
