"""
State-dependent local projections
=================================

Identify spending shocks by timing, then estimate how output responds in
high and low fiscal-cost regimes, with a HAC test of the difference.
"""

from fiscalstate import LpSpec, build_state, compute_fiscal_cost, detrend, estimate_lp, timing_shocks
from fiscalstate.lp import format_difference_table
from fiscalstate.simulate import synthetic_fiscal_data

ds, records, _ = synthetic_fiscal_data(T=240, seed=3, start="1890Q1")
cost = compute_fiscal_cost(records, ds["gdp"], ds.start)
state = build_state(detrend(cost, "linear"), "logit", gamma=10.0)

shock = timing_shocks(ds, lags=4)
ds = shock.attach(ds, "shock")

spec = LpSpec("output", shock="shock", state=state, horizon_max=16)
res = estimate_lp(ds, spec)

# A is the high-cost regime (weight I), B the low-cost one (weight 1 - I)
for h in (0, 4, 8):
    print(f"h={h:2d}  A {res.estimate['A'][h]:+.3f} ({res.se['A'][h]:.3f})  "
          f"B {res.estimate['B'][h]:+.3f} ({res.se['B'][h]:.3f})")

print()
print(format_difference_table(res))

# the linear model for comparison
lin = estimate_lp(ds, LpSpec("output", shock="shock", horizon_max=16))
print("linear impact response:", round(float(lin.estimate["linear"][0]), 3))
