"""State-dependent local projections, smooth local projections and LP-IV multipliers."""

from .data import (Dataset, QuarterIndex, SecurityRecord, StateSeries, build_state,
                   compute_fiscal_cost, detrend, gordon_krenn_scale, hp_filter, linear_detrend,
                   load_dataset, load_securities, standardize_shock)
from .errors import (ConfigError, DomainError, EstimationError, FiscalStateError,
                     IdentificationError, IngestionError, SingularDesignError,
                     UnsupportedConfigurationError)
from .lp import (IrfResult, LpSpec, MultiplierResult, difference_table, estimate_continuous,
                 estimate_horse_race, estimate_lp, estimate_multiplier)
from .regression import effective_f, newey_west, ols, tsls
from .shocks import (NarrativeRestriction, ShockSeries, VarModel, estimate_bvar,
                     narrative_shocks, timing_shocks)
from .slp import bspline_basis, difference_penalty, estimate_slp, penalized_ls

__all__ = [name for name in dir() if not name.startswith("_")]
