"""Weighted multilevel and multi-index Monte Carlo."""
from .errors import (ConfigError, InsufficientDataError, NonFiniteSampleError, OptimizerError,
                     PlanningError, WmlmcError)
from .level_stats import LevelMoments
from .payoff import PayoffKind, PayoffSpec
from .planner import EstimatorResult, mlmc_plan, wmlmc_plan
from .sde import Family, ModelSpec, SchemeKind, SchemeSpec

__version__ = "0.1.0"
