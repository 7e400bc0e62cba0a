"""Duopoly pricing and data-mechanism competition with rollover data plans."""

from .demand import (
    DemandModel,
    Mechanism,
    RolloverProfile,
    expected_overage,
    expected_usage,
    make_point_mass_demand,
    make_truncated_lognormal_demand,
    make_uniform_demand,
    rollover_profile,
    rollover_stationary,
)
from .market import OperatorProfile, PricingStrategy, partition
from .pricing_game import pricing_equilibrium, threshold_equilibrium
from .valuation import ValuationDistribution, make_truncated_gamma, make_uniform

__version__ = "0.1.0"
