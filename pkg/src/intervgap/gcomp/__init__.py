"""Monte Carlo g-computation engine."""

from .bootstrap import (
    Analysis,
    EffectEstimate,
    Sweep,
    bootstrap,
    estimate_effect,
    resample,
    sweep_single_mediators,
)
from .chains import FitOptions, ModelCache, fit_chain
from .engine import (
    GcompSettings,
    Law,
    Scenario,
    plan_query,
    simulate_counterfactual_mean,
    source_law,
)

__all__ = [
    "Analysis",
    "EffectEstimate",
    "FitOptions",
    "GcompSettings",
    "Law",
    "ModelCache",
    "Scenario",
    "Sweep",
    "bootstrap",
    "estimate_effect",
    "fit_chain",
    "plan_query",
    "resample",
    "simulate_counterfactual_mean",
    "source_law",
    "sweep_single_mediators",
]
