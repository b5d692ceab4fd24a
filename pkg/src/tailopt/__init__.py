"""Optimal payoff design under budget and tail-risk constraints."""

from .market import KernelQuantile, MarketParams, Orientation, e_gamma, kernel_quantile
from .quantile import DiscreteRV, ParametricPayoff, StepPayoff, TwoPiecePayoff
from .risk import EsFloor, RiskSpec, UtilityFloor
from .solve import (
    ConstructionError,
    DigitalConstruction,
    SolveReport,
    binding_criterion,
    digital_for_target,
    divergence_sweep,
    solve_limited_liability,
)
from .utility import (
    KahnemanTversky,
    PiecewiseCustom,
    PowerGain,
    PowerLoss,
    TailCertificate,
    TailSide,
)

__all__ = [
    "KernelQuantile",
    "MarketParams",
    "Orientation",
    "e_gamma",
    "kernel_quantile",
    "DiscreteRV",
    "ParametricPayoff",
    "StepPayoff",
    "TwoPiecePayoff",
    "EsFloor",
    "RiskSpec",
    "UtilityFloor",
    "ConstructionError",
    "DigitalConstruction",
    "SolveReport",
    "binding_criterion",
    "digital_for_target",
    "divergence_sweep",
    "solve_limited_liability",
    "KahnemanTversky",
    "PiecewiseCustom",
    "PowerGain",
    "PowerLoss",
    "TailCertificate",
    "TailSide",
]

__version__ = "0.1.0"
