"""Pricing and risk functionals on quantile payoffs.

With q the decreasing kernel quantile, the time-0 price of a payoff
with quantile function phi is e^{-rT} * int_0^1 phi(x) q(x) dx; solvers
work with the undiscounted integral against a forward budget e^{rT} C.

Expected shortfall appears throughout in the lower-tail-average form

    ES_p(phi) = (1/p) int_0^p phi(x) dx,

with the constraint reading ES_p(phi) >= L for a floor L; the usual
loss-convention ES is its negation.  Value at risk is the p-quantile
phi(p), which dominates the lower-tail average for increasing phi.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from scipy.integrate import IntegrationWarning, quad
from scipy.special import ndtr

from .market import (
    QUAD_ABS_TOL,
    QUAD_LIMIT,
    QUAD_REL_TOL,
    _SQRT_2PI,
    KernelQuantile,
    _z_of,
    kernel_quantile,
    q_integral,
)
from .quantile import ParametricPayoff, QuantilePayoff, StepPayoff, TwoPiecePayoff
from .utility import Utility


class NonPurchasableError(ValueError):
    """Price is +inf or undefined; such an asset cannot be bought."""


@dataclass(frozen=True)
class EsFloor:
    """Lower-tail average over [0, p] must stay above level."""

    p: float
    level: float

    def __post_init__(self):
        if not (0.0 < self.p < 1.0):
            raise ValueError(f"confidence level p must lie in (0,1), got {self.p}")


@dataclass(frozen=True)
class UtilityFloor:
    """Expected utility int_0^1 u(phi) dx must stay above level (< 0)."""

    utility: Utility
    level: float

    def __post_init__(self):
        if not (self.level < 0.0):
            raise ValueError(f"utility floor must be negative, got {self.level}")


@dataclass(frozen=True)
class RiskSpec:
    budget: float
    constraint: EsFloor | UtilityFloor | None = None


def _signed_tail_quad(integrand, za, zb):
    """Integrate positive and negative parts separately in z-space.

    Returns (pos, neg) with each possibly inf; the caller decides how
    infinities combine.
    """
    out = []
    for sign in (1.0, -1.0):
        def part(z, s=sign):
            v = integrand(z)
            return max(s * v, 0.0)

        with warnings.catch_warnings():
            warnings.simplefilter("error", IntegrationWarning)
            try:
                val, err = quad(
                    part, za, zb,
                    epsabs=QUAD_ABS_TOL, epsrel=QUAD_REL_TOL, limit=QUAD_LIMIT,
                )
            except (IntegrationWarning, OverflowError):
                val, err = math.inf, 0.0
        if not math.isfinite(val):
            val = math.inf
        out.append(val)
    return out[0], out[1]


def price_undiscounted(phi: QuantilePayoff, k: KernelQuantile) -> float:
    """int_0^1 phi(x) q(x) dx; -inf allowed, +inf or undefined raises."""
    if isinstance(phi, TwoPiecePayoff):
        return phi.k2 * q_integral(k, 0.0, phi.alpha) + phi.k1 * q_integral(
            k, phi.alpha, 1.0
        )
    if isinstance(phi, StepPayoff):
        return math.fsum(v * q_integral(k, lo, hi) for lo, hi, v in phi.segments())

    def integrand(z):
        x = float(ndtr(z))
        if not (0.0 < x < 1.0):
            return 0.0
        return phi.evaluate(x) * kernel_quantile(k, x) * math.exp(-0.5 * z * z) / _SQRT_2PI

    pos, neg = _signed_tail_quad(integrand, -math.inf, math.inf)
    if math.isinf(pos):
        raise NonPurchasableError(
            "positive part of the price integral diverges" + ("" if math.isfinite(neg) else "; integral undefined")
        )
    if math.isinf(neg):
        return -math.inf
    return pos - neg


def price(phi: QuantilePayoff, k: KernelQuantile, r: float, T: float) -> float:
    """Discounted price e^{-rT} int phi q dx."""
    return math.exp(-r * T) * price_undiscounted(phi, k)


def expected_utility(phi: QuantilePayoff, u: Utility) -> float:
    """int_0^1 u(phi(x)) dx; +-inf representable."""
    if isinstance(phi, TwoPiecePayoff):
        return phi.alpha * float(u.evaluate(phi.k2)) + (1.0 - phi.alpha) * float(
            u.evaluate(phi.k1)
        )
    if isinstance(phi, StepPayoff):
        return math.fsum((hi - lo) * float(u.evaluate(v)) for lo, hi, v in phi.segments())

    def integrand(z):
        x = float(ndtr(z))
        if not (0.0 < x < 1.0):
            return 0.0
        return float(u.evaluate(phi.evaluate(x))) * math.exp(-0.5 * z * z) / _SQRT_2PI

    pos, neg = _signed_tail_quad(integrand, -math.inf, math.inf)
    if math.isinf(pos) and math.isinf(neg):
        raise ValueError("expected utility undefined: both parts diverge")
    if math.isinf(pos):
        return math.inf
    if math.isinf(neg):
        return -math.inf
    return pos - neg


def expected_shortfall_avg(phi: QuantilePayoff, p: float) -> float:
    """(1/p) int_0^p phi(x) dx; the constraint holds iff this >= L.

    The two-piece case is evaluated in exact rational arithmetic: the
    binding digital constructions carry k2 ~ (pL - (p-alpha)k1)/alpha
    with alpha near the underflow floor, and the float dot product
    alpha*k2 + (p-alpha)*k1 would lose the identity to cancellation.
    """
    if not (0.0 < p < 1.0):
        raise ValueError(f"confidence level p must lie in (0,1), got {p}")
    if isinstance(phi, TwoPiecePayoff):
        if phi.alpha >= p:
            return phi.k2
        acc = Fraction(phi.alpha) * Fraction(phi.k2)
        acc += (Fraction(p) - Fraction(phi.alpha)) * Fraction(phi.k1)
        return float(acc / Fraction(p))
    if isinstance(phi, StepPayoff):
        total = 0.0
        for lo, hi, v in phi.segments():
            if lo >= p:
                break
            total += v * (min(hi, p) - lo)
        return total / p

    def integrand(z):
        x = float(ndtr(z))
        if not (0.0 < x < 1.0):
            return 0.0
        return phi.evaluate(x) * math.exp(-0.5 * z * z) / _SQRT_2PI

    pos, neg = _signed_tail_quad(integrand, -math.inf, _z_of(p))
    if math.isinf(neg):
        return -math.inf
    if math.isinf(pos):
        return math.inf
    return (pos - neg) / p


def expected_shortfall_gap(phi: QuantilePayoff, p: float, level: float) -> float:
    """ES_p(phi) - level, exact (rational) for two-piece payoffs."""
    if isinstance(phi, TwoPiecePayoff) and phi.alpha < p:
        acc = Fraction(phi.alpha) * Fraction(phi.k2)
        acc += (Fraction(p) - Fraction(phi.alpha)) * Fraction(phi.k1)
        return float(acc / Fraction(p) - Fraction(level))
    return expected_shortfall_avg(phi, p) - level


def value_at_risk(phi: QuantilePayoff, p: float) -> float:
    """The p-quantile phi(p), with the inf convention at jumps."""
    if not (0.0 < p < 1.0):
        raise ValueError(f"confidence level p must lie in (0,1), got {p}")
    return phi.evaluate(p)


@dataclass(frozen=True)
class FeasibilityReport:
    price_undiscounted: float
    forward_budget: float
    budget_slack: float
    price_ok: bool
    risk_value: Optional[float]
    risk_slack: Optional[float]
    risk_ok: bool

    @property
    def ok(self) -> bool:
        return self.price_ok and self.risk_ok

    def to_dict(self) -> dict:
        return {
            "price_undiscounted": self.price_undiscounted,
            "forward_budget": self.forward_budget,
            "budget_slack": self.budget_slack,
            "price_ok": self.price_ok,
            "risk_value": self.risk_value,
            "risk_slack": self.risk_slack,
            "risk_ok": self.risk_ok,
            "ok": self.ok,
        }


def check_feasible(
    phi: QuantilePayoff,
    k: KernelQuantile,
    spec: RiskSpec,
    slack_tol: float = 0.0,
    discount: bool = False,
) -> FeasibilityReport:
    """Evaluate both constraints and report signed slacks.

    With discount=False the budget bounds the undiscounted integral
    directly; with discount=True the budget is a time-0 amount and the
    bound becomes e^{rT} * budget.
    """
    fwd = spec.budget
    if discount:
        fwd = spec.budget * math.exp(k.market.r * k.market.T)
    cost = price_undiscounted(phi, k)
    budget_slack = fwd - cost
    risk_value = risk_slack = None
    risk_ok = True
    if isinstance(spec.constraint, EsFloor):
        risk_value = expected_shortfall_avg(phi, spec.constraint.p)
        risk_slack = expected_shortfall_gap(phi, spec.constraint.p, spec.constraint.level)
        risk_ok = risk_slack >= -slack_tol
    elif isinstance(spec.constraint, UtilityFloor):
        risk_value = expected_utility(phi, spec.constraint.utility)
        risk_slack = risk_value - spec.constraint.level
        risk_ok = risk_slack >= -slack_tol
    return FeasibilityReport(
        price_undiscounted=cost,
        forward_budget=fwd,
        budget_slack=budget_slack,
        price_ok=budget_slack >= -slack_tol,
        risk_value=risk_value,
        risk_slack=risk_slack,
        risk_ok=risk_ok,
    )
