"""Payoff-design solvers.

Three computational results live here:

1. digital_for_target: under an expected-shortfall floor, a tail-risk-
   seeking investor reaches any target utility with a digital payoff
   phi = k2 on [0, alpha), k1 on [alpha, 1].  Pinning the lower-tail
   average to the floor L fixes k2 = (pL - (p - alpha) k1)/alpha; the
   budget requirement then reads

       p L - (p - alpha) k1 <= (alpha / int_0^alpha q) (B - k1 int_alpha^1 q),

   which holds for small alpha whenever q blows up at 0, while the
   objective alpha u(k2) + (1 - alpha) u(k1) -> u(k1) because the left
   tail of u decays slower than |.|^eta.

2. pointwise_concave_solve: for concave increasing u and a positive
   decreasing kernel quantile q, any increasing phi* with
   alpha q(x) in du(phi*(x)) solves both the utility-maximization and
   cost-minimization problems on [a, b]; concretely
   phi*(x) = clip(inverse_marginal(u, alpha q(x))).

3. The two-stage limited-liability optimizer: split [0,1] at p, solve
   the loss-side cost minimization on [0, p] under the u_R floor (value
   C1(p)) and the gain-side utility maximization on [p, 1] with budget
   C2(p) = e^{rT} C - C1(p) (value V(p)); line-search p.  For the power
   families, with I_k(a,b) = int_a^b q^{gamma_k/(gamma_k-1)}:

       C1(p) = -(-L)^{1/gamma_R} I1(0,p)^{(gamma_R-1)/gamma_R}
       V(p)  = C2(p)^{gamma_I} I2(p,1)^{1-gamma_I}

   and the risk constraint is binding iff e(gamma_R) is finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional, Sequence

from scipy.optimize import brentq

from .market import KernelQuantile, e_gamma, kernel_quantile, q_integral, q_power_integral
from .quantile import ParametricPayoff, QuantilePayoff, TwoPiecePayoff
from .risk import EsFloor, expected_shortfall_gap, price_undiscounted
from .utility import (
    PiecewiseCustom,
    PowerGain,
    PowerLoss,
    TailCertificate,
    TailSide,
    Utility,
    inverse_marginal,
    is_concave_on,
    verify_tail_certificate,
)

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


class ConstructionError(RuntimeError):
    """Digital construction could not be completed; carries diagnostics."""

    def __init__(self, message: str, diagnostics: Optional[dict] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class DigitalConstruction:
    """Two-piece payoff certifying one target utility level.

    k2 equals the nearest double to (p L - (p - alpha) k1)/alpha, so the
    lower-tail average binds the floor to within es_slack (exact, >= 0).
    budget_slack is forward budget minus undiscounted price.
    """

    alpha: float
    k1: float
    k2: float
    objective: float
    budget_slack: float
    es_slack: float
    certificate_bound: float
    kernel_blowup_observed: bool

    @property
    def payoff(self) -> TwoPiecePayoff:
        return TwoPiecePayoff(alpha=self.alpha, k2=self.k2, k1=self.k1)


def _binding_k2(alpha: float, k1: float, p: float, level: float) -> float:
    """Nearest double to (p*level - (p - alpha)*k1)/alpha."""
    num = Fraction(p) * Fraction(level) - (Fraction(p) - Fraction(alpha)) * Fraction(k1)
    return float(num / Fraction(alpha))


def digital_for_target(
    k: KernelQuantile,
    u: Utility,
    es: EsFloor,
    budget: float,
    target: float,
    margin: Optional[float] = None,
    *,
    certificate: TailCertificate,
    alpha_floor: float = 2.0**-1000,
    binding_tol: float = 5e-11,
    max_polish: int = 200_000,
) -> DigitalConstruction:
    """Build a digital payoff with utility >= target under budget and ES floor.

    Picks k1 with u(k1) >= target + margin by bisection, then halves
    alpha from p/2 until the budget holds and the objective clears the
    target; finally nudges alpha through neighbouring odd-mantissa
    doubles until the exact lower-tail average sits in [L, L + tol].
    Budget is the time-0 amount; internally the undiscounted price is
    compared against e^{rT} * budget.
    """
    p, level = es.p, es.level
    if certificate.side is not TailSide.LEFT_RISK_SEEKING:
        raise ConstructionError("a left-tail (risk-seeking) certificate is required")
    cert_check = verify_tail_certificate(u, certificate)
    if not cert_check.passed:
        raise ConstructionError(
            "tail certificate failed",
            {"first_violation": cert_check.first_violation},
        )
    if margin is None:
        margin = max(1.0, 0.01 * abs(target))
    want = target + margin

    # probe for blow-up of q near 0 (sufficient, not necessary)
    blowup = kernel_quantile(k, 1e-10) > 10.0 * kernel_quantile(k, 0.5)

    # smallest k1 (within bisection resolution) with u(k1) >= target + margin
    hi = 1.0
    while float(u.evaluate(hi)) < want:
        hi *= 2.0
        if hi > 1e300:
            raise ConstructionError(
                "utility is bounded above below target + margin",
                {"sup_probe": float(u.evaluate(1e300)), "target": target},
            )
    lo = 0.0 if hi == 1.0 else hi / 2.0
    for _ in range(120):
        mid = 0.5 * (lo + hi)
        if float(u.evaluate(mid)) >= want:
            hi = mid
        else:
            lo = mid
    k1 = hi

    m = k.market
    fwd_budget = budget * math.exp(m.r * m.T)

    def audit(alpha: float, k2: float):
        cost = k2 * q_integral(k, 0.0, alpha) + k1 * q_integral(k, alpha, 1.0)
        obj = alpha * float(u.evaluate(k2)) + (1.0 - alpha) * float(u.evaluate(k1))
        return cost, obj

    alpha = p / 2.0
    best_violation = math.inf
    best_diag: dict = {}
    while True:
        k2 = (p * level - (p - alpha) * k1) / alpha
        cost, obj = audit(alpha, k2)
        feasible = cost <= fwd_budget and obj >= target and k2 < k1
        if feasible:
            break
        violation = max(cost - fwd_budget, target - obj)
        if violation < best_violation:
            best_violation = violation
            best_diag = {
                "alpha": alpha,
                "budget_slack": fwd_budget - cost,
                "objective": obj,
            }
        alpha *= 0.5
        if alpha < alpha_floor:
            raise ConstructionError(
                "alpha underflowed before feasibility; limiting slack reported",
                best_diag | {"alpha_floor": alpha_floor, "target": target},
            )

    # polish: scan odd-mantissa alphas in (alpha/2, alpha] for an exact
    # nonnegative ES slack within binding_tol (see risk.expected_shortfall_avg)
    def exact_gap(a: float, k2_: float) -> float:
        return expected_shortfall_gap(TwoPiecePayoff(a, k2_, k1), p, level)

    def acceptable(a: float, k2_: float, gap: float) -> bool:
        if not (0.0 <= gap <= binding_tol and k2_ < k1):
            return False
        cost_, obj_ = audit(a, k2_)
        return cost_ <= fwd_budget and obj_ >= target

    k2 = _binding_k2(alpha, k1, p, level)
    gap = exact_gap(alpha, k2)
    if not acceptable(alpha, k2, gap):
        mant, exp2 = math.frexp(alpha)
        m0 = int(math.ldexp(mant, 53))
        scale = math.ldexp(1.0, exp2 - 53)
        best = (abs(gap), alpha, k2, gap) if gap >= 0.0 else (math.inf, alpha, k2, gap)
        cand = m0 - 1 if m0 % 2 == 0 else m0 - 2
        found = False
        for _ in range(max_polish):
            if cand <= 2**52:
                break
            a = cand * scale
            k2_c = _binding_k2(a, k1, p, level)
            g = exact_gap(a, k2_c)
            if acceptable(a, k2_c, g):
                alpha, k2, gap = a, k2_c, g
                found = True
                break
            if 0.0 <= g < best[0]:
                best = (g, a, k2_c, g)
            cand -= 2
        if not found and math.isfinite(best[0]):
            _, alpha, k2, gap = best

    cost, obj = audit(alpha, k2)
    cert_bound = (1.0 - alpha) * float(u.evaluate(k1)) - certificate.c * alpha ** (
        1.0 - certificate.eta
    ) * abs(p * level - (p - alpha) * k1) ** certificate.eta
    return DigitalConstruction(
        alpha=alpha,
        k1=k1,
        k2=k2,
        objective=obj,
        budget_slack=fwd_budget - cost,
        es_slack=gap,
        certificate_bound=cert_bound,
        kernel_blowup_observed=blowup,
    )


def pointwise_concave_solve(
    u: Utility,
    k: KernelQuantile,
    alpha: float,
    a: float,
    b: float,
    lo: float = -math.inf,
    hi: float = math.inf,
) -> ParametricPayoff:
    """phi*(x) = clip(inverse_marginal(u, alpha q(x)), lo, hi) on [a, b].

    Increasing because q decreases and the inverse marginal decreases in
    its argument; the clipped values satisfy the subdifferential
    condition through its one-sided boundary extension.
    """
    if alpha <= 0.0:
        raise ValueError(f"multiplier alpha must be positive, got {alpha}")
    if not (0.0 <= a <= b <= 1.0):
        raise ValueError(f"need 0 <= a <= b <= 1, got a={a}, b={b}")
    if not is_concave_on(u, lo, hi, around=0.5 * (max(lo, -1e6) + min(hi, 1e6))):
        raise ValueError(f"{type(u).__name__} is not concave on the requested range")

    def fn(x: float) -> float:
        v = inverse_marginal(u, alpha * kernel_quantile(k, x))
        return min(max(v, lo), hi)

    return ParametricPayoff(fn)


@dataclass(frozen=True)
class LeftSolution:
    """Loss-side minimum cost C1(p) and its payoff on [0, p]."""

    c1: float
    payoff: Optional[ParametricPayoff]
    multiplier: Optional[float]
    binding: bool


def left_problem(
    k: KernelQuantile,
    u_r: Utility,
    level: float,
    p: float,
    ceiling: float = 0.0,
) -> LeftSolution:
    """inf int_0^p f1 q dx over increasing f1 <= 0 with int_0^p u_r(f1) >= level.

    PowerLoss closed form: with I1 = int_0^p q^{gamma_R/(gamma_R-1)},
    the binding multiplier is gamma_R (-level / I1)^{(gamma_R-1)/gamma_R}
    and C1 = -(-level)^{1/gamma_R} I1^{(gamma_R-1)/gamma_R}.  If I1
    diverges, C1 = -inf and the constraint cannot bind.  Generic concave
    u_r falls back to a scalar root-find on the multiplier.
    """
    if not (level < 0.0):
        raise ValueError(f"loss level must be negative, got {level}")
    if not (0.0 <= p <= 1.0):
        raise ValueError(f"split point must lie in [0,1], got {p}")
    if p == 0.0:
        return LeftSolution(c1=0.0, payoff=None, multiplier=None, binding=False)

    if isinstance(u_r, PowerLoss):
        g = u_r.gamma_r
        i1 = q_power_integral(k, g, 0.0, p)
        if math.isinf(i1):
            return LeftSolution(c1=-math.inf, payoff=None, multiplier=None, binding=False)
        mult = g * (-level / i1) ** ((g - 1.0) / g)
        c1 = -((-level) ** (1.0 / g)) * i1 ** ((g - 1.0) / g)
        payoff = pointwise_concave_solve(u_r, k, mult, 0.0, p, hi=ceiling)
        return LeftSolution(c1=c1, payoff=payoff, multiplier=mult, binding=True)

    if not is_concave_on(u_r, -1e12, 0.0):
        raise ValueError("u_r must be concave increasing and zero on gains")

    def util_at(log_mult: float) -> float:
        phi = pointwise_concave_solve(u_r, k, math.exp(log_mult), 0.0, p, hi=ceiling)
        return _restricted_expected_utility(phi, u_r, 0.0, p) - level

    lo_lm, hi_lm = 0.0, 0.0
    while util_at(lo_lm) < 0.0 and lo_lm > -600.0:
        lo_lm -= 2.0
    while util_at(hi_lm) > 0.0 and hi_lm < 600.0:
        hi_lm += 2.0
    if util_at(lo_lm) < 0.0:
        return LeftSolution(c1=-math.inf, payoff=None, multiplier=None, binding=False)
    log_mult = brentq(util_at, lo_lm, hi_lm, xtol=1e-13)
    mult = math.exp(log_mult)
    phi = pointwise_concave_solve(u_r, k, mult, 0.0, p, hi=ceiling)
    c1 = _restricted_price(phi, k, 0.0, p)
    return LeftSolution(c1=c1, payoff=phi, multiplier=mult, binding=True)


@dataclass(frozen=True)
class RightSolution:
    """Gain-side maximal utility V and its payoff on [p, 1]."""

    value: float
    payoff: Optional[ParametricPayoff]
    multiplier: Optional[float]
    difficult: bool
    feasible: bool


def right_problem(k: KernelQuantile, u_i: Utility, c2: float, p: float) -> RightSolution:
    """sup int_p^1 u_i(f2) dx over increasing f2 >= 0 with int_p^1 f2 q <= c2.

    PowerGain closed form: with I2 = int_p^1 q^{gamma_I/(gamma_I-1)},
    V = c2^{gamma_I} I2^{1-gamma_I} and the payoff is
    i2(mult * q) with mult = gamma_I (c2/I2)^{gamma_I-1}.  A divergent
    I2 means the investor is not difficult to satisfy: V = +inf.
    """
    if not (0.0 <= p <= 1.0):
        raise ValueError(f"split point must lie in [0,1], got {p}")
    if c2 < 0.0:
        return RightSolution(value=-math.inf, payoff=None, multiplier=None, difficult=True, feasible=False)
    if p == 1.0 or c2 == 0.0:
        zero = ParametricPayoff(lambda _x: 0.0)
        return RightSolution(value=0.0, payoff=zero, multiplier=None, difficult=True, feasible=True)

    if isinstance(u_i, PowerGain):
        g = u_i.gamma_i
        i2 = q_power_integral(k, g, p, 1.0)
        if math.isinf(i2):
            return RightSolution(value=math.inf, payoff=None, multiplier=None, difficult=False, feasible=True)
        if math.isinf(c2):
            return RightSolution(value=math.inf, payoff=None, multiplier=None, difficult=True, feasible=True)
        mult = g * (c2 / i2) ** (g - 1.0)
        value = c2**g * i2 ** (1.0 - g)
        payoff = pointwise_concave_solve(u_i, k, mult, p, 1.0, lo=0.0)
        return RightSolution(value=value, payoff=payoff, multiplier=mult, difficult=True, feasible=True)

    if not is_concave_on(u_i, 0.0, 1e12):
        raise ValueError("u_i must be concave increasing on gains and zero on losses")
    if math.isinf(c2):
        return RightSolution(
            value=float(u_i.evaluate(1e300)), payoff=None, multiplier=None, difficult=True, feasible=True
        )

    def cost_at(log_mult: float) -> float:
        phi = pointwise_concave_solve(u_i, k, math.exp(log_mult), p, 1.0, lo=0.0)
        return _restricted_price(phi, k, p, 1.0) - c2

    lo_lm, hi_lm = 0.0, 0.0
    while cost_at(hi_lm) > 0.0 and hi_lm < 600.0:
        hi_lm += 2.0
    while cost_at(lo_lm) < 0.0 and lo_lm > -600.0:
        lo_lm -= 2.0
    log_mult = brentq(cost_at, min(lo_lm, hi_lm), max(lo_lm, hi_lm), xtol=1e-13)
    mult = math.exp(log_mult)
    phi = pointwise_concave_solve(u_i, k, mult, p, 1.0, lo=0.0)
    value = _restricted_expected_utility(phi, u_i, p, 1.0)
    return RightSolution(value=value, payoff=phi, multiplier=mult, difficult=True, feasible=True)


def _restricted_price(phi: ParametricPayoff, k: KernelQuantile, a: float, b: float) -> float:
    from scipy.integrate import quad
    from scipy.special import ndtr

    from .market import _SQRT_2PI, _z_of

    def integrand(z):
        x = float(ndtr(z))
        if not (0.0 < x < 1.0):
            return 0.0
        return phi.evaluate(x) * kernel_quantile(k, x) * math.exp(-0.5 * z * z) / _SQRT_2PI

    val, _ = quad(integrand, _z_of(a), _z_of(b), epsabs=1e-11, epsrel=1e-10, limit=800)
    return float(val)


def _restricted_expected_utility(
    phi: ParametricPayoff, u: Utility, a: float, b: float
) -> float:
    from scipy.integrate import quad
    from scipy.special import ndtr

    from .market import _SQRT_2PI, _z_of

    def integrand(z):
        x = float(ndtr(z))
        if not (0.0 < x < 1.0):
            return 0.0
        return float(u.evaluate(phi.evaluate(x))) * math.exp(-0.5 * z * z) / _SQRT_2PI

    val, _ = quad(integrand, _z_of(a), _z_of(b), epsabs=1e-11, epsrel=1e-10, limit=800)
    return float(val)


@dataclass(frozen=True)
class SolveReport:
    """Optimal split and payoffs for the two-stage limited-liability problem."""

    p_star: float
    c1: float
    c2: float
    value: float
    left_payoff: Optional[ParametricPayoff]
    right_payoff: Optional[ParametricPayoff]
    payoff: Optional[ParametricPayoff]
    binding: bool

    def to_dict(self) -> dict:
        return {
            "p_star": self.p_star,
            "c1": self.c1,
            "c2": self.c2,
            "value": self.value,
            "binding": self.binding,
        }


def value_profile(
    k: KernelQuantile, u_r: Utility, u_i: Utility, level: float, forward_budget: float
) -> Callable[[float], float]:
    """V(p) = right-problem value at budget e^{rT}C - C1(p)."""

    def v_of(p: float) -> float:
        left = left_problem(k, u_r, level, p)
        if math.isinf(left.c1):
            return math.inf
        return right_problem(k, u_i, forward_budget - left.c1, p).value

    return v_of


def _golden_max_scalar(f, lo: float, hi: float, tol: float) -> float:
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def solve_limited_liability(
    k: KernelQuantile,
    u_r: Utility,
    u_i: Utility,
    level: float,
    budget: float,
    r: float,
    T: float,
    coarse: int = 64,
    p_tol: float = 1e-6,
) -> SolveReport:
    """Maximize V(p) over p in [0, 1] by coarse grid plus golden-section.

    V(p) need not be concave in p for generic utilities, so the grid
    stage is mandatory; golden-section then refines the best bracket to
    p_tol.  `binding` compares the optimum against the unconstrained
    (level -> -inf) value.
    """
    fwd = budget * math.exp(r * T)
    v_of = value_profile(k, u_r, u_i, level, fwd)

    ps = [0.0] + [1e-4 + i * (1.0 - 2e-4) / (coarse - 1) for i in range(coarse)] + [1.0]
    vals = [v_of(p) for p in ps]
    i_best = max(range(len(ps)), key=lambda i: vals[i])
    if math.isinf(vals[i_best]):
        p_star = ps[i_best]
    else:
        lo = ps[max(i_best - 1, 0)]
        hi = ps[min(i_best + 1, len(ps) - 1)]
        p_star = _golden_max_scalar(v_of, lo, hi, p_tol)
        if v_of(p_star) < vals[i_best]:
            p_star = ps[i_best]

    left = left_problem(k, u_r, level, p_star)
    c2 = fwd - left.c1
    right = right_problem(k, u_i, c2, p_star)

    combined = None
    if math.isfinite(right.value):
        f1, f2 = left.payoff, right.payoff

        def fn(x: float) -> float:
            if x < p_star and f1 is not None:
                return f1.evaluate(x)
            if f2 is not None:
                return f2.evaluate(x)
            return 0.0

        combined = ParametricPayoff(fn)

    unconstrained = right_problem(k, u_i, math.inf, 0.0).value
    binding = right.value < unconstrained
    return SolveReport(
        p_star=p_star,
        c1=left.c1,
        c2=c2,
        value=right.value,
        left_payoff=left.payoff,
        right_payoff=right.payoff,
        payoff=combined,
        binding=binding,
    )


@dataclass(frozen=True)
class BindingReport:
    e_value: float
    binding: bool


def binding_criterion(k: KernelQuantile, gamma_r: float) -> BindingReport:
    """The u_R floor binds iff e(gamma_R) = E[(dQ/dP)^{gamma_R/(gamma_R-1)}] is finite."""
    if not (gamma_r > 1.0):
        raise ValueError(f"gamma_r must exceed 1, got {gamma_r}")
    e_val = e_gamma(k, gamma_r)
    return BindingReport(e_value=e_val, binding=math.isfinite(e_val))


@dataclass(frozen=True)
class SweepRow:
    target: float
    investor_utility: float
    risk_utility: float
    alpha: Optional[float]
    k1: Optional[float]
    k2: Optional[float]
    bond_only: bool


@dataclass(frozen=True)
class SweepTable:
    rows: tuple
    investor_monotone: bool
    risk_decreasing: bool


def divergence_sweep(
    k: KernelQuantile,
    u_i: Utility,
    u_r: Utility,
    es: EsFloor,
    budget: float,
    targets: Sequence[float],
    *,
    certificate: TailCertificate,
    margin: Optional[float] = None,
) -> SweepTable:
    """For each target, build the ES-feasible digital and score it with u_r.

    Targets affordable with the bond alone (payoff e^{rT} C) get a
    zero-loss row.  As targets grow the u_i column is nondecreasing
    while the u_r column decreases without bound: the divergence the
    concave floor would have vetoed.
    """
    targets = list(targets)
    if any(b <= a for a, b in zip(targets, targets[1:])):
        raise ValueError("targets must be strictly increasing")
    m = k.market
    fwd = budget * math.exp(m.r * m.T)
    rows = []
    for target in targets:
        bond_val = float(u_i.evaluate(fwd))
        if bond_val >= target and fwd >= es.level:
            rows.append(
                SweepRow(
                    target=target,
                    investor_utility=bond_val,
                    risk_utility=float(u_r.evaluate(min(fwd, 0.0))),
                    alpha=None,
                    k1=None,
                    k2=None,
                    bond_only=True,
                )
            )
            continue
        con = digital_for_target(
            k, u_i, es, budget, target, margin, certificate=certificate
        )
        risk_val = con.alpha * float(u_r.evaluate(min(con.k2, 0.0))) + (
            1.0 - con.alpha
        ) * float(u_r.evaluate(min(con.k1, 0.0)))
        rows.append(
            SweepRow(
                target=target,
                investor_utility=con.objective,
                risk_utility=risk_val,
                alpha=con.alpha,
                k1=con.k1,
                k2=con.k2,
                bond_only=False,
            )
        )
    inv = [row.investor_utility for row in rows]
    rsk = [row.risk_utility for row in rows]
    return SweepTable(
        rows=tuple(rows),
        investor_monotone=all(b >= a for a, b in zip(inv, inv[1:])),
        risk_decreasing=all(b < a for a, b in zip(rsk, rsk[1:])),
    )
