"""Complete-market model on the Black-Scholes log-price.

Under the physical measure the terminal log-price s_T is normal with
mean s0 + (mu - sigma^2/2)T and standard deviation sigma*sqrt(T); the
risk-neutral density is the same normal with mu replaced by r.  The
ratio of the two densities, expressed through the uniform variable
U = F_{s_T}(s_T), is

    (dQ/dP)(U) = exp(theta * (-theta*T/2 - sqrt(T) * PhiInv(U))),

with market price of risk theta = (mu - r)/sigma.  For mu > r this is
decreasing in U and equals the decreasing quantile q = (1 - F_{dQ/dP})^{-1}
of the pricing kernel; it blows up as U -> 0.  For mu < r the blow-up is
at U -> 1, and this module re-indexes x -> 1-x so that every caller sees
a decreasing q.

All kernel integrals reduce, after the substitution z = PhiInv(x), to
Gaussian-weighted exponentials with closed forms:

    int_a^b q(x)^beta dx
        = exp(beta*(beta-1)*theta^2*T/2)
          * (Phi(PhiInv(b) + beta*c) - Phi(PhiInv(a) + beta*c)),

where c = |theta|*sqrt(T).  The moment e(gamma) = E_P[(dQ/dP)^{gamma/(gamma-1)}]
is the beta = gamma/(gamma-1) case on (0,1):  exp(theta^2*T*gamma / (2*(gamma-1)^2)).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Optional

from scipy.integrate import IntegrationWarning, quad
from scipy.special import ndtr, ndtri

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

# PhiInv domain clamp; the digital construction drives quantile arguments
# toward 0, so the floor sits near the smallest positive normal double.
PHI_ARG_LO = 1e-300
PHI_ARG_HI = 1.0 - 1e-16

QUAD_ABS_TOL = 1e-10
QUAD_REL_TOL = 1e-8
QUAD_LIMIT = 2000

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def norm_cdf(z: float) -> float:
    return float(ndtr(z))


def norm_ppf(x: float) -> float:
    """PhiInv with the argument clamped to [PHI_ARG_LO, PHI_ARG_HI]."""
    return float(ndtri(min(max(x, PHI_ARG_LO), PHI_ARG_HI)))


def norm_pdf(z: float) -> float:
    return math.exp(-0.5 * z * z) / _SQRT_2PI


class Orientation(Enum):
    DECREASING_IN_U = "decreasing"
    INCREASING_IN_U = "increasing"


@dataclass(frozen=True)
class MarketParams:
    """Black-Scholes market constants; s0 is the initial log-price."""

    mu: float
    r: float
    sigma: float
    T: float
    s0: float = 0.0

    def __post_init__(self):
        if not (self.sigma > 0.0):
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not (self.T > 0.0):
            raise ValueError(f"T must be positive, got {self.T}")
        if not math.isfinite((self.mu - self.r) / self.sigma):
            raise ValueError("market price of risk is not finite")

    @property
    def theta(self) -> float:
        """Market price of risk (mu - r)/sigma."""
        return (self.mu - self.r) / self.sigma

    def p_mean(self) -> float:
        return self.s0 + (self.mu - 0.5 * self.sigma**2) * self.T

    def q_mean(self) -> float:
        return self.s0 + (self.r - 0.5 * self.sigma**2) * self.T

    def sd(self) -> float:
        return self.sigma * math.sqrt(self.T)


def load_market(path) -> MarketParams:
    """Read mu, r, sigma, T, s0 from a TOML key-value file."""
    with open(Path(path), "rb") as f:
        raw = tomllib.load(f)
    kwargs = {k: float(raw[k]) for k in ("mu", "r", "sigma", "T") if k in raw}
    missing = {"mu", "r", "sigma", "T"} - kwargs.keys()
    if missing:
        raise ValueError(f"market config missing keys: {sorted(missing)}")
    kwargs["s0"] = float(raw.get("s0", 0.0))
    return MarketParams(**kwargs)


@dataclass(frozen=True)
class KernelQuantile:
    """Decreasing quantile of the pricing kernel dQ/dP.

    For mu < r the raw kernel is increasing in U; `orientation` records
    that and the closed forms below are written in the re-indexed
    (decreasing) variable, so downstream solvers never see the
    increasing branch.  A generic decreasing kernel can be supplied as
    `custom_log_q`; integrals then fall back to adaptive quadrature in
    the z = PhiInv(x) variable.
    """

    market: MarketParams
    orientation: Orientation
    custom_log_q: Optional[Callable[[float], float]] = None

    @classmethod
    def from_market(cls, market: MarketParams) -> "KernelQuantile":
        orient = (
            Orientation.DECREASING_IN_U
            if market.theta >= 0.0
            else Orientation.INCREASING_IN_U
        )
        return cls(market=market, orientation=orient)

    @classmethod
    def from_quantile(
        cls, market: MarketParams, log_q: Callable[[float], float]
    ) -> "KernelQuantile":
        return cls(
            market=market,
            orientation=Orientation.DECREASING_IN_U,
            custom_log_q=log_q,
        )

    @property
    def loading(self) -> float:
        """|theta| * sqrt(T): decay rate of log q in the z variable."""
        return abs(self.market.theta) * math.sqrt(self.market.T)


def p_density(m: MarketParams, x: float) -> float:
    """Physical density of s_T: normal(s0 + (mu - sigma^2/2)T, sigma^2 T)."""
    sd = m.sd()
    return norm_pdf((x - m.p_mean()) / sd) / sd


def q_density(m: MarketParams, x: float) -> float:
    """Risk-neutral density of s_T: p_density with mu replaced by r."""
    sd = m.sd()
    return norm_pdf((x - m.q_mean()) / sd) / sd


def log_kernel_quantile(k: KernelQuantile, x: float) -> float:
    """log q(x); evaluate here when q(x) itself would overflow."""
    if not (0.0 < x < 1.0):
        raise ValueError(f"kernel quantile argument must lie in (0,1), got {x}")
    if k.custom_log_q is not None:
        return float(k.custom_log_q(x))
    c = k.loading
    return -0.5 * c * c - c * norm_ppf(x)


def kernel_quantile(k: KernelQuantile, x: float) -> float:
    """q(x) = exp(theta(-theta T/2 - sqrt(T) PhiInv(x))) for mu >= r."""
    return math.exp(log_kernel_quantile(k, x))


def _z_of(x: float) -> float:
    if x <= 0.0:
        return -math.inf
    if x >= 1.0:
        return math.inf
    return norm_ppf(x)


def _gauss_shift_mass(za: float, zb: float, shift: float) -> float:
    """int_za^zb exp(-shift*z) phi(z) dz / exp(shift^2/2) = Phi(zb+shift) - Phi(za+shift).

    Evaluated through the survival function on the right tail so the
    difference keeps full relative accuracy there.
    """
    a, b = za + shift, zb + shift
    if a > 0.0 and b > 0.0:
        return float(ndtr(-a) - ndtr(-b))
    return float(ndtr(b) - ndtr(a))


def _tail_divergent(k: KernelQuantile, beta: float, a: float, b: float) -> bool:
    """Sufficient divergence test at the interval ends.

    For decreasing q, int_0^eps q^beta diverges when x * q(x)^beta does
    not vanish as x -> 0 (and likewise with 1-x at the upper end, where
    q^beta blows up for beta < 0).
    """
    if a == 0.0:
        probes = (1e-8, 1e-16, 1e-32, 1e-64, 1e-128, 1e-250)
        t = [beta * log_kernel_quantile(k, x) + math.log(x) for x in probes]
        if t[-1] > math.log(1e-10) and t[-1] > t[0] + math.log(1e-3):
            return True
    if b == 1.0:
        probes = (1e-4, 1e-8, 1e-12, 1e-15)
        t = [
            beta * log_kernel_quantile(k, 1.0 - eps) + math.log(eps) for eps in probes
        ]
        if t[-1] > math.log(1e-10) and t[-1] > t[0] + math.log(1e-3):
            return True
    return False


def _quad_q_power(k: KernelQuantile, beta: float, a: float, b: float) -> float:
    """Adaptive quadrature of int_a^b q(x)^beta dx after z-substitution.

    Returns math.inf when the integral diverges (end-point probe plus
    quadrature failure detection).
    """
    if _tail_divergent(k, beta, a, b):
        return math.inf
    za, zb = _z_of(a), _z_of(b)

    def integrand(z):
        x = min(max(float(ndtr(z)), PHI_ARG_LO), PHI_ARG_HI)
        lq = log_kernel_quantile(k, x)
        t = beta * lq - 0.5 * z * z
        if t > 700.0:
            return math.inf
        return math.exp(t) / _SQRT_2PI

    with warnings.catch_warnings():
        warnings.simplefilter("error", IntegrationWarning)
        try:
            val, err = quad(
                integrand,
                za,
                zb,
                epsabs=QUAD_ABS_TOL,
                epsrel=QUAD_REL_TOL,
                limit=QUAD_LIMIT,
            )
        except (IntegrationWarning, OverflowError):
            return math.inf
    if not math.isfinite(val) or err > max(QUAD_ABS_TOL, 10.0 * QUAD_REL_TOL * abs(val)):
        return math.inf
    return float(val)


def q_integral(k: KernelQuantile, a: float, b: float) -> float:
    """int_a^b q(x) dx; closed form Phi(PhiInv(b)+c) - Phi(PhiInv(a)+c)."""
    if not (0.0 <= a <= b <= 1.0):
        raise ValueError(f"need 0 <= a <= b <= 1, got a={a}, b={b}")
    if a == b:
        return 0.0
    if k.custom_log_q is not None:
        return _quad_q_power(k, 1.0, a, b)
    return _gauss_shift_mass(_z_of(a), _z_of(b), k.loading)


def q_power_integral(k: KernelQuantile, gamma: float, a: float, b: float) -> float:
    """I(a,b) = int_a^b q(x)^beta dx with beta = gamma/(gamma-1).

    Closed form exp(beta*(beta-1)*theta^2*T/2) * (Phi(PhiInv(b)+beta*c)
    - Phi(PhiInv(a)+beta*c)).  Returns math.inf when a generic kernel
    makes the integral diverge; for the Black-Scholes kernel it is
    always finite.
    """
    if gamma == 1.0:
        raise ValueError("gamma = 1 is excluded (beta = gamma/(gamma-1) undefined)")
    if not (0.0 <= a <= b <= 1.0):
        raise ValueError(f"need 0 <= a <= b <= 1, got a={a}, b={b}")
    if a == b:
        return 0.0
    beta = gamma / (gamma - 1.0)
    if k.custom_log_q is not None:
        return _quad_q_power(k, beta, a, b)
    c = k.loading
    return math.exp(0.5 * beta * (beta - 1.0) * c * c) * _gauss_shift_mass(
        _z_of(a), _z_of(b), beta * c
    )


def e_gamma(k: KernelQuantile, gamma: float) -> float:
    """e(gamma) = E_P[(dQ/dP)^{gamma/(gamma-1)}].

    Black-Scholes closed form exp(theta^2*T*gamma/(2*(gamma-1)^2)); a
    Gaussian integral, finite for every gamma != 1.
    """
    if gamma == 1.0:
        raise ValueError("gamma = 1 is excluded")
    if k.custom_log_q is not None:
        return q_power_integral(k, gamma, 0.0, 1.0)
    th2t = k.loading**2
    return math.exp(th2t * gamma / (2.0 * (gamma - 1.0) ** 2))
