"""Utility families, marginal-utility inverses, and tail certificates.

The Kahneman-Tversky value function

    u(x) = x^gamma        for x >= 0
         = -lam*(-x)^gamma for x < 0

is S-shaped: increasing, convex on losses, concave on gains, kinked at
zero.  The two power families isolate its branches with limited
liability: PowerGain is zero on losses, PowerLoss is zero on gains.

A utility is "risk-seeking in the left tail" when u(x) > -c|x|^eta for
all x <= N with eta < 1, i.e. its losses decay strictly slower than any
concave power; TailCertificate carries such an (N, eta, c) witness and
verify_tail_certificate checks it on a geometric grid.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Tuple

import numpy as np

CONCAVITY_TOL = 1e-9


def _as_float_or_array(x, out):
    arr = np.asarray(out)
    if np.ndim(x) == 0:
        return float(arr)
    return arr


@dataclass(frozen=True)
class KahnemanTversky:
    """S-shaped value function with curvature gamma and loss aversion lam."""

    gamma: float
    lam: float

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not (self.lam > 0.0):
            raise ValueError(f"lam must be positive, got {self.lam}")

    def evaluate(self, x):
        ax = np.abs(np.asarray(x, dtype=float))
        powered = ax**self.gamma
        return _as_float_or_array(x, np.where(np.asarray(x) >= 0, powered, -self.lam * powered))


@dataclass(frozen=True)
class PowerGain:
    """u(x) = x^gamma_i on gains, 0 on losses; concave increasing on [0, inf)."""

    gamma_i: float

    def __post_init__(self):
        if not (0.0 < self.gamma_i < 1.0):
            raise ValueError(f"gamma_i must lie in (0, 1), got {self.gamma_i}")

    def evaluate(self, x):
        ax = np.abs(np.asarray(x, dtype=float))
        return _as_float_or_array(x, np.where(np.asarray(x) > 0, ax**self.gamma_i, 0.0))

    def marginal(self, x: float) -> float:
        if x <= 0.0:
            return math.inf
        return self.gamma_i * x ** (self.gamma_i - 1.0)

    def inverse_marginal(self, y: float) -> float:
        """i2(y) = (y/gamma_i)^{1/(gamma_i - 1)}."""
        if y <= 0.0:
            raise ValueError(f"marginal utility must be positive, got {y}")
        return (y / self.gamma_i) ** (1.0 / (self.gamma_i - 1.0))


@dataclass(frozen=True)
class PowerLoss:
    """u(x) = -(-x)^gamma_r on losses, 0 on gains; concave increasing on R."""

    gamma_r: float

    def __post_init__(self):
        if not (self.gamma_r > 1.0):
            raise ValueError(f"gamma_r must exceed 1, got {self.gamma_r}")

    def evaluate(self, x):
        ax = np.abs(np.asarray(x, dtype=float))
        return _as_float_or_array(x, np.where(np.asarray(x) < 0, -(ax**self.gamma_r), 0.0))

    def marginal(self, x: float) -> float:
        if x >= 0.0:
            return 0.0
        return self.gamma_r * (-x) ** (self.gamma_r - 1.0)

    def inverse_marginal(self, y: float) -> float:
        """i1(y) = -(y/gamma_r)^{1/(gamma_r - 1)}."""
        if y <= 0.0:
            raise ValueError(f"marginal utility must be positive, got {y}")
        return -((y / self.gamma_r) ** (1.0 / (self.gamma_r - 1.0)))


@dataclass(frozen=True)
class PiecewiseCustom:
    """Segments (start, fn) sorted by start; fn applies on [start, next_start)."""

    pieces: Tuple[Tuple[float, Callable[[float], float]], ...]

    def __post_init__(self):
        starts = [s for s, _ in self.pieces]
        if not starts or starts != sorted(starts):
            raise ValueError("piece breakpoints must be sorted")

    def evaluate(self, x):
        starts = [s for s, _ in self.pieces]

        def one(v: float) -> float:
            i = bisect_right(starts, v) - 1
            i = max(i, 0)
            return float(self.pieces[i][1](v))

        if np.ndim(x) == 0:
            return one(float(x))
        return np.array([one(float(v)) for v in np.asarray(x).ravel()]).reshape(
            np.shape(x)
        )


Utility = KahnemanTversky | PowerGain | PowerLoss | PiecewiseCustom


def evaluate(u: Utility, x):
    return u.evaluate(x)


def inverse_marginal(u: Utility, y: float) -> float:
    """Inverse of u' on the strictly concave branch.

    Closed form for the power families; for a concave PiecewiseCustom
    the derivative is inverted numerically by bisection.
    """
    if y <= 0.0:
        raise ValueError(f"marginal utility must be positive, got {y}")
    if isinstance(u, (PowerGain, PowerLoss)):
        return u.inverse_marginal(y)
    if isinstance(u, PiecewiseCustom):
        return _inverse_marginal_numeric(u, y)
    raise ValueError(f"inverse marginal not defined for {type(u).__name__}")


def _slope(u: Utility, x: float, h: float) -> float:
    return (u.evaluate(x + h) - u.evaluate(x)) / h


def _inverse_marginal_numeric(u: PiecewiseCustom, y: float) -> float:
    # concave u: derivative is nonincreasing; bisect for slope(x) ~ y
    h0 = 1e-7

    def d(x):
        h = h0 * max(abs(x), 1.0)
        return (u.evaluate(x + h) - u.evaluate(x - h)) / (2.0 * h)

    lo, hi = -1.0, 1.0
    for _ in range(600):
        if d(lo) > y:
            break
        lo *= 2.0
    for _ in range(600):
        if d(hi) < y:
            break
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if d(mid) > y:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _concavity_grid(lo: float, hi: float, around: float) -> np.ndarray:
    pts = [around]
    for base in (around, 0.0):
        for sgn in (-1.0, 1.0):
            scale = 1e-6
            while scale <= 1e12:
                pts.append(base + sgn * scale)
                scale *= 4.0
    pts.extend([lo, hi])
    arr = np.array(sorted({p for p in pts if lo <= p <= hi and math.isfinite(p)}))
    return arr


def is_concave_on(u: Utility, lo: float, hi: float, around: float = 0.0) -> bool:
    """Midpoint-inequality check of concavity on a grid spanning [lo, hi]."""
    if isinstance(u, PowerLoss):
        return True
    if isinstance(u, PowerGain):
        return lo >= 0.0
    if isinstance(u, KahnemanTversky):
        # kinked convex-concave at 0: concave only on one side
        return lo >= 0.0 or hi <= 0.0
    g = _concavity_grid(lo, hi, around)
    if len(g) < 3:
        return True
    vals = u.evaluate(g)
    mids = u.evaluate(0.5 * (g[:-1] + g[1:]))
    scale = np.maximum(np.abs(vals[:-1]) + np.abs(vals[1:]), 1.0)
    return bool(np.all(2.0 * mids >= vals[:-1] + vals[1:] - CONCAVITY_TOL * scale))


def subdifferential(
    u: Utility, x: float, domain: Tuple[float, float]
) -> Tuple[float, float]:
    """Slope interval {y >= 0 : u(x') <= u(x) + y(x'-x) for all x' in domain}.

    Singleton where u is differentiable; at the domain endpoints the
    interval extends one-sided ([D+ u, inf) on the left end, [0, D- u]
    on the right end).  Rejected when u is not concave on the domain.
    """
    lo, hi = domain
    if not (lo <= x <= hi):
        raise ValueError(f"x={x} outside domain [{lo}, {hi}]")
    if not is_concave_on(u, lo, hi, around=x):
        raise ValueError(f"{type(u).__name__} is not concave on [{lo}, {hi}]")

    def right_d(v: float) -> float:
        if isinstance(u, (PowerGain, PowerLoss)):
            if isinstance(u, PowerGain) and v <= 0.0:
                return math.inf if v == 0.0 else 0.0
            return u.marginal(v)
        if isinstance(u, KahnemanTversky) and v >= 0.0:
            return math.inf if v == 0.0 else u.gamma * v ** (u.gamma - 1.0)
        h = 1e-7 * max(abs(v), 1.0)
        return _slope(u, v, h)

    def left_d(v: float) -> float:
        if isinstance(u, (PowerGain, PowerLoss)):
            if isinstance(u, PowerGain) and v <= 0.0:
                return math.inf if v == 0.0 else 0.0
            return u.marginal(v)
        if isinstance(u, KahnemanTversky) and v > 0.0:
            return u.gamma * v ** (u.gamma - 1.0)
        h = 1e-7 * max(abs(v), 1.0)
        return _slope(u, v, -h)

    if x == lo:
        d = right_d(x)
        return (d, math.inf)
    if x == hi:
        return (0.0, left_d(x))
    return (right_d(x), left_d(x))


class TailSide(Enum):
    LEFT_RISK_SEEKING = "left"
    RIGHT_RISK_AVERSE = "right"


@dataclass(frozen=True)
class TailCertificate:
    """Witness (N, eta, c) for the power-tail bound on one side."""

    threshold: float
    eta: float
    c: float
    side: TailSide = TailSide.LEFT_RISK_SEEKING

    def __post_init__(self):
        if not (0.0 < self.eta < 1.0):
            raise ValueError(f"eta must lie in (0, 1), got {self.eta}")
        if not (self.c > 0.0):
            raise ValueError(f"c must be positive, got {self.c}")
        if self.side is TailSide.LEFT_RISK_SEEKING and self.threshold > 0.0:
            raise ValueError("left-tail threshold N must be <= 0")
        if self.side is TailSide.RIGHT_RISK_AVERSE and self.threshold < 0.0:
            raise ValueError("right-tail threshold N must be >= 0")

    def bound(self, x: float) -> float:
        mag = self.c * abs(x) ** self.eta
        return -mag if self.side is TailSide.LEFT_RISK_SEEKING else mag


@dataclass(frozen=True)
class CertificateCheck:
    passed: bool
    first_violation: Optional[float]
    points_checked: int


def verify_tail_certificate(
    u: Utility,
    cert: TailCertificate,
    far: float = 1e12,
    points_per_decade: int = 16,
) -> CertificateCheck:
    """Grid check of the defining inequality from the threshold out to |x| = far.

    Left side:  u(x) > -c|x|^eta for all x <= N.
    Right side: u(x) <  c|x|^eta for all x >= N.
    """
    start = max(abs(cert.threshold), 1e-9)
    n = max(2, int(points_per_decade * math.log10(far / start)))
    mags = np.geomspace(start, far, n)
    if cert.side is TailSide.LEFT_RISK_SEEKING:
        xs = np.concatenate(([cert.threshold], -mags))
        xs = np.unique(xs[xs <= cert.threshold])[::-1]  # outward from N
    else:
        xs = np.concatenate(([cert.threshold], mags))
        xs = np.unique(xs[xs >= cert.threshold])
    for x in xs:
        ux = float(u.evaluate(float(x)))
        bx = cert.bound(float(x))
        ok = ux > bx if cert.side is TailSide.LEFT_RISK_SEEKING else ux < bx
        if not ok:
            return CertificateCheck(False, float(x), len(xs))
    return CertificateCheck(True, None, len(xs))


@dataclass(frozen=True)
class SShapeCheck:
    increasing: bool
    nonpositive_on_losses: bool
    nonnegative_on_gains: bool
    concave_on_gains: bool
    left_tail_ok: bool
    right_tail_ok: bool

    @property
    def s_shaped(self) -> bool:
        return all(
            (
                self.increasing,
                self.nonpositive_on_losses,
                self.nonnegative_on_gains,
                self.concave_on_gains,
                self.left_tail_ok,
                self.right_tail_ok,
            )
        )


def check_s_shape(
    u: Utility,
    left: TailCertificate,
    right: TailCertificate,
    span: float = 1e6,
    n: int = 10_001,
) -> SShapeCheck:
    """Grid-checkable form of the S-shape definition's six clauses."""
    xs = np.concatenate([-np.geomspace(span, 1e-9, n // 2), [0.0], np.geomspace(1e-9, span, n // 2)])
    vals = u.evaluate(xs)
    gains = xs >= 0.0
    return SShapeCheck(
        increasing=bool(np.all(np.diff(vals) >= -1e-12)),
        nonpositive_on_losses=bool(np.all(vals[xs <= 0.0] <= 1e-12)),
        nonnegative_on_gains=bool(np.all(vals[gains] >= -1e-12)),
        concave_on_gains=is_concave_on(u, 0.0, span, around=1.0),
        left_tail_ok=verify_tail_certificate(u, left).passed,
        right_tail_ok=verify_tail_certificate(u, right).passed,
    )


def kt_left_certificate(u: KahnemanTversky) -> TailCertificate:
    """A valid left-tail witness for gamma < 1: eta between gamma and 1,
    c = lam, N strictly beyond -1 where |x|^gamma < |x|^eta takes over."""
    if u.gamma >= 1.0:
        raise ValueError("KT with gamma = 1 decays linearly and admits no left-tail certificate")
    eta = 0.5 * (1.0 + u.gamma)
    return TailCertificate(threshold=-2.0, eta=eta, c=u.lam, side=TailSide.LEFT_RISK_SEEKING)
