"""Brute-force discretized solver used as an independent oracle.

The quantile axis is cut into cells that are uniform in z = PhiInv(x),
which keeps the kernel's within-cell variation uniform all the way into
the blow-up region.  Each cell i carries a probability weight
w_i = P(z_i < Z <= z_{i+1}) and a cost weight qw_i = integral of q over
the cell (a shifted Gaussian mass, evaluated through the survival
function in the right tail so neither weight loses precision).

A piecewise-constant payoff phi is then optimized by dual bisection on
the single binding multiplier, with the per-cell concave maximization
done numerically by bracketing plus golden-section - no marginal
utilities, no closed-form integrals, so the result is independent of
the formulas it validates.  Monotonicity is enforced afterwards by
isotonic projection (a no-op whenever the cell means of q decrease).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import isotonic_regression
from scipy.special import ndtr, ndtri

from .market import KernelQuantile
from .utility import Utility

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0
_BRACKET_CAP = 1e75


@dataclass(frozen=True)
class CellGrid:
    """Cell weights for one x-interval: probability w, kernel mass qw."""

    w: np.ndarray
    qw: np.ndarray
    x_edges: np.ndarray

    def __len__(self) -> int:
        return len(self.w)


def _tail_diff(z: np.ndarray) -> np.ndarray:
    cdf = ndtr(z)
    sf = ndtr(-z)
    return np.where(z[1:] > 0.0, sf[:-1] - sf[1:], cdf[1:] - cdf[:-1])


def build_cells(k: KernelQuantile, lo: float, hi: float, n: int) -> CellGrid:
    if k.custom_log_q is not None:
        raise ValueError("grid oracle supports the Black-Scholes kernel only")
    if not (0.0 <= lo < hi <= 1.0):
        raise ValueError(f"need 0 <= lo < hi <= 1, got {lo}, {hi}")
    zlo = float(ndtri(max(lo, 1e-300)))
    zhi = float(ndtri(min(hi, 1.0 - 1e-16)))
    z = np.linspace(zlo, zhi, n + 1)
    zw = z.copy()
    if lo <= 0.0:
        zw[0] = -np.inf
    if hi >= 1.0:
        zw[-1] = np.inf
    w = _tail_diff(zw)
    qw = _tail_diff(zw + k.loading)
    keep = (w > 0.0) & (qw > 0.0)
    x_edges = ndtr(zw)
    return CellGrid(w=w[keep], qw=qw[keep], x_edges=x_edges[np.concatenate([keep, [True]])])


def project_increasing(phi: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Weighted least-squares projection onto nondecreasing vectors (PAVA)."""
    return isotonic_regression(phi, weights=w, increasing=True).x


def _golden_max_cells(f, hi: np.ndarray, iters: int) -> np.ndarray:
    a = np.zeros_like(hi)
    b = hi.copy()
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        sel = fc > fd
        b = np.where(sel, d, b)
        a = np.where(sel, a, c)
        c = b - _INVPHI * (b - a)
        d = a + _INVPHI * (b - a)
        fc, fd = f(c), f(d)
    return 0.5 * (a + b)


def _argmax_cells(f, n: int, iters: int) -> np.ndarray:
    """Maximize a per-cell concave f over t >= 0 by doubling then golden."""
    hi = np.ones(n)
    for _ in range(400):
        cand = np.minimum(hi * 2.0, _BRACKET_CAP)
        grow = (f(cand) >= f(hi)) & (hi < _BRACKET_CAP)
        if not grow.any():
            break
        hi = np.where(grow, cand, hi)
    # the max may sit past the last accepted point, so widen once more
    return _golden_max_cells(f, np.minimum(hi * 2.0, _BRACKET_CAP), iters)


def solve_left_cells(
    cells: CellGrid,
    u_r: Utility,
    level: float,
    golden_iters: int = 120,
    bisect_iters: int = 80,
):
    """min sum(qw*phi) s.t. sum(w*u_r(phi)) >= level, phi <= 0 increasing."""
    n = len(cells)
    if n == 0:
        return 0.0, np.zeros(0)
    w, qw = cells.w, cells.qw

    def phi_of(beta: float) -> np.ndarray:
        t = _argmax_cells(lambda t: beta * w * u_r.evaluate(-t) + qw * t, n, golden_iters)
        return -t

    def util(beta: float) -> float:
        return float(np.dot(w, u_r.evaluate(phi_of(beta))))

    blo = bhi = 1.0
    while util(blo) > level and blo > 1e-280:
        blo /= 4.0
    while util(bhi) <= level and bhi < 1e280:
        bhi *= 4.0
    for _ in range(bisect_iters):
        bm = math.sqrt(blo * bhi)
        if util(bm) > level:
            bhi = bm
        else:
            blo = bm
    phi = project_increasing(phi_of(math.sqrt(blo * bhi)), w)
    return float(np.dot(qw, phi)), phi


def solve_right_cells(
    cells: CellGrid,
    u_i: Utility,
    c2: float,
    golden_iters: int = 120,
    bisect_iters: int = 80,
):
    """max sum(w*u_i(phi)) s.t. sum(qw*phi) <= c2, phi >= 0 increasing."""
    n = len(cells)
    if c2 < 0.0:
        return -math.inf, None
    if n == 0 or c2 == 0.0:
        return 0.0, np.zeros(n)
    w, qw = cells.w, cells.qw

    def phi_of(nu: float) -> np.ndarray:
        return _argmax_cells(lambda t: w * u_i.evaluate(t) - nu * qw * t, n, golden_iters)

    def cost(nu: float) -> float:
        return float(np.dot(qw, phi_of(nu)))

    nlo = nhi = 1.0
    while cost(nhi) > c2 and nhi < 1e280:
        nhi *= 4.0
    while cost(nlo) <= c2 and nlo > 1e-280:
        nlo /= 4.0
    for _ in range(bisect_iters):
        nm = math.sqrt(nlo * nhi)
        if cost(nm) > c2:
            nlo = nm
        else:
            nhi = nm
    phi = project_increasing(phi_of(math.sqrt(nlo * nhi)), w)
    return float(np.dot(w, u_i.evaluate(phi))), phi


def solve_left_grid(k: KernelQuantile, u_r: Utility, level: float, p: float, n: int):
    return solve_left_cells(build_cells(k, 0.0, p, n), u_r, level)


def solve_right_grid(k: KernelQuantile, u_i: Utility, c2: float, p: float, n: int):
    return solve_right_cells(build_cells(k, p, 1.0, n), u_i, c2)


@dataclass(frozen=True)
class JointGridResult:
    value: float
    split_index: int
    p_star: float


def solve_joint_grid(
    k: KernelQuantile,
    u_r: Utility,
    u_i: Utility,
    level: float,
    forward_budget: float,
    n: int,
    coarse: int = 33,
    golden_iters: int = 60,
    bisect_iters: int = 44,
) -> JointGridResult:
    """Discretized joint problem: maximize utility under the u_r floor and budget.

    An increasing phi is negative below some split cell and nonnegative
    above it, so the split index is enumerated (coarse set, then local
    ternary refinement) with the two single-constraint solves per split.
    """
    cells = build_cells(k, 0.0, 1.0, n)
    m = len(cells)

    def sub(lo_i: int, hi_i: int) -> CellGrid:
        return CellGrid(
            w=cells.w[lo_i:hi_i], qw=cells.qw[lo_i:hi_i], x_edges=cells.x_edges[lo_i : hi_i + 1]
        )

    cache: dict[int, float] = {}

    def v_at(j: int) -> float:
        if j in cache:
            return cache[j]
        if j == 0:
            c1 = 0.0
        else:
            c1, _ = solve_left_cells(sub(0, j), u_r, level, golden_iters, bisect_iters)
        val, _ = solve_right_cells(
            sub(j, m), u_i, forward_budget - c1, golden_iters, bisect_iters
        )
        cache[j] = val
        return val

    js = sorted({int(round(i * m / (coarse - 1))) for i in range(coarse)})
    best = max(js, key=v_at)
    pos = js.index(best)
    lo = js[max(pos - 1, 0)]
    hi = js[min(pos + 1, len(js) - 1)]
    while hi - lo > 2:
        m1 = lo + (hi - lo) // 3
        m2 = hi - (hi - lo) // 3
        if v_at(m1) >= v_at(m2):
            hi = m2
        else:
            lo = m1
    best = max(range(lo, hi + 1), key=v_at)
    return JointGridResult(
        value=v_at(best), split_index=best, p_star=float(cells.x_edges[best])
    )
