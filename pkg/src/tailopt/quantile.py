"""Quantile-function payoffs and rearrangement machinery on discrete scenarios.

A payoff is represented by its quantile function phi on [0,1]
(nondecreasing).  Step payoffs store left-closed right-open segments;
evaluation at a breakpoint returns the right segment, matching the
generalized-inverse convention F^{-1}(p) = inf{x : F(x) >= p}.

The desk-scale probability space is a finite list of scenarios.  With n
equal-probability scenarios and deterministic tie-breaking by scenario
id, every rearrangement identity becomes an exact finite check:

    f^X(w) = F_f^{-1}(F_X(X(w)))

is the version of f comonotone with X sharing f's distribution, and
E[f g] <= E[f^X g^X] (Hardy-Littlewood).  uniformize() is the discrete
analogue of the non-atomic uniformization: it splits tied values of Q
by scenario id and returns X uniform on {1/n, ..., 1} with
Q = F_Q^{-1}(X) scenario-wise.
"""

from __future__ import annotations

import json
import math
from bisect import bisect_right
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Hashable, Optional, Sequence, Tuple

from . import io as _io

PROB_TOL = 1e-12
HL_TOL = 1e-12


@dataclass(frozen=True)
class StepPayoff:
    """Piecewise-constant quantile function; xs[i] starts segment i."""

    xs: Tuple[float, ...]
    values: Tuple[float, ...]

    def __post_init__(self):
        if len(self.xs) != len(self.values) or not self.xs:
            raise ValueError("xs and values must be nonempty and equal length")
        if self.xs[0] != 0.0:
            raise ValueError("first segment must start at 0")
        if any(b <= a for a, b in zip(self.xs, self.xs[1:])):
            raise ValueError("segment starts must be strictly increasing")
        if self.xs[-1] >= 1.0:
            raise ValueError("segment starts must lie below 1")
        if any(b < a for a, b in zip(self.values, self.values[1:])):
            raise ValueError("payoff values must be nondecreasing")

    def evaluate(self, x: float) -> float:
        if not (0.0 <= x <= 1.0):
            raise ValueError(f"quantile argument must lie in [0,1], got {x}")
        return self.values[max(bisect_right(self.xs, x) - 1, 0)]

    def segments(self):
        """Yield (lo, hi, value) with lo closed, hi open (last hi = 1)."""
        for i, v in enumerate(self.values):
            hi = self.xs[i + 1] if i + 1 < len(self.xs) else 1.0
            yield self.xs[i], hi, v


@dataclass(frozen=True)
class TwoPiecePayoff:
    """Digital payoff: k2 on [0, alpha), k1 on [alpha, 1]."""

    alpha: float
    k2: float
    k1: float

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ValueError(f"alpha must lie in (0,1), got {self.alpha}")
        if not (self.k2 < self.k1):
            raise ValueError(f"need k2 < k1, got k2={self.k2}, k1={self.k1}")

    def evaluate(self, x: float) -> float:
        if not (0.0 <= x <= 1.0):
            raise ValueError(f"quantile argument must lie in [0,1], got {x}")
        return self.k2 if x < self.alpha else self.k1

    def as_step(self) -> StepPayoff:
        return StepPayoff((0.0, self.alpha), (self.k2, self.k1))


@dataclass(frozen=True)
class ParametricPayoff:
    """Closed-form increasing map on (0,1); monotonicity spot-checked."""

    fn: Callable[[float], float]

    def __post_init__(self):
        probes = [i / 65.0 for i in range(1, 65)]
        vals = [float(self.fn(p)) for p in probes]
        if any(b < a - 1e-12 * (abs(a) + abs(b) + 1.0) for a, b in zip(vals, vals[1:])):
            raise ValueError("parametric payoff is not nondecreasing on (0,1)")

    def evaluate(self, x: float) -> float:
        if not (0.0 < x < 1.0):
            raise ValueError(f"parametric payoff argument must lie in (0,1), got {x}")
        return float(self.fn(x))


QuantilePayoff = StepPayoff | TwoPiecePayoff | ParametricPayoff


@dataclass(frozen=True)
class DiscreteRV:
    """Finite random variable as (scenario id, probability, value) atoms."""

    ids: Tuple[Hashable, ...]
    probs: Tuple[float, ...]
    values: Tuple[float, ...]

    def __post_init__(self):
        n = len(self.ids)
        if not (n == len(self.probs) == len(self.values)) or n == 0:
            raise ValueError("ids, probs, values must be nonempty and equal length")
        if len(set(self.ids)) != n:
            raise ValueError("scenario ids must be unique")
        if any(p <= 0.0 for p in self.probs):
            raise ValueError("probabilities must be positive")
        if abs(math.fsum(self.probs) - 1.0) > PROB_TOL:
            raise ValueError(f"probabilities must sum to 1, got {math.fsum(self.probs)}")

    @classmethod
    def uniform(cls, values: Sequence[float], ids: Optional[Sequence] = None) -> "DiscreteRV":
        n = len(values)
        if ids is None:
            ids = tuple(range(n))
        return cls(tuple(ids), tuple(1.0 / n for _ in range(n)), tuple(float(v) for v in values))

    def cdf(self, x: float) -> float:
        return math.fsum(p for p, v in zip(self.probs, self.values) if v <= x)

    def expectation(self) -> float:
        return math.fsum(p * v for p, v in zip(self.probs, self.values))

    def value_of(self, scenario) -> float:
        return self.values[self.ids.index(scenario)]

    def _sorted_cum(self):
        """Distinct values ascending with cumulative probabilities.

        Cumulatives are exact fsum prefixes so they agree bitwise with
        cdf(), which sums the same atom subsets.
        """
        order = sorted(range(len(self.values)), key=lambda i: self.values[i])
        sorted_probs = [self.probs[i] for i in order]
        vals, cums = [], []
        for pos, i in enumerate(order):
            if vals and self.values[i] == vals[-1]:
                cums[-1] = math.fsum(sorted_probs[: pos + 1])
            else:
                vals.append(self.values[i])
                cums.append(math.fsum(sorted_probs[: pos + 1]))
        cums[-1] = 1.0
        return vals, cums


def generalized_inverse(rv: DiscreteRV, p: float) -> float:
    """F^{-1}(p) = inf{x : F(x) >= p}, for 0 < p <= 1."""
    if not (0.0 < p <= 1.0):
        raise ValueError(f"quantile level must lie in (0, 1], got {p}")
    vals, cums = rv._sorted_cum()
    for v, c in zip(vals, cums):
        if c >= p:
            return v
    return vals[-1]


def complementary_quantile(rv: DiscreteRV, p: float) -> float:
    """(1-F)^{-1}(p) = inf{x : 1 - F(x) <= p}, for 0 <= p <= 1.

    The infimum is taken over the support's closure, so p = 1 returns
    the smallest value rather than -inf.
    """
    if not (0.0 <= p <= 1.0):
        raise ValueError(f"level must lie in [0, 1], got {p}")
    vals, cums = rv._sorted_cum()
    for v, c in zip(vals, cums):
        if 1.0 - c <= p:
            return v
    return vals[-1]


def _check_same_scenarios(f: DiscreteRV, x: DiscreteRV) -> None:
    if dict(zip(f.ids, f.probs)) != dict(zip(x.ids, x.probs)):
        raise ValueError("random variables must share the same scenario set")


def _strict_rank_cdf(x: DiscreteRV, tie_break: Optional[Sequence[Hashable]]):
    """F_X(X(w)) per scenario; ties need a total order to split them."""
    vals = {i: v for i, v in zip(x.ids, x.values)}
    if len(set(x.values)) == len(x.values):
        key = lambda sid: (vals[sid],)
    else:
        if tie_break is None:
            raise ValueError(
                "X has tied values; supply tie_break (total order of scenario ids)"
            )
        rank = {sid: k for k, sid in enumerate(tie_break)}
        missing = set(x.ids) - rank.keys()
        if missing:
            raise ValueError(f"tie_break missing scenario ids: {sorted(map(str, missing))}")
        key = lambda sid: (vals[sid], rank[sid])
    order = sorted(x.ids, key=key)
    probs = {i: p for i, p in zip(x.ids, x.probs)}
    prefix = [probs[sid] for sid in order]
    out = {sid: math.fsum(prefix[: j + 1]) for j, sid in enumerate(order)}
    out[order[-1]] = 1.0
    return out


def x_rearrangement(
    f: DiscreteRV, x: DiscreteRV, tie_break: Optional[Sequence[Hashable]] = None
) -> DiscreteRV:
    """f^X(w) = F_f^{-1}(F_X(X(w))): the rearrangement of f comonotone with X."""
    _check_same_scenarios(f, x)
    ranks = _strict_rank_cdf(x, tie_break)
    new_values = tuple(generalized_inverse(f, ranks[sid]) for sid in f.ids)
    return DiscreteRV(f.ids, f.probs, new_values)


@dataclass(frozen=True)
class HardyLittlewoodCheck:
    lhs: float
    rhs: float
    holds: bool


def check_hardy_littlewood(
    f: DiscreteRV,
    g: DiscreteRV,
    x: DiscreteRV,
    tie_break: Optional[Sequence[Hashable]] = None,
) -> HardyLittlewoodCheck:
    """E[f g] <= E[f^X g^X] for g >= 0."""
    _check_same_scenarios(f, g)
    _check_same_scenarios(f, x)
    if any(v < 0.0 for v in g.values):
        raise ValueError("g must be nonnegative")
    gv = {i: v for i, v in zip(g.ids, g.values)}
    lhs = math.fsum(p * v * gv[i] for i, p, v in zip(f.ids, f.probs, f.values))
    fx = x_rearrangement(f, x, tie_break)
    gx = x_rearrangement(g, x, tie_break)
    gxv = {i: v for i, v in zip(gx.ids, gx.values)}
    rhs = math.fsum(p * v * gxv[i] for i, p, v in zip(fx.ids, fx.probs, fx.values))
    return HardyLittlewoodCheck(lhs, rhs, lhs <= rhs + HL_TOL)


def uniformize(q: DiscreteRV) -> DiscreteRV:
    """X with Q = F_Q^{-1}(X) scenario-wise; ties split by scenario id.

    Values of X are the cumulative probabilities in (value, id) order,
    so for n equal-probability atoms X is uniform on {1/n, ..., 1}.
    """
    vals = {i: v for i, v in zip(q.ids, q.values)}
    order = sorted(q.ids, key=lambda sid: (vals[sid], str(sid)))
    probs = {i: p for i, p in zip(q.ids, q.probs)}
    prefix = [probs[sid] for sid in order]
    x_vals = {sid: math.fsum(prefix[: j + 1]) for j, sid in enumerate(order)}
    x_vals[order[-1]] = 1.0
    return DiscreteRV(q.ids, q.probs, tuple(x_vals[sid] for sid in q.ids))


# --- serialization: 2-column CSV (x_or_prob, value) and JSON ---


def rv_to_csv(rv: DiscreteRV, path) -> None:
    _io.write_csv(path, ("x_or_prob", "value"), zip(rv.probs, rv.values))


def rv_from_csv(path) -> DiscreteRV:
    _, rows = _io.read_csv(path)
    probs = tuple(float(r[0]) for r in rows)
    values = tuple(float(r[1]) for r in rows)
    return DiscreteRV(tuple(range(len(rows))), probs, values)


def step_to_csv(step: StepPayoff, path) -> None:
    _io.write_csv(path, ("x_or_prob", "value"), zip(step.xs, step.values))


def step_from_csv(path) -> StepPayoff:
    _, rows = _io.read_csv(path)
    return StepPayoff(tuple(float(r[0]) for r in rows), tuple(float(r[1]) for r in rows))


def rv_to_json(rv: DiscreteRV, path) -> None:
    atoms = [
        {"id": str(i), "prob": p, "value": v}
        for i, p, v in zip(rv.ids, rv.probs, rv.values)
    ]
    _io.write_json(path, {"atoms": atoms})


def rv_from_json(path) -> DiscreteRV:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    atoms = raw["atoms"]
    return DiscreteRV(
        tuple(a["id"] for a in atoms),
        tuple(float(a["prob"]) for a in atoms),
        tuple(float(a["value"]) for a in atoms),
    )


def step_to_json(step: StepPayoff, path) -> None:
    _io.write_json(
        path,
        {"segments": [{"x": x, "value": v} for x, v in zip(step.xs, step.values)]},
    )


def step_from_json(path) -> StepPayoff:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    segs = raw["segments"]
    return StepPayoff(
        tuple(float(s["x"]) for s in segs), tuple(float(s["value"]) for s in segs)
    )
