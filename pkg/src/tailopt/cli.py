"""Command-line entry point for desk-scale experiments and data export.

Subcommands: es-demo (digital constructions under an ES floor),
ll-solve (two-stage limited-liability optimum), sweep (utility targets
vs risk-manager utility), egamma (kernel moment curve), rearrange-check
(seeded rearrangement property run).  Outputs are CSV/JSON files with
17-significant-digit floats; identical config and seed give
byte-identical files.

Exit codes: 0 success, 1 solver infeasibility, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io as _io
from .market import KernelQuantile, MarketParams, e_gamma, load_market
from .quantile import (
    DiscreteRV,
    check_hardy_littlewood,
    generalized_inverse,
    uniformize,
    x_rearrangement,
)
from .risk import EsFloor, RiskSpec, UtilityFloor, check_feasible, expected_utility
from .solve import (
    ConstructionError,
    digital_for_target,
    divergence_sweep,
    solve_limited_liability,
    value_profile,
)
from .utility import (
    KahnemanTversky,
    PowerGain,
    PowerLoss,
    kt_left_certificate,
)

REFERENCE_MARKET = MarketParams(mu=0.07, r=0.02, sigma=0.2, T=1.0, s0=0.0)


@dataclass
class RunConfig:
    market: MarketParams
    investor: object
    risk_manager: object
    risk: EsFloor | UtilityFloor
    budget: float
    targets: list
    grid: int
    seed: int
    out: Path
    fmt: str
    atoms: int = 8
    trials: int = 10_000
    gammas: tuple = (1.5, 2.0, 3.0, 5.0)


class UsageError(Exception):
    pass


def _parse_market(text: str) -> MarketParams:
    parts = text.split(",")
    if len(parts) not in (4, 5):
        raise UsageError(f"--market expects mu,r,sigma,T[,s0], got {text!r}")
    vals = [float(p) for p in parts]
    s0 = vals[4] if len(vals) == 5 else 0.0
    return MarketParams(mu=vals[0], r=vals[1], sigma=vals[2], T=vals[3], s0=s0)


def _parse_utility(text: str):
    parts = text.split(":")
    kind = parts[0].lower()
    try:
        if kind == "kt":
            return KahnemanTversky(gamma=float(parts[1]), lam=float(parts[2]))
        if kind == "powergain":
            return PowerGain(gamma_i=float(parts[1]))
        if kind == "powerloss":
            return PowerLoss(gamma_r=float(parts[1]))
    except (IndexError, ValueError) as exc:
        raise UsageError(f"bad utility spec {text!r}: {exc}") from exc
    raise UsageError(f"unknown utility family {kind!r} (kt | powergain | powerloss)")


def _parse_risk(text: str):
    parts = text.split(":")
    kind = parts[0].lower()
    try:
        if kind == "es":
            p, level = float(parts[1]), float(parts[2])
            if not (0.0 < p < 1.0):
                raise UsageError(f"ES confidence level must lie in (0,1), got {p}")
            return EsFloor(p=p, level=level)
        if kind == "ufloor":
            return UtilityFloor(utility=PowerLoss(gamma_r=float(parts[1])), level=float(parts[2]))
    except UsageError:
        raise
    except (IndexError, ValueError) as exc:
        raise UsageError(f"bad risk spec {text!r}: {exc}") from exc
    raise UsageError(f"unknown risk constraint {kind!r} (es:p:L | ufloor:gammaR:L)")


def _parse_floats(text: str) -> list:
    return [float(t) for t in text.split(",") if t.strip()]


def build_config(args) -> RunConfig:
    market = None
    cfg_utility = cfg_risk = None
    cfg_budget = None
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        market = load_market(path)
        from .market import tomllib as _toml_mod

        with open(path, "rb") as f:
            raw = _toml_mod.load(f)
        cfg_utility = raw.get("utility")
        cfg_risk = raw.get("risk")
        cfg_budget = raw.get("budget")
    if args.market:
        market = _parse_market(args.market)
    if market is None:
        market = REFERENCE_MARKET

    utility_text = args.utility or cfg_utility or "kt:0.5:2.25"
    risk_text = args.risk or cfg_risk or "es:0.05:-1"
    budget = args.budget if args.budget is not None else float(cfg_budget or 1.0)

    return RunConfig(
        market=market,
        investor=_parse_utility(utility_text),
        risk_manager=_parse_utility(args.ur),
        risk=_parse_risk(risk_text),
        budget=budget,
        targets=_parse_floats(args.targets),
        grid=args.grid,
        seed=args.seed,
        out=Path(args.out),
        fmt=args.format,
        atoms=getattr(args, "atoms", 8),
        trials=getattr(args, "trials", 10_000),
        gammas=tuple(_parse_floats(args.gammas)) if getattr(args, "gammas", None) else (1.5, 2.0, 3.0, 5.0),
    )


def _write_table(cfg: RunConfig, stem: str, header, rows) -> Path:
    cfg.out.mkdir(parents=True, exist_ok=True)
    if cfg.fmt == "json":
        path = cfg.out / f"{stem}.json"
        _io.write_json(path, [dict(zip(header, row)) for row in rows])
    else:
        path = cfg.out / f"{stem}.csv"
        _io.write_csv(path, header, rows)
    return path


def _payoff_curve(payoff, grid: int):
    xs = [(j + 0.5) / grid for j in range(grid)]
    return [(x, payoff.evaluate(x)) for x in xs]


def _require_left_certificate(u):
    if isinstance(u, KahnemanTversky):
        return kt_left_certificate(u)
    raise UsageError(
        "es-demo/sweep need a left-tail-risk-seeking investor utility (use kt:gamma:lam with gamma < 1)"
    )


def cmd_es_demo(cfg: RunConfig) -> int:
    if not isinstance(cfg.risk, EsFloor):
        raise UsageError("es-demo requires an es:p:L risk spec")
    kernel = KernelQuantile.from_market(cfg.market)
    cert = _require_left_certificate(cfg.investor)
    rows = []
    last = None
    for target in cfg.targets:
        con = digital_for_target(
            kernel, cfg.investor, cfg.risk, cfg.budget, target, certificate=cert
        )
        last = con
        rows.append(
            (target, con.objective, con.alpha, con.k1, con.k2, con.budget_slack, con.es_slack)
        )
    _write_table(
        cfg,
        "constructions",
        ("target", "objective", "alpha", "k1", "k2", "budget_slack", "es_slack"),
        rows,
    )
    _io.write_csv(cfg.out / "payoff.csv", ("x", "phi"), _payoff_curve(last.payoff, cfg.grid))
    spec = RiskSpec(budget=cfg.budget, constraint=cfg.risk)
    report = check_feasible(last.payoff, kernel, spec, slack_tol=1e-9, discount=True)
    audit = report.to_dict() | {
        "objective": expected_utility(last.payoff, cfg.investor),
        "kernel_blowup_observed": last.kernel_blowup_observed,
    }
    _io.write_json(cfg.out / "audit.json", audit)
    if not report.ok:
        print("es-demo: constructed payoff failed its audit", file=sys.stderr)
        return 1
    return 0


def cmd_ll_solve(cfg: RunConfig) -> int:
    if not isinstance(cfg.risk, UtilityFloor):
        raise UsageError("ll-solve requires a ufloor:gammaR:L risk spec")
    if not isinstance(cfg.investor, PowerGain):
        raise UsageError("ll-solve requires --utility powergain:gammaI")
    kernel = KernelQuantile.from_market(cfg.market)
    m = cfg.market
    report = solve_limited_liability(
        kernel, cfg.risk.utility, cfg.investor, cfg.risk.level, cfg.budget, m.r, m.T
    )
    cfg.out.mkdir(parents=True, exist_ok=True)
    _io.write_json(cfg.out / "report.json", report.to_dict())
    v_of = value_profile(
        kernel, cfg.risk.utility, cfg.investor, cfg.risk.level,
        cfg.budget * math.exp(m.r * m.T),
    )
    ps = [(j + 0.5) / cfg.grid for j in range(cfg.grid)]
    _io.write_csv(cfg.out / "v_curve.csv", ("p", "value"), [(p, v_of(p)) for p in ps])
    if report.payoff is not None:
        _io.write_csv(
            cfg.out / "payoff.csv", ("x", "phi"), _payoff_curve(report.payoff, cfg.grid)
        )
    return 0


def cmd_sweep(cfg: RunConfig) -> int:
    if not isinstance(cfg.risk, EsFloor):
        raise UsageError("sweep requires an es:p:L risk spec")
    if not isinstance(cfg.risk_manager, PowerLoss):
        raise UsageError("sweep requires --ur powerloss:gammaR")
    kernel = KernelQuantile.from_market(cfg.market)
    cert = _require_left_certificate(cfg.investor)
    table = divergence_sweep(
        kernel,
        cfg.investor,
        cfg.risk_manager,
        cfg.risk,
        cfg.budget,
        cfg.targets,
        certificate=cert,
    )
    rows = [
        (
            row.target,
            row.investor_utility,
            row.risk_utility,
            row.alpha,
            row.k1,
            row.k2,
            row.bond_only,
        )
        for row in table.rows
    ]
    _write_table(
        cfg,
        "sweep",
        ("target", "investor_utility", "risk_utility", "alpha", "k1", "k2", "bond_only"),
        rows,
    )
    return 0


def cmd_egamma(cfg: RunConfig) -> int:
    kernel = KernelQuantile.from_market(cfg.market)
    rows = []
    for g in cfg.gammas:
        if g == 1.0:
            raise UsageError("gamma = 1 is excluded from the e(gamma) curve")
        val = e_gamma(kernel, g)
        rows.append((g, val, math.isfinite(val)))
    _write_table(cfg, "egamma", ("gamma", "e_value", "binding"), rows)
    return 0


def cmd_rearrange_check(cfg: RunConfig) -> int:
    rng = np.random.default_rng(cfg.seed)
    n = cfg.atoms
    hl_violations = 0
    dist_mismatches = 0
    commute_mismatches = 0
    part_mismatches = 0
    idem_mismatches = 0
    recon_mismatches = 0
    for _ in range(cfg.trials):
        f = DiscreteRV.uniform(tuple(rng.standard_normal(n) * 3.0))
        g = DiscreteRV.uniform(tuple(np.abs(rng.standard_normal(n))))
        x = DiscreteRV.uniform(tuple(rng.standard_normal(n)))
        if len(set(x.values)) < n:
            continue
        hl = check_hardy_littlewood(f, g, x)
        if not hl.holds:
            hl_violations += 1
        fx = x_rearrangement(f, x)
        if sorted(fx.values) != sorted(f.values):
            dist_mismatches += 1
        kcap = float(rng.standard_normal())
        capped = DiscreteRV(f.ids, f.probs, tuple(max(v, kcap) for v in f.values))
        lhs = x_rearrangement(capped, x).values
        rhs = tuple(max(v, kcap) for v in fx.values)
        if lhs != rhs:
            commute_mismatches += 1
        pos = DiscreteRV(f.ids, f.probs, tuple(max(v, 0.0) for v in f.values))
        neg = DiscreteRV(f.ids, f.probs, tuple(min(v, 0.0) for v in f.values))
        recomposed = tuple(
            a + b for a, b in zip(x_rearrangement(pos, x).values, x_rearrangement(neg, x).values)
        )
        if recomposed != fx.values:
            part_mismatches += 1
        comono = DiscreteRV(x.ids, x.probs, tuple(2.0 * v + 1.0 for v in x.values))
        if x_rearrangement(comono, x).values != comono.values:
            idem_mismatches += 1
        ux = uniformize(f)
        if any(
            generalized_inverse(f, uv) != fv for uv, fv in zip(ux.values, f.values)
        ):
            recon_mismatches += 1
    summary = {
        "seed": cfg.seed,
        "atoms": n,
        "trials": cfg.trials,
        "hardy_littlewood_violations": hl_violations,
        "distribution_mismatches": dist_mismatches,
        "max_commutation_mismatches": commute_mismatches,
        "part_decomposition_mismatches": part_mismatches,
        "comonotone_idempotence_mismatches": idem_mismatches,
        "uniformize_reconstruction_mismatches": recon_mismatches,
    }
    cfg.out.mkdir(parents=True, exist_ok=True)
    _io.write_json(cfg.out / "rearrange.json", summary)
    bad = sum(v for k, v in summary.items() if k.endswith(("violations", "mismatches")))
    if bad:
        print(f"rearrange-check: {bad} property violations", file=sys.stderr)
        return 1
    return 0


def _add_common(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", help="TOML config (market keys; utility/risk/budget optional)")
    sp.add_argument("--market", help="mu,r,sigma,T[,s0]")
    sp.add_argument("--utility", help="investor utility: kt:g:lam | powergain:g | powerloss:g")
    sp.add_argument("--ur", default="powerloss:2", help="risk-manager utility (sweep)")
    sp.add_argument("--risk", help="es:p:L | ufloor:gammaR:L")
    sp.add_argument("--budget", type=float, help="time-0 budget C")
    sp.add_argument("--targets", default="10,100,1000,10000", help="comma-separated utility targets")
    sp.add_argument("--grid", type=int, default=1000, help="points for exported curves")
    sp.add_argument("--seed", type=int, default=42)
    sp.add_argument("--out", default="out", help="output directory")
    sp.add_argument("--format", choices=("csv", "json"), default="csv")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tailopt",
        description="Payoff design under budget and tail-risk constraints",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("es-demo", cmd_es_demo),
        ("ll-solve", cmd_ll_solve),
        ("sweep", cmd_sweep),
        ("egamma", cmd_egamma),
        ("rearrange-check", cmd_rearrange_check),
    ):
        sp = sub.add_parser(name)
        _add_common(sp)
        if name == "egamma":
            sp.add_argument("--gammas", default="1.5,2,3,5")
        if name == "rearrange-check":
            sp.add_argument("--atoms", type=int, default=8)
            sp.add_argument("--trials", type=int, default=10_000)
        sp.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        cfg = build_config(args)
        return args.func(cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConstructionError as exc:
        print(f"infeasible: {exc} {exc.diagnostics}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
