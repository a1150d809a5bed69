"""Command-line interface: analyze, simulate, optimize.

Exit codes: analyze returns 0 when the configured instance synchronizes,
2 when it does not, 3 when it sits in the marginal band; configuration
errors exit 1; an infeasible optimization start exits 2.  All CSV output is
deterministic for a given seed and formatted with 12 significant digits.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Optional, Sequence

import numpy as np

from . import presets
from .analysis import (
    UnstableSystemError,
    check_parameter_conditions,
    predict_fixed_point,
    tau_bound_topology_free,
)
from .config import Config, ConfigError, load_config
from .noise import drift_rate, optimize_params, steady_state_offsets
from .sim import SimTrace, run
from .topology import NotConnectedError, build_graph_quantities


def _fmt(value: float) -> str:
    return f"{value:.11e}"


def _write_csv(path: str, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def cmd_analyze(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    topo, params, noise = cfg.topo, cfg.params, cfg.noise
    try:
        gq = build_graph_quantities(topo)
    except NotConnectedError as exc:
        print(f"verdict: unstable ({exc})")
        return 2

    verdict = check_parameter_conditions(topo, params, gq)
    print(f"verdict: {'stable' if verdict.stable else 'unstable'}"
          + (" (marginal)" if verdict.marginal else ""))
    print(f"rho_J2: {_fmt(verdict.rho_j2)}")
    for reason in verdict.reasons:
        print(f"violated: {reason}")
    if verdict.tau_max is not None:
        print(f"tau_max: {_fmt(verdict.tau_max)} s")
    else:
        print("tau_max: unavailable (complex Laplacian spectrum)")
    try:
        bound = tau_bound_topology_free(params, gq.alpha_max, float(np.max(topo.r)))
        print(f"tau_max_topology_free: {_fmt(bound)} s")
    except ValueError:
        print("tau_max_topology_free: unavailable (scalar conditions violated)")
    print(f"leader: {gq.leader + 1 if gq.leader is not None else 'none'}")
    print(f"mu_max: {_fmt(gq.mu_max)}")

    if verdict.stable:
        x_star, r_star = predict_fixed_point(cfg.init, topo, params, gq)
        print(f"x_star: {_fmt(x_star)} s")
        print(f"r_star: {_fmt(r_star)}")

    wbar = noise.edge_means(topo)
    print(f"drift_rate: {_fmt(drift_rate(topo, gq, params, wbar))} /step")
    if gq.leader is not None and verdict.stable:
        dx = steady_state_offsets(topo, gq, params, wbar)
        offsets = ", ".join(_fmt(v * 1e6) for v in dx - dx[gq.leader])
        print(f"steady_offsets_us: [{offsets}]")

    if verdict.marginal:
        return 3
    return 0 if verdict.stable else 2


def _trace_rows(trace: SimTrace):
    for k in range(trace.steps):
        for i in range(trace.n):
            yield (
                str(k),
                str(i + 1),
                _fmt(trace.offsets_us[k, i]),
                _fmt(trace.skews[k, i]),
                _fmt(trace.xtilde[k]),
                _fmt(trace.stilde[k]),
                _fmt(trace.ytilde[k]),
            )


def cmd_simulate(args) -> int:
    try:
        if args.preset:
            scenario = presets.scenario_preset(args.preset, steps=args.steps, seed=args.seed)
        elif args.config:
            cfg = load_config(args.config)
            scenario = cfg.scenario()
            if args.steps is not None:
                scenario.steps = args.steps
            if args.seed is not None:
                scenario.noise.seed = args.seed
        else:
            print("simulate needs --config or --preset", file=sys.stderr)
            return 1
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    trace = run(scenario)
    try:
        os.makedirs(args.out, exist_ok=True)
        _write_csv(
            os.path.join(args.out, "trace.csv"),
            ("step", "node", "offset_us", "skew", "xtilde", "stilde", "ytilde"),
            _trace_rows(trace),
        )
        _write_csv(
            os.path.join(args.out, "metrics.csv"),
            ("sqrtSn_us", "CI99_us", "CI100_us", "drift_fit"),
            [(
                _fmt(trace.sqrt_sn_us),
                _fmt(trace.ci99_us),
                _fmt(trace.ci100_us),
                _fmt(trace.drift_fit),
            )],
        )
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.out}/trace.csv and {args.out}/metrics.csv "
          f"({trace.steps} steps, {trace.n} nodes)")
    return 0


def cmd_optimize(args) -> int:
    try:
        if args.preset:
            setup = presets.optimize_preset(args.preset)
            topo, init = setup.topo, setup.init
            gw, gd = setup.gw, setup.gd
            rho_star, max_iter = setup.rho_star, setup.max_iter
            free = ("kappa1", "kappa2", "p")
        elif args.config:
            cfg = load_config(args.config)
            topo, init = cfg.topo, cfg.params
            gw, gd = None, None
            rho_star, max_iter = cfg.optimize.rho_star, cfg.optimize.max_iter
            free = cfg.optimize.free
        else:
            print("optimize needs --config or --preset", file=sys.stderr)
            return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    try:
        best, records = optimize_params(
            topo, init, rho_star=rho_star, max_iter=max_iter, gw=gw, gd=gd, free=free
        )
    except (ValueError, NotConnectedError, UnstableSystemError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 2

    try:
        os.makedirs(args.out, exist_ok=True)
        _write_csv(
            os.path.join(args.out, "opt_log.csv"),
            ("iter", "f", "rho", "kappa1", "kappa2", "p"),
            [
                (str(rec.iter), _fmt(rec.f), _fmt(rec.rho),
                 _fmt(rec.kappa1), _fmt(rec.kappa2), _fmt(rec.p))
                for rec in records
            ],
        )
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1
    print(f"kappa1 = {_fmt(best.kappa1)}")
    print(f"kappa2 = {_fmt(best.kappa2)}")
    print(f"p = {_fmt(best.p)}")
    print(f"tau = {_fmt(best.tau)}")
    print(f"f = {_fmt(records[-1].f)} (from {_fmt(records[0].f)})")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="clockmesh",
        description="Analyze, simulate and tune network clock synchronization over directed topologies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_an = sub.add_parser("analyze", help="stability verdict, bounds and predictions")
    p_an.add_argument("--config", required=True, help="TOML configuration file")
    p_an.set_defaults(func=cmd_analyze)

    p_sim = sub.add_parser("simulate", help="run a scenario and emit trace/metrics CSV")
    p_sim.add_argument("--config", help="TOML configuration file")
    p_sim.add_argument("--preset", help="built-in scenario (loop-instability|wheel-jitter|leader-loss)")
    p_sim.add_argument("--out", default=".", help="output directory")
    p_sim.add_argument("--seed", type=int, default=None, help="override the noise seed")
    p_sim.add_argument("--steps", type=int, default=None, help="override the step count")
    p_sim.set_defaults(func=cmd_simulate)

    p_opt = sub.add_parser("optimize", help="tune protocol gains for minimum output noise")
    p_opt.add_argument("--config", help="TOML configuration file")
    p_opt.add_argument("--preset", help="built-in gain profile (jitter|wander|both)")
    p_opt.add_argument("--out", default=".", help="output directory")
    p_opt.set_defaults(func=cmd_optimize)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
