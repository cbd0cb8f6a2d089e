"""Command-line entry point.

Subcommands:
  sweep         paired Monte-Carlo power sweep (sum rate + fairness rows)
  csi           outdated-CSI retention experiment
  trace         per-cycle convergence traces from several random inits
  oracle-check  best-of-restarts allocator vs exhaustive oracle on tiny cells

Scenario files are JSON mirroring the Scenario fields; command-line flags
override file values. Results land in CSV or JSON; a short aggregate
summary is printed to stdout (in nats, or bits with --bits). Exit code is
nonzero if any per-trial run failed.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

import numpy as np

from .allocators import run_max_sr
from .baselines import brute_force_oracle
from .channel import DopplerParams, draw_channel, place_users
from .harness import (
    NATS_TO_BITS,
    ResultRow,
    RetentionRow,
    Scenario,
    TraceRow,
    emit,
    load_scenario,
    run_convergence_trace,
    run_outdated_csi,
    run_sweep,
    scenario_rng,
)
from .system import SystemConfig

log = logging.getLogger("scma_alloc")


def _parse_pmax(text: str) -> list[float]:
    """Parse 'a:b:step' (inclusive) or a single value."""
    parts = [float(p) for p in text.split(":")]
    if len(parts) == 1:
        return parts
    if len(parts) == 2:
        parts.append(1.0)
    a, b, step = parts
    if step <= 0:
        raise argparse.ArgumentTypeError("pmax step must be positive")
    return [float(v) for v in np.arange(a, b + 1e-9, step)]


def _build_scenario(args) -> Scenario:
    scenario = load_scenario(args.scenario) if args.scenario else Scenario()
    if args.algo:
        scenario.algorithms = tuple(a.strip() for a in args.algo.split(",") if a.strip())
    if args.trials is not None:
        scenario.trials = args.trials
    if args.seed is not None:
        scenario.seed = args.seed
    if args.pmax_dbm is not None:
        scenario.pmax_sweep_dbm = _parse_pmax(args.pmax_dbm)
    if getattr(args, "workers", None):
        scenario.workers = args.workers
    if getattr(args, "period", None):
        csi = scenario.csi or DopplerParams()
        scenario.csi = replace(csi, period_t=args.period)
    if getattr(args, "rho_sq", None):
        scenario.csi_rho_sq = tuple(float(v) for v in args.rho_sq.split(","))
        if scenario.csi is None:
            scenario.csi = DopplerParams(period_t=50)
    scenario.validate()
    return scenario


def _rate_scale(args) -> tuple[float, str]:
    return (NATS_TO_BITS, "bits") if args.bits else (1.0, "nats")


def _summarize_sweep(rows: list[ResultRow], args) -> None:
    scale, unit = _rate_scale(args)
    print(f"algorithm        pmax_dbm  mean_sum_rate_{unit}  mean_jain")
    seen = {}
    for row in rows:
        seen.setdefault((row.algorithm, row.pmax_dbm), []).append(row)
    for (algo, pmax), group in seen.items():
        rates = [r.sum_rate_nats for r in group if r.status == "ok"]
        jains = [r.jain_index for r in group if r.status == "ok"]
        if not rates:
            print(f"{algo:<16} {pmax:>8.1f}  (all trials failed)")
            continue
        print(
            f"{algo:<16} {pmax:>8.1f}  {np.mean(rates) * scale:>18.4f}  "
            f"{np.mean(jains):>9.4f}"
        )


def cmd_sweep(args) -> int:
    scenario = _build_scenario(args)
    rows = run_sweep(scenario)
    emit(rows, args.format, args.out, row_type=ResultRow)
    log.info("wrote %d rows to %s", len(rows), args.out)
    _summarize_sweep(rows, args)
    return 0 if all(r.status == "ok" for r in rows) else 1


def cmd_csi(args) -> int:
    scenario = _build_scenario(args)
    if scenario.csi is None:
        scenario.csi = DopplerParams(period_t=50)
    if not any(a in ("max-sr", "max-min") for a in scenario.algorithms):
        scenario.algorithms = ("max-sr", "max-min")
    rows = run_outdated_csi(scenario)
    emit(rows, args.format, args.out, row_type=RetentionRow)
    log.info("wrote %d rows to %s", len(rows), args.out)
    last_t = max(r.period_t for r in rows)
    print("algorithm        rho_sq  sum_rate_retention_pct  jain_retention_pct")
    for row in rows:
        if row.period_t == last_t:
            print(
                f"{row.algorithm:<16} {row.rho_sq:>6.2f}  {row.sum_rate_retention_pct:>22.2f}  "
                f"{row.jain_retention_pct:>18.2f}"
            )
    return 0


def cmd_trace(args) -> int:
    scenario = _build_scenario(args)
    rows = run_convergence_trace(scenario, n_inits=args.inits)
    emit(rows, args.format, args.out, row_type=TraceRow)
    log.info("wrote %d rows to %s", len(rows), args.out)
    scale, unit = _rate_scale(args)
    for algo in dict.fromkeys(r.algorithm for r in rows):
        finals = [
            r.objective * scale
            for r in rows
            if r.algorithm == algo
            and r.cycle == max(q.cycle for q in rows if q.algorithm == algo and q.init == r.init)
        ]
        print(f"{algo}: final objectives ({unit}) {[round(v, 4) for v in finals]}")
    return 0


def cmd_oracle_check(args) -> int:
    scenario = _build_scenario(args)
    sys_cfg = scenario.system
    if sys_cfg.K > 3 or sys_cfg.J > 3:
        sys_cfg = SystemConfig(K=2, J=2, N=1, d_f=1, p_max_dbm=10.0)
        log.info("oracle-check: shrinking to K=2, J=2, N=1 (guarded instance size)")
    worst_gap = 0.0
    failures = 0
    for trial in range(args.instances):
        rng = scenario_rng(scenario.seed, 501, trial)
        distances = place_users(sys_cfg.J, sys_cfg.cell_radius_m, rng)
        channel = draw_channel(distances, sys_cfg.pathloss_exp, sys_cfg.K, rng)
        _, oracle_val = brute_force_oracle(channel, sys_cfg)
        best = -np.inf
        for restart in range(args.restarts):
            _, trace = run_max_sr(
                channel, sys_cfg, rng=scenario_rng(scenario.seed, 502, trial, restart)
            )
            best = max(best, trace.final_objective)
        gap = (oracle_val - best) / max(oracle_val, 1e-300)
        worst_gap = max(worst_gap, gap)
        if gap > 0.05 or best > oracle_val * (1 + 1e-9):
            failures += 1
        print(
            f"instance {trial:2d}: oracle {oracle_val:.6f}  best-of-{args.restarts} "
            f"{best:.6f}  gap {100 * gap:.2f}%"
        )
    print(f"worst gap {100 * worst_gap:.2f}% over {args.instances} instances")
    return 0 if failures == 0 else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="scma-alloc",
        description="Joint subcarrier and power allocation experiments for uplink SCMA",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, default_out):
        p.add_argument("--scenario", help="JSON scenario file")
        p.add_argument("--algo", help="comma-separated algorithm list")
        p.add_argument("--trials", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--pmax-dbm", dest="pmax_dbm", help="a:b:step or single value")
        p.add_argument("--out", default=default_out)
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--bits", action="store_true", help="print rates in bits")

    p_sweep = sub.add_parser("sweep", help="Monte-Carlo power sweep")
    common(p_sweep, "sweep.csv")
    p_sweep.add_argument("--workers", type=int, default=1)
    p_sweep.set_defaults(func=cmd_sweep)

    p_csi = sub.add_parser("csi", help="outdated-CSI retention experiment")
    common(p_csi, "csi.csv")
    p_csi.add_argument("--period", type=int, help="max reuse period T")
    p_csi.add_argument("--rho-sq", dest="rho_sq", help="comma-separated rho^2 targets")
    p_csi.set_defaults(func=cmd_csi)

    p_trace = sub.add_parser("trace", help="convergence traces")
    common(p_trace, "trace.csv")
    p_trace.add_argument("--inits", type=int, default=3)
    p_trace.set_defaults(func=cmd_trace)

    p_oracle = sub.add_parser("oracle-check", help="allocator vs exhaustive oracle")
    common(p_oracle, "oracle.csv")
    p_oracle.add_argument("--instances", type=int, default=20)
    p_oracle.add_argument("--restarts", type=int, default=10)
    p_oracle.set_defaults(func=cmd_oracle_check)

    args = parser.parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
