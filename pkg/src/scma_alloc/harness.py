"""Monte-Carlo experiment drivers, metrics, and file emission.

Every trial draws one channel realization and hands the identical
realization to every requested algorithm (paired-sample design), so
cross-algorithm differences are not confounded by channel luck. RNG
streams are derived from (seed, purpose, cell indices) so runs are
bit-reproducible and cells are independent.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Optional, Sequence

import numpy as np

from .allocators import initial_allocation, run_max_min, run_max_sr
from .baselines import PfState, brute_force_oracle, fuo, oa, pf
from .channel import (
    ChannelState,
    DopplerParams,
    doppler_frequency_for_rho_sq,
    draw_channel,
    evolve_channel,
    place_users,
)
from .system import Allocation, SystemConfig, per_user_rates

log = logging.getLogger(__name__)

KNOWN_ALGORITHMS = ("max-sr", "max-min", "fuo", "oa", "pf", "oracle")
NATS_TO_BITS = 1.0 / math.log(2.0)


@dataclass
class Scenario:
    """One experiment description; serializable to/from JSON."""

    system: SystemConfig = field(default_factory=SystemConfig)
    pmax_sweep_dbm: Sequence[float] = tuple(float(v) for v in range(3, 11))
    trials: int = 200
    algorithms: Sequence[str] = ("max-sr", "max-min", "fuo", "oa", "pf")
    csi: Optional[DopplerParams] = None
    csi_rho_sq: Sequence[float] = (0.95, 0.62, 0.22, 0.01)
    seed: int = 1234
    workers: int = 1
    restarts: int = 1  # random starts per allocator run
    greedy_seed: bool = True  # also warm-start from the greedy assignment

    def validate(self) -> None:
        self.system.validate()
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if not self.pmax_sweep_dbm:
            raise ValueError("pmax sweep must be nonempty")
        unknown = set(self.algorithms) - set(KNOWN_ALGORITHMS)
        if unknown:
            raise ValueError(f"unknown algorithms: {sorted(unknown)}")
        if self.csi is not None:
            self.csi.validate()


@dataclass
class ResultRow:
    algorithm: str
    pmax_dbm: float
    trial: int
    sum_rate_nats: float
    per_user_rates: list
    jain_index: float
    cycles_to_converge: int
    wall_ms: float
    status: str = "ok"


@dataclass
class RetentionRow:
    algorithm: str
    rho_sq: float
    period_t: int
    sum_rate_retention_pct: float
    jain_retention_pct: float
    mean_sum_rate_nats: float
    mean_jain_index: float


@dataclass
class TraceRow:
    algorithm: str
    init: int
    cycle: int
    penalized_objective: float
    objective: float
    delta_f: float
    delta_p: float


def jain_index(rates) -> float:
    """Fairness index (sum c)^2 / (J * sum c^2) in [1/J, 1].

    The all-zero vector is mapped to the no-fairness limit 1/J (the formula
    is 0/0 there); negative entries are rejected.
    """
    c = np.asarray(rates, dtype=float)
    if c.ndim != 1 or c.size == 0:
        raise ValueError("rates must be a nonempty vector")
    if (c < 0).any():
        raise ValueError("rates must be nonnegative")
    total = c.sum()
    if total == 0.0:
        return 1.0 / c.size
    return float(total * total / (c.size * float((c * c).sum())))


def scenario_rng(seed: int, *tags: int) -> np.random.Generator:
    """Independent deterministic stream for one (purpose, cell) tuple."""
    return np.random.default_rng([int(seed)] + [int(t) for t in tags])


def _draw_cell_channel(scenario: Scenario, budget_idx: int, trial: int) -> ChannelState:
    rng = scenario_rng(scenario.seed, 101, budget_idx, trial)
    sys = scenario.system
    distances = place_users(sys.J, sys.cell_radius_m, rng)
    return draw_channel(distances, sys.pathloss_exp, sys.K, rng)


def _allocate(
    algorithm: str,
    channel: ChannelState,
    cfg: SystemConfig,
    rng: np.random.Generator,
    pf_state: Optional[PfState] = None,
    restarts: int = 1,
    greedy_seed: bool = True,
):
    """Run one algorithm; returns (Allocation, cycles_to_converge)."""
    if algorithm == "max-sr":
        alloc, trace = run_max_sr(
            channel, cfg, rng=rng, restarts=restarts, greedy_seed=greedy_seed
        )
        return alloc, trace.cycles
    if algorithm == "max-min":
        alloc, trace = run_max_min(
            channel, cfg, rng=rng, restarts=restarts, greedy_seed=greedy_seed
        )
        return alloc, trace.cycles
    if algorithm == "fuo":
        return fuo(channel, cfg, rng), 0
    if algorithm == "oa":
        return oa(channel, cfg), 0
    if algorithm == "pf":
        return pf(channel, cfg, pf_state), 0
    if algorithm == "oracle":
        alloc, _ = brute_force_oracle(channel, cfg)
        return alloc, 0
    raise ValueError(f"unknown algorithm {algorithm!r}")


def _measure(
    algorithm: str,
    channel: ChannelState,
    cfg: SystemConfig,
    pmax_dbm: float,
    trial: int,
    rng: np.random.Generator,
    pf_state: Optional[PfState] = None,
    restarts: int = 1,
    greedy_seed: bool = True,
) -> ResultRow:
    start = time.perf_counter()
    try:
        alloc, cycles = _allocate(
            algorithm, channel, cfg, rng, pf_state, restarts, greedy_seed
        )
        rates = per_user_rates(channel, alloc, cfg.sigma2)
        return ResultRow(
            algorithm=algorithm,
            pmax_dbm=float(pmax_dbm),
            trial=trial,
            sum_rate_nats=float(rates.total),
            per_user_rates=[float(v) for v in rates.per_user],
            jain_index=jain_index(rates.per_user),
            cycles_to_converge=cycles,
            wall_ms=(time.perf_counter() - start) * 1e3,
        )
    except Exception as exc:  # noqa: BLE001 - flagged row, run continues
        log.warning("%s failed on pmax=%s trial=%d: %s", algorithm, pmax_dbm, trial, exc)
        return ResultRow(
            algorithm=algorithm,
            pmax_dbm=float(pmax_dbm),
            trial=trial,
            sum_rate_nats=float("nan"),
            per_user_rates=[],
            jain_index=float("nan"),
            cycles_to_converge=0,
            wall_ms=(time.perf_counter() - start) * 1e3,
            status=f"failed: {type(exc).__name__}",
        )


def _algo_rng(scenario: Scenario, budget_idx: int, trial: int, algo: str):
    return scenario_rng(
        scenario.seed, 201, budget_idx, trial, KNOWN_ALGORITHMS.index(algo)
    )


def _sweep_cell(scenario: Scenario, budget_idx: int, trial: int) -> list[ResultRow]:
    """All non-pf rows of one (budget, trial) cell."""
    pmax = scenario.pmax_sweep_dbm[budget_idx]
    cfg = replace(scenario.system, p_max_dbm=float(pmax))
    channel = _draw_cell_channel(scenario, budget_idx, trial)
    rows = []
    for algo in scenario.algorithms:
        if algo == "pf":
            continue
        rng = _algo_rng(scenario, budget_idx, trial, algo)
        rows.append(
            _measure(
                algo, channel, cfg, pmax, trial, rng,
                restarts=scenario.restarts, greedy_seed=scenario.greedy_seed,
            )
        )
    return rows


def run_sweep(scenario: Scenario) -> list[ResultRow]:
    """Paired Monte-Carlo sweep over power budgets.

    Every algorithm sees the identical channel in a given (budget, trial)
    cell. pf keeps a per-budget sliding history across trials, so it runs
    serially in trial order; everything else can fan out over workers.
    """
    scenario.validate()
    keyed: dict[tuple, ResultRow] = {}

    cells = [
        (bi, i) for bi in range(len(scenario.pmax_sweep_dbm)) for i in range(scenario.trials)
    ]
    if scenario.workers > 1:
        with ProcessPoolExecutor(max_workers=scenario.workers) as pool:
            batches = pool.map(
                _sweep_cell_star,
                [(scenario, bi, i) for bi, i in cells],
                chunksize=max(1, len(cells) // (8 * scenario.workers)),
            )
            for (bi, i), batch in zip(cells, batches):
                for row in batch:
                    keyed[(bi, i, row.algorithm)] = row
    else:
        for bi, i in cells:
            for row in _sweep_cell(scenario, bi, i):
                keyed[(bi, i, row.algorithm)] = row

    if "pf" in scenario.algorithms:
        sys = scenario.system
        for bi, pmax in enumerate(scenario.pmax_sweep_dbm):
            cfg = replace(sys, p_max_dbm=float(pmax))
            state = PfState(J=sys.J)
            for i in range(scenario.trials):
                channel = _draw_cell_channel(scenario, bi, i)
                rng = _algo_rng(scenario, bi, i, "pf")
                keyed[(bi, i, "pf")] = _measure(
                    "pf", channel, cfg, pmax, i, rng, pf_state=state
                )

    out = []
    for bi, i in cells:
        for algo in scenario.algorithms:
            out.append(keyed[(bi, i, algo)])
    return out


def _sweep_cell_star(args):
    return _sweep_cell(*args)


def run_outdated_csi(scenario: Scenario) -> list[RetentionRow]:
    """Allocation reuse under channel aging.

    For each target rho^2: the allocation is computed once from the slot-0
    channel, the channel then evolves per slot as a Gauss-Markov chain, and
    the achieved sum rate and fairness are evaluated each slot against the
    true current channel (genie evaluation). The reported value for reuse
    period T averages slots 0..T-1 over all trials; retention normalizes by
    the same algorithm's T=1 (fresh CSI) value.
    """
    scenario.validate()
    if scenario.csi is None:
        raise ValueError("scenario.csi (Doppler parameters) is required")
    csi = scenario.csi
    t_max = csi.period_t
    algos = [a for a in scenario.algorithms if a != "pf"]  # pf history is per-slot, not per-trial
    sys = scenario.system
    cfg = replace(sys, p_max_dbm=float(scenario.pmax_sweep_dbm[-1]))

    rows: list[RetentionRow] = []
    for ri, rho_sq in enumerate(scenario.csi_rho_sq):
        f_max = doppler_frequency_for_rho_sq(float(rho_sq), csi.t_s_s)
        rho = math.sqrt(float(rho_sq))
        log.info("csi: rho^2=%.3g -> f_max=%.2f Hz", rho_sq, f_max)
        sr_sum = {a: np.zeros(t_max) for a in algos}
        jn_sum = {a: np.zeros(t_max) for a in algos}
        for trial in range(scenario.trials):
            rng_ch = scenario_rng(scenario.seed, 301, ri, trial)
            distances = place_users(sys.J, sys.cell_radius_m, rng_ch)
            state = draw_channel(distances, sys.pathloss_exp, sys.K, rng_ch)
            allocs = {}
            for ai, algo in enumerate(algos):
                rng_a = scenario_rng(scenario.seed, 302, ri, trial, ai)
                allocs[algo] = _allocate(
                    algo, state, cfg, rng_a,
                    restarts=scenario.restarts, greedy_seed=scenario.greedy_seed,
                )[0]
            rng_evolve = scenario_rng(scenario.seed, 303, ri, trial)
            for n in range(t_max):
                if n > 0:
                    state = evolve_channel(state, rho, rng_evolve)
                for algo in algos:
                    rates = per_user_rates(state, allocs[algo], cfg.sigma2)
                    sr_sum[algo][n] += rates.total
                    jn_sum[algo][n] += jain_index(rates.per_user)
        for algo in algos:
            mean_sr = np.cumsum(sr_sum[algo]) / (
                np.arange(1, t_max + 1) * scenario.trials
            )
            mean_jn = np.cumsum(jn_sum[algo]) / (
                np.arange(1, t_max + 1) * scenario.trials
            )
            for t in range(t_max):
                rows.append(
                    RetentionRow(
                        algorithm=algo,
                        rho_sq=float(rho_sq),
                        period_t=t + 1,
                        sum_rate_retention_pct=float(100.0 * mean_sr[t] / mean_sr[0]),
                        jain_retention_pct=float(100.0 * mean_jn[t] / mean_jn[0]),
                        mean_sum_rate_nats=float(mean_sr[t]),
                        mean_jain_index=float(mean_jn[t]),
                    )
                )
    return rows


def run_convergence_trace(scenario: Scenario, n_inits: int = 3) -> list[TraceRow]:
    """Per-cycle objective traces on one fixed channel from several random
    initial conditions, at the largest budget of the sweep."""
    scenario.validate()
    if n_inits < 1:
        raise ValueError("n_inits must be at least 1")
    sys = scenario.system
    cfg = replace(sys, p_max_dbm=float(max(scenario.pmax_sweep_dbm)))
    rng_ch = scenario_rng(scenario.seed, 401)
    distances = place_users(sys.J, sys.cell_radius_m, rng_ch)
    channel = draw_channel(distances, sys.pathloss_exp, sys.K, rng_ch)

    runners = {"max-sr": run_max_sr, "max-min": run_max_min}
    requested = [a for a in scenario.algorithms if a in runners] or list(runners)
    rows: list[TraceRow] = []
    for init_idx in range(n_inits):
        init = initial_allocation(cfg, scenario_rng(scenario.seed, 402, init_idx))
        for algo in requested:
            _, trace = runners[algo](channel, cfg, init=(init[0].copy(), init[1].copy()))
            for c in range(trace.cycles):
                rows.append(
                    TraceRow(
                        algorithm=algo,
                        init=init_idx,
                        cycle=c + 1,
                        penalized_objective=trace.penalized_objective[c],
                        objective=trace.objective[c],
                        delta_f=trace.delta_f[c],
                        delta_p=trace.delta_p[c],
                    )
                )
    return rows


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def _cell_to_text(value) -> str:
    if isinstance(value, (list, tuple, np.ndarray)):
        return ";".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _cell_from_text(text: str, typ):
    if typ is list:
        return [float(v) for v in text.split(";")] if text else []
    if typ is float:
        return float(text)
    if typ is int:
        return int(text)
    return text


def emit(rows: list, fmt: str, path, row_type=ResultRow) -> None:
    """Write rows as CSV (header + one line per row, '.' decimal, UTF-8,
    LF) or JSON (array of objects, same field names). Field order follows
    the row dataclass; an empty table yields a header-only CSV."""
    if rows:
        row_type = type(rows[0])
    names = [f.name for f in fields(row_type)]
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(names)
        for row in rows:
            writer.writerow([_cell_to_text(getattr(row, n)) for n in names])
        data = buf.getvalue()
    elif fmt == "json":
        payload = [
            {
                n: (
                    [float(v) for v in getattr(r, n)]
                    if isinstance(getattr(r, n), (list, tuple, np.ndarray))
                    else getattr(r, n)
                )
                for n in names
            }
            for r in rows
        ]
        data = json.dumps(payload, indent=2) + "\n"
    else:
        raise ValueError(f"unknown format {fmt!r}")
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(data)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def read_csv(path, row_type=ResultRow) -> list:
    """Parse a CSV written by emit back into row dataclasses."""
    spec = {f.name: f for f in fields(row_type)}
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != list(spec):
            raise ValueError(f"unexpected header {header} in {path}")
        for record in reader:
            kwargs = {}
            for name, text in zip(header, record):
                typ = spec[name].type
                if typ in ("list", list):
                    kwargs[name] = _cell_from_text(text, list)
                elif typ in ("float", float):
                    kwargs[name] = _cell_from_text(text, float)
                elif typ in ("int", int):
                    kwargs[name] = _cell_from_text(text, int)
                else:
                    kwargs[name] = text
            out.append(row_type(**kwargs))
    return out


def scenario_from_dict(data: dict) -> Scenario:
    """Build a Scenario from a JSON-style dict mirroring the field names."""
    data = dict(data)
    system = SystemConfig(**data.pop("system", {}))
    csi = data.pop("csi", None)
    params = DopplerParams(**csi) if csi is not None else None
    known = {f.name for f in fields(Scenario)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
    return Scenario(system=system, csi=params, **data)


def load_scenario(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return scenario_from_dict(json.load(fh))
