"""Comparison allocators: sequential greedy schedulers and an exhaustive
oracle for tiny instances.

The three schedulers differ only in how they order the users; each user in
turn claims its N best still-available subcarriers (a subcarrier is
available while fewer than d_f users occupy it) and splits its power
budget equally across the claim.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations, product

import numpy as np

from .system import (
    Allocation,
    SystemConfig,
    gain_power,
    rates_from_gain_power,
)

_ORACLE_GUARD = 10_000_000


@dataclass
class PfState:
    """Sliding window of per-user aggregate channel qualities for the
    proportional-fair ordering. ``smoothing`` is the exponential weight on
    the older qualities when the window is folded into one score."""

    J: int
    window: int = 10
    smoothing: float = 0.9
    history: list = field(default_factory=list)  # most recent last

    def scores(self) -> np.ndarray:
        """Exponentially smoothed quality per user over the stored window."""
        if not self.history:
            return np.zeros(self.J)
        q = np.asarray(self.history[0], dtype=float).copy()
        for cur in self.history[1:]:
            q = self.smoothing * q + (1.0 - self.smoothing) * np.asarray(cur)
        return q

    def push(self, qualities) -> None:
        self.history.append(np.asarray(qualities, dtype=float).copy())
        if len(self.history) > self.window:
            self.history.pop(0)


def allocate_sorted(channel, cfg: SystemConfig, order) -> Allocation:
    """Greedy allocation in the given user order.

    Each user claims its N best available subcarriers by |h|^2 and gets an
    equal power split over the claim. If fewer than N subcarriers remain
    available (possible off the canonical graph where J*N = K*d_f), the
    user takes what is left; the output is always binary feasible.
    """
    gain_sq = gain_power(channel)
    K, J = gain_sq.shape
    order = np.asarray(order, dtype=int)
    if not np.array_equal(np.sort(order), np.arange(J)):
        raise ValueError(f"order must be a permutation of 0..{J - 1}")
    F = np.zeros((K, J))
    P = np.zeros((K, J))
    occupancy = np.zeros(K, dtype=int)
    pmax = cfg.p_max_w
    for j in order:
        avail = np.flatnonzero(occupancy < cfg.d_f)
        if avail.size == 0:
            continue
        ranked = avail[np.argsort(-gain_sq[avail, j], kind="stable")]
        claim = ranked[: cfg.N]
        F[claim, j] = 1.0
        P[claim, j] = pmax[j] / claim.size
        occupancy[claim] += 1
    return Allocation(F, P)


def fuo(channel, cfg: SystemConfig, rng: np.random.Generator) -> Allocation:
    """Fixed user order baseline: uniformly random user order."""
    return allocate_sorted(channel, cfg, rng.permutation(cfg.J))


def oa(channel, cfg: SystemConfig) -> Allocation:
    """Opportunistic allocation: best overall channel quality first."""
    quality = gain_power(channel).sum(axis=0)
    return allocate_sorted(channel, cfg, np.argsort(-quality, kind="stable"))


def pf(channel, cfg: SystemConfig, state: PfState) -> Allocation:
    """Proportional-fair ordering: least historically served user first.

    Sorts by the smoothed past qualities only, then records the current
    slot's qualities into the state.
    """
    quality = gain_power(channel).sum(axis=0)
    order = np.argsort(state.scores(), kind="stable")
    alloc = allocate_sorted(channel, cfg, order)
    state.push(quality)
    return alloc


def _support_choices(K: int, N: int):
    """All subcarrier subsets of size 0..N (per-user claim candidates)."""
    out = [()]
    for size in range(1, N + 1):
        out.extend(combinations(range(K), size))
    return out


def _weight_grids(levels: int, size: int, lo=None, hi=None):
    """Budget-fraction vectors w >= 0 with sum(w) <= 1 on a regular grid,
    optionally restricted to a box (used by the refinement pass)."""
    if size == 0:
        return [()]
    step = 1.0 / (levels - 1)
    axes = []
    for i in range(size):
        lo_i = 0.0 if lo is None else max(0.0, lo[i])
        hi_i = 1.0 if hi is None else min(1.0, hi[i])
        axes.append(np.linspace(lo_i, hi_i, levels))
    grids = [w for w in product(*axes) if sum(w) <= 1.0 + 1e-12]
    return grids if grids else [tuple(0.0 for _ in range(size))]


def brute_force_oracle(
    channel,
    cfg: SystemConfig,
    power_grid_levels: int = 11,
    criterion: str = "sum_rate",
):
    """Exhaustive search over binary assignments with a gridded power simplex.

    Enumerates every K x J binary F satisfying the per-user and
    per-subcarrier caps; for each F, each user's budget fractions over its
    claimed subcarriers run over a regular grid (sum <= 1), refined once in
    a +-1-step box around the incumbent. Returns (Allocation, objective).
    Guarded to ~1e7 grid evaluations; intended for K, J <= 3.
    """
    gain_sq = gain_power(channel)
    K, J = gain_sq.shape
    sigma2 = cfg.sigma2
    pmax = cfg.p_max_w
    if criterion == "sum_rate":
        def score(F, P):
            return float(np.log1p((gain_sq * F * P).sum(axis=1) / sigma2).sum())
    elif criterion == "min_rate":
        def score(F, P):
            return float(rates_from_gain_power(gain_sq, F, P, sigma2).per_user.min())
    else:
        raise ValueError(f"unknown criterion {criterion!r}")

    choices = _support_choices(K, cfg.N)
    if len(choices) ** J > _ORACLE_GUARD:
        raise ValueError(
            f"oracle enumeration of >= {len(choices) ** J:.2e} assignments "
            f"exceeds the {_ORACLE_GUARD:.0e} guard"
        )
    supports = [s for s in product(choices, repeat=J)
                if np.bincount([k for sub in s for k in sub], minlength=K).max(initial=0) <= cfg.d_f]
    grid_cost = sum(
        math.prod(len(_weight_grids(power_grid_levels, len(sub))) for sub in s)
        for s in supports
    )
    if grid_cost > _ORACLE_GUARD:
        raise ValueError(
            f"oracle enumeration of ~{grid_cost:.2e} cells exceeds the "
            f"{_ORACLE_GUARD:.0e} guard"
        )

    best_val, best_F, best_P, best_w = -np.inf, None, None, None

    def sweep(support, per_user_grids):
        nonlocal best_val, best_F, best_P, best_w
        F = np.zeros((K, J))
        for j, sub in enumerate(support):
            F[list(sub), j] = 1.0
        for combo in product(*per_user_grids):
            P = np.zeros((K, J))
            for j, (sub, w) in enumerate(zip(support, combo)):
                for k, frac in zip(sub, w):
                    P[k, j] = frac * pmax[j]
            val = score(F, P)
            if val > best_val:
                best_val, best_F, best_P, best_w = val, F.copy(), P, combo

    for support in supports:
        sweep(support, [_weight_grids(power_grid_levels, len(sub)) for sub in support])

    # one refinement pass in a +-step box around the incumbent weights
    step = 1.0 / (power_grid_levels - 1)
    support = tuple(tuple(np.flatnonzero(best_F[:, j])) for j in range(J))
    refined = [
        _weight_grids(
            power_grid_levels,
            len(sub),
            lo=[w - step for w in ws],
            hi=[w + step for w in ws],
        )
        for sub, ws in zip(support, best_w)
    ]
    sweep(support, refined)
    return Allocation(best_F, best_P), best_val
