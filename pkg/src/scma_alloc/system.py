"""SCMA structural types and rate formulas.

The cell serves J users on K subcarriers. Each user spreads its codeword
over N < K subcarriers and at most d_f users share a subcarrier; the
binary K x J factor graph matrix F records the assignment. Rates are in
nats throughout: the sum rate is

    sum_k ln(1 + sum_j |h[k,j]|^2 f[k,j] p[k,j] / sigma2)

and a fixed successive-decoding order splits each subcarrier's capacity
into per-user shares that telescope back to the same total.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional, Sequence, Union

import numpy as np

from .channel import ChannelState, noise_power


@dataclass
class SystemConfig:
    """Scenario parameters; the single source of truth for one experiment."""

    K: int = 4  # subcarriers
    J: int = 6  # users
    N: int = 2  # nonzero codeword entries (subcarriers per user)
    d_f: int = 3  # max users superposed per subcarrier
    cell_radius_m: float = 300.0
    pathloss_exp: float = 4.0
    noise_density_dbm_hz: float = -174.0
    bandwidth_hz: float = 180e3
    p_max_dbm: Union[float, Sequence[float]] = 10.0  # per-user budget, scalar broadcasts
    penalty_weight: float = 20.0  # integrality penalty weight
    eps_f: float = 1e-3  # Frobenius-norm stop tolerance, subcarrier block
    eps_p: float = 1e-3  # Frobenius-norm stop tolerance, power block
    max_cycles: int = 50
    solver_eps: float = 1e-6  # inner-solve optimality gap
    seed: int = 1234

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.K < 1 or self.J < 1 or self.N < 1 or self.d_f < 1:
            raise ValueError("dimensions K, J, N, d_f must be positive")
        if self.N >= self.K:
            raise ValueError(f"need N < K, got N={self.N}, K={self.K}")
        if self.J > math.comb(self.K, self.N):
            raise ValueError(
                f"J={self.J} exceeds the number of distinct supports C(K,N)="
                f"{math.comb(self.K, self.N)}"
            )
        if self.cell_radius_m <= 0 or self.bandwidth_hz <= 0:
            raise ValueError("cell radius and bandwidth must be positive")
        if self.pathloss_exp < 0:
            raise ValueError("path-loss exponent must be nonnegative")
        if np.any(np.asarray(self.p_max_dbm, dtype=float) != np.asarray(self.p_max_dbm)):
            raise ValueError("p_max_dbm must be numeric")
        if self.eps_f <= 0 or self.eps_p <= 0 or self.solver_eps <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_cycles < 1:
            raise ValueError("max_cycles must be at least 1")
        pm = np.atleast_1d(np.asarray(self.p_max_dbm, dtype=float))
        if pm.size not in (1, self.J):
            raise ValueError("p_max_dbm must be a scalar or length-J vector")

    @property
    def sigma2(self) -> float:
        """Noise power in watts, derived once from density and bandwidth."""
        return noise_power(self.noise_density_dbm_hz, self.bandwidth_hz)

    @property
    def p_max_w(self) -> np.ndarray:
        """Per-user power budgets in watts, broadcast to length J."""
        pm = np.atleast_1d(np.asarray(self.p_max_dbm, dtype=float))
        watts = 10.0 ** ((pm - 30.0) / 10.0)
        return np.full(self.J, watts[0]) if watts.size == 1 else watts.copy()


@dataclass
class Allocation:
    """Subcarrier matrix F (relaxed in [0,1] or binary) and power matrix P (W)."""

    F: np.ndarray
    P: np.ndarray

    def copy(self) -> "Allocation":
        return Allocation(self.F.copy(), self.P.copy())


@dataclass
class RateBreakdown:
    """Per-subcarrier, per-user and total rates (nats) for one allocation."""

    per_subcarrier: np.ndarray  # (K,)
    per_user: np.ndarray  # (J,)
    per_user_per_subcarrier: np.ndarray  # (K, J)
    total: float


@dataclass
class ConstraintViolation:
    """One violated constraint with its excess magnitude."""

    constraint: str
    index: Optional[tuple]
    residual: float


def canonical_factor_graph(K: int, N: int) -> np.ndarray:
    """Full factor graph: columns enumerate all N-subsets of the K subcarriers.

    Returns the K x C(K,N) binary matrix whose columns are in lexicographic
    subset order; every column sums to N and every row to C(K-1, N-1).
    """
    if not 1 <= N < K:
        raise ValueError(f"need 1 <= N < K, got N={N}, K={K}")
    cols = list(combinations(range(K), N))
    F = np.zeros((K, len(cols)))
    for j, subset in enumerate(cols):
        F[list(subset), j] = 1.0
    return F


def gain_power(channel) -> np.ndarray:
    """Squared gain matrix |h|^2 from whatever describes the channel.

    Accepts a ChannelState, a complex gain matrix (magnitudes are squared),
    or a real array, which is taken to already hold squared magnitudes.
    """
    if isinstance(channel, ChannelState):
        return channel.gains_abs2()
    arr = np.asarray(channel)
    if np.iscomplexobj(arr):
        return np.abs(arr) ** 2
    return arr.astype(float, copy=False)


def _check_rate_inputs(habs2: np.ndarray, alloc: Allocation, sigma2: float) -> None:
    if sigma2 <= 0:
        raise ValueError(f"noise power must be positive, got {sigma2}")
    if habs2.shape != alloc.F.shape or habs2.shape != alloc.P.shape:
        raise ValueError(
            f"shape mismatch: gains {habs2.shape}, F {alloc.F.shape}, P {alloc.P.shape}"
        )


def rates_from_gain_power(
    habs2: np.ndarray,
    F: np.ndarray,
    P: np.ndarray,
    sigma2: float,
    decode_order: Optional[Sequence[int]] = None,
) -> RateBreakdown:
    """Array-level rate workhorse; see per_user_rates for semantics."""
    habs2 = np.asarray(habs2, dtype=float)
    K, J = habs2.shape
    if decode_order is None:
        order = np.arange(J)
    else:
        order = np.asarray(decode_order, dtype=int)
        if order.shape != (J,) or not np.array_equal(np.sort(order), np.arange(J)):
            raise ValueError(f"decode_order must be a permutation of 0..{J - 1}")

    signal = habs2 * F * P
    sig_ord = signal[:, order]
    cum = np.cumsum(sig_ord, axis=1)
    prior = cum - sig_ord  # interference from earlier-decoded users
    c_ord = np.log1p(sig_ord / (sigma2 + prior))
    per_ks = np.zeros((K, J))
    per_ks[:, order] = c_ord

    per_subcarrier = np.log1p(signal.sum(axis=1) / sigma2)
    return RateBreakdown(
        per_subcarrier=per_subcarrier,
        per_user=per_ks.sum(axis=0),
        per_user_per_subcarrier=per_ks,
        total=float(per_subcarrier.sum()),
    )


def sum_rate(channel, alloc: Allocation, sigma2: float) -> float:
    """Network sum rate in nats for the given gains and allocation."""
    habs2 = gain_power(channel)
    _check_rate_inputs(habs2, alloc, sigma2)
    loads = (habs2 * alloc.F * alloc.P).sum(axis=1)
    return float(np.log1p(loads / sigma2).sum())


def per_user_rates(
    channel,
    alloc: Allocation,
    sigma2: float,
    decode_order: Optional[Sequence[int]] = None,
) -> RateBreakdown:
    """Per-user achievable rates under successive decoding.

    ``decode_order`` lists users from first decoded to last; a user's share
    on each subcarrier treats only earlier-decoded users as interference,
    so the shares telescope: sum_j per_user[j] == total for every order.
    Default order is ascending user index.
    """
    habs2 = gain_power(channel)
    _check_rate_inputs(habs2, alloc, sigma2)
    return rates_from_gain_power(habs2, alloc.F, alloc.P, sigma2, decode_order)


def min_user_rate(
    channel, alloc: Allocation, sigma2: float, decode_order=None
) -> float:
    """Worst per-user rate, the max-min criterion value."""
    return float(per_user_rates(channel, alloc, sigma2, decode_order).per_user.min())


def validate_allocation(
    alloc: Allocation,
    cfg: SystemConfig,
    binary_required: bool = False,
    tol: float = 1e-9,
) -> list[ConstraintViolation]:
    """Report every violated allocation constraint with its excess.

    Checks the per-user subcarrier budget (column sums <= N), the
    per-subcarrier user cap (row sums <= d_f), the per-user power budget
    sum_k f*p <= P_max, power nonnegativity, and either the relaxed box
    0 <= f <= 1 or exact binariness. Empty list means feasible.
    """
    out: list[ConstraintViolation] = []
    F, P = np.asarray(alloc.F, dtype=float), np.asarray(alloc.P, dtype=float)
    if F.shape != (cfg.K, cfg.J) or P.shape != (cfg.K, cfg.J):
        raise ValueError(
            f"allocation shape {F.shape}/{P.shape} does not match config "
            f"({cfg.K}, {cfg.J})"
        )

    if binary_required:
        dist = np.minimum(np.abs(F), np.abs(F - 1.0))
        if dist.max() > tol:
            k, j = np.unravel_index(np.argmax(dist), F.shape)
            out.append(ConstraintViolation("binary", (int(k), int(j)), float(dist[k, j])))
    else:
        low = -F.min()
        if low > tol:
            k, j = np.unravel_index(np.argmin(F), F.shape)
            out.append(ConstraintViolation("relaxed-box", (int(k), int(j)), float(low)))
        high = F.max() - 1.0
        if high > tol:
            k, j = np.unravel_index(np.argmax(F), F.shape)
            out.append(ConstraintViolation("relaxed-box", (int(k), int(j)), float(high)))

    if P.min() < -tol:
        k, j = np.unravel_index(np.argmin(P), P.shape)
        out.append(
            ConstraintViolation("power-nonnegative", (int(k), int(j)), float(-P.min()))
        )

    col = F.sum(axis=0)
    for j in np.flatnonzero(col > cfg.N + tol):
        out.append(
            ConstraintViolation("subcarriers-per-user", (int(j),), float(col[j] - cfg.N))
        )
    row = F.sum(axis=1)
    for k in np.flatnonzero(row > cfg.d_f + tol):
        out.append(
            ConstraintViolation("users-per-subcarrier", (int(k),), float(row[k] - cfg.d_f))
        )
    load = (F * P).sum(axis=0)
    budget = cfg.p_max_w
    for j in np.flatnonzero(load > budget + tol):
        out.append(
            ConstraintViolation("power-budget", (int(j),), float(load[j] - budget[j]))
        )
    return out


def max_violation(alloc: Allocation, cfg: SystemConfig, binary_required=False) -> float:
    """Largest constraint excess, 0.0 when feasible."""
    report = validate_allocation(alloc, cfg, binary_required=binary_required, tol=0.0)
    return max((v.residual for v in report), default=0.0)
