"""Fading channel simulation for the uplink cell.

Users are dropped uniformly in a disk around the base station, small-scale
fading is normalized Rayleigh (unit mean power), and the composite gain of
user j on subcarrier k is

    h[k, j] = g[k, j] / sqrt(1 + r_j ** alpha)

with r_j the user distance in meters and alpha the path-loss exponent.
Temporal evolution for outdated-CSI experiments follows a first-order
Gauss-Markov recursion on the small-scale component, with correlation
rho = J0(2 * pi * f_max * T_s) between successive slots.

All dBm/watt conversions live here so there is a single conversion point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Leftmost root of J0; the correlation inversion is only meaningful left of it.
FIRST_J0_ZERO = 2.404825557695773


def dbm_to_watt(dbm):
    """Convert a power level from dBm to watts (elementwise on arrays)."""
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def noise_power(density_dbm_hz: float, bandwidth_hz: float) -> float:
    """Thermal noise power in watts over ``bandwidth_hz``.

    sigma_n^2 = 10**((density_dbm_hz - 30) / 10) * bandwidth_hz
    """
    if bandwidth_hz <= 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth_hz}")
    return float(dbm_to_watt(density_dbm_hz) * bandwidth_hz)


@dataclass
class ChannelState:
    """Composite uplink channel for one slot.

    H            : (K, J) complex composite gains
    distances_m  : (J,) user distances from the base station
    small_scale  : (K, J) complex Rayleigh fading, E|g|^2 = 1
    pathloss_exp : exponent used to compose H from small_scale
    """

    H: np.ndarray
    distances_m: np.ndarray
    small_scale: np.ndarray
    pathloss_exp: float

    def gains_abs2(self) -> np.ndarray:
        """Squared magnitudes |h|^2, the quantity every rate formula uses."""
        return np.abs(self.H) ** 2


@dataclass
class DopplerParams:
    """Temporal-correlation parameters for the outdated-CSI model.

    f_max_hz : maximum Doppler frequency
    t_s_s    : time between channel updates, seconds
    period_t : number of slots an allocation is reused before re-estimating
    """

    f_max_hz: float = 0.0
    t_s_s: float = 0.01
    period_t: int = 1

    def validate(self) -> None:
        if self.f_max_hz < 0:
            raise ValueError("f_max_hz must be nonnegative")
        if self.t_s_s <= 0:
            raise ValueError("t_s_s must be positive")
        if self.period_t < 1:
            raise ValueError("period_t must be at least 1")


def radius_from_uniform(u, cell_radius_m):
    """Inverse-CDF map for a uniform drop in a disk: r = R * sqrt(u)."""
    return cell_radius_m * np.sqrt(np.asarray(u, dtype=float))


def place_users(J: int, cell_radius_m: float, rng: np.random.Generator) -> np.ndarray:
    """Draw J i.i.d. user distances with density 2r/R^2 on [0, R]."""
    if cell_radius_m <= 0:
        raise ValueError("cell radius must be positive")
    return radius_from_uniform(rng.random(J), cell_radius_m)


def _unit_cn(shape, rng: np.random.Generator) -> np.ndarray:
    # circularly-symmetric complex Gaussian with unit second moment
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * np.sqrt(0.5)


def pathloss_amplitude(distances_m, alpha: float) -> np.ndarray:
    """Amplitude attenuation 1/sqrt(1 + r^alpha) per user."""
    r = np.asarray(distances_m, dtype=float)
    return 1.0 / np.sqrt(1.0 + r**alpha)


def draw_channel(
    distances_m, alpha: float, K: int, rng: np.random.Generator
) -> ChannelState:
    """Draw a fresh channel: unit-power Rayleigh fading times path loss."""
    if alpha < 0:
        raise ValueError("path-loss exponent must be nonnegative")
    distances_m = np.asarray(distances_m, dtype=float)
    g = _unit_cn((K, distances_m.size), rng)
    H = g * pathloss_amplitude(distances_m, alpha)[None, :]
    return ChannelState(H=H, distances_m=distances_m, small_scale=g, pathloss_exp=alpha)


def evolve_channel(
    state: ChannelState, rho: float, rng: np.random.Generator
) -> ChannelState:
    """One Gauss-Markov step: g' = rho * g + w, w ~ CN(0, 1 - rho^2).

    The marginal distribution of the fading is preserved (stationary
    recursion); distances and path loss are unchanged.
    """
    if abs(rho) > 1:
        raise ValueError("correlation must satisfy |rho| <= 1")
    w = _unit_cn(state.small_scale.shape, rng) * np.sqrt(max(0.0, 1.0 - rho**2))
    g = rho * state.small_scale + w
    H = g * pathloss_amplitude(state.distances_m, state.pathloss_exp)[None, :]
    return ChannelState(
        H=H,
        distances_m=state.distances_m,
        small_scale=g,
        pathloss_exp=state.pathloss_exp,
    )


def bessel_j0(x):
    """Bessel function of the first kind, order zero.

    Uses the N-point trapezoid discretization of the integral representation
    J0(x) = (1/2pi) * int_0^{2pi} cos(x sin t) dt. For a periodic analytic
    integrand the rule is spectrally accurate: the aliasing error is
    2*(J_N(x) + J_{2N}(x) + ...), which for N = 256 is far below 1e-15 for
    any |x| <= 100. Deterministic and platform independent.
    """
    x = np.asarray(x, dtype=float)
    n = 256
    theta = 2.0 * np.pi * np.arange(n) / n
    vals = np.cos(np.multiply.outer(x, np.sin(theta))).mean(axis=-1)
    return vals if vals.ndim else float(vals)


def doppler_correlation(params: DopplerParams) -> float:
    """Slot-to-slot fading correlation rho = J0(2 pi f_max T_s)."""
    params.validate()
    return float(bessel_j0(2.0 * np.pi * params.f_max_hz * params.t_s_s))


def doppler_frequency_for_rho_sq(rho_sq: float, t_s_s: float) -> float:
    """Invert rho^2 = J0(2 pi f T_s)^2 for the maximum Doppler frequency.

    Bisects J0 on [0, first zero], where it decreases monotonically from 1
    to 0, so the positive-correlation branch is unique.
    """
    if not 0.0 < rho_sq <= 1.0:
        raise ValueError("rho_sq must lie in (0, 1]")
    if t_s_s <= 0:
        raise ValueError("t_s_s must be positive")
    target = float(np.sqrt(rho_sq))
    lo, hi = 0.0, FIRST_J0_ZERO
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if bessel_j0(mid) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi) / (2.0 * np.pi * t_s_s)
