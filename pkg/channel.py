from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from config import Geometry, SystemConfig
from hopping import mode_universe


MAX_BESSEL_ORDER = 64


@dataclass(frozen=True)
class ChannelRealization:
    """Per (hop, slot) gains with the LoS part and absolute NLoS variance that produced them."""

    gains: np.ndarray
    los_part: np.ndarray
    nlos_variance: np.ndarray
    rician_factor: float


@dataclass(frozen=True)
class EstimatedChannel:
    est_gains: np.ndarray
    error_variance: np.ndarray | float


def bessel_j(order, x):
    """J_order(x) via scipy; accurate to well beyond 10 digits for |order| <= 64."""
    order = np.asarray(order)
    if np.any(np.abs(order) > MAX_BESSEL_ORDER):
        raise ValueError(f"Bessel order must satisfy |order| <= {MAX_BESSEL_ORDER}")
    value = special.jv(order, x)
    return float(value) if np.ndim(value) == 0 else value


def _slant_range(geom: Geometry) -> float:
    return float(np.sqrt(geom.d ** 2 + geom.r1 ** 2 + geom.r2 ** 2))


def los_gain(geom: Geometry, N: int, mode: int) -> complex:
    distance = _slant_range(geom)
    prefactor = geom.beta * geom.wavelength * N / (4 * np.pi * distance)
    propagation = np.exp(-2j * np.pi * distance / geom.wavelength)
    # j^{-l} taken on the exp(-j*pi*l/2) branch
    helicity = np.exp(-0.5j * np.pi * mode)
    argument = 2 * np.pi * geom.r1 * geom.r2 / (geom.wavelength * distance)
    return complex(prefactor * helicity * propagation * bessel_j(mode, argument))


@lru_cache(maxsize=128)
def _los_lookup(geom: Geometry, N: int, normalization: str) -> np.ndarray:
    raw = np.array([los_gain(geom, N, mode) for mode in mode_universe(N)], dtype=np.complex128)
    if normalization == "unit":
        table = np.exp(1j * np.angle(raw))
    else:
        mean_power = float(np.mean(np.abs(raw) ** 2))
        if mean_power == 0.0:
            raise ValueError("geometry gives zero LoS power on every mode")
        table = raw / np.sqrt(mean_power)
    table.setflags(write=False)
    return table


def mode_index(modes, N: int) -> np.ndarray:
    return np.asarray(modes, dtype=np.int64) + (N // 2 - 1)


def los_table(cfg: SystemConfig) -> np.ndarray:
    """Normalised LoS gain for every mode of the universe, in ascending mode order."""
    return _los_lookup(cfg.geometry, cfg.N, cfg.los_normalization)


def los_for_modes(cfg: SystemConfig, modes) -> np.ndarray:
    return los_table(cfg)[mode_index(modes, cfg.N)]


def complex_gaussian(rng: np.random.Generator, variance, size=None) -> np.ndarray:
    if size is None:
        size = np.shape(variance)
    scale = np.sqrt(np.asarray(variance, dtype=float) / 2)
    return scale * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def sample_rician(los, xi: float, nlos_var, rng: np.random.Generator, size=None):
    if xi < 0:
        raise ValueError(f"xi must be non-negative (got {xi})")
    if np.any(np.asarray(nlos_var) <= 0):
        raise ValueError("nlos_var must be positive")
    los = np.asarray(los, dtype=np.complex128)
    if size is None:
        size = np.broadcast_shapes(los.shape, np.shape(nlos_var))
    if np.isinf(xi):
        gains = np.broadcast_to(los, size).copy()
    else:
        scatter = complex_gaussian(rng, nlos_var, size)
        gains = np.sqrt(xi / (1 + xi)) * los + np.sqrt(1 / (1 + xi)) * scatter
    return complex(gains) if gains.ndim == 0 else gains


def apply_estimation_error(h, err_var, rng: np.random.Generator, limit=None) -> EstimatedChannel:
    """Imperfect CSI: h_est = h - eps with eps ~ CN(0, err_var) independent of h.

    ``limit`` is nlos_var / (1 + xi); err_var must stay strictly below it.
    """
    err_var_array = np.asarray(err_var, dtype=float)
    if np.any(err_var_array < 0):
        raise ValueError("err_var must be non-negative")
    if limit is not None and np.any((err_var_array > 0) & (err_var_array >= np.asarray(limit))):
        raise ValueError("err_var must stay below nlos_var / (1 + xi)")
    h = np.asarray(h, dtype=np.complex128)
    if not np.any(err_var_array):
        return EstimatedChannel(h.copy(), err_var)
    epsilon = complex_gaussian(rng, err_var_array, np.broadcast_shapes(h.shape, err_var_array.shape))
    return EstimatedChannel(h - epsilon, err_var)


def realize_channel(cfg: SystemConfig, modes, rng: np.random.Generator) -> ChannelRealization:
    """Draw gains for every activated slot; ``modes`` has shape (..., U, I)."""
    los = los_for_modes(cfg, modes)
    nlos_variance = cfg.nlos_scale * np.abs(los) ** 2
    # a Bessel zero leaves the slot dark
    safe_variance = np.where(nlos_variance > 0, nlos_variance, 1.0)
    gains = sample_rician(los, cfg.xi, safe_variance, rng, size=los.shape)
    gains = np.where(nlos_variance > 0, gains, 0.0)
    return ChannelRealization(np.asarray(gains), los, nlos_variance, cfg.xi)


def estimate_channel(cfg: SystemConfig, chan: ChannelRealization, rng: np.random.Generator) -> EstimatedChannel:
    error_variance = cfg.sigma_eps_sq * np.abs(chan.los_part) ** 2
    limit = np.where(chan.nlos_variance > 0, chan.nlos_variance / (1 + cfg.xi), np.inf)
    return apply_estimation_error(chan.gains, error_variance, rng, limit=limit)
