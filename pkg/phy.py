from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from channel import ChannelRealization, complex_gaussian
from config import SUPPORTED_CONSTELLATIONS, SystemConfig
from hopping import mode_universe


@dataclass(frozen=True)
class JammerDraw:
    jam_sets: np.ndarray
    jam_symbols: np.ndarray
    kappa: np.ndarray

    def field(self, N: int) -> np.ndarray:
        """Element-domain jam samples, shape (..., U, N)."""
        if self.jam_sets.shape[-1] == 0:
            return np.zeros(self.jam_sets.shape[:-1] + (N,), dtype=np.complex128)
        elements = np.arange(N)
        helices = np.exp(2j * np.pi * self.jam_sets[..., :, None] * elements / N)
        return np.sum(self.jam_symbols[..., :, None] * helices, axis=-2)


@dataclass(frozen=True)
class DehoppedSignals:
    values: np.ndarray


def _inverse_gray(labels: np.ndarray) -> np.ndarray:
    positions = labels.copy()
    shift = labels >> 1
    while np.any(shift):
        positions ^= shift
        shift >>= 1
    return positions


@lru_cache(maxsize=16)
def constellation(M: int, kind: str = "psk") -> np.ndarray:
    """Unit-energy Gray constellation; entry b is the point carrying label b (MSB first)."""
    sizes = SUPPORTED_CONSTELLATIONS.get(kind)
    if sizes is None or M not in sizes:
        raise ValueError(f"unsupported constellation {kind}-{M}")
    labels = np.arange(M, dtype=np.int64)
    if kind == "psk":
        points = np.exp(2j * np.pi * _inverse_gray(labels) / M)
        points = np.round(points.real, 15) + 1j * np.round(points.imag, 15)
    else:
        side = math.isqrt(M)
        half = int(math.log2(side))
        levels = 2 * _inverse_gray(labels >> half) - (side - 1)
        quadrature = 2 * _inverse_gray(labels & (side - 1)) - (side - 1)
        points = (levels + 1j * quadrature) / np.sqrt(2 * (M - 1) / 3)
    points.setflags(write=False)
    return points


def bits_to_labels(bits, bits_per_symbol: int) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.int64)
    if bits.shape[-1] % bits_per_symbol:
        raise ValueError("bit count must be a multiple of log2 M")
    grouped = bits.reshape(bits.shape[:-1] + (-1, bits_per_symbol))
    weights = 1 << np.arange(bits_per_symbol - 1, -1, -1, dtype=np.int64)
    return grouped @ weights


def labels_to_bits(labels, bits_per_symbol: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    shifts = np.arange(bits_per_symbol - 1, -1, -1, dtype=np.int64)
    bits = (labels[..., None] >> shifts) & 1
    return bits.reshape(labels.shape[:-1] + (-1,))


def modulate(bits, M: int, kind: str = "psk") -> np.ndarray:
    points = constellation(M, kind)
    return points[bits_to_labels(bits, int(math.log2(M)))]


def demap(symbols, M: int, kind: str = "psk") -> np.ndarray:
    points = constellation(M, kind)
    labels = np.argmin(np.abs(np.asarray(symbols)[..., None] - points) ** 2, axis=-1)
    return labels_to_bits(labels, int(math.log2(M)))


def _helix(modes, N: int) -> np.ndarray:
    elements = np.arange(N)
    return np.exp(2j * np.pi * np.asarray(modes)[..., None] * elements / N)


def emit(symbols, modes, N: int) -> np.ndarray:
    """IM-MH element frame: x[n] = sum_i s_i exp(j 2 pi n l_i / N)."""
    symbols = np.asarray(symbols)
    modes = np.asarray(modes)
    if symbols.shape[-1] != modes.shape[-1]:
        raise ValueError("need one symbol per activated mode")
    return np.sum(symbols[..., None] * _helix(modes, N), axis=-2)


def emit_dsmh(symbols, modes, second_mode, N: int) -> np.ndarray:
    """IM-DSMH frame over (element n, second-stage sample k).

    Row n = 0 is the single helix sum_i s_i exp(j 2 pi l_i l_s / N) exp(j 2 pi k l_s / N).
    """
    symbols = np.asarray(symbols)
    modes = np.asarray(modes)
    second_mode = np.asarray(second_mode)
    if symbols.shape[-1] != modes.shape[-1]:
        raise ValueError("need one symbol per activated mode")
    rotated = symbols * np.exp(2j * np.pi * modes * second_mode[..., None] / N)
    first_stage = emit(rotated, modes, N)
    return first_stage[..., :, None] * _helix(second_mode, N)[..., None, :]


def reference_row(frame: np.ndarray) -> np.ndarray:
    return frame[..., 0, :]


def draw_jammer(cfg: SystemConfig, modes, rng: np.random.Generator) -> JammerDraw:
    """Uniform J-of-N attacker per hop; ``modes`` has shape (..., U, I)."""
    modes = np.asarray(modes)
    hop_shape = modes.shape[:-1]
    universe = np.array(mode_universe(cfg.N).modes, dtype=np.int64)
    order = np.argsort(rng.random(hop_shape + (cfg.N,)), axis=-1)
    jam_sets = np.sort(universe[order[..., : cfg.jam_size]], axis=-1)
    jam_symbols = complex_gaussian(rng, cfg.jam_var, jam_sets.shape)
    kappa = np.any(modes[..., :, None] == jam_sets[..., None, :], axis=-1)
    return JammerDraw(jam_sets, jam_symbols, kappa)


def channel_pass(
    frame: np.ndarray,
    chan: ChannelRealization,
    modes,
    jam: JammerDraw | None,
    noise_var: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Mode-diagonal propagation plus jam field and element noise.

    One-axis frames (..., N) get noise N*sigma^2 per element, two-axis frames
    (..., N, N) get N^2*sigma^2, so each de-hopped slot sees sigma^2.
    """
    two_axis = frame.ndim == np.ndim(modes) + 1
    N = frame.shape[-2] if two_axis else frame.shape[-1]
    axis = -2 if two_axis else -1
    scale = np.ones(np.shape(modes)[:-1] + (N,), dtype=np.complex128)
    np.put_along_axis(scale, np.asarray(modes) % N, chan.gains, axis=-1)
    if two_axis:
        scale = scale[..., :, None]
    received = np.fft.ifft(np.fft.fft(frame, axis=axis) * scale, axis=axis)
    if jam is not None:
        field = jam.field(N)
        received = received + (field[..., :, None] if two_axis else field)
    if noise_var > 0:
        element_var = noise_var * (N * N if two_axis else N)
        received = received + complex_gaussian(rng, element_var, received.shape)
    return received


def dehop(received: np.ndarray, modes, N: int) -> DehoppedSignals:
    bins = np.fft.fft(received, axis=-1) / N
    return DehoppedSignals(np.take_along_axis(bins, np.asarray(modes) % N, axis=-1))


def dehop_dsmh(received: np.ndarray, modes, second_mode, N: int) -> DehoppedSignals:
    modes = np.asarray(modes)
    second_mode = np.asarray(second_mode)
    first_bins = np.fft.fft(received, axis=-2) / N
    per_mode = np.take_along_axis(first_bins, (modes % N)[..., :, None], axis=-2)
    second_bins = np.fft.fft(per_mode, axis=-1) / N
    index = np.broadcast_to((second_mode % N)[..., None, None], per_mode.shape[:-1] + (1,))
    values = np.take_along_axis(second_bins, index, axis=-1)[..., 0]
    return DehoppedSignals(values * np.exp(-2j * np.pi * modes * second_mode[..., None] / N))


def _slot_metrics(y, gains, weights, points) -> np.ndarray:
    residual = np.abs(np.asarray(y)[..., None] - np.asarray(gains)[..., None] * points) ** 2
    return np.sum(np.asarray(weights)[..., None] * residual, axis=-3)


def ml_detect(
    y,
    gains,
    kappa,
    noise_var: float,
    jam_var: float,
    M: int,
    kind: str = "psk",
    weighting: str = "genie",
) -> np.ndarray:
    """ML labels over all M^I candidates, inputs shaped (..., U, I); returns (..., I).

    The weighted metric separates across slots, so the joint argmin is the
    per-slot argmin. Ties resolve to the lowest label.
    """
    points = constellation(M, kind)
    noise_var = max(noise_var, np.finfo(float).tiny)
    if weighting == "uniform":
        weights = np.ones(np.shape(y))
    elif weighting == "genie":
        weights = np.where(np.asarray(kappa), 1.0 / (noise_var + jam_var), 1.0 / noise_var)
    else:
        raise ValueError(f"unknown weighting {weighting!r}")
    return np.argmin(_slot_metrics(y, gains, weights, points), axis=-1)


def ml_detect_imperfect(
    y,
    est_gains,
    kappa,
    noise_var: float,
    jam_var: float,
    error_var,
    M: int,
    kind: str = "psk",
) -> np.ndarray:
    points = constellation(M, kind)
    interference = max(noise_var, np.finfo(float).tiny) + np.where(np.asarray(kappa), jam_var, 0.0)
    denominators = interference[..., None] + np.asarray(error_var)[..., None] * np.abs(points) ** 2
    residual = np.abs(np.asarray(y)[..., None] - np.asarray(est_gains)[..., None] * points) ** 2
    return np.argmin(np.sum(residual / denominators, axis=-3), axis=-1)


def candidate_labels(M: int, I: int) -> np.ndarray:
    """Every label vector in brute-force order, first slot most significant."""
    digits = np.arange(M ** I)[:, None] // (M ** np.arange(I - 1, -1, -1)) % M
    return digits.astype(np.int64)
