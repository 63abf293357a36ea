from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from fractions import Fraction
from itertools import combinations, product

import numpy as np
from scipy import special

from channel import los_table, mode_index
from config import CsiMode, JamVariant, Scheme, SystemConfig
from hopping import (
    MAX_TABLE_SIZE,
    activation_table,
    activation_weights,
    bit_budget,
    k1_combinations,
    k2_combinations,
    scheme_config,
    table_rows,
)
from phy import candidate_labels, constellation, labels_to_bits


logger = logging.getLogger(__name__)

MAX_CANDIDATES = 4096
MAX_ENUMERATION = 1_000_000
PAIR_CHUNK = 64
# (divisor k, weight 1/c) pairs of the two-exponential Q approximation
Q_TERMS = ((4.0, 1.0 / 12.0), (3.0, 1.0 / 4.0))


class CandidateSpaceError(ValueError):
    pass


def _scalar_or_array(value):
    value = np.asarray(value)
    return float(value) if value.ndim == 0 else value


def q_approx(x):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("q_approx expects x >= 0")
    return _scalar_or_array(np.exp(-x ** 2 / 2) / 12 + np.exp(-2 * x ** 2 / 3) / 4)


def q_exact(x):
    return _scalar_or_array(0.5 * special.erfc(np.asarray(x, dtype=float) / np.sqrt(2)))


@dataclass(frozen=True)
class PepContext:
    """Inputs of one pairwise error event.

    Array fields broadcast to (..., U, I); the trailing two axes are hops and
    slots. ``nlos_var`` and ``sigma_eps_sq`` are relative to |h_LoS|^2.
    """

    los_sq: np.ndarray
    delta_sq: np.ndarray
    jammed: np.ndarray
    xi: float
    noise_var: float
    jam_var: float
    nlos_var: np.ndarray | float = 1.0
    sigma_eps_sq: float = 0.0
    symbol_sq: np.ndarray | float = 1.0

    def __post_init__(self):
        if np.any(np.asarray(self.delta_sq) < 0):
            raise ValueError("delta_sq must be non-negative")
        if np.ndim(self.los_sq) < 2 and np.ndim(self.delta_sq) < 2 and np.ndim(self.jammed) < 2:
            raise ValueError("PepContext needs at least one (U, I) shaped field")

    @classmethod
    def from_config(cls, cfg: SystemConfig, delta_sq, jammed, los_sq=1.0, symbol_sq=1.0) -> "PepContext":
        return cls(
            los_sq=np.asarray(los_sq, dtype=float),
            delta_sq=np.asarray(delta_sq, dtype=float),
            jammed=np.asarray(jammed, dtype=bool),
            xi=cfg.xi,
            noise_var=cfg.noise_var,
            jam_var=cfg.jam_var,
            nlos_var=cfg.nlos_scale,
            sigma_eps_sq=cfg.sigma_eps_sq,
            symbol_sq=symbol_sq,
        )

    def clean(self) -> "PepContext":
        return replace(self, jammed=np.zeros(np.shape(self.jammed), dtype=bool))

    def interference(self) -> np.ndarray:
        return np.where(np.asarray(self.jammed), self.noise_var + self.jam_var, self.noise_var)

    def estimation_noise(self) -> np.ndarray:
        return self.sigma_eps_sq * np.asarray(self.los_sq) * np.asarray(self.symbol_sq)

    def check_estimation_error(self):
        limit = np.asarray(self.nlos_var) / (1 + self.xi)
        if np.any(self.sigma_eps_sq >= limit):
            raise ValueError("sigma_eps_sq must stay below nlos_var / (1 + xi)")


def rho(ctx: PepContext) -> np.ndarray:
    return -np.asarray(ctx.delta_sq) / ctx.interference()


def rho_tilde(ctx: PepContext) -> np.ndarray:
    return -np.asarray(ctx.delta_sq) / (ctx.interference() + ctx.estimation_noise())


def _rician_moments(los_sq, xi: float, spread_scale) -> tuple[np.ndarray, np.ndarray]:
    los_sq = np.asarray(los_sq, dtype=float)
    if np.isinf(xi):
        return los_sq, np.zeros_like(los_sq)
    return xi / (1 + xi) * los_sq, np.asarray(spread_scale) * los_sq


def perfect_moments(ctx: PepContext) -> tuple[np.ndarray, np.ndarray]:
    """Mean power and scatter variance of the true gain."""
    scale = 0.0 if np.isinf(ctx.xi) else np.asarray(ctx.nlos_var) / (1 + ctx.xi)
    return _rician_moments(ctx.los_sq, ctx.xi, scale)


def imperfect_moments(ctx: PepContext) -> tuple[np.ndarray, np.ndarray]:
    """Mean power and scatter variance of the estimated gain."""
    ctx.check_estimation_error()
    scale = np.asarray(ctx.nlos_var) / (1 + ctx.xi) - ctx.sigma_eps_sq
    return _rician_moments(ctx.los_sq, ctx.xi, scale)


def _mgf(mean_sq, spread, t) -> np.ndarray:
    denominator = 1 - t * spread
    if np.any(denominator <= 0):
        raise ValueError("MGF argument outside its domain")
    return np.exp(t * mean_sq / denominator) / denominator


def pep_closed_form(mean_sq, spread, rho_values) -> float | np.ndarray:
    """Two-term closed form: sum over (k, 1/c) of (1/c) * prod over slots of MGF(rho / k)."""
    mean_sq, spread, rho_values = np.broadcast_arrays(
        np.asarray(mean_sq, dtype=float), np.asarray(spread, dtype=float), np.asarray(rho_values, dtype=float)
    )
    total = 0.0
    for divisor, weight in Q_TERMS:
        total = total + weight * np.prod(_mgf(mean_sq, spread, rho_values / divisor), axis=(-2, -1))
    return _scalar_or_array(total)


def pep_prop1(ctx: PepContext):
    mean_sq, spread = perfect_moments(ctx)
    return pep_closed_form(mean_sq, spread, rho(ctx))


def pep_prop2(ctx: PepContext):
    mean_sq, spread = imperfect_moments(ctx)
    return pep_closed_form(mean_sq, spread, rho_tilde(ctx))


def pep_dsmh(ctx: PepContext, csi: CsiMode = CsiMode.PERFECT):
    """IM-DSMH closed forms: the IM-MH expressions with every slot clean."""
    clean = ctx.clean()
    return pep_prop2(clean) if CsiMode(csi) == CsiMode.IMPERFECT else pep_prop1(clean)


def mgf_rician(los_sq, xi: float, nlos_var, t):
    """E[exp(t |h|^2)] for a Rician gain with LoS power los_sq and relative scatter nlos_var."""
    los_sq = np.asarray(los_sq, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.isinf(xi):
        return _scalar_or_array(np.exp(t * los_sq))
    denominator = 1 + xi - t * np.asarray(nlos_var) * los_sq
    if np.any(denominator <= 0):
        raise ValueError("mgf_rician argument outside its domain")
    return _scalar_or_array((1 + xi) * np.exp(xi * los_sq * t / denominator) / denominator)


def cond_pep_perfect(ctx: PepContext, gains, q=q_exact):
    power = np.abs(np.asarray(gains)) ** 2
    argument = np.sum(power * np.asarray(ctx.delta_sq) / (2 * ctx.interference()), axis=(-2, -1))
    return q(np.sqrt(argument))


def cond_pep_imperfect(ctx: PepContext, est_gains, q=q_exact):
    power = np.abs(np.asarray(est_gains)) ** 2
    denominator = 2 * (ctx.interference() + ctx.estimation_noise())
    argument = np.sum(power * np.asarray(ctx.delta_sq) / denominator, axis=(-2, -1))
    return q(np.sqrt(argument))


def jam_prob_modes(N: int, I: int, I_jammed: int, jam_size: int | None = None, exact: bool = False):
    """Probability that exactly I_jammed of the I active modes are hit by a J-of-N attacker."""
    J = I if jam_size is None else jam_size
    if not 0 <= I_jammed <= I <= N:
        raise ValueError(f"need 0 <= I' <= I <= N (got I'={I_jammed}, I={I}, N={N})")
    if not 0 <= J <= N:
        raise ValueError(f"jam_size must lie in [0, N] (got {J})")
    missed = J - I_jammed
    if missed < 0 or missed > N - I:
        value = Fraction(0)
    else:
        value = Fraction(math.comb(I, I_jammed) * math.comb(N - I, missed), math.comb(N, J))
    return value if exact else float(value)


def jam_prob_hops(
    N: int,
    I: int,
    U: int,
    U_jammed: int,
    variant: JamVariant | str = JamVariant.NORMALIZED,
    jam_size: int | None = None,
    exact: bool = False,
):
    if not 0 <= U_jammed <= U:
        raise ValueError(f"need 0 <= U' <= U (got U'={U_jammed}, U={U})")
    p_clean = jam_prob_modes(N, I, 0, jam_size, exact=True)
    if JamVariant(variant) == JamVariant.NORMALIZED:
        p_jammed = 1 - p_clean
    else:
        # one C(I, I') factor per jammed hop, as the closed form is printed
        p_jammed = sum(
            math.comb(I, count) * jam_prob_modes(N, I, count, jam_size, exact=True)
            for count in range(1, I + 1)
        )
    value = math.comb(U, U_jammed) * p_jammed ** U_jammed * p_clean ** (U - U_jammed)
    return value if exact else float(value)


@dataclass(frozen=True)
class AberResult:
    value: float
    terms: int
    scheme: Scheme
    csi: CsiMode
    variant: JamVariant
    method: str
    eta: int

    @property
    def exceeds_one(self) -> bool:
        return self.value > 1.0

    @property
    def reported(self) -> float:
        return min(self.value, 1.0)

    def to_dict(self) -> dict:
        return {
            "aber_bound": self.reported,
            "aber_raw": self.value,
            "aber_clamped": self.exceeds_one,
            "aber_terms": self.terms,
            "aber_method": self.method,
        }


@dataclass(frozen=True)
class PairGroups:
    """Ordered symbol-vector pairs grouped by per-slot distance and transmit energy."""

    delta_sq: np.ndarray
    symbol_sq: np.ndarray
    bit_weight: np.ndarray
    terms: int


def pair_groups(cfg: SystemConfig) -> PairGroups:
    count = cfg.M ** cfg.I
    if count > MAX_CANDIDATES:
        raise CandidateSpaceError(f"M^I = {count} exceeds the {MAX_CANDIDATES} candidate limit")
    labels = candidate_labels(cfg.M, cfg.I)
    symbols = constellation(cfg.M, cfg.constellation)[labels]
    bits = labels_to_bits(labels, cfg.bits_per_symbol)
    keys, weights = [], []
    for start in range(0, count, PAIR_CHUNK):
        sent = symbols[start:start + PAIR_CHUNK]
        delta_sq = np.abs(sent[:, None, :] - symbols[None, :, :]) ** 2
        symbol_sq = np.broadcast_to(np.abs(sent[:, None, :]) ** 2, delta_sq.shape)
        errors = np.sum(bits[start:start + PAIR_CHUNK, None, :] != bits[None, :, :], axis=-1)
        mask = errors > 0
        rows = np.round(np.concatenate([delta_sq[mask], symbol_sq[mask]], axis=-1), 12)
        unique, inverse = np.unique(rows, axis=0, return_inverse=True)
        keys.append(unique)
        weights.append(np.bincount(inverse.reshape(-1), weights=errors[mask], minlength=len(unique)))
    unique, inverse = np.unique(np.concatenate(keys), axis=0, return_inverse=True)
    bit_weight = np.bincount(inverse.reshape(-1), weights=np.concatenate(weights), minlength=len(unique))
    return PairGroups(unique[:, : cfg.I], unique[:, cfg.I:], bit_weight, count * (count - 1))


def _row_powers(cfg: SystemConfig, scheme: Scheme) -> tuple[np.ndarray, np.ndarray]:
    """Distinct per-slot LoS power rows a hop can see, with their probabilities.

    Unit normalisation gives every mode the same power, so no table is built.
    Geometric normalisation needs the activation table and is limited to
    MAX_TABLE_SIZE rows.
    """
    if cfg.los_normalization == "unit":
        return np.ones((1, cfg.I)), np.ones(1)
    rows = table_rows(cfg, scheme)
    if rows > MAX_TABLE_SIZE:
        raise CandidateSpaceError(
            f"{rows} activation rows exceed the {MAX_TABLE_SIZE} row limit for geometric LoS powers"
        )
    table = activation_table(cfg, scheme)
    powers = np.abs(los_table(cfg)[mode_index(table, cfg.N)]) ** 2
    unique, inverse = np.unique(np.round(powers, 14), axis=0, return_inverse=True)
    probability = np.bincount(inverse.reshape(-1), weights=activation_weights(cfg, scheme), minlength=len(unique))
    return unique, probability


def _subset_probabilities(cfg: SystemConfig) -> np.ndarray:
    """P(a specific slot subset of size c is exactly the jammed set), c = 0..I."""
    J = cfg.jam_size
    total = math.comb(cfg.N, J)
    return np.array(
        [math.comb(cfg.N - cfg.I, J - c) / total if 0 <= J - c <= cfg.N - cfg.I else 0.0 for c in range(cfg.I + 1)]
    )


def _slot_mgfs(cfg: SystemConfig, csi: CsiMode, groups: PairGroups, powers: np.ndarray, jammed: bool, divisor: float):
    """MGF factor per (group, row, slot) at rho / divisor."""
    los_sq = powers[None, :, :]
    delta_sq = groups.delta_sq[:, None, :]
    symbol_sq = groups.symbol_sq[:, None, :]
    ctx = PepContext.from_config(cfg, delta_sq, np.full(delta_sq.shape, jammed), los_sq, symbol_sq)
    if csi == CsiMode.IMPERFECT:
        mean_sq, spread = imperfect_moments(ctx)
        rho_values = rho_tilde(ctx)
    else:
        mean_sq, spread = perfect_moments(ctx)
        rho_values = rho(ctx)
    return _mgf(*np.broadcast_arrays(mean_sq, spread, rho_values / divisor))


def _hop_factors(cfg: SystemConfig, scheme: Scheme, csi: CsiMode, groups: PairGroups):
    """Per Q term: expected per-hop MGF product for a clean hop and for a jammed hop."""
    powers, row_prob = _row_powers(cfg, scheme)
    subset_prob = _subset_probabilities(cfg)
    p_clean = subset_prob[0]
    factors = []
    for divisor, _ in Q_TERMS:
        clean_slots = _slot_mgfs(cfg, csi, groups, powers, False, divisor)
        clean = np.prod(clean_slots, axis=-1) @ row_prob
        if scheme == Scheme.IM_DSMH or p_clean >= 1.0:
            factors.append((clean, clean))
            continue
        jam_slots = _slot_mgfs(cfg, csi, groups, powers, True, divisor)
        coefficients = np.zeros(clean_slots.shape[:-1] + (cfg.I + 1,))
        coefficients[..., 0] = 1.0
        for slot in range(cfg.I):
            shifted = coefficients[..., :-1] * jam_slots[..., slot, None]
            coefficients = coefficients * clean_slots[..., slot, None]
            coefficients[..., 1:] += shifted
        conditional = subset_prob.copy()
        conditional[0] = 0.0
        conditional /= 1.0 - p_clean
        jam = (coefficients @ conditional) @ row_prob
        factors.append((clean, jam))
    return factors


def _hop_weights(cfg: SystemConfig, variant: JamVariant) -> np.ndarray:
    return np.array(
        [jam_prob_hops(cfg.N, cfg.I, cfg.U, count, variant, cfg.jam_size) for count in range(cfg.U + 1)]
    )


def _pep_factorized(cfg, scheme, csi, variant, groups) -> np.ndarray:
    factors = _hop_factors(cfg, scheme, csi, groups)
    if scheme == Scheme.IM_DSMH:
        return sum(weight * clean ** cfg.U for (clean, _), (_, weight) in zip(factors, Q_TERMS))
    hop_weights = _hop_weights(cfg, variant)
    pep = np.zeros(len(groups.bit_weight))
    for jammed_hops, hop_weight in enumerate(hop_weights):
        for (clean, jam), (_, weight) in zip(factors, Q_TERMS):
            pep = pep + hop_weight * weight * clean ** (cfg.U - jammed_hops) * jam ** jammed_hops
    return pep


def _pep_enumerated(cfg, scheme, csi, variant, groups) -> np.ndarray:
    """Brute force over per-hop LoS power rows and jam subsets, one closed-form PEP per case."""
    powers, row_prob = _row_powers(cfg, scheme)
    subset_prob = _subset_probabilities(cfg)
    if scheme == Scheme.IM_DSMH:
        subsets = [()]
    else:
        subsets = [combo for size in range(cfg.I + 1) for combo in combinations(range(cfg.I), size)]
    per_hop = [(row, subset) for row in range(len(powers)) for subset in subsets]
    cases = len(per_hop) ** cfg.U
    if cases * len(groups.bit_weight) > MAX_ENUMERATION:
        raise CandidateSpaceError(f"{cases} hop/jam cases are too many to enumerate")
    los_sq = np.empty((cases, cfg.U, cfg.I))
    jammed = np.zeros((cases, cfg.U, cfg.I), dtype=bool)
    probability = np.ones(cases)
    jammed_hops = np.zeros(cases, dtype=np.int64)
    for case, hops in enumerate(product(per_hop, repeat=cfg.U)):
        for hop, (row, subset) in enumerate(hops):
            los_sq[case, hop] = powers[row]
            jammed[case, hop, list(subset)] = True
            probability[case] *= (1.0 if scheme == Scheme.IM_DSMH else subset_prob[len(subset)]) * row_prob[row]
            jammed_hops[case] += bool(subset)
    pep_of = pep_prop2 if csi == CsiMode.IMPERFECT else pep_prop1
    pep = np.zeros(len(groups.bit_weight))
    for index in range(len(groups.bit_weight)):
        ctx = PepContext.from_config(
            cfg,
            np.broadcast_to(groups.delta_sq[index], los_sq.shape),
            jammed,
            los_sq,
            np.broadcast_to(groups.symbol_sq[index], los_sq.shape),
        )
        values = np.asarray(pep_of(ctx))
        if scheme == Scheme.IM_DSMH:
            pep[index] = values @ probability
            continue
        hop_weights = _hop_weights(cfg, variant)
        for count in range(cfg.U + 1):
            selected = jammed_hops == count
            mass = probability[selected].sum()
            if mass > 0:
                pep[index] += hop_weights[count] * (values[selected] @ probability[selected]) / mass
    return pep


def aber_union_bound(
    cfg: SystemConfig,
    scheme: Scheme | str = Scheme.IM_MH,
    csi: CsiMode | str = CsiMode.PERFECT,
    variant: JamVariant | str = JamVariant.NORMALIZED,
    method: str = "factorized",
) -> AberResult:
    scheme, csi, variant = Scheme(scheme), CsiMode(csi), JamVariant(variant)
    eta = bit_budget(cfg, scheme).information_bits(scheme)
    cfg = scheme_config(cfg, scheme)
    groups = pair_groups(cfg)
    if method == "factorized":
        pep = _pep_factorized(cfg, scheme, csi, variant, groups)
    elif method == "enumerate":
        pep = _pep_enumerated(cfg, scheme, csi, variant, groups)
    else:
        raise ValueError(f"unknown ABER method {method!r}")
    value = float(groups.bit_weight @ pep) / (eta * cfg.M ** cfg.I)
    if value > 1.0:
        logger.info("union bound %.3g exceeds one at snr_db=%s", value, cfg.snr_db)
    return AberResult(value, groups.terms, scheme, csi, variant, method, eta)


@dataclass(frozen=True)
class SeResult:
    signal_part: float
    index_part: float

    @property
    def value(self) -> float:
        return self.signal_part + self.index_part

    def to_dict(self) -> dict:
        return {"se": self.value, "se_signal": self.signal_part, "se_index": self.index_part}


def _clean_snr(cfg: SystemConfig, snr_per_slot) -> np.ndarray:
    if snr_per_slot is None:
        return np.full((cfg.U, cfg.I), cfg.mean_channel_power / cfg.noise_var)
    snr = np.broadcast_to(np.asarray(snr_per_slot, dtype=float), (cfg.U, cfg.I))
    if np.any(snr < 0):
        raise ValueError("per-slot SNR must be non-negative")
    return snr


def _combined_rate(clean: np.ndarray, jammed: np.ndarray, hop_mask) -> float:
    combined = np.where(np.asarray(hop_mask)[:, None], jammed, clean).sum(axis=0)
    return float(np.sum(np.log2(1 + combined)))


def se_immh(cfg: SystemConfig, snr_per_slot=None, variant: JamVariant | str = JamVariant.NORMALIZED) -> SeResult:
    """Jam-averaged MRC rate over U hops plus the index information.

    ``snr_per_slot`` holds clean SNRs |h|^2 / sigma^2 per (hop, slot); a jammed
    slot sees |h|^2 / (sigma^2 + sigma_J^2).
    """
    clean = _clean_snr(cfg, snr_per_slot)
    jammed = clean * cfg.noise_var / (cfg.noise_var + cfg.jam_var)
    p_clean = jam_prob_modes(cfg.N, cfg.I, 0, cfg.jam_size)
    # chance a given slot is hit, given its hop is hit
    slot_hit = 0.0 if p_clean >= 1.0 else (cfg.jam_size / cfg.N) / (1 - p_clean)
    signal = 0.0
    for jammed_hops, hop_weight in enumerate(_hop_weights(cfg, variant)):
        hop_sets = list(combinations(range(cfg.U), jammed_hops))
        expected = 0.0
        for hop_set in hop_sets:
            for size in range(jammed_hops + 1):
                for hit in combinations(hop_set, size):
                    mask = np.zeros(cfg.U, dtype=bool)
                    mask[list(hit)] = True
                    chance = slot_hit ** size * (1 - slot_hit) ** (jammed_hops - size)
                    expected += chance * _combined_rate(clean, jammed, mask)
        signal += hop_weight * expected / len(hop_sets)
    return SeResult(signal, cfg.U * math.log2(k1_combinations(cfg.N, cfg.I)))


def se_dsmh(cfg: SystemConfig, snr_per_slot=None) -> SeResult:
    clean = _clean_snr(cfg, snr_per_slot)
    signal = float(np.sum(np.log2(1 + clean.sum(axis=0))))
    return SeResult(signal, cfg.U * math.log2(k2_combinations(cfg.N, cfg.I)))


def se_baseline(cfg: SystemConfig, kind: str = "mh", variant: JamVariant | str = JamVariant.NORMALIZED) -> SeResult:
    """Keyed single-mode hopping (mh) or the same rate spread over N bands (fh); no index bits."""
    single = scheme_config(cfg, Scheme.MH_BASELINE)
    signal = se_immh(single, variant=variant).signal_part
    if kind == "fh":
        return SeResult(signal / cfg.N, 0.0)
    if kind != "mh":
        raise ValueError(f"unknown baseline {kind!r}")
    return SeResult(signal, 0.0)


def se_for_scheme(cfg: SystemConfig, scheme: Scheme, variant: JamVariant = JamVariant.NORMALIZED) -> SeResult:
    if scheme == Scheme.IM_DSMH:
        return se_dsmh(cfg)
    if scheme == Scheme.MH_BASELINE:
        return se_baseline(cfg, "mh", variant)
    return se_immh(cfg, variant=variant)
