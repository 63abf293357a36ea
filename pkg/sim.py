from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from analytics import AberResult, SeResult, aber_union_bound, se_for_scheme
from channel import estimate_channel, realize_channel
from config import CsiMode, JamVariant, Scheme, SimulationSettings, SystemConfig
from hopping import KeyStream, bit_budget, draw_patterns, scheme_config
from phy import (
    JammerDraw,
    channel_pass,
    dehop,
    dehop_dsmh,
    draw_jammer,
    emit,
    emit_dsmh,
    labels_to_bits,
    ml_detect,
    ml_detect_imperfect,
    modulate,
)


logger = logging.getLogger(__name__)

RELIABLE_ERRORS = 100
PLATEAU_RATIO = 0.8


@dataclass(frozen=True)
class TrialPlan:
    cfg: SystemConfig
    scheme: Scheme = Scheme.IM_MH
    csi: CsiMode = CsiMode.PERFECT
    target_errors: int = 100
    max_trials: int = 200_000
    base_seed: int = 1
    block_size: int = 2_000
    threads: int = 1
    weighting: str = "genie"
    forced_second_mode: int | None = None

    @classmethod
    def from_settings(cls, cfg: SystemConfig, scheme, csi, settings: SimulationSettings, seed: int, threads: int = 1):
        return cls(
            cfg=cfg,
            scheme=Scheme(scheme),
            csi=CsiMode(csi),
            target_errors=settings.target_errors,
            max_trials=settings.max_trials,
            base_seed=seed,
            block_size=settings.block_size,
            threads=threads,
        )


@dataclass(frozen=True)
class BlockResult:
    index: int
    trials: int
    bit_errors: int
    max_jam_residual: float = 0.0


@dataclass(frozen=True)
class BerEstimate:
    bit_errors: int
    bits_total: int
    trials: int
    target_errors: int
    max_jam_residual: float | None = None

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits_total if self.bits_total else 0.0

    @property
    def ci95(self) -> float:
        if not self.bits_total:
            return 0.0
        p = self.ber
        return 1.96 * math.sqrt(p * (1 - p) / self.bits_total)

    @property
    def reliable(self) -> bool:
        return self.bit_errors >= max(self.target_errors, RELIABLE_ERRORS)

    def to_dict(self) -> dict:
        payload = {
            "ber": self.ber,
            "ci95": self.ci95,
            "trials": self.trials,
            "errors": self.bit_errors,
            "bits_total": self.bits_total,
            "reliable": self.reliable,
        }
        if self.max_jam_residual is not None:
            payload["max_jam_residual"] = self.max_jam_residual
        return payload


def block_rng(base_seed: int, block_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([base_seed, block_index]))


def _jam_residual(jam: JammerDraw, sets, second, N: int) -> np.ndarray:
    """Post de-hop jam power over injected jam power, per trial."""
    field = jam.field(N)[..., :, None] * np.ones(N)
    leaked = dehop_dsmh(field, sets, second, N).values
    injected = np.sum(np.abs(jam.jam_symbols) ** 2, axis=(-2, -1))
    leaked_power = np.sum(np.abs(leaked) ** 2, axis=(-2, -1))
    return np.divide(leaked_power, injected, out=np.zeros_like(leaked_power), where=injected > 0)


def run_block(plan: TrialPlan, block_index: int) -> BlockResult:
    trials = min(plan.block_size, plan.max_trials - block_index * plan.block_size)
    rng = block_rng(plan.base_seed, block_index)
    cfg = scheme_config(plan.cfg, plan.scheme)
    N = cfg.N

    patterns = draw_patterns(cfg, plan.scheme, KeyStream(rng=rng), trials)
    sets = patterns.sets
    bits = rng.integers(0, 2, size=(trials, cfg.I * cfg.bits_per_symbol))
    symbols = modulate(bits, cfg.M, cfg.constellation)[:, None, :]
    chan = realize_channel(cfg, sets, rng)
    jam = draw_jammer(cfg, sets, rng)

    residual = 0.0
    if plan.scheme == Scheme.IM_DSMH:
        second = patterns.second
        if plan.forced_second_mode is not None:
            second = np.full_like(second, plan.forced_second_mode)
        frame = emit_dsmh(symbols, sets, second, N)
        received = channel_pass(frame, chan, sets, jam, cfg.noise_var, rng)
        y = dehop_dsmh(received, sets, second, N).values
        # the jammer only survives the second de-hop on a zero second mode
        kappa = jam.kappa & (second % N == 0)[..., None]
        residual = float(np.max(_jam_residual(jam, sets, second, N), initial=0.0))
    else:
        frame = emit(symbols, sets, N)
        received = channel_pass(frame, chan, sets, jam, cfg.noise_var, rng)
        y = dehop(received, sets, N).values
        kappa = jam.kappa

    if plan.csi == CsiMode.IMPERFECT:
        estimate = estimate_channel(cfg, chan, rng)
        labels = ml_detect_imperfect(
            y, estimate.est_gains, kappa, cfg.noise_var, cfg.jam_var, estimate.error_variance,
            cfg.M, cfg.constellation,
        )
    else:
        labels = ml_detect(
            y, chan.gains, kappa, cfg.noise_var, cfg.jam_var, cfg.M, cfg.constellation, plan.weighting,
        )
    decided = labels_to_bits(labels, cfg.bits_per_symbol)
    return BlockResult(block_index, trials, int(np.sum(decided != bits)), residual)


def _waves(plan: TrialPlan):
    blocks = -(-plan.max_trials // plan.block_size)
    width = max(1, plan.threads)
    for start in range(0, blocks, width):
        yield list(range(start, min(start + width, blocks)))


def run_point(plan: TrialPlan) -> BerEstimate:
    """Simulate until target_errors bit errors or max_trials trials, in whole blocks.

    Blocks are seeded by (base_seed, block index) and reduced in index order,
    so the estimate does not depend on the worker count.
    """
    eta = bit_budget(plan.cfg, plan.scheme).information_bits(plan.scheme)
    trials = bit_errors = 0
    residual = 0.0
    executor = ProcessPoolExecutor(max_workers=plan.threads) if plan.threads > 1 else None
    try:
        for wave in _waves(plan):
            if executor is None:
                results = [run_block(plan, index) for index in wave]
            else:
                results = list(executor.map(run_block, [plan] * len(wave), wave))
            done = False
            for result in sorted(results, key=lambda item: item.index):
                trials += result.trials
                bit_errors += result.bit_errors
                residual = max(residual, result.max_jam_residual)
                if bit_errors >= plan.target_errors:
                    done = True
                    break
            if done:
                logger.debug("target of %d errors reached after %d trials", plan.target_errors, trials)
                break
    finally:
        if executor is not None:
            executor.shutdown()

    estimate = BerEstimate(
        bit_errors=bit_errors,
        bits_total=trials * eta,
        trials=trials,
        target_errors=plan.target_errors,
        max_jam_residual=residual if plan.scheme == Scheme.IM_DSMH else None,
    )
    if not estimate.reliable:
        logger.warning(
            "unreliable point: %d errors in %d trials (scheme=%s, snr_db=%s)",
            bit_errors, trials, plan.scheme.value, plan.cfg.snr_db,
        )
    return estimate


@dataclass(frozen=True)
class SweepRow:
    parameters: dict
    aber: AberResult
    se: SeResult
    ber: BerEstimate | None = None

    def to_dict(self) -> dict:
        payload = dict(self.parameters)
        payload.update(self.aber.to_dict())
        payload.update(self.se.to_dict())
        if self.ber is not None:
            payload.update(self.ber.to_dict())
        return payload


def plan_parameters(plan: TrialPlan, variant: JamVariant) -> dict:
    cfg = plan.cfg
    return {
        "scheme": plan.scheme.value,
        "csi": plan.csi.value,
        "variant": variant.value,
        "N": cfg.N,
        "I": cfg.I,
        "U": cfg.U,
        "M": cfg.M,
        "xi": cfg.xi,
        "snr_db": cfg.snr_db,
        "jnr_db": cfg.jnr_db,
        "sigma_eps_sq": cfg.sigma_eps_sq,
        "jam_modes": cfg.jam_size,
    }


def sweep(
    plans,
    variant: JamVariant | str = JamVariant.NORMALIZED,
    simulate: bool = True,
    method: str = "factorized",
) -> list[SweepRow]:
    plans = list(plans)
    if not plans:
        raise ValueError("sweep needs at least one plan")
    variant = JamVariant(variant)
    rows = []
    for plan in plans:
        aber = aber_union_bound(plan.cfg, plan.scheme, plan.csi, variant, method)
        se = se_for_scheme(plan.cfg, plan.scheme, variant)
        ber = run_point(plan) if simulate else None
        rows.append(SweepRow(plan_parameters(plan, variant), aber, se, ber))
        logger.info("point done: %s", rows[-1].parameters)
    return rows


def flag_plateaus(snr_db, values, step_db: float = 10.0, ratio: float = PLATEAU_RATIO) -> list[bool]:
    """Mark points whose value at snr + step_db is still above ratio times the current value."""
    lookup = {round(float(snr), 9): float(value) for snr, value in zip(snr_db, values)}
    flags = []
    for snr, value in zip(snr_db, values):
        later = lookup.get(round(float(snr) + step_db, 9))
        flags.append(bool(later is not None and value > 0 and later / value > ratio))
    return flags
