from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations

import numpy as np

from analytics import (
    PepContext,
    cond_pep_perfect,
    jam_prob_hops,
    jam_prob_modes,
    mgf_rician,
    pep_closed_form,
    perfect_moments,
    q_approx,
    rho,
)
from channel import ChannelRealization, sample_rician
from config import JamVariant, Scheme, SystemConfig
from hopping import bit_budget, k1_combinations, mode_universe, rank_combination, unrank_combination
from phy import channel_pass, dehop_dsmh, draw_jammer, emit_dsmh


logger = logging.getLogger(__name__)

MGF_POINTS = 200
MGF_TOLERANCE = 1e-12
MONTE_CARLO_POINTS = 20
MONTE_CARLO_DRAWS = 1_000_000
MONTE_CARLO_TOLERANCE = 0.01
JAM_TRIALS = 100_000
JAM_CHUNK = 10_000
JAM_RESIDUAL_LIMIT = 1e-20
MAX_ENUMERATED_N = 12


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    tolerance: str

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "detail": self.detail, "tolerance": self.tolerance}


def _random_context(rng: np.random.Generator, slots: tuple[int, int]) -> PepContext:
    noise_var = 10 ** rng.uniform(-1.0, 0.5)
    return PepContext(
        los_sq=rng.uniform(0.2, 2.0, size=slots),
        delta_sq=rng.uniform(0.0, 4.0, size=slots),
        jammed=rng.random(slots) < 0.5,
        xi=float(rng.uniform(0.0, 12.0)),
        noise_var=noise_var,
        jam_var=noise_var * 10 ** rng.uniform(-1.0, 1.0),
        nlos_var=rng.uniform(0.5, 1.5, size=slots),
    )


def _closed_form(ctx: PepContext, flip_rho_sign: bool) -> float:
    mean_sq, spread = perfect_moments(ctx)
    rho_values = -rho(ctx) if flip_rho_sign else rho(ctx)
    try:
        return float(pep_closed_form(mean_sq, spread, rho_values))
    except ValueError:
        return float("nan")


def _mgf_assembly(ctx: PepContext) -> float:
    total = 0.0
    rho_values = rho(ctx)
    for divisor, weight in ((4.0, 1.0 / 12.0), (3.0, 1.0 / 4.0)):
        total += weight * float(np.prod(mgf_rician(ctx.los_sq, ctx.xi, ctx.nlos_var, rho_values / divisor)))
    return total


def check_prop1_against_mgf(seed: int = 7, points: int = MGF_POINTS) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(points):
        ctx = _random_context(rng, (int(rng.integers(1, 4)), int(rng.integers(1, 4))))
        closed, assembled = _closed_form(ctx, False), _mgf_assembly(ctx)
        worst = max(worst, abs(closed - assembled) / assembled)
    return CheckResult(
        "prop1 closed form vs MGF assembly",
        bool(worst <= MGF_TOLERANCE),
        f"max relative error {worst:.3e} over {points} points",
        f"<= {MGF_TOLERANCE:g}",
    )


def check_prop1_against_monte_carlo(
    seed: int = 11,
    points: int = MONTE_CARLO_POINTS,
    draws: int = MONTE_CARLO_DRAWS,
    flip_rho_sign: bool = False,
) -> CheckResult:
    """Average the q_approx conditional PEP over Rician draws and compare with the closed form."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(points):
        slots = (1, int(rng.integers(1, 3)))
        noise_var = 10 ** rng.uniform(-0.5, 0.3)
        ctx = PepContext(
            los_sq=np.ones(slots),
            delta_sq=rng.uniform(0.5, 4.0, size=slots) * noise_var,
            jammed=rng.random(slots) < 0.5,
            xi=float(rng.uniform(0.0, 10.0)),
            noise_var=noise_var,
            jam_var=noise_var * 10 ** 0.2,
            nlos_var=1.0,
        )
        gains = sample_rician(np.ones(slots), ctx.xi, 1.0, rng, size=(draws,) + slots)
        empirical = float(np.mean(cond_pep_perfect(ctx, gains, q=q_approx)))
        closed = _closed_form(ctx, flip_rho_sign)
        error = abs(closed - empirical) / empirical
        worst = error if np.isnan(error) else max(worst, error)
        if np.isnan(worst):
            break
    return CheckResult(
        "prop1 closed form vs Monte Carlo channel average",
        bool(worst <= MONTE_CARLO_TOLERANCE),
        f"max relative error {worst:.3e} over {points} points x {draws} draws",
        f"<= {MONTE_CARLO_TOLERANCE:g}",
    )


def enumerate_jam_overlap(N: int, I: int, jam_size: int | None = None) -> list[Fraction]:
    """Exact overlap law by listing every attacker set against one fixed legitimate set."""
    J = I if jam_size is None else jam_size
    universe = mode_universe(N).modes
    legitimate = set(universe[:I])
    counts = [0] * (I + 1)
    total = 0
    for jam_set in combinations(universe, J):
        counts[len(legitimate.intersection(jam_set))] += 1
        total += 1
    return [Fraction(count, total) for count in counts]


def check_jam_probabilities(max_n: int = MAX_ENUMERATED_N) -> CheckResult:
    mismatches = []
    for N in range(2, max_n + 1, 2):
        for I in range(1, N + 1):
            enumerated = enumerate_jam_overlap(N, I)
            for count in range(I + 1):
                if jam_prob_modes(N, I, count, exact=True) != enumerated[count]:
                    mismatches.append((N, I, count))
            hops = sum(jam_prob_hops(N, I, 3, jammed, JamVariant.NORMALIZED, exact=True) for jammed in range(4))
            if hops != 1:
                mismatches.append((N, I, "hops"))
    return CheckResult(
        "jam probabilities vs exhaustive enumeration",
        not mismatches,
        f"{len(mismatches)} mismatches" + (f", first {mismatches[0]}" if mismatches else ""),
        "exact (rational arithmetic)",
    )


def _jam_residual_chunk(cfg: SystemConfig, trials: int, rng: np.random.Generator, second_mode: int | None) -> np.ndarray:
    N, I = cfg.N, cfg.I
    nonzero = np.array([mode for mode in mode_universe(N) if mode != 0])
    picks = np.argsort(rng.random((trials, len(nonzero))), axis=-1)[:, :I]
    sets = np.sort(nonzero[picks], axis=-1)[:, None, :]
    if second_mode is None:
        second = rng.choice(nonzero, size=(trials, 1))
    else:
        second = np.full((trials, 1), second_mode)
    # attacker aims at the legitimate modes
    jam = draw_jammer(cfg.with_changes(jam_modes=N), sets, rng)
    symbols = np.zeros((trials, 1, I), dtype=np.complex128)
    chan = ChannelRealization(np.ones(sets.shape, dtype=np.complex128), np.ones(sets.shape), np.ones(sets.shape), np.inf)
    received = channel_pass(emit_dsmh(symbols, sets, second, N), chan, sets, jam, 0.0, rng)
    leaked = np.sum(np.abs(dehop_dsmh(received, sets, second, N).values) ** 2, axis=(-2, -1))
    injected = np.sum(np.abs(jam.jam_symbols) ** 2, axis=(-2, -1))
    return leaked / injected


def dsmh_jam_residuals(cfg: SystemConfig, trials: int, seed: int, second_mode: int | None = None) -> np.ndarray:
    """Post de-hop jam power over injected jam power for noiseless, unit-gain IM-DSMH hops."""
    rng = np.random.default_rng(seed)
    sizes = [min(JAM_CHUNK, trials - start) for start in range(0, trials, JAM_CHUNK)]
    return np.concatenate([_jam_residual_chunk(cfg, size, rng, second_mode) for size in sizes])


def check_dsmh_jam_cancellation(trials: int = JAM_TRIALS, seed: int = 5) -> CheckResult:
    cfg = SystemConfig()
    keyed = dsmh_jam_residuals(cfg, trials, seed)
    exposed = dsmh_jam_residuals(cfg, min(trials, 1_000), seed + 1, second_mode=0)
    passed = bool(np.max(keyed) < JAM_RESIDUAL_LIMIT and np.min(exposed) > 1e-6)
    return CheckResult(
        "IM-DSMH jam cancellation",
        passed,
        f"max residual {np.max(keyed):.3e} over {len(keyed)} keyed trials, min {np.min(exposed):.3e} with second mode 0",
        f"< {JAM_RESIDUAL_LIMIT:g} keyed, > 0 on mode 0",
    )


def check_ranking(max_n: int = 12) -> CheckResult:
    failures = 0
    for N in range(2, max_n + 1, 2):
        for I in range(1, N + 1):
            for rank in range(k1_combinations(N, I)):
                if rank_combination(unrank_combination(N, I, rank), N) != rank:
                    failures += 1
    budget = bit_budget(SystemConfig(N=8, I=2, U=1), Scheme.IM_MH)
    ok = failures == 0 and budget.eta0 == 6 and budget.eta1 == 9 and budget.delta_exact == 3
    return CheckResult(
        "rank/unrank bijection and bit budget",
        ok,
        f"{failures} rank failures; eta0={budget.eta0}, eta1={budget.eta1}",
        "exact",
    )


def run_validation(flip_rho_sign: bool = False, monte_carlo_draws: int = MONTE_CARLO_DRAWS) -> list[CheckResult]:
    results = [
        check_prop1_against_mgf(),
        check_prop1_against_monte_carlo(draws=monte_carlo_draws, flip_rho_sign=flip_rho_sign),
        check_jam_probabilities(),
        check_dsmh_jam_cancellation(),
        check_ranking(),
    ]
    for result in results:
        log = logger.info if result.passed else logger.error
        log("%s: %s (%s)", result.name, "PASS" if result.passed else "FAIL", result.detail)
    return results
