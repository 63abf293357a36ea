import math
from fractions import Fraction

import numpy as np
import pytest

from analytics import (
    CandidateSpaceError,
    PepContext,
    aber_union_bound,
    cond_pep_imperfect,
    cond_pep_perfect,
    jam_prob_hops,
    jam_prob_modes,
    mgf_rician,
    pair_groups,
    pep_dsmh,
    pep_prop1,
    pep_prop2,
    q_approx,
    q_exact,
    se_baseline,
    se_dsmh,
    se_immh,
)
from channel import complex_gaussian, los_table, mode_index, sample_rician
from config import CsiMode, JamVariant, Scheme, SystemConfig
from hopping import KeyStream, bit_budget, draw_patterns, k2_combinations, selector_a_alphabet, unrank_subset
from phy import draw_jammer
from sim import flag_plateaus


def two_slot_context(**changes) -> PepContext:
    fields = dict(
        los_sq=np.ones((1, 2)),
        delta_sq=np.array([[4.0, 2.0]]),
        jammed=np.array([[False, True]]),
        xi=5.0,
        noise_var=0.5,
        jam_var=0.6,
    )
    fields.update(changes)
    return PepContext(**fields)


def test_q_function_values():
    assert q_exact(0.0) == pytest.approx(0.5)
    assert q_approx(0.0) == pytest.approx(1.0 / 3.0)
    assert q_exact(1.0) == pytest.approx(0.158655253931457, rel=1e-12)


def test_q_approx_tracks_q_within_thirty_percent():
    x = np.linspace(0.5, 5.0, 200)

    assert np.max(np.abs(q_approx(x) / q_exact(x) - 1)) < 0.3


def test_q_approx_rejects_negative_arguments():
    with pytest.raises(ValueError):
        q_approx(-0.1)


def test_closed_form_pep_without_distance_is_one_third():
    ctx = two_slot_context(delta_sq=np.zeros((1, 2)))

    assert pep_prop1(ctx) == pytest.approx(1.0 / 3.0)


def test_mgf_is_one_at_zero_and_pure_exponential_without_scatter():
    assert mgf_rician(1.3, 4.0, 1.0, 0.0) == pytest.approx(1.0)
    assert mgf_rician(1.3, np.inf, 1.0, -0.5) == pytest.approx(math.exp(-0.65))


def test_mgf_rejects_arguments_outside_its_domain():
    with pytest.raises(ValueError):
        mgf_rician(1.0, 2.0, 1.0, 5.0)


def test_mgf_matches_monte_carlo_average(rng):
    los_sq, xi, nlos_var, t = 1.5, 3.0, 1.2, -0.7
    los = math.sqrt(los_sq) * np.exp(0.4j)
    gains = sample_rician(los, xi, nlos_var * los_sq, rng, size=400_000)

    assert np.mean(np.exp(t * np.abs(gains) ** 2)) == pytest.approx(mgf_rician(los_sq, xi, nlos_var, t), rel=0.01)


def test_prop2_without_estimation_error_is_prop1():
    ctx = two_slot_context()

    assert pep_prop2(ctx) == pytest.approx(pep_prop1(ctx), rel=1e-12)


def test_estimation_error_raises_the_pep_at_high_snr():
    ctx = two_slot_context(noise_var=1e-3, jam_var=1e-3)

    assert pep_prop2(two_slot_context(noise_var=1e-3, jam_var=1e-3, sigma_eps_sq=0.05)) > pep_prop1(ctx)


def test_prop2_rejects_estimation_error_at_the_scatter_limit():
    with pytest.raises(ValueError):
        pep_prop2(two_slot_context(sigma_eps_sq=1.0 / 6.0))


def test_prop2_matches_monte_carlo_over_estimated_gains(rng):
    ctx = two_slot_context(sigma_eps_sq=0.05)
    scatter = (1.0 / 6.0 - 0.05) * 6.0
    estimates = sample_rician(np.ones((1, 2)), ctx.xi, scatter, rng, size=(200_000, 1, 2))

    empirical = np.mean(cond_pep_imperfect(ctx, estimates, q=q_approx))

    assert empirical == pytest.approx(pep_prop2(ctx), rel=0.02)


def test_conditional_pep_matches_weighted_ml_decisions(rng):
    ctx = two_slot_context()
    gains = np.array([[0.8, 0.6 - 0.3j]])
    sent = np.array([1.0, 1.0])
    rival = np.array([-1.0, 1.0j])
    count = 400_000
    variance = ctx.interference()

    y = gains * sent + complex_gaussian(rng, np.broadcast_to(variance, (count, 1, 2)))
    metric_sent = np.sum(np.abs(y - gains * sent) ** 2 / variance, axis=(-2, -1))
    metric_rival = np.sum(np.abs(y - gains * rival) ** 2 / variance, axis=(-2, -1))

    assert np.mean(metric_rival < metric_sent) == pytest.approx(cond_pep_perfect(ctx, gains), abs=2e-3)


def test_dsmh_pep_treats_every_slot_as_clean():
    ctx = two_slot_context()

    assert pep_dsmh(ctx) == pytest.approx(pep_prop1(ctx.clean()))
    assert pep_dsmh(ctx) < pep_prop1(ctx)


def test_jam_probabilities_for_eight_modes_two_active():
    assert jam_prob_modes(8, 2, 0, exact=True) == Fraction(15, 28)
    assert jam_prob_modes(8, 2, 1, exact=True) == Fraction(12, 28)
    assert jam_prob_modes(8, 2, 2, exact=True) == Fraction(1, 28)


def test_jam_probabilities_sum_to_one():
    for N in range(2, 13, 2):
        for I in range(1, N + 1):
            for J in range(N + 1):
                assert sum(jam_prob_modes(N, I, count, J, exact=True) for count in range(I + 1)) == 1


def test_full_activation_is_always_fully_jammed():
    assert jam_prob_modes(4, 4, 4) == 1.0


def test_hop_hit_rate_matches_drawn_jammers(rng):
    cfg = SystemConfig(N=8, I=2)
    modes = np.tile(np.array([[-3, 1]]), (100_000, 1, 1))

    jam = draw_jammer(cfg, modes, rng)

    assert np.mean(jam.kappa.any(axis=-1)) == pytest.approx(13 / 28, abs=0.01)


def test_jammed_hop_counts_match_drawn_jammers_over_three_hops(rng):
    cfg = SystemConfig(N=8, I=2, U=3)
    draws, chunk = 1_000_000, 250_000
    keys = KeyStream.from_seed(11)
    counts = np.zeros(4)
    for _ in range(draws // chunk):
        jam = draw_jammer(cfg, draw_patterns(cfg, Scheme.IM_MH, keys, chunk).sets, rng)
        counts += np.bincount(jam.kappa.any(axis=-1).sum(axis=-1), minlength=4)
    counts /= draws

    for jammed_hops, observed in enumerate(counts):
        expected = jam_prob_hops(8, 2, 3, jammed_hops)
        sigma = math.sqrt(expected * (1 - expected) / draws)
        assert observed == pytest.approx(expected, abs=3 * sigma)


def test_unjammed_hop_sequence_probability():
    assert jam_prob_hops(8, 2, 3, 0, exact=True) == Fraction(15, 28) ** 3


def test_paper_literal_variant_counts_each_jam_size_with_multiplicity():
    assert jam_prob_hops(8, 2, 1, 1, JamVariant.NORMALIZED, exact=True) == Fraction(13, 28)
    assert jam_prob_hops(8, 2, 1, 1, JamVariant.PAPER_LITERAL, exact=True) == Fraction(25, 28)


def test_pair_groups_cover_every_ordered_pair():
    groups = pair_groups(SystemConfig(N=8, I=2, M=2))

    assert groups.terms == 12
    assert groups.bit_weight.sum() == 16
    assert len(groups.bit_weight) == 3


def test_aber_vanishes_without_noise_or_jam():
    cfg = SystemConfig(snr_db=200.0, jnr_db=-math.inf)

    assert aber_union_bound(cfg).value < 1e-12


def test_single_mode_hopping_aber_mixes_clean_and_jammed_hops():
    cfg = SystemConfig(N=8, I=2, U=1, snr_db=10.0)
    single = cfg.with_changes(I=1, jam_modes=2)
    clean = pep_prop1(PepContext.from_config(single, [[4.0]], [[False]]))
    jammed = pep_prop1(PepContext.from_config(single, [[4.0]], [[True]]))

    result = aber_union_bound(cfg, Scheme.MH_BASELINE)

    assert result.value == pytest.approx(0.75 * clean + 0.25 * jammed, rel=1e-12)
    assert result.eta == 1


@pytest.mark.parametrize(
    "scheme,csi,variant",
    [
        (Scheme.IM_MH, CsiMode.PERFECT, JamVariant.NORMALIZED),
        (Scheme.IM_MH, CsiMode.PERFECT, JamVariant.PAPER_LITERAL),
        (Scheme.IM_MH, CsiMode.IMPERFECT, JamVariant.NORMALIZED),
        (Scheme.IM_DSMH, CsiMode.PERFECT, JamVariant.NORMALIZED),
    ],
)
def test_factorized_aber_equals_brute_force_enumeration(scheme, csi, variant):
    cfg = SystemConfig(N=8, I=2, U=2, snr_db=8.0, sigma_eps_sq=0.01, los_normalization="geometric")

    factorized = aber_union_bound(cfg, scheme, csi, variant, method="factorized")
    enumerated = aber_union_bound(cfg, scheme, csi, variant, method="enumerate")

    assert factorized.value == pytest.approx(enumerated.value, rel=1e-9)


def test_aber_refuses_oversized_candidate_spaces():
    with pytest.raises(CandidateSpaceError):
        aber_union_bound(SystemConfig(N=8, I=3, M=64, constellation="qam"))


def test_aber_rejects_unknown_methods():
    with pytest.raises(ValueError):
        aber_union_bound(SystemConfig(), method="sampled")


def test_low_snr_bound_is_clamped_for_reporting():
    result = aber_union_bound(SystemConfig(N=8, I=4, M=4, snr_db=-10.0))

    assert result.exceeds_one
    assert result.to_dict()["aber_bound"] == 1.0
    assert result.to_dict()["aber_raw"] > 1.0


def test_dsmh_bound_sits_below_immh():
    cfg = SystemConfig(snr_db=10.0)

    assert aber_union_bound(cfg, Scheme.IM_DSMH).value < aber_union_bound(cfg, Scheme.IM_MH).value


def test_aber_falls_with_snr_hops_and_rician_factor():
    by_snr = [aber_union_bound(SystemConfig(snr_db=snr)).value for snr in (0.0, 10.0, 20.0)]
    by_hops = [aber_union_bound(SystemConfig(U=U, snr_db=10.0)).value for U in (1, 2, 3)]
    by_xi = [aber_union_bound(SystemConfig(xi=xi, snr_db=20.0)).value for xi in (0.0, 5.0, 10.0)]

    for values in (by_snr, by_hops, by_xi):
        assert np.all(np.diff(values) < 0)


@pytest.mark.parametrize("snr_db", [10.0, 20.0, 30.0])
def test_aber_falls_with_more_modes_and_fewer_active_ones(snr_db):
    def bound(N, I):
        return aber_union_bound(SystemConfig(N=N, I=I, snr_db=snr_db)).value

    assert bound(16, 2) < bound(8, 2)
    assert bound(8, 1) < bound(8, 2)


def test_unit_normalised_bound_needs_no_activation_table():
    cfg = SystemConfig(N=32, I=8, snr_db=10.0)

    for scheme in (Scheme.IM_MH, Scheme.IM_DSMH):
        assert 0 < aber_union_bound(cfg, scheme).value < 1


def test_geometric_bound_refuses_activation_tables_beyond_the_limit():
    with pytest.raises(CandidateSpaceError):
        aber_union_bound(SystemConfig(N=32, I=8, los_normalization="geometric"))


def test_dsmh_geometric_bound_weights_every_hop_rank_equally():
    cfg = SystemConfig(N=12, I=2, snr_db=10.0, los_normalization="geometric")
    alphabet = selector_a_alphabet(12)
    modes = np.array([unrank_subset(rank // 12, alphabet, 2) for rank in range(k2_combinations(12, 2))])
    los_sq = (np.abs(los_table(cfg)[mode_index(modes, 12)]) ** 2)[:, None, :]
    groups = pair_groups(cfg)

    pep = np.array(
        [
            np.mean(
                pep_dsmh(
                    PepContext.from_config(
                        cfg,
                        np.broadcast_to(delta_sq, los_sq.shape),
                        False,
                        los_sq,
                        np.broadcast_to(symbol_sq, los_sq.shape),
                    )
                )
            )
            for delta_sq, symbol_sq in zip(groups.delta_sq, groups.symbol_sq)
        ]
    )
    eta = bit_budget(cfg, Scheme.IM_DSMH).information_bits(Scheme.IM_DSMH)
    expected = float(groups.bit_weight @ pep) / (eta * cfg.M ** cfg.I)

    assert aber_union_bound(cfg, Scheme.IM_DSMH).value == pytest.approx(expected, rel=1e-9)


def test_estimation_error_floors_the_bound():
    snr = [10.0, 20.0, 30.0, 40.0, 50.0]
    imperfect = [
        aber_union_bound(SystemConfig(snr_db=value, sigma_eps_sq=0.05), csi=CsiMode.IMPERFECT).value for value in snr
    ]
    perfect = [aber_union_bound(SystemConfig(snr_db=value)).value for value in snr]

    assert flag_plateaus(snr, imperfect)[3]
    assert not any(flag_plateaus(snr, perfect))


@pytest.mark.parametrize("I", [2, 3])
def test_scheme_ratios_where_single_mode_hopping_reaches_moderate_error_rates(I):
    checked = 0
    for snr in np.arange(0.0, 31.0, 1.0):
        cfg = SystemConfig(N=8, I=I, xi=10.0, jnr_db=2.0, snr_db=float(snr))
        baseline = aber_union_bound(cfg, Scheme.MH_BASELINE).value
        if not 1e-3 <= baseline <= 1e-2:
            continue
        checked += 1
        assert 0.1 <= aber_union_bound(cfg, Scheme.IM_MH).value / baseline <= 0.5
        assert 0.02 <= aber_union_bound(cfg, Scheme.IM_DSMH).value / baseline <= 0.25

    assert checked > 0


def test_se_over_active_modes_peaks_inside_at_moderate_snr():
    values = [se_immh(SystemConfig(N=12, I=I, snr_db=10.0)).value for I in range(1, 13)]

    assert 0 < int(np.argmax(values)) < 11


def test_se_over_active_modes_keeps_rising_at_high_snr():
    values = [se_immh(SystemConfig(N=12, I=I, snr_db=25.0)).value for I in range(1, 13)]

    assert np.all(np.diff(values) > 0)


def test_dsmh_se_is_never_below_immh():
    for I in range(1, 8):
        cfg = SystemConfig(N=8, I=I, snr_db=10.0)
        assert se_dsmh(cfg).value >= se_immh(cfg).value


def test_index_bits_agree_when_one_mode_stays_idle():
    cfg = SystemConfig(N=8, I=7)

    assert se_dsmh(cfg).index_part == se_immh(cfg).index_part


def test_extra_dsmh_index_bits_track_log_of_idle_modes():
    for N in range(4, 17, 2):
        for I in range(1, N):
            budget = bit_budget(SystemConfig(N=N, I=I), Scheme.IM_MH)
            assert abs(budget.delta_exact - budget.delta_approx) < 1


def test_se_per_slot_snr_overrides_the_configured_snr():
    cfg = SystemConfig(N=8, I=2, jnr_db=-math.inf)

    result = se_immh(cfg, snr_per_slot=[[3.0, 7.0]])

    assert result.signal_part == pytest.approx(math.log2(4.0) + math.log2(8.0))
    assert result.index_part == 4


def test_frequency_hopping_baseline_spreads_the_mode_hopping_rate():
    cfg = SystemConfig(snr_db=10.0)

    assert se_baseline(cfg, "fh").value == pytest.approx(se_baseline(cfg, "mh").value / cfg.N)
    assert se_baseline(cfg, "mh").index_part == 0.0
