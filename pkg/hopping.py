from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from typing import Iterable

import numpy as np

from config import Scheme, SystemConfig


MAX_TABLE_SIZE = 1 << 16


class KeyStreamExhausted(ValueError):
    pass


@dataclass(frozen=True)
class ModeSet:
    modes: tuple[int, ...]

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.modes, self.modes[1:])):
            raise ValueError(f"modes must be strictly ascending: {self.modes}")

    def __len__(self) -> int:
        return len(self.modes)

    def __iter__(self):
        return iter(self.modes)

    def __contains__(self, mode: int) -> bool:
        return mode in self.modes

    def validate(self, N: int, I: int | None = None) -> "ModeSet":
        if I is not None and len(self.modes) != I:
            raise ValueError(f"expected {I} modes, got {len(self.modes)}")
        if any(abs(mode) > N // 2 for mode in self.modes):
            raise ValueError(f"every mode must satisfy |l| <= {N // 2}: {self.modes}")
        if len({mode % N for mode in self.modes}) != len(self.modes):
            raise ValueError(f"modes must be distinct modulo {N}: {self.modes}")
        return self


@dataclass(frozen=True)
class HopPattern:
    per_hop_sets: tuple[ModeSet, ...]
    second_hop_modes: tuple[int, ...] | None = None

    @property
    def hops(self) -> int:
        return len(self.per_hop_sets)

    def mode_array(self) -> np.ndarray:
        return np.array([hop.modes for hop in self.per_hop_sets], dtype=np.int64)

    def second_array(self) -> np.ndarray | None:
        if self.second_hop_modes is None:
            return None
        return np.array(self.second_hop_modes, dtype=np.int64)


@dataclass(frozen=True)
class BitBudget:
    eta0: int
    eta_s: int
    eta_x: int
    eta1: int | None
    eta_x2: int | None
    k1: int
    k2: int | None
    delta_exact: int | None
    delta_approx: float | None

    def information_bits(self, scheme: Scheme) -> int:
        if scheme == Scheme.IM_DSMH:
            if self.eta1 is None:
                raise ValueError("IM-DSMH needs I <= N - 1")
            return self.eta1
        if scheme == Scheme.MH_BASELINE:
            return self.eta_s
        return self.eta0


@dataclass(frozen=True)
class PatternBatch:
    sets: np.ndarray
    second: np.ndarray | None = None


class KeyStream:
    """Bit source shared by transmitter, receiver and test harness.

    Either wraps a finite bit sequence or a seeded numpy Generator.
    Bits are consumed MSB first.
    """

    def __init__(self, bits: Iterable[int] | None = None, rng: np.random.Generator | None = None):
        if (bits is None) == (rng is None):
            raise ValueError("KeyStream needs exactly one of bits or rng")
        self._bits = None if bits is None else np.array([int(bit) & 1 for bit in bits], dtype=np.int64)
        self._position = 0
        self._rng = rng

    @classmethod
    def from_seed(cls, seed: int) -> "KeyStream":
        return cls(rng=np.random.default_rng(seed))

    @classmethod
    def from_bits(cls, bits: Iterable[int]) -> "KeyStream":
        return cls(bits=bits)

    @property
    def remaining(self) -> int | None:
        if self._bits is None:
            return None
        return len(self._bits) - self._position

    def _next_bits(self, count: int) -> np.ndarray:
        if self._rng is not None:
            return self._rng.integers(0, 2, size=count, dtype=np.int64)
        if self._position + count > len(self._bits):
            raise KeyStreamExhausted(
                f"key stream exhausted: needed {count} bits, {self.remaining} left"
            )
        chunk = self._bits[self._position:self._position + count]
        self._position += count
        return chunk

    def take(self, nbits: int) -> int:
        return int(self.take_many(nbits, 1)[0])

    def take_many(self, nbits: int, count: int) -> np.ndarray:
        if nbits == 0:
            return np.zeros(count, dtype=np.int64)
        if nbits > 62:
            raise ValueError("at most 62 bits per draw")
        bits = self._next_bits(nbits * count).reshape(count, nbits)
        weights = 1 << np.arange(nbits - 1, -1, -1, dtype=np.int64)
        return bits @ weights


def mode_universe(N: int) -> ModeSet:
    if N < 2 or N % 2:
        raise ValueError(f"N must be an even number of at least 2 (got {N})")
    return ModeSet(tuple(range(-N // 2 + 1, N // 2 + 1)))


def _floor_power_of_two(count: int) -> int:
    if count < 1:
        raise ValueError("need at least one combination")
    return 1 << (count.bit_length() - 1)


def k1_combinations(N: int, I: int) -> int:
    if not 1 <= I <= N:
        raise ValueError(f"I must satisfy 1 <= I <= N (got I={I}, N={N})")
    return _floor_power_of_two(math.comb(N, I))


def k2_combinations(N: int, I: int) -> int:
    if not 1 <= I <= N - 1:
        raise ValueError(f"IM-DSMH needs 1 <= I <= N - 1 (got I={I}, N={N})")
    return _floor_power_of_two(math.comb(N - 1, I) * N)


def unrank_subset(rank: int, alphabet: tuple[int, ...], I: int) -> tuple[int, ...]:
    n = len(alphabet)
    if not 0 <= rank < math.comb(n, I):
        raise ValueError(f"rank {rank} outside [0, C({n},{I}))")
    chosen = []
    position = 0
    for slot in range(I):
        while True:
            block = math.comb(n - position - 1, I - slot - 1)
            if rank < block:
                break
            rank -= block
            position += 1
        chosen.append(alphabet[position])
        position += 1
    return tuple(chosen)


def rank_subset(subset: Iterable[int], alphabet: tuple[int, ...]) -> int:
    index_of = {mode: index for index, mode in enumerate(alphabet)}
    positions = sorted(index_of[mode] for mode in subset)
    n, size = len(alphabet), len(positions)
    rank = 0
    previous = -1
    for slot, position in enumerate(positions):
        for skipped in range(previous + 1, position):
            rank += math.comb(n - skipped - 1, size - slot - 1)
        previous = position
    return rank


def unrank_combination(N: int, I: int, rank: int) -> ModeSet:
    k1 = k1_combinations(N, I)
    if not 0 <= rank < k1:
        raise ValueError(f"rank {rank} outside [0, K1={k1})")
    return ModeSet(unrank_subset(rank, mode_universe(N).modes, I))


def rank_combination(modes: ModeSet, N: int) -> int:
    return rank_subset(modes.modes, mode_universe(N).modes)


@lru_cache(maxsize=64)
def _rotational_representatives(N: int, I: int) -> tuple[tuple[int, ...], ...]:
    needed = k1_combinations(N, I) // N
    if k1_combinations(N, I) % N or needed == 0:
        raise ValueError(f"rotational activation needs N | K1 (N={N}, K1={k1_combinations(N, I)})")
    representatives = []
    for combo in combinations(range(N), I):
        rotations = {tuple(sorted((index + shift) % N for index in combo)) for shift in range(N)}
        if len(rotations) == N and min(rotations) == combo:
            representatives.append(combo)
            if len(representatives) == needed:
                return tuple(representatives)
    raise ValueError(f"not enough full rotation orbits for N={N}, I={I}")


def unrank_rotational(N: int, I: int, rank: int) -> ModeSet:
    k1 = k1_combinations(N, I)
    if not 0 <= rank < k1:
        raise ValueError(f"rank {rank} outside [0, K1={k1})")
    universe = mode_universe(N).modes
    representative = _rotational_representatives(N, I)[rank // N]
    shift = rank % N
    return ModeSet(tuple(sorted(universe[(index + shift) % N] for index in representative)))


def rank_rotational(modes: ModeSet, N: int) -> int:
    universe = mode_universe(N).modes
    index_of = {mode: index for index, mode in enumerate(universe)}
    indices = [index_of[mode] for mode in modes]
    lookup = {rep: orbit for orbit, rep in enumerate(_rotational_representatives(N, len(indices)))}
    for shift in range(N):
        candidate = tuple(sorted((index - shift) % N for index in indices))
        if candidate in lookup:
            return lookup[candidate] * N + shift
    raise ValueError(f"{modes.modes} is not in the rotational activation family")


def selector_a_alphabet(N: int) -> tuple[int, ...]:
    return tuple(mode for mode in mode_universe(N).modes if mode != 0)


def selector_b_mode(N: int, index: int, exclude_zero: bool) -> int:
    """Map a selector-B index in [0, N) to the second-stage mode.

    With ``exclude_zero`` only N - 1 modes are available, so index N - 1
    folds back onto the first non-zero mode. That mode is then drawn with
    probability 2/N and every other non-zero mode with probability 1/N;
    the second hop is not uniform over the non-zero modes.
    """
    if not 0 <= index < N:
        raise ValueError(f"selector B index {index} outside [0, {N})")
    if exclude_zero:
        nonzero = selector_a_alphabet(N)
        return nonzero[index % len(nonzero)]
    return mode_universe(N).modes[index]


def _activation(cfg: SystemConfig, rank: int) -> ModeSet:
    if cfg.activation_map == "rotational":
        return unrank_rotational(cfg.N, cfg.I, rank)
    return unrank_combination(cfg.N, cfg.I, rank)


def hop_alphabet_size(cfg: SystemConfig, scheme: Scheme) -> int:
    if scheme == Scheme.IM_DSMH:
        return k2_combinations(cfg.N, cfg.I)
    if scheme == Scheme.MH_BASELINE:
        return k1_combinations(cfg.N, 1)
    return k1_combinations(cfg.N, cfg.I)


def scheme_config(cfg: SystemConfig, scheme: Scheme) -> SystemConfig:
    if scheme == Scheme.MH_BASELINE and cfg.I != 1:
        return cfg.with_changes(I=1, jam_modes=cfg.jam_size)
    return cfg


def generate_pattern(cfg: SystemConfig, key_stream: KeyStream, scheme: Scheme) -> HopPattern:
    cfg = scheme_config(cfg, scheme)
    nbits = int(math.log2(hop_alphabet_size(cfg, scheme)))
    sets = []
    seconds = []
    for _ in range(cfg.U):
        rank = key_stream.take(nbits)
        if scheme == Scheme.IM_DSMH:
            combo = unrank_subset(rank // cfg.N, selector_a_alphabet(cfg.N), cfg.I)
            sets.append(ModeSet(combo))
            seconds.append(selector_b_mode(cfg.N, rank % cfg.N, cfg.exclude_zero_second_hop))
        else:
            sets.append(_activation(cfg, rank))
    return HopPattern(tuple(sets), tuple(seconds) if scheme == Scheme.IM_DSMH else None)


@lru_cache(maxsize=64)
def _activation_table(N: int, I: int, activation_map: str) -> np.ndarray:
    k1 = k1_combinations(N, I)
    if k1 > MAX_TABLE_SIZE:
        raise ValueError(f"K1={k1} is too large to tabulate")
    if activation_map == "rotational":
        rows = [unrank_rotational(N, I, rank).modes for rank in range(k1)]
    else:
        universe = mode_universe(N).modes
        rows = [combo for _, combo in zip(range(k1), combinations(universe, I))]
    table = np.array(rows, dtype=np.int64).reshape(k1, I)
    table.setflags(write=False)
    return table


@lru_cache(maxsize=64)
def _selector_a_table(N: int, I: int) -> np.ndarray:
    count = k2_combinations(N, I) // N + 1
    rows = [combo for _, combo in zip(range(count), combinations(selector_a_alphabet(N), I))]
    table = np.array(rows, dtype=np.int64).reshape(len(rows), I)
    table.setflags(write=False)
    return table


def table_rows(cfg: SystemConfig, scheme: Scheme) -> int:
    cfg = scheme_config(cfg, scheme)
    if scheme == Scheme.IM_DSMH:
        return -(-k2_combinations(cfg.N, cfg.I) // cfg.N)
    return k1_combinations(cfg.N, cfg.I)


def activation_table(cfg: SystemConfig, scheme: Scheme) -> np.ndarray:
    """Every mode set a hop can activate, one row per usable rank."""
    cfg = scheme_config(cfg, scheme)
    if scheme == Scheme.IM_DSMH:
        rows = table_rows(cfg, scheme)
        if rows > MAX_TABLE_SIZE:
            raise ValueError(f"{rows} selector-A rows are too many to tabulate")
        return _selector_a_table(cfg.N, cfg.I)[:rows]
    return _activation_table(cfg.N, cfg.I, cfg.activation_map)


def activation_weights(cfg: SystemConfig, scheme: Scheme) -> np.ndarray:
    """Probability of each activation_table row under a uniform hop rank.

    An IM-DSMH row collects N consecutive ranks, except the last one when
    N does not divide K2.
    """
    cfg = scheme_config(cfg, scheme)
    rows = table_rows(cfg, scheme)
    if scheme != Scheme.IM_DSMH:
        return np.full(rows, 1.0 / rows)
    k2 = k2_combinations(cfg.N, cfg.I)
    starts = np.arange(rows, dtype=np.int64) * cfg.N
    return np.minimum(cfg.N, k2 - starts) / k2


def _unrank_rows(ranks: np.ndarray, unrank) -> np.ndarray:
    rows = [unrank(int(rank)) for rank in ranks.ravel()]
    return np.array(rows, dtype=np.int64).reshape(ranks.shape + (-1,))


def draw_patterns(cfg: SystemConfig, scheme: Scheme, key_stream: KeyStream, count: int) -> PatternBatch:
    """Vectorised generate_pattern: ``count`` independent patterns in hop order.

    Alphabets too large to tabulate are unranked one hop at a time.
    """
    cfg = scheme_config(cfg, scheme)
    nbits = int(math.log2(hop_alphabet_size(cfg, scheme)))
    ranks = key_stream.take_many(nbits, count * cfg.U).reshape(count, cfg.U)
    tabulated = table_rows(cfg, scheme) <= MAX_TABLE_SIZE
    if scheme != Scheme.IM_DSMH:
        if tabulated:
            return PatternBatch(activation_table(cfg, scheme)[ranks])
        return PatternBatch(_unrank_rows(ranks, lambda rank: _activation(cfg, rank).modes))
    lookup = np.array(
        [selector_b_mode(cfg.N, index, cfg.exclude_zero_second_hop) for index in range(cfg.N)],
        dtype=np.int64,
    )
    if tabulated:
        sets = _selector_a_table(cfg.N, cfg.I)[ranks // cfg.N]
    else:
        alphabet = selector_a_alphabet(cfg.N)
        sets = _unrank_rows(ranks // cfg.N, lambda row: unrank_subset(row, alphabet, cfg.I))
    return PatternBatch(sets, lookup[ranks % cfg.N])


def bit_budget(cfg: SystemConfig, scheme: Scheme) -> BitBudget:
    cfg = scheme_config(cfg, scheme)
    eta_s = cfg.I * cfg.bits_per_symbol
    k1 = k1_combinations(cfg.N, cfg.I)
    eta_x = cfg.U * int(math.log2(k1))
    k2 = eta_x2 = eta1 = delta_exact = delta_approx = None
    if cfg.I <= cfg.N - 1:
        k2 = k2_combinations(cfg.N, cfg.I)
        eta_x2 = cfg.U * int(math.log2(k2))
        eta1 = eta_s + eta_x2
        delta_exact = eta1 - (eta_s + eta_x)
        delta_approx = cfg.U * math.log2(cfg.N - cfg.I)
    elif scheme == Scheme.IM_DSMH:
        raise ValueError(f"IM-DSMH needs I <= N - 1 (got I={cfg.I}, N={cfg.N})")
    return BitBudget(
        eta0=eta_s + eta_x,
        eta_s=eta_s,
        eta_x=eta_x,
        eta1=eta1,
        eta_x2=eta_x2,
        k1=k1,
        k2=k2,
        delta_exact=delta_exact,
        delta_approx=delta_approx,
    )
