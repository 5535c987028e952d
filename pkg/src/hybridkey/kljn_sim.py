"""Numerical model of a Kirchhoff-law / Johnson-noise key exchange.

Each bit period Alice and Bob each connect a low or high resistor to the
wire.  The wire noise variance is ``noise_scale * R_parallel``, so a period
falls into one of three variance classes: LL, mixed (LH or HL) and HH.  The
mixed class is symmetric under swapping the ends, which is what makes its
bit secret: someone watching the wire learns that the resistors differ but
not which side holds which.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .keycore import BitString

L, H = "L", "H"

# cap on float64 noise samples materialized at once
_CHUNK_SAMPLES = 1 << 23


class Classification(str, Enum):
    SECURE = "SecureBit"
    DISCARD_LL = "Discard(LL)"
    DISCARD_HH = "Discard(HH)"


@dataclass(frozen=True)
class KljnConfig:
    r_low: float = 1.0
    r_high: float = 9.0
    noise_scale: float = 1.0
    samples_per_period: int = 10_000
    periods: int = 4000
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.r_low < self.r_high):
            raise ValueError("need 0 < r_low < r_high")
        if self.noise_scale <= 0:
            raise ValueError("noise_scale must be positive")
        if self.samples_per_period < 2:
            raise ValueError("samples_per_period must be at least 2")
        if self.periods < 1:
            raise ValueError("periods must be at least 1")

    def resistance(self, choice: str) -> float:
        return self.r_low if choice == L else self.r_high

    def class_variance(self, alice_choice: str, bob_choice: str) -> float:
        return self.noise_scale * parallel(self.resistance(alice_choice), self.resistance(bob_choice))

    @property
    def thresholds(self) -> tuple[float, float]:
        """Geometric means of adjacent class variances (LL|mixed, mixed|HH)."""
        v_ll = self.class_variance(L, L)
        v_mix = self.class_variance(L, H)
        v_hh = self.class_variance(H, H)
        return math.sqrt(v_ll * v_mix), math.sqrt(v_mix * v_hh)


def parallel(r1: float, r2: float) -> float:
    return r1 * r2 / (r1 + r2)


@dataclass(frozen=True)
class PeriodRecord:
    alice_choice: str
    bob_choice: str
    measured_statistic: float
    classification: Classification
    extracted_bit_alice: int | None = None
    extracted_bit_bob: int | None = None

    @property
    def mixed(self) -> bool:
        return self.alice_choice != self.bob_choice


@dataclass
class RawExchangeResult:
    config: KljnConfig
    alice_key: BitString
    bob_key: BitString
    eve_observations: np.ndarray
    periods: list[PeriodRecord] = field(repr=False)

    @property
    def error_rate(self) -> float:
        if not len(self.alice_key):
            return 0.0
        return float(np.mean(self.alice_key.bits != self.bob_key.bits))

    @property
    def secure_mask(self) -> np.ndarray:
        return np.array([p.classification is Classification.SECURE for p in self.periods])


def classify_period(measured_statistic: float, config: KljnConfig) -> Classification:
    """Three-band variance rule; a value exactly on a threshold goes to the lower band."""
    if measured_statistic < 0:
        raise ValueError("variance estimate cannot be negative")
    lo, hi = config.thresholds
    if measured_statistic <= lo:
        return Classification.DISCARD_LL
    if measured_statistic <= hi:
        return Classification.SECURE
    return Classification.DISCARD_HH


def extract_bit(own_choice: str, classification: Classification, side: str) -> int:
    """Alice maps L->0, H->1; Bob uses the inverted map so mixed periods agree."""
    if classification is not Classification.SECURE:
        raise ValueError("only secure periods carry a key bit")
    bit = 0 if own_choice == L else 1
    if side == "A":
        return bit
    if side == "B":
        return 1 - bit
    raise ValueError(f"side must be 'A' or 'B', got {side!r}")


def measure_variances(variances: np.ndarray, samples: int, rng: np.random.Generator) -> np.ndarray:
    """Empirical variance of ``samples`` zero-mean Gaussian draws per period."""
    out = np.empty(variances.size)
    rows = max(1, _CHUNK_SAMPLES // samples)
    for lo in range(0, variances.size, rows):
        hi = min(lo + rows, variances.size)
        x = rng.standard_normal((hi - lo, samples))
        # known zero mean: the estimator is the mean square
        out[lo:hi] = np.einsum("ij,ij->i", x, x) / samples * variances[lo:hi]
    return out


def run_exchange(config: KljnConfig) -> RawExchangeResult:
    rng = np.random.default_rng(config.seed)
    alice_h = rng.integers(0, 2, size=config.periods).astype(bool)
    bob_h = rng.integers(0, 2, size=config.periods).astype(bool)
    r_a = np.where(alice_h, config.r_high, config.r_low)
    r_b = np.where(bob_h, config.r_high, config.r_low)
    variances = config.noise_scale * r_a * r_b / (r_a + r_b)
    stats = measure_variances(variances, config.samples_per_period, rng)

    records = []
    alice_bits, bob_bits = [], []
    for a_h, b_h, stat in zip(alice_h, bob_h, stats):
        a, b = (H if a_h else L), (H if b_h else L)
        cls = classify_period(float(stat), config)
        if cls is Classification.SECURE:
            ba, bb = extract_bit(a, cls, "A"), extract_bit(b, cls, "B")
            alice_bits.append(ba)
            bob_bits.append(bb)
            records.append(PeriodRecord(a, b, float(stat), cls, ba, bb))
        else:
            records.append(PeriodRecord(a, b, float(stat), cls))
    return RawExchangeResult(config, BitString(alice_bits), BitString(bob_bits), stats, records)


def _median_split(statistics: np.ndarray) -> np.ndarray:
    return (statistics > np.median(statistics)).astype(np.uint8)


def eve_best_guess(
    eve_observations: Sequence[float],
    periods: Sequence[PeriodRecord],
    rule: Callable[[np.ndarray], np.ndarray] = _median_split,
    oracle_alice_choices: Sequence[str] | None = None,
) -> tuple[BitString, float]:
    """Eve's guesses of Alice's secure bits and their empirical accuracy.

    Eve only has the per-period wire statistic.  ``rule`` maps the
    statistics of the secure periods to guessed bits; the default guesses 1
    above the median.  Because LH and HL produce the same statistic
    distribution, no such rule beats a coin.  ``oracle_alice_choices`` breaks
    the model on purpose (test only) to check the harness can score 1.0.
    """
    obs = np.asarray(eve_observations, dtype=float)
    if obs.size != len(periods):
        raise ValueError("observations must cover every period")
    secure = [i for i, p in enumerate(periods) if p.classification is Classification.SECURE]
    if not secure:
        return BitString(), float("nan")
    truth = np.array([periods[i].extracted_bit_alice for i in secure], dtype=np.uint8)
    if oracle_alice_choices is not None:
        guesses = np.array([0 if oracle_alice_choices[i] == L else 1 for i in secure], dtype=np.uint8)
    else:
        guesses = np.asarray(rule(obs[secure]), dtype=np.uint8)
    return BitString(guesses), float(np.mean(guesses == truth))


# -- exchange report file ----------------------------------------------------

def format_exchange_report(result: RawExchangeResult) -> str:
    cfg = result.config
    lines = [f"KLJNv1 periods={cfg.periods} samples={cfg.samples_per_period} seed={cfg.seed}"]
    for idx, p in enumerate(result.periods):
        lines.append(f"{idx} {p.alice_choice} {p.bob_choice} {p.measured_statistic:.17g} {p.classification.value}")
    lines.append(f"error_rate={result.error_rate:.17g}")
    return "\n".join(lines) + "\n"


def parse_exchange_report(text: str) -> dict:
    lines = text.splitlines()
    head = lines[0].split()
    if head[0] != "KLJNv1":
        raise ValueError("not a KLJNv1 report")
    meta = dict(tok.split("=", 1) for tok in head[1:])
    rows = []
    for line in lines[1:-1]:
        idx, a, b, stat, cls = line.split()
        rows.append((int(idx), a, b, float(stat), Classification(cls)))
    footer = lines[-1]
    if not footer.startswith("error_rate="):
        raise ValueError("missing error_rate footer")
    return {
        "periods": int(meta["periods"]),
        "samples": int(meta["samples"]),
        "seed": int(meta["seed"]),
        "rows": rows,
        "error_rate": float(footer.split("=", 1)[1]),
    }
