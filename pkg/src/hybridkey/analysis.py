"""Eavesdropper attacks and the statistics used to score them."""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np
from scipy.special import gammaincc

from .dhm_expand import derive_segment, is_full_group_generator, is_safe_prime, modexp
from .keycore import BitString, otp_apply
from .wire import EveTap, FrameType

BRUTE_FORCE_LIMIT = 1 << 20
MIN_CHI_SQUARE_BYTES = 1280

_PROBABILITY_STATS = {"accuracy", "p_value", "bit_balance_p", "applicable_fraction"}


class AttackInapplicable(ValueError):
    """The attack's precondition (e.g. cleartext protocol numbers) is not met."""


class DlogNotFound(ValueError):
    pass


@dataclass
class AttackReport:
    attack_name: str
    inputs_summary: str
    success: Union[bool, float]
    statistics: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        probs = {k: v for k, v in self.statistics.items() if k in _PROBABILITY_STATS}
        if not isinstance(self.success, bool):
            probs["success"] = self.success
        for name, value in probs.items():
            if not (0.0 <= value <= 1.0) and not math.isnan(value):
                raise ValueError(f"{name}={value} is not a probability")

    def to_text(self) -> str:
        lines = [
            f"attack: {self.attack_name}",
            f"inputs: {self.inputs_summary}",
            f"success: {self.success}",
        ]
        lines += [f"{k}: {v:.10g}" for k, v in self.statistics.items()]
        return "\n".join(lines) + "\n"


# -- discrete log and the cleartext attack -----------------------------------

def brute_force_dlog(g: int, A: int, p: int) -> int:
    """Smallest non-negative ``a`` with ``g**a = A (mod p)``, by exhaustive search."""
    if p >= BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute force limited to p < 2**20, got {p.bit_length()} bits")
    if p < 2:
        raise ValueError("modulus must be at least 2")
    A %= p
    x = 1
    for a in range(p):
        if x == A:
            return a
        x = x * g % p
    raise DlogNotFound(f"{A} is not a power of {g} mod {p}")


@dataclass(frozen=True)
class CleartextRound:
    """One round's protocol numbers as an eavesdropper on plain DHM sees them."""

    p: int
    g: int
    A: int
    B: int
    k_bits: int


def attack_plain_dhm(transcript: CleartextRound) -> Optional[BitString]:
    """Recover the round segment from cleartext numbers (``None`` if the parties rejected it)."""
    if not isinstance(transcript, CleartextRound):
        raise AttackInapplicable("plain DHM attack needs cleartext p, g, A, B")
    a = brute_force_dlog(transcript.g, transcript.A, transcript.p)
    s = modexp(transcript.B, a, transcript.p)
    return derive_segment(s, transcript.p, transcript.k_bits)


@dataclass(frozen=True)
class TapRound:
    attempt: int
    prime_g: bytes
    pub_a: bytes
    pub_b: bytes

    @property
    def ciphertext(self) -> bytes:
        return self.prime_g + self.pub_a + self.pub_b


def tap_hello(tap: EveTap) -> dict:
    hellos = tap.of_type(FrameType.HELLO)
    if not hellos:
        raise ValueError("tap has no HELLO frame")
    return json.loads(hellos[0].frame.payload)


def tap_rounds(tap: EveTap) -> list[TapRound]:
    """Group the expansion frames into complete rounds (PRIME_G, A's PUBVAL, B's PUBVAL)."""
    rounds, cur = [], []
    for e in tap.frames:
        ft = e.frame.frame_type
        if ft is FrameType.PRIME_G:
            cur = [e.frame.payload]
        elif ft is FrameType.PUBVAL and cur:
            cur.append(e.frame.payload)
            if len(cur) == 3:
                rounds.append(TapRound(len(rounds), *cur))
                cur = []
        elif ft is FrameType.ABORT:
            cur = []
    return rounds


def cleartext_hypothesis(rnd: TapRound, prime_bits: int, k_bits: int,
                         rng: Optional[random.Random] = None) -> Optional[CleartextRound]:
    """Read the frames as if they were unencrypted; ``None`` if that is implausible."""
    if prime_bits > 20:
        return None
    width = prime_bits // 8
    p = int.from_bytes(rnd.prime_g[:width], "big")
    g = int.from_bytes(rnd.prime_g[width:], "big")
    A = int.from_bytes(rnd.pub_a, "big")
    B = int.from_bytes(rnd.pub_b, "big")
    rng = rng or random.Random(0)
    if p.bit_length() != prime_bits or not is_safe_prime(p, 8, rng) or not is_full_group_generator(g, p):
        return None
    if not (1 <= A < p and 1 <= B < p):
        return None
    return CleartextRound(p, g, A, B, k_bits)


def _bits_of(data: bytes) -> np.ndarray:
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8))


def attack_encrypted_dhm(tap: EveTap, true_segments: Mapping[int, BitString],
                         known_rounds: int = 16, mi_permutations: int = 20,
                         seed: int = 0) -> AttackReport:
    """Ciphertext-only segment prediction against an encrypted session.

    Eve reads the cleartext HELLO for the sizes.  Per round, if the frames
    parse as a valid cleartext group at brute-force size she runs the plain
    attack.  Otherwise she uses a feature predictor: she is granted the true
    segments of the first ``known_rounds`` rounds (as a known-plaintext leak
    would give her) and, for each segment bit, picks the ciphertext bit (or
    constant) and polarity that best matched on those rounds.  Accuracy is
    scored on the remaining rounds only.

    ``true_segments`` maps tap round index to the parties' segment; rounds
    the parties rejected are absent and are not scored.
    """
    hello = tap_hello(tap)
    prime_bits, k_bits = hello["prime_bits"], hello["k_bits"]
    rounds = [r for r in tap_rounds(tap) if r.attempt in true_segments]
    train, test = rounds[:known_rounds], rounds[known_rounds:]
    if not test:
        raise ValueError("no rounds left to score after the known-plaintext rounds")

    def features(r: TapRound) -> np.ndarray:
        return np.concatenate([_bits_of(r.ciphertext), [1]]).astype(np.int8)

    if train:
        fx = np.stack([features(r) for r in train])
        fy = np.stack([true_segments[r.attempt].bits for r in train]).astype(np.int8)
        # agreement[f, j]: how often feature f equals segment bit j in training
        agree = (fx[:, :, None] == fy[:, None, :]).mean(axis=0)
        score = np.abs(agree - 0.5)
        best_f = score.argmax(axis=0)
        invert = agree[best_f, np.arange(k_bits)] < 0.5
    else:
        best_f = np.full(k_bits, -1)
        invert = np.zeros(k_bits, dtype=bool)

    rng = random.Random(seed)
    hyp_rounds = 0
    correct = 0
    total = 0
    mi_x, mi_y = [], []
    for r in test:
        truth = true_segments[r.attempt].bits
        hyp = cleartext_hypothesis(r, prime_bits, k_bits, rng)
        guess = None
        if hyp is not None:
            seg = attack_plain_dhm(hyp)
            if seg is not None:
                guess = seg.bits
                hyp_rounds += 1
        if guess is None:
            guess = (features(r)[best_f] ^ invert).astype(np.uint8)
        correct += int(np.sum(guess == truth))
        total += k_bits
        ct = np.frombuffer(r.ciphertext, dtype=np.uint8)
        mi_x.append(ct[np.arange(k_bits) % ct.size])
        mi_y.append(truth)

    mi = calibrated_mutual_information(np.concatenate(mi_x), np.concatenate(mi_y),
                                       np.random.default_rng(seed), mi_permutations)
    payload = b"".join(r.ciphertext for r in tap_rounds(tap))
    stats = {"accuracy": correct / total, "scored_bits": float(total),
             "scored_rounds": float(len(test)), "hypothesis_rounds": float(hyp_rounds)}
    stats.update(mi)
    if len(payload) >= MIN_CHI_SQUARE_BYTES:
        chi, pval = chi_square_uniformity(payload)
        stats["chi_square"] = chi
        stats["p_value"] = pval
    z, pz = bit_balance(payload)
    stats["bit_balance_z"] = z
    stats["bit_balance_p"] = pz
    summary = f"{len(rounds)} rounds, prime_bits={prime_bits}, k_bits={k_bits}, known_rounds={len(train)}"
    return AttackReport("encrypted-dhm", summary, stats["accuracy"], stats)


def segments_by_tap_round(accepted_attempts: Sequence[int], segments: Sequence[BitString]) -> dict[int, BitString]:
    """Truth table for scoring: tap round indices equal expansion attempt indices."""
    return dict(zip(accepted_attempts, segments))


# -- pad reuse ---------------------------------------------------------------

def reuse_leak_demo(m1: BitString, m2: BitString, k: BitString) -> tuple[BitString, BitString, BitString]:
    """Encrypt two messages under the same pad; the ciphertext XOR drops the pad."""
    if len(m1) != len(m2):
        raise ValueError("plaintexts must have equal length")
    c1, c2 = otp_apply(m1, k), otp_apply(m2, k)
    return c1, c2, otp_apply(c1, c2)


def known_plaintext_recover(c1: BitString, c2: BitString, m1: BitString) -> BitString:
    return otp_apply(otp_apply(c1, c2), m1)


# -- statistics --------------------------------------------------------------

def chi_square_uniformity(data: bytes) -> tuple[float, float]:
    """Pearson chi-square of byte counts against uniform, 255 degrees of freedom."""
    arr = np.frombuffer(bytes(data), dtype=np.uint8)
    if arr.size < MIN_CHI_SQUARE_BYTES:
        raise ValueError(f"need at least {MIN_CHI_SQUARE_BYTES} bytes, got {arr.size}")
    counts = np.bincount(arr, minlength=256).astype(float)
    expected = arr.size / 256.0
    stat = float(np.sum((counts - expected) ** 2) / expected)
    return stat, float(gammaincc(255 / 2.0, stat / 2.0))


def bit_balance(data: bytes) -> tuple[float, float]:
    """Two-sided normal-approximation test that ones make up half the bits."""
    bits = _bits_of(bytes(data))
    if not bits.size:
        return 0.0, 1.0
    z = (bits.sum() - bits.size / 2) / math.sqrt(bits.size / 4)
    return float(z), float(math.erfc(abs(z) / math.sqrt(2)))


def plugin_mutual_information(x: np.ndarray, y: np.ndarray) -> float:
    """Plug-in (maximum-likelihood) estimate of I(X;Y) in bits for discrete samples."""
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be equal-length 1-D arrays")
    _, xi = np.unique(x, return_inverse=True)
    _, yi = np.unique(y, return_inverse=True)
    joint = np.zeros((xi.max() + 1, yi.max() + 1))
    np.add.at(joint, (xi, yi), 1)
    joint /= x.size
    px = joint.sum(axis=1, keepdims=True)
    py = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float(np.sum(joint[nz] * np.log2(joint[nz] / (px @ py)[nz])))


def calibrated_mutual_information(x: np.ndarray, y: np.ndarray, rng: np.random.Generator,
                                  n_permutations: int = 20) -> dict[str, float]:
    """Plug-in MI with its independence bias measured by permuting ``y`` and subtracted."""
    raw = plugin_mutual_information(x, y)
    null = [plugin_mutual_information(x, rng.permutation(y)) for _ in range(n_permutations)]
    bias = float(np.mean(null))
    kx, ky = len(np.unique(x)), len(np.unique(y))
    return {
        "mi_plugin": raw,
        "mi_bias": bias,
        "mi_bias_sd": float(np.std(null)),
        "mi_miller_madow_bias": (kx - 1) * (ky - 1) / (2 * x.size * math.log(2)),
        "mi_corrected": raw - bias,
    }


# -- throughput --------------------------------------------------------------

@dataclass(frozen=True)
class ThroughputReport:
    hbk_bits: int
    sbk_bits: int
    hbk_consumed: int
    physical_rate: float
    software_rate: float

    @property
    def physical_only_seconds(self) -> float:
        return self.sbk_bits / self.physical_rate

    @property
    def hybrid_seconds(self) -> float:
        return self.hbk_bits / self.physical_rate + self.sbk_bits / self.software_rate

    @property
    def hybrid_accounted_seconds(self) -> float:
        """Hybrid time if every consumed pad bit must first come off the physical link."""
        return self.hbk_consumed / self.physical_rate + self.sbk_bits / self.software_rate

    @property
    def expansion_ratio(self) -> float:
        return self.sbk_bits / self.hbk_bits

    @property
    def pad_cost_ratio(self) -> float:
        return self.hbk_consumed / self.sbk_bits if self.sbk_bits else float("inf")

    def to_table(self) -> str:
        rows = [
            ("physical-only", self.physical_only_seconds),
            ("hybrid", self.hybrid_seconds),
            ("hybrid-pad-accounted", self.hybrid_accounted_seconds),
        ]
        lines = [f"HBK N={self.hbk_bits} SBK M={self.sbk_bits} HBK consumed={self.hbk_consumed}",
                 f"physical_rate={self.physical_rate:g} bit/s software_rate={self.software_rate:g} bit/s",
                 f"{'scheme':<22}{'seconds':>14}{'bit/s':>14}"]
        for name, secs in rows:
            rate = self.sbk_bits / secs if secs else float("inf")
            lines.append(f"{name:<22}{secs:>14.6g}{rate:>14.6g}")
        lines.append(f"expansion_ratio M/N={self.expansion_ratio:.6g}")
        lines.append(f"pad_cost_ratio consumed/M={self.pad_cost_ratio:.6g}")
        return "\n".join(lines) + "\n"


def throughput_report(hbk_bits: int, sbk_bits: int, hbk_consumed: int,
                      physical_rate: float, software_rate: float) -> ThroughputReport:
    if physical_rate <= 0 or software_rate <= 0:
        raise ValueError("rates must be positive")
    if hbk_bits <= 0:
        raise ValueError("need a non-empty HBK")
    return ThroughputReport(hbk_bits, sbk_bits, hbk_consumed, physical_rate, software_rate)
