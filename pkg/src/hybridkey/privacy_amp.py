"""XOR-pair privacy amplification.

One round replaces the key by the XOR of disjoint adjacent pairs, halving
its length.  If Eve knows each input bit with probability ``p`` the output
bit is known with probability ``p**2 + (1 - p)**2``, which moves towards
1/2 every round.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .keycore import BitString


@dataclass(frozen=True)
class AmplificationReport:
    rounds: int
    input_length: int
    output_length: int
    eve_prob_model: tuple[float, ...]  # entry 0 is the input probability

    def lengths(self) -> list[int]:
        return [self.input_length >> r for r in range(self.rounds + 1)]

    def to_table(self) -> str:
        lines = ["round input_len output_len modeled_p"]
        lens = self.lengths()
        for r in range(1, self.rounds + 1):
            lines.append(f"{r} {lens[r - 1]} {lens[r]} {self.eve_prob_model[r]:.10g}")
        return "\n".join(lines) + "\n"


def xor_round(bits: np.ndarray) -> np.ndarray:
    n = bits.size // 2
    return np.bitwise_xor(bits[0:2 * n:2], bits[1:2 * n:2])


def xor_amplify(key: BitString, rounds: int) -> BitString:
    if rounds < 0:
        raise ValueError("rounds must be non-negative")
    if len(key) < (1 << rounds):
        raise ValueError(f"{len(key)}-bit key is too short for {rounds} rounds")
    bits = key.bits
    for _ in range(rounds):
        bits = xor_round(bits)
    return BitString(bits)


def eve_knowledge_after_xor(p: float) -> float:
    """Eve is right about a XOR iff she is right about both bits or wrong about both."""
    if not (0.5 <= p <= 1.0):
        raise ValueError(f"guess probability {p} outside [0.5, 1]")
    return p * p + (1.0 - p) * (1.0 - p)


def disagreement_after_xor(eps: float) -> float:
    """Parties' per-bit disagreement after one round, given ``eps`` before it."""
    return 2.0 * eps * (1.0 - eps)


def amplify_with_report(key: BitString, rounds: int, p0: float = 0.5) -> tuple[BitString, AmplificationReport]:
    out = xor_amplify(key, rounds)
    model = [p0]
    eve_knowledge_after_xor(p0)  # validates p0 even for rounds == 0
    for _ in range(rounds):
        model.append(eve_knowledge_after_xor(model[-1]))
    return out, AmplificationReport(rounds, len(key), len(out), tuple(model))


# -- Monte-Carlo checks of the two laws above --------------------------------

def simulate_eve_xor(p: float, n_pairs: int, rng: np.random.Generator) -> float:
    """Empirical accuracy of Eve's XOR-of-guesses on ``n_pairs`` pairs.

    Eve's guess of each input bit is independently right with probability
    ``p``; guessing the XOR of her two guesses is her best move.
    """
    key = rng.integers(0, 2, size=2 * n_pairs, dtype=np.uint8)
    wrong = (rng.random(2 * n_pairs) >= p).astype(np.uint8)
    guess = key ^ wrong
    return float(np.mean(xor_round(key) == xor_round(guess)))


def simulate_disagreement(eps: float, n_pairs: int, rng: np.random.Generator) -> float:
    alice = rng.integers(0, 2, size=2 * n_pairs, dtype=np.uint8)
    flips = (rng.random(2 * n_pairs) < eps).astype(np.uint8)
    bob = alice ^ flips
    return float(np.mean(xor_round(alice) != xor_round(bob)))
