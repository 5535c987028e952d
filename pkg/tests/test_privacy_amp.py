import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import chi2_contingency

from hybridkey.keycore import BitString
from hybridkey.privacy_amp import (
    amplify_with_report,
    disagreement_after_xor,
    eve_knowledge_after_xor,
    simulate_disagreement,
    simulate_eve_xor,
    xor_amplify,
)


def xor_guess_oracle(p):
    """Enumerate (right/wrong) for both bits; the XOR guess is right iff both agree."""
    total = 0.0
    for r1, r2 in itertools.product([True, False], repeat=2):
        prob = (p if r1 else 1 - p) * (p if r2 else 1 - p)
        if r1 == r2:
            total += prob
    return total


def b(s):
    return BitString.from_str(s)


def test_xor_amplify_examples():
    assert xor_amplify(b("1010"), 1) == b("11")
    assert xor_amplify(b("10110"), 1) == b("10")
    assert xor_amplify(b("10110"), 0) == b("10110")
    assert len(xor_amplify(BitString.zeros(16), 4)) == 1


def test_xor_amplify_too_short():
    with pytest.raises(ValueError):
        xor_amplify(b("101"), 2)


@given(st.lists(st.integers(0, 1), min_size=1, max_size=400), st.integers(0, 8))
def test_length_law(bits, rounds):
    key = BitString(bits)
    if len(key) < 2 ** rounds:
        return
    n = len(bits)
    for _ in range(rounds):
        n //= 2
    assert len(xor_amplify(key, rounds)) == n


@pytest.mark.parametrize("p", [0.5, 0.6, 0.75, 0.9, 1.0])
def test_eve_knowledge_matches_enumeration(p):
    assert eve_knowledge_after_xor(p) == pytest.approx(xor_guess_oracle(p))


def test_eve_knowledge_examples():
    assert eve_knowledge_after_xor(0.5) == 0.5
    assert eve_knowledge_after_xor(1.0) == 1.0
    assert eve_knowledge_after_xor(0.9) == pytest.approx(0.82)
    for bad in (0.49, 1.01):
        with pytest.raises(ValueError):
            eve_knowledge_after_xor(bad)


def test_report_model_sequence():
    _, rep = amplify_with_report(BitString.zeros(64), 2, 0.75)
    expected = [0.75]
    for _ in range(2):
        expected.append(xor_guess_oracle(expected[-1]))
    assert rep.eve_prob_model == pytest.approx(expected)
    assert rep.eve_prob_model == pytest.approx((0.75, 0.625, 0.53125))
    assert (rep.input_length, rep.output_length) == (64, 16)
    assert rep.to_table().splitlines() == [
        "round input_len output_len modeled_p",
        "1 64 32 0.625",
        "2 32 16 0.53125",
    ]


def test_report_fixed_point():
    _, rep = amplify_with_report(BitString.zeros(1000), 5, 0.5)
    assert set(rep.eve_prob_model) == {0.5}


@given(st.floats(0.5, 1.0), st.integers(1, 6))
def test_model_monotone_toward_half(p0, rounds):
    _, rep = amplify_with_report(BitString.zeros(64), rounds, p0)
    m = rep.eve_prob_model
    assert all(0.5 <= b <= a + 1e-15 for a, b in zip(m, m[1:]))


def test_disagreement_formula_matches_enumeration():
    for eps in (0.01, 0.1, 0.3):
        # right/wrong for Eve is the same algebra as agree/disagree for Bob
        assert disagreement_after_xor(eps) == pytest.approx(1 - xor_guess_oracle(1 - eps))


def test_monte_carlo_agreement_small(rng):
    assert simulate_eve_xor(0.8, 20_000, rng) == pytest.approx(eve_knowledge_after_xor(0.8), abs=0.02)
    assert simulate_disagreement(0.05, 20_000, rng) == pytest.approx(disagreement_after_xor(0.05), abs=0.02)


def test_no_correlation_introduced(rng):
    key = BitString.random(400_000, rng)
    out = xor_amplify(key, 1).bits
    pairs = out[:200_000].reshape(-1, 2)  # 10**5 disjoint output bit-pairs
    table = np.zeros((2, 2))
    np.add.at(table, (pairs[:, 0], pairs[:, 1]), 1)
    assert chi2_contingency(table, correction=False).pvalue > 0.01
    assert abs(out.mean() - 0.5) < 4 * 0.5 / np.sqrt(out.size)
