import math
import random

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import chi2

from hybridkey.analysis import (
    AttackInapplicable,
    AttackReport,
    CleartextRound,
    DlogNotFound,
    attack_encrypted_dhm,
    attack_plain_dhm,
    bit_balance,
    brute_force_dlog,
    calibrated_mutual_information,
    chi_square_uniformity,
    known_plaintext_recover,
    plugin_mutual_information,
    reuse_leak_demo,
    segments_by_tap_round,
    tap_rounds,
    throughput_report,
)
from hybridkey.dhm_expand import DhmParams, derive_segment, expand_in_process, modexp
from hybridkey.keycore import BitString, KeyPool
from hybridkey.session import Phase, party_pair, run_session, uniform_key


def session_truth(params, key, seed=0):
    alice, bob, tap = run_session(*party_pair(params, seed, injected_key=key))
    assert alice.phase is Phase.READY
    soft = alice.soft_key
    return tap, segments_by_tap_round(soft.accepted_attempts, soft.segments)


# -- discrete log ------------------------------------------------------------

@pytest.mark.parametrize("A,a", [(8, 6), (5, 1), (1, 0)])
def test_dlog_examples(A, a):
    assert brute_force_dlog(5, A, 23) == a
    assert modexp(5, a, 23) == A


@pytest.mark.parametrize("p,g", [(23, 5), (47, 5), (59, 2)])
def test_dlog_oracle_chain(p, g):
    for a in range(p - 1):
        assert brute_force_dlog(g, modexp(g, a, p), p) == a


def test_dlog_errors():
    with pytest.raises(DlogNotFound):
        brute_force_dlog(2, 5, 23)  # 2 generates the index-2 subgroup
    with pytest.raises(ValueError):
        brute_force_dlog(2, 3, (1 << 20) + 7)


def test_plain_attack_recovers_every_toy_round():
    params = DhmParams(16, 8, 100)
    key = uniform_key(params.round_cost * 140, 4)
    sa, sb, _ = expand_in_process(KeyPool(key), KeyPool(key), params, random.Random(1), random.Random(2))
    assert sa.rounds_completed == 100
    hits = 0
    for r in sa.rounds:
        seg = attack_plain_dhm(CleartextRound(r.p, r.g, r.A, r.B, params.k_bits))
        hits += seg == r.segment
    assert hits == len(sa.rounds)


def test_plain_attack_tampered_a_mismatches():
    p, g, a, b, k = 23, 5, 6, 15, 4
    A, B = modexp(g, a, p), modexp(g, b, p)
    truth = derive_segment(modexp(A, b, p), p, k)
    assert attack_plain_dhm(CleartextRound(p, g, A, B, k)) == truth
    tampered = attack_plain_dhm(CleartextRound(p, g, A * g % p, B, k))
    assert tampered != truth


def test_plain_attack_needs_cleartext():
    with pytest.raises(AttackInapplicable):
        attack_plain_dhm(b"\x8e\x11\x02")


# -- encrypted attack --------------------------------------------------------

def test_encrypted_attack_at_chance():
    params = DhmParams(64, 32, 200)
    tap, truth = session_truth(params, uniform_key(params.round_cost * 200, 11))
    rep = attack_encrypted_dhm(tap, truth, known_rounds=16)
    assert rep.statistics["scored_bits"] == 184 * 32
    sd = math.sqrt(0.25 / rep.statistics["scored_bits"])
    assert abs(rep.success - 0.5) < 4 * sd
    assert rep.statistics["hypothesis_rounds"] == 0
    assert rep.statistics["mi_corrected"] <= 0.01


def test_zero_pool_sabotage_is_fully_cracked():
    params = DhmParams(16, 8, 40)
    tap, truth = session_truth(params, BitString.zeros(params.round_cost * 60))
    rep = attack_encrypted_dhm(tap, truth, known_rounds=0)
    assert rep.success == 1.0
    assert rep.statistics["hypothesis_rounds"] == rep.statistics["scored_rounds"]


def test_tap_rounds_split():
    params = DhmParams(16, 8, 5)
    tap, truth = session_truth(params, uniform_key(params.round_cost * 5, 3))
    rounds = tap_rounds(tap)
    assert len(rounds) == 5
    assert all(len(r.ciphertext) == 4 * 16 // 8 for r in rounds)


def test_attack_report_rejects_bad_probability():
    AttackReport("x", "", 0.4, {"accuracy": 0.4, "chi_square": 300.0})
    with pytest.raises(ValueError):
        AttackReport("x", "", 1.2)
    with pytest.raises(ValueError):
        AttackReport("x", "", True, {"p_value": -0.1})
    text = AttackReport("x", "y", True, {"accuracy": 0.5}).to_text()
    assert "attack: x" in text and "accuracy: 0.5" in text


# -- pad reuse ---------------------------------------------------------------

def test_reuse_leak_example():
    m1, m2 = BitString.from_str("1100"), BitString.from_str("1010")
    for k in ("0000", "1111", "0110"):
        c1, c2, x = reuse_leak_demo(m1, m2, BitString.from_str(k))
        assert str(x) == "0110"
    _, _, same = reuse_leak_demo(m1, m1, BitString.from_str("1001"))
    assert same == BitString.zeros(4)


@given(st.binary(min_size=1, max_size=64), st.data())
def test_reuse_leak_identity(m1b, data):
    n = len(m1b) * 8
    m2b = data.draw(st.binary(min_size=len(m1b), max_size=len(m1b)))
    kb = data.draw(st.binary(min_size=len(m1b), max_size=len(m1b)))
    m1, m2, k = (BitString.from_bytes(b, n) for b in (m1b, m2b, kb))
    c1, c2, x = reuse_leak_demo(m1, m2, k)
    assert x.to_bytes() == bytes(a ^ b for a, b in zip(m1b, m2b))
    assert known_plaintext_recover(c1, c2, m1) == m2


def test_reuse_leak_length_mismatch():
    with pytest.raises(ValueError):
        reuse_leak_demo(BitString.from_str("10"), BitString.from_str("1"), BitString.from_str("11"))


# -- statistics --------------------------------------------------------------

def test_chi_square_extremes():
    stat, p = chi_square_uniformity(bytes(5000))
    assert p < 1e-100
    stat, p = chi_square_uniformity(bytes(range(256)) * 10)
    assert stat == 0.0 and p == 1.0
    with pytest.raises(ValueError):
        chi_square_uniformity(bytes(1279))


def test_chi_square_matches_scipy(rng):
    data = rng.integers(0, 256, 20000, dtype=np.uint8).tobytes()
    stat, p = chi_square_uniformity(data)
    assert p == pytest.approx(chi2.sf(stat, 255), rel=1e-9)


@pytest.mark.slow
def test_chi_square_calibration():
    inside = 0
    for seed in range(100):
        data = np.random.default_rng(seed).integers(0, 256, 10**5, dtype=np.uint8).tobytes()
        inside += 0.01 < chi_square_uniformity(data)[1] < 0.99
    assert inside >= 98


def test_bit_balance():
    z, p = bit_balance(b"\xff" * 100)
    assert z > 20 and p < 1e-50
    z, p = bit_balance(b"\x0f" * 100)
    assert z == 0 and p == 1.0


def test_mutual_information_oracles(rng):
    x = rng.integers(0, 2, 5000)
    assert plugin_mutual_information(x, x) == pytest.approx(1.0, abs=0.01)
    assert plugin_mutual_information(x, 1 - x) == pytest.approx(1.0, abs=0.01)
    assert plugin_mutual_information(np.zeros(10), np.arange(10)) == 0.0


def test_mi_bias_calibrated_on_independent_data(rng):
    # 256 x 2 table: plug-in bias is large, bias correction removes it
    x = rng.integers(0, 256, 20000)
    y = rng.integers(0, 2, 20000)
    mi = calibrated_mutual_information(x, y, rng, 30)
    assert mi["mi_plugin"] > 0.005
    assert mi["mi_bias"] == pytest.approx(mi["mi_miller_madow_bias"], rel=0.2)
    assert abs(mi["mi_corrected"]) < 4 * mi["mi_bias_sd"] + 1e-4


# -- throughput --------------------------------------------------------------

def test_throughput_example():
    rep = throughput_report(4096, 32768, 4096, 100, 1e6)
    assert rep.hybrid_seconds == pytest.approx(40.96 + 0.032768)
    assert rep.physical_only_seconds == pytest.approx(327.68)
    assert rep.expansion_ratio == 8
    table = rep.to_table()
    assert "physical-only" in table and "hybrid-pad-accounted" in table


def test_throughput_boundaries():
    same = throughput_report(4096, 32768, 4096, 100, 100)
    assert same.hybrid_seconds == pytest.approx((4096 + 32768) / 100)
    flat = throughput_report(4096, 4096, 4096, 100, 1e6)
    assert flat.hybrid_seconds > flat.physical_only_seconds
    with pytest.raises(ValueError):
        throughput_report(4096, 1, 1, 0, 1)
