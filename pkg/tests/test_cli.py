import json

import pytest

from hybridkey.cli import EXIT_ABORTED, EXIT_EXHAUSTED, EXIT_OK, EXIT_USAGE, main
from hybridkey.keycore import read_key_file, write_key_file
from hybridkey.session import uniform_key

SMALL_SESSION = ["--prime-bits", "64", "--k", "32", "--rounds", "8", "--periods", "4800", "--samples", "2000"]


def run(*argv):
    return main([str(a) for a in argv])


def test_keygen_deterministic(tmp_path, capsys):
    args = ["keygen", "--periods", "2000", "--samples", "500", "--seed", "3", "--amplify-rounds", "1"]
    assert run(*args, "-o", tmp_path / "a.key") == EXIT_OK
    assert run(*args, "-o", tmp_path / "b.key") == EXIT_OK
    assert (tmp_path / "a.key").read_bytes() == (tmp_path / "b.key").read_bytes()
    assert (tmp_path / "a.kljn").read_bytes() == (tmp_path / "b.kljn").read_bytes()
    kf = read_key_file(tmp_path / "a.key")
    assert kf.origin == "physical"
    assert 400 < len(kf.key) < 600
    assert "eve_accuracy" in capsys.readouterr().out


def test_keygen_full_example(tmp_path):
    out = tmp_path / "hbk.key"
    assert run("keygen", "--periods", "20000", "--samples", "10000", "--seed", "7",
               "--amplify-rounds", "2", "-o", out) == EXIT_OK
    assert 2300 < len(read_key_file(out).key) < 2700
    assert read_key_file(out).key == read_key_file(tmp_path / "hbk.bob.key").key


def test_keygen_usage_errors_leave_no_files(tmp_path):
    assert run("keygen", "--periods", "0", "-o", tmp_path / "x.key") == EXIT_USAGE
    assert run("keygen", "--periods", "10", "--amplify-rounds", "-1", "-o", tmp_path / "x.key") == EXIT_USAGE
    assert list(tmp_path.iterdir()) == []


def test_outdir_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("HYBRIDKEY_OUTDIR", str(tmp_path))
    assert run("keygen", "--periods", "100", "--samples", "100", "--seed", "1", "-o", "k.key") == EXIT_OK
    assert (tmp_path / "k.key").exists()


@pytest.fixture
def hbk8192(tmp_path):
    path = tmp_path / "hbk.key"
    write_key_file(path, uniform_key(8192, 5), "physical")
    return path


def test_expand_full(tmp_path, hbk8192):
    out = tmp_path / "sbk.key"
    code = run("expand", "--hbk", hbk8192, "--prime-bits", "256", "--k", "128", "--rounds", "8",
               "--seed", "2", "-o", out)
    assert code == EXIT_OK
    kf = read_key_file(out)
    assert len(kf.key) == 1024 and not kf.partial and kf.origin == "expanded"
    assert len((tmp_path / "sbk.rounds").read_text().splitlines()) == 3 * 8
    assert (tmp_path / "sbk.tap").exists()


def test_expand_exhausted_is_flagged(tmp_path):
    hbk = tmp_path / "small.key"
    write_key_file(hbk, uniform_key(4096, 5), "physical")
    out = tmp_path / "sbk.key"
    code = run("expand", "--hbk", hbk, "--prime-bits", "256", "--k", "128", "--rounds", "8",
               "--seed", "2", "-o", out)
    assert code == EXIT_EXHAUSTED
    header = out.read_text().splitlines()[0]
    assert "partial" in header and "rounds=4/8" in header
    assert len(read_key_file(out).key) == 512


def test_expand_replenish_from_kljn(tmp_path, capsys):
    hbk = tmp_path / "small.key"
    write_key_file(hbk, uniform_key(1000, 5), "physical")
    cfg = tmp_path / "kljn.json"
    cfg.write_text(json.dumps({"samples_per_period": 500, "periods": 3000}))
    code = run("expand", "--hbk", hbk, "--prime-bits", "64", "--k", "32", "--rounds", "8",
               "--mode", "replenish", "--replenish-from", "kljn", "--replenish-config", cfg,
               "--seed", "2", "-o", tmp_path / "sbk.key")
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "physical_bits_consumed=2048" in out
    assert len(read_key_file(tmp_path / "sbk.key").key) == 256


def test_expand_bad_params(tmp_path, hbk8192):
    assert run("expand", "--hbk", hbk8192, "--prime-bits", "60", "-o", tmp_path / "s.key") == EXIT_USAGE
    assert run("expand", "--hbk", tmp_path / "missing.key", "-o", tmp_path / "s.key") == 5


def test_session_demo_roundtrip(tmp_path):
    msg = tmp_path / "m.txt"
    msg.write_bytes(b"meet at the usual place\n")
    out = tmp_path / "run"
    code = run("session", "--demo", "--message-file", msg, "--seed", "4", "--out-dir", out, *SMALL_SESSION)
    assert code == EXIT_OK
    assert (out / "message.out").read_bytes() == msg.read_bytes()
    for name in ("session.log", "rounds.log", "sbk.key"):
        assert (out / name).exists()


def test_session_message_too_long(tmp_path):
    code = run("session", "--demo", "--message", "x" * 40, "--seed", "4", "--out-dir", tmp_path, *SMALL_SESSION)
    assert code == EXIT_EXHAUSTED


def test_session_hbk_disagreement_aborts(tmp_path):
    a, b = tmp_path / "a.key", tmp_path / "b.key"
    write_key_file(a, uniform_key(2048, 1), "physical")
    write_key_file(b, uniform_key(2048, 2), "physical")
    code = run("session", "--hbk", a, "--hbk-bob", b, "--prime-bits", "64", "--k", "32",
               "--rounds", "4", "--seed", "1", "--out-dir", tmp_path)
    assert code == EXIT_ABORTED


def test_attack_and_report(tmp_path, capsys):
    hbk = tmp_path / "hbk.key"
    write_key_file(hbk, uniform_key(256 * 60, 8), "physical")
    assert run("expand", "--hbk", hbk, "--prime-bits", "64", "--k", "32", "--rounds", "60",
               "--seed", "3", "-o", tmp_path / "sbk.key") == EXIT_OK
    capsys.readouterr()
    code = run("attack", "--name", "encrypted-dhm", "--tap", tmp_path / "sbk.tap", "--sbk", tmp_path / "sbk.key",
               "--rounds-log", tmp_path / "sbk.rounds", "--known-rounds", "10", "-o", tmp_path / "att.txt")
    assert code == EXIT_OK
    lines = dict(l.split(": ", 1) for l in (tmp_path / "att.txt").read_text().splitlines())
    assert abs(float(lines["accuracy"]) - 0.5) < 0.1
    assert float(lines["scored_bits"]) == 50 * 32

    assert run("attack", "--name", "plain-dhm", "--tap", tmp_path / "sbk.tap") == EXIT_OK
    assert "applicable_fraction: 0" in capsys.readouterr().out
    assert run("attack", "--name", "reuse-leak", "--bits", "256") == EXIT_OK
    assert "success: True" in capsys.readouterr().out
    assert run("attack", "--name", "encrypted-dhm") == EXIT_USAGE

    capsys.readouterr()
    assert run("report", "--physical-rate", "100", "--software-rate", "1e6",
               "--session", tmp_path / "sbk.tap", "--sbk", tmp_path / "sbk.key") == EXIT_OK
    table = capsys.readouterr().out
    assert "HBK N=15360 SBK M=1920 HBK consumed=15360" in table
    assert run("report", "--physical-rate", "100", "--software-rate", "1e6",
               "--hbk-bits", "4096", "--sbk-bits", "32768") == EXIT_OK
    assert "327.68" in capsys.readouterr().out
    assert run("report", "--physical-rate", "0", "--software-rate", "1", "--hbk-bits", "1",
               "--sbk-bits", "1") == EXIT_USAGE


def test_attack_kljn_eve(tmp_path, capsys):
    assert run("keygen", "--periods", "4000", "--samples", "500", "--seed", "9", "-o", tmp_path / "h.key") == 0
    capsys.readouterr()
    assert run("attack", "--name", "kljn-eve", "--kljn-report", tmp_path / "h.kljn") == EXIT_OK
    out = capsys.readouterr().out
    acc = float(out.split("accuracy: ")[1].split()[0])
    assert abs(acc - 0.5) < 0.05


def test_plain_dhm_on_sabotaged_tap(tmp_path, capsys):
    from hybridkey.keycore import BitString
    hbk = tmp_path / "zero.key"
    write_key_file(hbk, BitString.zeros(64 * 20), "test-injected")
    assert run("expand", "--hbk", hbk, "--prime-bits", "16", "--k", "8", "--rounds", "20",
               "--seed", "3", "-o", tmp_path / "sbk.key") == EXIT_OK
    capsys.readouterr()
    assert run("attack", "--name", "plain-dhm", "--tap", tmp_path / "sbk.tap", "--sbk", tmp_path / "sbk.key",
               "--rounds-log", tmp_path / "sbk.rounds") == EXIT_OK
    out = capsys.readouterr().out
    assert "applicable_fraction: 1" in out and "accuracy: 1" in out
