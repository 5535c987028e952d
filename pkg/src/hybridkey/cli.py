"""Command-line driver: ``hybridkey {keygen,expand,session,attack,report}``.

Exit codes: 0 success, 2 usage/validation, 3 key exhausted, 4 aborted,
5 I/O or transport failure.  Relative output paths are resolved against
``$HYBRIDKEY_OUTDIR`` when it is set.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import analysis
from .dhm_expand import DhmParams, parse_round_transcript
from .keycore import BUDGET, REPLENISH, BitString, PoolExhausted, format_key_file, read_key_file
from .kljn_sim import (
    Classification,
    KljnConfig,
    PeriodRecord,
    eve_best_guess,
    extract_bit,
    format_exchange_report,
    parse_exchange_report,
    run_exchange,
)
from .privacy_amp import amplify_with_report
from .seeding import fresh_seed
from .session import (
    DemoResult,
    KljnReplenisher,
    PartyConfig,
    Phase,
    SessionError,
    UniformReplenisher,
    run_demo_lockstep,
    run_demo_processes,
)
from .wire import EveTap

EXIT_OK, EXIT_USAGE, EXIT_EXHAUSTED, EXIT_ABORTED, EXIT_IO = 0, 2, 3, 4, 5
OUTDIR_ENV = "HYBRIDKEY_OUTDIR"


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Resolved parameters of one invocation, echoed so runs can be replayed."""

    subcommand: str
    seed: int
    params: dict

    def banner(self) -> str:
        flat = " ".join(f"{k}={v}" for k, v in sorted(self.params.items()) if v is not None)
        return f"# {self.subcommand} seed={self.seed} {flat}".rstrip()


def _out_path(path: str | Path) -> Path:
    p = Path(path)
    base = os.environ.get(OUTDIR_ENV)
    if base and not p.is_absolute():
        p = Path(base) / p
    return p


def _write(path: Path, content: str | bytes) -> None:
    # write-then-rename so an interrupted run leaves no half-written file
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    if isinstance(content, bytes):
        tmp.write_bytes(content)
    else:
        tmp.write_text(content)
    tmp.replace(path)


def _read_input(path: str | Path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc


def _seed(args) -> int:
    if args.seed is None:
        args.seed = fresh_seed()
        print(f"# no --seed given, using seed={args.seed}", file=sys.stderr)
    return args.seed


def _kljn_config(args, seed: int) -> KljnConfig:
    try:
        return KljnConfig(r_low=args.r_low, r_high=args.r_high, noise_scale=args.noise_scale,
                          samples_per_period=args.samples, periods=args.periods, seed=seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _dhm_params(args) -> DhmParams:
    try:
        return DhmParams(args.prime_bits, args.k, args.rounds, args.prime_gen_rounds)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _add_kljn_flags(p: argparse.ArgumentParser, periods: int = 20000) -> None:
    p.add_argument("--periods", type=int, default=periods)
    p.add_argument("--samples", type=int, default=10_000, help="noise samples per bit period")
    p.add_argument("--r-low", type=float, default=1.0)
    p.add_argument("--r-high", type=float, default=9.0)
    p.add_argument("--noise-scale", type=float, default=1.0)
    p.add_argument("--amplify-rounds", type=int, default=0)


def _add_dhm_flags(p: argparse.ArgumentParser, prime_bits: int, k: int, rounds: int) -> None:
    p.add_argument("--prime-bits", type=int, default=prime_bits)
    p.add_argument("--k", type=int, default=k, help="segment bits per round")
    p.add_argument("--rounds", type=int, default=rounds)
    p.add_argument("--prime-gen-rounds", type=int, default=16)


# -- keygen ------------------------------------------------------------------

def cmd_keygen(args) -> int:
    seed = _seed(args)
    cfg = _kljn_config(args, seed)
    if args.amplify_rounds < 0:
        raise UsageError("--amplify-rounds must be non-negative")
    out = _out_path(args.output)
    report_path = _out_path(args.report) if args.report else out.with_suffix(".kljn")
    bob_path = _out_path(args.bob_output) if args.bob_output else out.with_suffix(".bob.key")
    print(RunConfig("keygen", seed, {"periods": cfg.periods, "samples": cfg.samples_per_period,
                                     "amplify_rounds": args.amplify_rounds}).banner())

    raw = run_exchange(cfg)
    try:
        alice, rep = amplify_with_report(raw.alice_key, args.amplify_rounds)
        bob, _ = amplify_with_report(raw.bob_key, args.amplify_rounds)
    except ValueError as exc:
        raise UsageError(f"raw key of {len(raw.alice_key)} bits: {exc}") from exc
    _write(out, format_key_file(alice, "physical"))
    _write(bob_path, format_key_file(bob, "physical"))
    _write(report_path, format_exchange_report(raw))
    _, eve_acc = eve_best_guess(raw.eve_observations, raw.periods)
    print(f"raw_bits={len(raw.alice_key)} error_rate={raw.error_rate:.6g} eve_accuracy={eve_acc:.6g}")
    if args.amplify_rounds:
        print(rep.to_table(), end="")
    print(f"wrote {out} ({len(alice)} bits), {bob_path}, {report_path}")
    return EXIT_OK


# -- expand / session common -------------------------------------------------

def _load_hbk(path: str) -> tuple[BitString, str]:
    kf = read_key_file(path)
    return kf.key, kf.origin


def _replenishers(args, seed: int) -> tuple[Optional[object], Optional[object]]:
    if args.mode != REPLENISH:
        return None, None
    if args.replenish_from == "uniform":
        return UniformReplenisher(seed), UniformReplenisher(seed)
    if not args.replenish_config:
        raise UsageError("--replenish-from kljn needs --replenish-config")
    try:
        raw = json.loads(_read_input(args.replenish_config))
        known = {f.name for f in fields(KljnConfig)}
        unknown = set(raw) - known
        if unknown:
            raise UsageError(f"unknown replenish config keys: {sorted(unknown)}")
        raw.setdefault("seed", seed)
        cfg = KljnConfig(**raw)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"bad replenish config: {exc}") from exc
    amp = args.replenish_amplify_rounds
    return KljnReplenisher(cfg, "A", amp), KljnReplenisher(cfg, "B", amp)


def _session_exit(result: DemoResult) -> int:
    alice = result.alice
    phases = {alice.phase, result.bob_phase}
    if Phase.ABORTED in phases:
        kinds = {alice.abort_kind}
        if "transport" in kinds or (result.bob_error and "transport" in result.bob_error):
            return EXIT_IO
        return EXIT_ABORTED
    if Phase.EXHAUSTED in phases:
        return EXIT_EXHAUSTED
    return EXIT_OK


def _write_session_outputs(result: DemoResult, out_dir: Path, sbk_name: str = "sbk.key",
                           rounds_name: str = "rounds.log", tap_name: str = "session.log") -> None:
    alice = result.alice
    _write(out_dir / tap_name, result.tap.to_text())
    soft = alice.soft_key
    if soft is not None:
        _write(out_dir / rounds_name, "".join(line + "\n" for line in soft.transcript_lines()))
        _write(out_dir / sbk_name, format_key_file(soft.material, "expanded", soft.key_file_flags()))


def _summary(result: DemoResult) -> str:
    a = result.alice
    parts = [f"alice={a.phase.value}", f"bob={result.bob_phase.value}"]
    if a.soft_key is not None:
        s = a.soft_key
        parts += [f"sbk_bits={s.length}", f"rounds_completed={s.rounds_completed}",
                  f"attempts={s.attempts}", f"hbk_consumed={s.hbk_consumed}"]
    if a.pool is not None:
        parts += [f"hbk_bits={a.pool.size - a.pool.replenished_bits}",
                  f"physical_bits_consumed={a.pool.cursor}",
                  f"physical_bits_replenished={a.pool.replenished_bits}"]
    if a.error:
        parts.append(f"error={a.error!r}")
    return " ".join(parts)


def cmd_expand(args) -> int:
    seed = _seed(args)
    params = _dhm_params(args)
    if args.mode not in (BUDGET, REPLENISH):
        raise UsageError(f"unknown mode {args.mode}")
    hbk_a, origin = _load_hbk(args.hbk)
    hbk_b, _ = _load_hbk(args.hbk_bob) if args.hbk_bob else (hbk_a, origin)
    rep_a, rep_b = _replenishers(args, seed)
    if not len(hbk_a):
        raise UsageError("HBK file is empty")
    print(RunConfig("expand", seed, {"prime_bits": params.prime_bits, "k": params.k_bits,
                                     "rounds": params.rounds, "mode": args.mode}).banner())
    common = dict(mode=args.mode, injected_origin=origin)
    alice_cfg = PartyConfig("A", params, seed, injected_key=hbk_a, replenisher=rep_a, **common)
    bob_cfg = PartyConfig("B", params, seed, injected_key=hbk_b, replenisher=rep_b, **common)
    result = run_demo_lockstep(alice_cfg, bob_cfg)
    out = _out_path(args.output)
    transcript = _out_path(args.transcript) if args.transcript else out.with_suffix(".rounds")
    tap = _out_path(args.tap) if args.tap else out.with_suffix(".tap")
    _write_session_outputs(result, out.parent, out.name, transcript.name, tap.name)
    print(_summary(result))
    if result.alice.soft_key and result.alice.soft_key.partial:
        print(f"partial SBK written to {out}", file=sys.stderr)
    return _session_exit(result)


def cmd_session(args) -> int:
    seed = _seed(args)
    params = _dhm_params(args)
    if args.message_file and args.message is not None:
        raise UsageError("give --message or --message-file, not both")
    if args.message_file:
        messages = [Path(args.message_file).read_bytes()]
    elif args.message is not None:
        messages = [args.message.encode()]
    else:
        messages = []
    if sum(8 * len(m) for m in messages) > params.sbk_bits:
        print(f"message needs {8 * sum(map(len, messages))} SBK bits, session yields {params.sbk_bits}",
              file=sys.stderr)
        return EXIT_EXHAUSTED
    rep_a, rep_b = _replenishers(args, seed)
    common = dict(mode=args.mode, amplify_rounds=args.amplify_rounds)
    if args.demo:
        kljn = _kljn_config(args, seed)
        alice_cfg = PartyConfig("A", params, seed, kljn=kljn, replenisher=rep_a, **common)
        bob_cfg = PartyConfig("B", params, seed, kljn=kljn, replenisher=rep_b, **common)
    else:
        if not args.hbk:
            raise UsageError("session needs --demo or --hbk")
        hbk_a, origin = _load_hbk(args.hbk)
        hbk_b, _ = _load_hbk(args.hbk_bob) if args.hbk_bob else (hbk_a, origin)
        alice_cfg = PartyConfig("A", params, seed, injected_key=hbk_a, injected_origin=origin,
                                replenisher=rep_a, **common)
        bob_cfg = PartyConfig("B", params, seed, injected_key=hbk_b, injected_origin=origin,
                              replenisher=rep_b, **common)
    print(RunConfig("session", seed, {"prime_bits": params.prime_bits, "k": params.k_bits,
                                      "rounds": params.rounds, "processes": args.processes}).banner())
    runner = run_demo_processes if args.processes else run_demo_lockstep
    result = runner(alice_cfg, bob_cfg, messages)
    out_dir = _out_path(args.out_dir)
    _write_session_outputs(result, out_dir)
    if result.received:
        _write(out_dir / "message.out", b"".join(result.received))
    print(_summary(result))
    code = _session_exit(result)
    if code == EXIT_OK and result.received != list(messages):
        print("decrypted messages differ from the originals", file=sys.stderr)
        return EXIT_ABORTED
    return code


# -- attack ------------------------------------------------------------------

def _truth_from_files(tap: EveTap, sbk_path: str, rounds_log: Optional[str]) -> dict[int, BitString]:
    hello = analysis.tap_hello(tap)
    k = hello["k_bits"]
    sbk = read_key_file(sbk_path).key
    rejected: set[int] = set()
    if rounds_log:
        _, rej = parse_round_transcript(_read_input(rounds_log))
        rejected = set(rej)
    attempts = [r.attempt for r in analysis.tap_rounds(tap) if r.attempt not in rejected]
    segments = [sbk[i * k:(i + 1) * k] for i in range(len(sbk) // k)]
    return analysis.segments_by_tap_round(attempts[:len(segments)], segments)


def _periods_from_report(text: str) -> tuple[list[float], list[PeriodRecord]]:
    rep = parse_exchange_report(text)
    obs, periods = [], []
    for _, a, b, stat, cls in rep["rows"]:
        obs.append(stat)
        if cls is Classification.SECURE:
            periods.append(PeriodRecord(a, b, stat, cls, extract_bit(a, cls, "A"), extract_bit(b, cls, "B")))
        else:
            periods.append(PeriodRecord(a, b, stat, cls))
    return obs, periods


def cmd_attack(args) -> int:
    name = args.name
    if name in ("encrypted-dhm", "plain-dhm", "chi-square") and not args.tap:
        raise UsageError(f"--name {name} needs --tap")
    if name == "encrypted-dhm" and not args.sbk:
        raise UsageError("encrypted-dhm scores against the parties' key: pass --sbk")
    seed = args.seed if args.seed is not None else 0
    tap = EveTap.from_text(_read_input(args.tap)) if args.tap else None

    if name == "encrypted-dhm":
        truth = _truth_from_files(tap, args.sbk, args.rounds_log)
        report = analysis.attack_encrypted_dhm(tap, truth, known_rounds=args.known_rounds, seed=seed)
    elif name == "plain-dhm":
        hello = analysis.tap_hello(tap)
        rounds = analysis.tap_rounds(tap)
        truth = _truth_from_files(tap, args.sbk, args.rounds_log) if args.sbk else {}
        applicable = correct = scored = 0
        for r in rounds:
            hyp = analysis.cleartext_hypothesis(r, hello["prime_bits"], hello["k_bits"])
            if hyp is None:
                continue
            applicable += 1
            seg = analysis.attack_plain_dhm(hyp)
            if r.attempt in truth and seg is not None:
                scored += 1
                correct += int(seg == truth[r.attempt])
        stats = {"applicable_fraction": applicable / len(rounds) if rounds else 0.0,
                 "rounds": float(len(rounds))}
        if scored:
            stats["accuracy"] = correct / scored
        report = analysis.AttackReport("plain-dhm", f"{len(rounds)} tap rounds", applicable > 0, stats)
    elif name == "chi-square":
        payload = b"".join(r.ciphertext for r in analysis.tap_rounds(tap))
        chi, pval = analysis.chi_square_uniformity(payload)
        report = analysis.AttackReport("chi-square", f"{len(payload)} ciphertext bytes", pval < 0.01,
                                       {"chi_square": chi, "p_value": pval})
    elif name == "reuse-leak":
        rng = np.random.default_rng(seed)
        m1, m2, k = (BitString.random(args.bits, rng) for _ in range(3))
        c1, c2, x = analysis.reuse_leak_demo(m1, m2, k)
        recovered = analysis.known_plaintext_recover(c1, c2, m1)
        ok = x == BitString(m1.bits ^ m2.bits) and recovered == m2
        report = analysis.AttackReport("reuse-leak", f"{args.bits}-bit messages, one shared pad", ok,
                                       {"recovered_fraction": float(np.mean(recovered.bits == m2.bits))})
    elif name == "kljn-eve":
        if not args.kljn_report:
            raise UsageError("kljn-eve needs --kljn-report")
        obs, periods = _periods_from_report(_read_input(args.kljn_report))
        guesses, acc = eve_best_guess(obs, periods)
        report = analysis.AttackReport("kljn-eve", f"{len(guesses)} secure bits", acc,
                                       {"accuracy": acc, "secure_bits": float(len(guesses))})
    else:  # argparse restricts the choices
        raise UsageError(f"unknown attack {name}")

    text = report.to_text()
    if args.output:
        _write(_out_path(args.output), text)
    print(text, end="")
    return EXIT_OK


# -- report ------------------------------------------------------------------

def cmd_report(args) -> int:
    n, m, consumed = args.hbk_bits, args.sbk_bits, args.hbk_consumed
    if args.session:
        tap = EveTap.from_text(_read_input(args.session))
        hello = analysis.tap_hello(tap)
        rounds = analysis.tap_rounds(tap)
        n = n if n is not None else hello["hbk_bits"]
        consumed = consumed if consumed is not None else hello["round_cost"] * len(rounds)
        if m is None:
            m = len(read_key_file(args.sbk).key) if args.sbk else hello["k_bits"] * len(rounds)
    if n is None or m is None:
        raise UsageError("report needs --session or both --hbk-bits and --sbk-bits")
    if consumed is None:
        consumed = 0
    try:
        rep = analysis.throughput_report(n, m, consumed, args.physical_rate, args.software_rate)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    print(rep.to_table(), end="")
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybridkey", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="simulate the physical exchange and write an HBK")
    _add_kljn_flags(p)
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--output", default="hbk.key")
    p.add_argument("--bob-output", help="Bob's key file (default <output>.bob.key)")
    p.add_argument("--report", help="exchange report (default <output>.kljn)")
    p.set_defaults(func=cmd_keygen)

    def mode_flags(q):
        q.add_argument("--mode", choices=[BUDGET, REPLENISH], default=BUDGET)
        q.add_argument("--replenish-from", choices=["kljn", "uniform"], default="kljn")
        q.add_argument("--replenish-config", help="JSON object of KljnConfig fields")
        q.add_argument("--replenish-amplify-rounds", type=int, default=0)

    p = sub.add_parser("expand", help="expand an HBK into an SBK with encrypted DHM rounds")
    p.add_argument("--hbk", required=True)
    p.add_argument("--hbk-bob", help="Bob's HBK if it differs from Alice's")
    _add_dhm_flags(p, 256, 128, 8)
    mode_flags(p)
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--output", default="sbk.key")
    p.add_argument("--transcript", help="round transcript (default <output>.rounds)")
    p.add_argument("--tap", help="wire tap (default <output>.tap)")
    p.set_defaults(func=cmd_expand)

    p = sub.add_parser("session", help="run a full two-party session")
    p.add_argument("--demo", action="store_true", help="generate the HBK with the simulator")
    p.add_argument("--hbk")
    p.add_argument("--hbk-bob")
    _add_kljn_flags(p)
    _add_dhm_flags(p, 128, 64, 16)
    mode_flags(p)
    p.add_argument("--message-file")
    p.add_argument("--message")
    p.add_argument("--processes", action="store_true", help="run Bob in a child process over a socket")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_session)

    p = sub.add_parser("attack", help="run an eavesdropper attack")
    p.add_argument("--name", required=True,
                   choices=["encrypted-dhm", "plain-dhm", "chi-square", "reuse-leak", "kljn-eve"])
    p.add_argument("--tap")
    p.add_argument("--sbk")
    p.add_argument("--rounds-log")
    p.add_argument("--kljn-report")
    p.add_argument("--known-rounds", type=int, default=16)
    p.add_argument("--bits", type=int, default=1024)
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("report", help="throughput comparison")
    p.add_argument("--physical-rate", type=float, required=True)
    p.add_argument("--software-rate", type=float, required=True)
    p.add_argument("--session")
    p.add_argument("--sbk")
    p.add_argument("--hbk-bits", type=int)
    p.add_argument("--sbk-bits", type=int)
    p.add_argument("--hbk-consumed", type=int)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"hybridkey {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SessionError, PoolExhausted) as exc:
        print(f"hybridkey {args.command}: {exc}", file=sys.stderr)
        return EXIT_EXHAUSTED
    except (OSError, ValueError) as exc:
        print(f"hybridkey {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
