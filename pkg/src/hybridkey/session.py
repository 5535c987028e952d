"""Two-party session: physical exchange, amplification, expansion, messaging.

Each party runs :func:`run_party` against a blocking transport.  The
protocol is strictly alternating (no party sends while the other may also be
sending), so with a shared :class:`~hybridkey.wire.EveTap` the recorded frame
order is fully determined by the seeds, whether the two actors are threads
in one process or two processes on a socket.
"""

from __future__ import annotations

import functools
import json
import multiprocessing
import socket
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence

from .dhm_expand import DhmParams, ProtocolError, SoftKey, expand_key
from .keycore import BUDGET, REPLENISH, BitString, KeyPool, otp_apply
from .kljn_sim import KljnConfig, RawExchangeResult, run_exchange
from .privacy_amp import xor_amplify
from .seeding import derive_seed, np_rng, py_rng
from .wire import (
    EveTap,
    FrameType,
    LocalLink,
    StreamTransport,
    Transport,
    TransportClosed,
    TransportError,
    WireFrame,
)

HELLO_VERSION = 1
DATA_HEADER_BYTES = 8


class Phase(Enum):
    IDLE = "Idle"
    PHYSICAL_EXCHANGE = "PhysicalExchange"
    AMPLIFIED = "Amplified"
    EXPANDING = "Expanding"
    READY = "Ready"
    EXHAUSTED = "Exhausted"
    ABORTED = "Aborted"


_ORDER = [Phase.IDLE, Phase.PHYSICAL_EXCHANGE, Phase.AMPLIFIED, Phase.EXPANDING, Phase.READY, Phase.EXHAUSTED]


class SessionError(Exception):
    """Operation not allowed in the session's current phase."""


class DesyncError(SessionError):
    """Sender and receiver pad cursors disagree; the session cannot continue."""


exchange_cached = functools.lru_cache(maxsize=8)(run_exchange)


# -- replenishment sources ---------------------------------------------------

class KljnReplenisher:
    """Fresh physical bits for a replenish-mode pool.

    Batch ``i`` is a full simulated exchange seeded from ``(seed, i)``, so
    both parties, each with their own instance, receive matching batches.
    """

    def __init__(self, config: KljnConfig, side: str, amplify_rounds: int = 0):
        self.config = config
        self.side = side
        self.amplify_rounds = amplify_rounds
        self.batches = 0

    def __call__(self, shortfall: int) -> BitString:
        cfg = replace(self.config, seed=derive_seed(self.config.seed, "replenish", self.batches))
        self.batches += 1
        raw = exchange_cached(cfg)
        key = raw.alice_key if self.side == "A" else raw.bob_key
        if len(key) < (1 << self.amplify_rounds):
            return BitString()
        return xor_amplify(key, self.amplify_rounds)


class UniformReplenisher:
    """Uniform random batches shared by both sides (test stand-in for a physical source)."""

    def __init__(self, seed: int, batch_bits: int = 4096):
        self.seed = seed
        self.batch_bits = batch_bits
        self.batches = 0

    def __call__(self, shortfall: int) -> BitString:
        bits = BitString.random(self.batch_bits, np_rng(self.seed, "replenish", self.batches))
        self.batches += 1
        return bits


# -- configuration and state -------------------------------------------------

@dataclass
class PartyConfig:
    side: str
    params: DhmParams
    seed: int
    amplify_rounds: int = 0
    mode: str = BUDGET
    kljn: Optional[KljnConfig] = None
    injected_key: Optional[BitString] = None
    injected_origin: str = "test-injected"
    replenisher: Optional[object] = None

    def __post_init__(self):
        if self.side not in ("A", "B"):
            raise ValueError("side must be 'A' or 'B'")
        if (self.kljn is None) == (self.injected_key is None):
            raise ValueError("give exactly one of kljn config or injected key material")
        if self.mode == REPLENISH and self.replenisher is None:
            raise ValueError("replenish mode needs a replenisher")

    def hello(self, hbk_bits: int) -> dict:
        p = self.params
        return {
            "v": HELLO_VERSION,
            "prime_bits": p.prime_bits,
            "k_bits": p.k_bits,
            "rounds": p.rounds,
            "prime_gen_rounds": p.prime_gen_rounds,
            "round_cost": p.round_cost,
            "mode": self.mode,
            "amplify_rounds": self.amplify_rounds,
            "hbk_bits": hbk_bits,
        }


def encode_hello(fields: dict) -> WireFrame:
    return WireFrame(FrameType.HELLO, json.dumps(fields, sort_keys=True, separators=(",", ":")).encode())


def decode_hello(frame: WireFrame) -> dict:
    if frame.frame_type is not FrameType.HELLO:
        raise ProtocolError(f"expected HELLO, got {frame.frame_type.name}")
    return json.loads(frame.payload)


@dataclass
class SessionState:
    side: str
    config: PartyConfig
    phase: Phase = Phase.IDLE
    round_index: Optional[int] = None
    pool: Optional[KeyPool] = None
    soft_key: Optional[SoftKey] = None
    raw_exchange: Optional[RawExchangeResult] = field(default=None, repr=False)
    history: list[Phase] = field(default_factory=lambda: [Phase.IDLE])
    error: Optional[str] = None
    abort_kind: Optional[str] = None  # "mismatch" | "protocol" | "transport" | "desync"
    peer_hello: Optional[dict] = None

    def advance(self, phase: Phase) -> None:
        if self.phase in (Phase.ABORTED, Phase.EXHAUSTED, Phase.READY) and phase is not Phase.ABORTED:
            raise SessionError(f"{self.phase.value} is terminal for the pipeline")
        if self.phase is Phase.ABORTED:
            raise SessionError("session already aborted")
        if phase is not Phase.ABORTED and _ORDER.index(phase) <= _ORDER.index(self.phase):
            raise SessionError(f"illegal transition {self.phase.value} -> {phase.value}")
        self.phase = phase
        self.history.append(phase)

    def enter_round(self, idx: int) -> None:
        if self.phase is not Phase.EXPANDING:
            raise SessionError("rounds only run while expanding")
        if self.round_index is not None and idx <= self.round_index:
            raise SessionError("round index must increase")
        self.round_index = idx

    def abort(self, reason: str, kind: str = "protocol") -> None:
        if self.phase is not Phase.ABORTED:
            self.advance(Phase.ABORTED)
        self.error = reason
        self.abort_kind = kind


def physical_key(cfg: PartyConfig) -> tuple[BitString, str, Optional[RawExchangeResult]]:
    if cfg.injected_key is not None:
        return cfg.injected_key, cfg.injected_origin, None
    raw = exchange_cached(cfg.kljn)
    return (raw.alice_key if cfg.side == "A" else raw.bob_key), "physical", raw


def run_party(cfg: PartyConfig, transport: Transport) -> SessionState:
    st = SessionState(cfg.side, cfg)
    try:
        _run_party(st, cfg, transport)
    except ProtocolError as exc:
        st.abort(f"protocol error: {exc}")
    except TransportError as exc:
        st.abort(f"transport failure: {exc}", kind="transport")
    except Exception:
        # unblock the peer before surfacing a bug
        close = getattr(transport, "close", None)
        if close:
            close()
        raise
    return st


def _run_party(st: SessionState, cfg: PartyConfig, transport: Transport) -> None:
    st.advance(Phase.PHYSICAL_EXCHANGE)
    raw_key, origin, st.raw_exchange = physical_key(cfg)

    st.advance(Phase.AMPLIFIED)
    try:
        hbk = xor_amplify(raw_key, cfg.amplify_rounds)
        st.pool = KeyPool(hbk, origin=origin, pool_id=f"hbk-{cfg.side}", mode=cfg.mode,
                          replenish=cfg.replenisher)
    except ValueError as exc:
        raise ProtocolError(f"no usable HBK: {exc}") from exc

    mine = cfg.hello(len(hbk))
    if cfg.side == "A":
        transport.send(encode_hello(mine))
        st.peer_hello = decode_hello(transport.recv())
    else:
        st.peer_hello = decode_hello(transport.recv())
        transport.send(encode_hello(mine))
    if st.peer_hello != mine:
        diff = sorted(k for k in mine.keys() | st.peer_hello.keys() if mine.get(k) != st.peer_hello.get(k))
        st.abort(f"config mismatch: {', '.join(diff)}", kind="mismatch")
        return

    st.advance(Phase.EXPANDING)
    rng = py_rng(cfg.seed, "dhm", cfg.side)
    soft = expand_key(st.pool, cfg.params, transport, cfg.side, rng, on_round=st.enter_round)
    st.soft_key = soft
    st.advance(Phase.EXHAUSTED if soft.partial else Phase.READY)


def run_session(alice_cfg: PartyConfig, bob_cfg: PartyConfig,
                link: Optional[LocalLink] = None) -> tuple[SessionState, SessionState, EveTap]:
    """Both actors in one process, lockstep over a queue link."""
    link = link or LocalLink()
    for cfg in (alice_cfg, bob_cfg):
        if cfg.kljn is not None:
            exchange_cached(cfg.kljn)
    with ThreadPoolExecutor(max_workers=2, thread_name_prefix="party") as pool:
        fa = pool.submit(run_party, alice_cfg, link.alice)
        fb = pool.submit(run_party, bob_cfg, link.bob)
        alice, bob = fa.result(), fb.result()
    return alice, bob, link.tap


# -- messaging ---------------------------------------------------------------

def _require_ready(state: SessionState) -> KeyPool:
    if state.phase is not Phase.READY:
        raise SessionError(f"cannot exchange data in phase {state.phase.value}")
    return state.soft_key.pool


def send_secure(state: SessionState, message: bytes) -> WireFrame:
    """OTP-encrypt with fresh SBK bits; raises PoolExhausted, consuming nothing, if short."""
    pool = _require_ready(state)
    pad, receipt = pool.draw(8 * len(message))
    ct = otp_apply(BitString.from_bytes(message), pad)
    return WireFrame(FrameType.DATA, receipt.start_index.to_bytes(DATA_HEADER_BYTES, "big") + ct.to_bytes())


def receive_secure(state: SessionState, frame: WireFrame) -> bytes:
    pool = _require_ready(state)
    if frame.frame_type is not FrameType.DATA or len(frame.payload) < DATA_HEADER_BYTES:
        raise SessionError(f"expected DATA, got {frame.frame_type.name}")
    start = int.from_bytes(frame.payload[:DATA_HEADER_BYTES], "big")
    body = frame.payload[DATA_HEADER_BYTES:]
    if start != pool.cursor:
        state.abort(f"pad desync: frame at {start}, local cursor {pool.cursor}", kind="desync")
        raise DesyncError(state.error)
    pad, _ = pool.draw(8 * len(body))
    return otp_apply(BitString.from_bytes(body), pad).to_bytes()


def deliver(sender: SessionState, receiver: SessionState, link: LocalLink, message: bytes) -> bytes:
    """Send one message through the link (so the tap sees it) and decrypt it."""
    frame = send_secure(sender, message)
    link.endpoint(sender.side).send(frame)
    return receive_secure(receiver, link.endpoint(receiver.side).recv())


# -- two-process demo --------------------------------------------------------

@dataclass
class DemoResult:
    alice: SessionState
    tap: EveTap
    bob_phase: Phase
    bob_sbk_hex: Optional[str]
    received: list[bytes]
    bob_error: Optional[str] = None


def _bob_process(cfg: PartyConfig, sock: socket.socket, results) -> None:
    transport = StreamTransport(sock, "B")
    st = run_party(cfg, transport)
    received = []
    error = st.error
    if st.phase is Phase.READY:
        while True:
            try:
                frame = transport.recv()
            except TransportClosed:
                break
            except TransportError as exc:
                error = str(exc)
                break
            try:
                received.append(receive_secure(st, frame))
            except SessionError as exc:
                error = str(exc)
                break
    sbk = st.soft_key.material.to_hex() if st.soft_key else None
    results.put((st.phase.value, sbk, received, error))
    sock.close()


def run_demo_processes(alice_cfg: PartyConfig, bob_cfg: PartyConfig,
                       messages: Sequence[bytes] = ()) -> DemoResult:
    """Alice here, Bob in a child process, connected by a socket pair."""
    ctx = multiprocessing.get_context("fork")
    sock_a, sock_b = socket.socketpair()
    results = ctx.Queue()
    child = ctx.Process(target=_bob_process, args=(bob_cfg, sock_b, results))
    child.start()
    sock_b.close()
    tap = EveTap()
    transport = StreamTransport(sock_a, "A", tap)
    try:
        alice = run_party(alice_cfg, transport)
        if alice.phase is Phase.READY:
            for m in messages:
                transport.send(send_secure(alice, m))
    finally:
        transport.close()
    bob_phase, bob_sbk, received, bob_error = results.get(timeout=600)
    child.join()
    sock_a.close()
    return DemoResult(alice, tap, Phase(bob_phase), bob_sbk, received, bob_error)


def run_demo_lockstep(alice_cfg: PartyConfig, bob_cfg: PartyConfig,
                      messages: Sequence[bytes] = ()) -> DemoResult:
    link = LocalLink()
    alice, bob, tap = run_session(alice_cfg, bob_cfg, link)
    received = []
    if alice.phase is Phase.READY and bob.phase is Phase.READY:
        received = [deliver(alice, bob, link, m) for m in messages]
    sbk = bob.soft_key.material.to_hex() if bob.soft_key else None
    return DemoResult(alice, tap, bob.phase, sbk, received, bob.error)


def party_pair(params: DhmParams, seed: int, **shared) -> tuple[PartyConfig, PartyConfig]:
    """Matching Alice/Bob configs; replenish mode gets per-side replenishers."""
    mode = shared.get("mode", BUDGET)
    out = []
    for side in ("A", "B"):
        kw = dict(shared)
        if mode == REPLENISH and "replenisher" not in kw:
            kljn = kw.get("kljn")
            if kljn is None:
                kw["replenisher"] = UniformReplenisher(derive_seed(seed, "uniform-replenish"))
            else:
                kw["replenisher"] = KljnReplenisher(kljn, side, kw.get("amplify_rounds", 0))
        out.append(PartyConfig(side, params, seed, **kw))
    return out[0], out[1]


def uniform_key(n_bits: int, seed: int) -> BitString:
    return BitString.random(n_bits, np_rng(seed, "uniform-hbk"))

