"""Diffie-Hellman-Merkle rounds run entirely under one-time-pad encryption.

Each round Alice draws a fresh safe prime ``p`` and full-group generator
``g``; both sides draw secret exponents and exchange ``g**a`` and ``g**b``.
Every number that crosses the wire (``p``, ``g``, ``A``, ``B``) is XORed with
fresh HBK pad bits, so an eavesdropper does not even learn the group.  The
shared secret yields a K-bit segment; ``rounds`` segments make the SBK.

Pad bits are drawn in a fixed order on both sides -- ``p||g``, then ``A``,
then ``B`` -- so the two pools stay aligned without any bookkeeping traffic.
"""

from __future__ import annotations

import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

from .keycore import (
    BitString,
    KeyPool,
    PadReceipt,
    PoolExhausted,
    otp_apply,
    otp_encrypt_with_pool,
)
from .wire import (
    AbortReason,
    EveTap,
    FrameType,
    LocalLink,
    Transport,
    WireFrame,
    abort_frame,
    abort_reason,
)

MIN_PRIME_BITS = 16
MAX_CANDIDATES = 100_000


class ProtocolError(Exception):
    """The peer sent something the round protocol cannot accept."""


class PrimeSearchFailed(RuntimeError):
    pass


def modexp(base: int, exponent: int, modulus: int) -> int:
    """Left-to-right binary square-and-multiply."""
    if modulus < 2:
        raise ValueError("modulus must be at least 2")
    if exponent < 0:
        raise ValueError("negative exponents are not supported")
    base %= modulus
    result = 1
    for bit in bin(exponent)[2:]:
        result = result * result % modulus
        if bit == "1":
            result = result * base % modulus
    return result


def _small_primes(limit: int) -> list[int]:
    sieve = bytearray([1]) * limit
    sieve[0:2] = b"\x00\x00"
    for i in range(2, math.isqrt(limit - 1) + 1):
        if sieve[i]:
            sieve[i * i::i] = bytearray(len(sieve[i * i::i]))
    return [i for i in range(limit) if sieve[i]]


SMALL_PRIMES = _small_primes(1000)
_SMALL_PRODUCT = math.prod(SMALL_PRIMES)


def is_probable_prime(n: int, rounds: int, rng: random.Random) -> bool:
    """Miller-Rabin with ``rounds`` random witnesses (exact for n < 10**6)."""
    if n < 2:
        return False
    for q in SMALL_PRIMES:
        if n % q == 0:
            return n == q
    if n < SMALL_PRIMES[-1] ** 2:
        return True
    d, r = n - 1, 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for _ in range(rounds):
        x = modexp(rng.randrange(2, n - 1), d, n)
        if x in (1, n - 1):
            continue
        for _ in range(r - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def is_safe_prime(p: int, rounds: int, rng: random.Random) -> bool:
    return p > 4 and p % 2 == 1 and is_probable_prime((p - 1) // 2, rounds, rng) and is_probable_prime(p, rounds, rng)


def generate_round_prime(prime_bits: int, prime_gen_rounds: int, rng: random.Random,
                         max_candidates: int = MAX_CANDIDATES) -> int:
    """Random safe prime ``p = 2q + 1`` with exactly ``prime_bits`` bits."""
    if prime_bits < MIN_PRIME_BITS:
        raise ValueError(f"prime_bits must be at least {MIN_PRIME_BITS}")
    top = 1 << (prime_bits - 2)
    for _ in range(max_candidates):
        q = rng.getrandbits(prime_bits - 1) | top | 1
        p = 2 * q + 1
        # q > 2**14 exceeds every sieving prime, so a common factor means composite
        if math.gcd(q * p, _SMALL_PRODUCT) != 1:
            continue
        if modexp(2, p - 1, p) != 1:
            continue
        if is_probable_prime(q, prime_gen_rounds, rng) and is_probable_prime(p, prime_gen_rounds, rng):
            return p
    raise PrimeSearchFailed(f"no {prime_bits}-bit safe prime in {max_candidates} candidates")


def is_full_group_generator(g: int, p: int) -> bool:
    """For a safe prime p = 2q + 1, g generates Z_p* iff g^2 != 1 and g^q != 1."""
    if not (2 <= g <= p - 2):
        return False
    q = (p - 1) // 2
    return modexp(g, 2, p) != 1 and modexp(g, q, p) != 1


def select_generator(p: int, rng: random.Random, max_candidates: int = MAX_CANDIDATES) -> int:
    for _ in range(max_candidates):
        g = rng.randrange(2, p - 1)
        if is_full_group_generator(g, p):
            return g
    raise PrimeSearchFailed(f"no generator of Z_{p}* found in {max_candidates} tries")


def segment_limit(p: int, k_bits: int) -> int:
    """Largest accepted shared secret: a multiple of 2**k_bits no larger than p - 1."""
    return ((p - 1) >> k_bits) << k_bits


def derive_segment(s: int, p: int, k_bits: int) -> Optional[BitString]:
    """Low ``k_bits`` of ``s``, or ``None`` when the round must be rerun.

    ``s`` is uniform on ``[1, p-1]``; accepting only ``s <= segment_limit``
    keeps a range whose size is a multiple of ``2**k_bits``, so accepted
    segments are exactly uniform.
    """
    if k_bits > p.bit_length() - 1:
        raise ValueError("segment longer than the group allows")
    if not (1 <= s <= p - 1):
        raise ValueError("shared secret is not a group element")
    if s > segment_limit(p, k_bits):
        return None
    return BitString.from_int(s & ((1 << k_bits) - 1), k_bits)


@dataclass(frozen=True)
class DhmParams:
    prime_bits: int = 256
    k_bits: int = 128
    rounds: int = 8
    prime_gen_rounds: int = 16

    def __post_init__(self):
        if self.prime_bits < MIN_PRIME_BITS:
            raise ValueError(f"prime_bits must be at least {MIN_PRIME_BITS}")
        if self.prime_bits % 8:
            raise ValueError("prime_bits must be a multiple of 8 (byte-aligned ciphertext fields)")
        if not (1 <= self.k_bits <= self.prime_bits - 1):
            raise ValueError("need 1 <= k_bits <= prime_bits - 1")
        if self.rounds < 1:
            raise ValueError("rounds must be at least 1")
        if self.prime_gen_rounds < 1:
            raise ValueError("prime_gen_rounds must be at least 1")

    @property
    def round_cost(self) -> int:
        """Pad bits per round: p, g, A and B, one fixed-width field each."""
        return 4 * self.prime_bits

    @property
    def sbk_bits(self) -> int:
        return self.k_bits * self.rounds


@dataclass(frozen=True)
class RoundFrameRecord:
    round_idx: int
    side: str  # sender
    frame_type: FrameType
    receipt: Optional[PadReceipt]
    payload: bytes

    def to_line(self) -> str:
        start = str(self.receipt.start_index) if self.receipt else "-"
        length = self.receipt.length if self.receipt else 0
        return f"{self.round_idx} {self.side} {self.frame_type.name} {start} {length} {self.payload.hex() or '-'}"


@dataclass
class DhmRound:
    """One side's view of one round; the peer's secret stays ``None``."""

    side: str
    attempt: int
    p: int
    g: int
    A: int
    B: int
    s: int
    segment: Optional[BitString]
    a: Optional[int] = None
    b: Optional[int] = None
    frames: list[RoundFrameRecord] = field(default_factory=list, repr=False)

    @property
    def accepted(self) -> bool:
        return self.segment is not None


def _other(side: str) -> str:
    return "B" if side == "A" else "A"


class _RoundIO:
    """Encrypt/decrypt fixed-width fields against the pool and log every frame."""

    def __init__(self, pool: KeyPool, transport: Transport, side: str, attempt: int, width: int):
        self.pool = pool
        self.transport = transport
        self.side = side
        self.attempt = attempt
        self.width = width
        self.frames: list[RoundFrameRecord] = []

    def send(self, ftype: FrameType, *values: int) -> None:
        plain = BitString.concat([BitString.from_int(v, self.width) for v in values])
        ct, receipt = otp_encrypt_with_pool(plain, self.pool)
        payload = ct.to_bytes()
        self.transport.send(WireFrame(ftype, payload))
        self.frames.append(RoundFrameRecord(self.attempt, self.side, ftype, receipt, payload))

    def recv(self, ftype: FrameType, count: int) -> list[int]:
        frame = self.transport.recv()
        if frame.frame_type is FrameType.ABORT:
            self.frames.append(RoundFrameRecord(self.attempt, _other(self.side), frame.frame_type, None, frame.payload))
            if abort_reason(frame) is AbortReason.EXHAUSTED:
                raise PoolExhausted(0, self.pool.pool_id, peer=True)
            raise ProtocolError(f"peer aborted: {abort_reason(frame).name}")
        nbits = count * self.width
        if frame.frame_type is not ftype or len(frame.payload) * 8 != nbits:
            raise ProtocolError(f"expected {ftype.name} of {nbits} bits, got {frame.frame_type.name}")
        pad, receipt = self.pool.draw(nbits)
        plain = otp_apply(BitString.from_bytes(frame.payload), pad)
        self.frames.append(RoundFrameRecord(self.attempt, _other(self.side), ftype, receipt, frame.payload))
        return [plain[i * self.width:(i + 1) * self.width].to_int() for i in range(count)]

    def abort(self, reason: AbortReason) -> None:
        frame = abort_frame(reason)
        self.transport.send(frame)
        self.frames.append(RoundFrameRecord(self.attempt, self.side, frame.frame_type, None, frame.payload))


def _check_group(p: int, g: int, params: DhmParams, rng: random.Random) -> None:
    # a wrong p here almost always means the two HBKs disagree
    if p.bit_length() != params.prime_bits or not is_safe_prime(p, 2, rng):
        raise ProtocolError("decrypted modulus is not a safe prime of the agreed size")
    if not is_full_group_generator(g, p):
        raise ProtocolError("decrypted generator is not valid for the decrypted modulus")


def _check_public(value: int, p: int) -> None:
    if not (1 <= value <= p - 1):
        raise ProtocolError("public value outside the group")


def run_encrypted_round(pool: KeyPool, params: DhmParams, transport: Transport, side: str,
                        rng: random.Random, attempt: int = 0) -> DhmRound:
    """Run one round as ``side``; the cost check happens before any pad bit is used.

    On failure the frames logged so far are attached to the exception as
    ``round_frames``.
    """
    io = _RoundIO(pool, transport, side, attempt, params.prime_bits)
    try:
        rnd = _round(io, pool, params, transport, side, rng, attempt)
    except Exception as exc:
        exc.round_frames = io.frames
        raise
    rnd.frames = io.frames
    return rnd


def _round(io: _RoundIO, pool: KeyPool, params: DhmParams, transport: Transport, side: str,
           rng: random.Random, attempt: int) -> DhmRound:
    cost = params.round_cost
    if side == "A":
        try:
            pool.ensure(cost)
        except PoolExhausted:
            io.abort(AbortReason.EXHAUSTED)
            raise
        p = generate_round_prime(params.prime_bits, params.prime_gen_rounds, rng)
        g = select_generator(p, rng)
        a = rng.randrange(2, p - 1)
        A = modexp(g, a, p)
        io.send(FrameType.PRIME_G, p, g)
        io.send(FrameType.PUBVAL, A)
        (B,) = io.recv(FrameType.PUBVAL, 1)
        _check_public(B, p)
        s = modexp(B, a, p)
        rnd = DhmRound("A", attempt, p, g, A, B, s, derive_segment(s, p, params.k_bits), a=a)
    elif side == "B":
        frame = transport.recv()
        if frame.frame_type is FrameType.ABORT:
            io.frames.append(RoundFrameRecord(attempt, "A", frame.frame_type, None, frame.payload))
            if abort_reason(frame) is AbortReason.EXHAUSTED:
                raise PoolExhausted(0, pool.pool_id, peer=True)
            raise ProtocolError(f"peer aborted: {abort_reason(frame).name}")
        try:
            pool.ensure(cost)
        except PoolExhausted:
            io.abort(AbortReason.EXHAUSTED)
            raise
        nbits = 2 * params.prime_bits
        if frame.frame_type is not FrameType.PRIME_G or len(frame.payload) * 8 != nbits:
            io.abort(AbortReason.PROTOCOL)
            raise ProtocolError(f"expected PRIME_G, got {frame.frame_type.name}")
        pad, receipt = pool.draw(nbits)
        plain = otp_apply(BitString.from_bytes(frame.payload), pad)
        io.frames.append(RoundFrameRecord(attempt, "A", FrameType.PRIME_G, receipt, frame.payload))
        p = plain[:params.prime_bits].to_int()
        g = plain[params.prime_bits:].to_int()
        (A,) = io.recv(FrameType.PUBVAL, 1)
        try:
            _check_group(p, g, params, rng)
            _check_public(A, p)
        except ProtocolError:
            io.abort(AbortReason.PROTOCOL)
            raise
        b = rng.randrange(2, p - 1)
        B = modexp(g, b, p)
        io.send(FrameType.PUBVAL, B)
        s = modexp(A, b, p)
        rnd = DhmRound("B", attempt, p, g, A, B, s, derive_segment(s, p, params.k_bits), b=b)
    else:
        raise ValueError(f"side must be 'A' or 'B', got {side!r}")
    return rnd


@dataclass
class SoftKey:
    """The expanded key: concatenated round segments plus its own ledger."""

    k_bits: int
    requested_rounds: int
    segments: list[BitString]
    rounds: list[DhmRound] = field(repr=False)
    attempts: int
    hbk_consumed: int
    partial: bool = False
    abort_frames: list[RoundFrameRecord] = field(default_factory=list, repr=False)
    pool: Optional[KeyPool] = field(default=None, repr=False)

    def __post_init__(self):
        if self.pool is None and self.segments:
            self.pool = KeyPool(self.material, origin="expanded", pool_id="sbk")

    @property
    def material(self) -> BitString:
        return BitString.concat(self.segments)

    @property
    def length(self) -> int:
        return self.k_bits * len(self.segments)

    @property
    def rounds_completed(self) -> int:
        return len(self.segments)

    @property
    def rejected_attempts(self) -> list[int]:
        return [r.attempt for r in self.rounds if not r.accepted]

    @property
    def accepted_attempts(self) -> list[int]:
        return [r.attempt for r in self.rounds if r.accepted]

    def accepted_rounds(self) -> list[DhmRound]:
        return [r for r in self.rounds if r.accepted]

    def remaining(self) -> int:
        return self.pool.remaining() if self.pool else 0

    def transcript_lines(self) -> list[str]:
        lines = [f.to_line() for r in self.rounds for f in r.frames]
        lines += [f.to_line() for f in self.abort_frames]
        if self.rejected_attempts:
            lines.append("# rejected " + " ".join(map(str, self.rejected_attempts)))
        return lines

    def key_file_flags(self) -> tuple[str, ...]:
        if not self.partial:
            return ()
        return ("partial", f"rounds={self.rounds_completed}/{self.requested_rounds}")


def expand_key(pool: KeyPool, params: DhmParams, transport: Transport, side: str,
               rng: random.Random, on_round: Optional[Callable[[int], None]] = None) -> SoftKey:
    """Run rounds until ``params.rounds`` segments are accepted or the pool runs dry.

    Rejected attempts are rerun with fresh numbers and still cost pad bits.
    Budget-mode exhaustion returns the partial key with ``partial`` set.
    """
    start = pool.cursor
    rounds: list[DhmRound] = []
    segments: list[BitString] = []
    attempt = 0
    partial = False
    abort_frames: list[RoundFrameRecord] = []
    while len(segments) < params.rounds:
        if on_round is not None:
            on_round(attempt)
        try:
            rnd = run_encrypted_round(pool, params, transport, side, rng, attempt)
        except PoolExhausted as exc:
            partial = True
            abort_frames = exc.round_frames
            break
        attempt += 1
        rounds.append(rnd)
        if rnd.accepted:
            segments.append(rnd.segment)
    return SoftKey(params.k_bits, params.rounds, segments, rounds, attempt,
                   pool.cursor - start, partial, abort_frames)


def format_round_transcript(soft: SoftKey) -> str:
    return "".join(line + "\n" for line in soft.transcript_lines())


def parse_round_transcript(text: str) -> tuple[list[tuple], list[int]]:
    """Return ``(records, rejected_attempts)``; records are raw tuples."""
    records, rejected = [], []
    for line in text.splitlines():
        if line.startswith("# rejected"):
            rejected.extend(int(x) for x in line.split()[2:])
            continue
        if not line.strip() or line.startswith("#"):
            continue
        idx, side, ftype, start, length, hexpl = line.split()
        records.append((int(idx), side, FrameType[ftype], None if start == "-" else int(start),
                        int(length), b"" if hexpl == "-" else bytes.fromhex(hexpl)))
    return records, rejected


def expand_in_process(pool_a: KeyPool, pool_b: KeyPool, params: DhmParams,
                      rng_a: random.Random, rng_b: random.Random) -> tuple[SoftKey, SoftKey, EveTap]:
    """Both sides of :func:`expand_key` on two threads joined by a :class:`LocalLink`."""
    link = LocalLink()
    with ThreadPoolExecutor(max_workers=2) as ex:
        fa = ex.submit(expand_key, pool_a, params, link.alice, "A", rng_a)
        fb = ex.submit(expand_key, pool_b, params, link.bob, "B", rng_b)
        return fa.result(), fb.result(), link.tap
