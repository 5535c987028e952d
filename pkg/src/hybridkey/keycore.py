"""Bit strings, the one-time-pad cipher and the single-use key pool.

Every pad bit used anywhere in the package is drawn through a
:class:`KeyPool`, which hands out bits strictly in prefix order and records a
:class:`PadReceipt` for each draw.  Nothing is ever handed out twice.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

KEY_FILE_MAGIC = "HBKv1"

BUDGET = "budget"
REPLENISH = "replenish"
POOL_MODES = (BUDGET, REPLENISH)


class PoolExhausted(Exception):
    """Raised when a draw asks for more bits than the pool can supply."""

    def __init__(self, shortfall: int, pool_id: str = "", peer: bool = False):
        self.shortfall = shortfall
        self.pool_id = pool_id
        self.peer = peer
        where = "peer" if peer else (pool_id or "pool")
        super().__init__(f"{where} exhausted: short by {shortfall} bits")


class PadLengthError(ValueError):
    pass


class LedgerError(AssertionError):
    """The consumption ledger is inconsistent (a bit was reused)."""


class BitString:
    """Immutable ordered sequence of bits backed by a ``uint8`` array of 0/1."""

    __slots__ = ("_bits",)

    def __init__(self, bits: Iterable[int] | np.ndarray = ()):
        arr = np.array(bits, dtype=np.uint8).reshape(-1)
        if arr.size and arr.max() > 1:
            raise ValueError("bits must be 0 or 1")
        arr.setflags(write=False)
        self._bits = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> BitString:
        # trusted path: arr is already a fresh 0/1 uint8 vector
        out = cls.__new__(cls)
        arr.setflags(write=False)
        out._bits = arr
        return out

    @classmethod
    def from_str(cls, text: str) -> BitString:
        text = text.replace(" ", "").replace("_", "")
        if set(text) - {"0", "1"}:
            raise ValueError(f"not a bit string: {text!r}")
        return cls._wrap(np.frombuffer(text.encode(), dtype=np.uint8) - ord("0"))

    @classmethod
    def from_bytes(cls, data: bytes, length: int | None = None) -> BitString:
        """Unpack MSB-first; ``length`` truncates trailing padding bits."""
        arr = np.unpackbits(np.frombuffer(bytes(data), dtype=np.uint8))
        if length is not None:
            if length > arr.size:
                raise ValueError(f"{len(data)} bytes cannot hold {length} bits")
            arr = arr[:length]
        return cls._wrap(arr.copy())

    @classmethod
    def from_int(cls, value: int, width: int) -> BitString:
        """Fixed-width, most-significant-bit-first encoding of ``value``."""
        if value < 0 or value.bit_length() > width:
            raise ValueError(f"{value} does not fit in {width} bits")
        nbytes = (width + 7) // 8
        arr = np.unpackbits(np.frombuffer(value.to_bytes(nbytes, "big"), dtype=np.uint8))
        return cls._wrap(arr[arr.size - width:].copy())

    @classmethod
    def random(cls, n: int, rng: np.random.Generator) -> BitString:
        return cls._wrap(rng.integers(0, 2, size=n, dtype=np.uint8))

    @classmethod
    def zeros(cls, n: int) -> BitString:
        return cls._wrap(np.zeros(n, dtype=np.uint8))

    @classmethod
    def concat(cls, parts: Sequence[BitString]) -> BitString:
        if not parts:
            return cls()
        return cls._wrap(np.concatenate([p._bits for p in parts]))

    @property
    def bits(self) -> np.ndarray:
        return self._bits

    @property
    def length(self) -> int:
        return int(self._bits.size)

    def __len__(self) -> int:
        return int(self._bits.size)

    def __getitem__(self, item):
        if isinstance(item, slice):
            return BitString._wrap(self._bits[item].copy())
        return int(self._bits[item])

    def __add__(self, other: BitString) -> BitString:
        return BitString.concat([self, other])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BitString):
            return NotImplemented
        return self._bits.size == other._bits.size and bool(np.array_equal(self._bits, other._bits))

    def __hash__(self) -> int:
        return hash((self._bits.size, self._bits.tobytes()))

    def __str__(self) -> str:
        return (self._bits + ord("0")).tobytes().decode()

    def __repr__(self) -> str:
        s = str(self)
        if len(s) > 64:
            s = s[:64] + "..."
        return f"BitString({s!r}, n={len(self)})"

    def to_bytes(self) -> bytes:
        """MSB-first packing; a final partial byte is zero-padded on the right."""
        return np.packbits(self._bits).tobytes()

    def to_hex(self) -> str:
        return self.to_bytes().hex()

    def to_int(self) -> int:
        if not len(self):
            return 0
        pad = (-len(self)) % 8
        packed = np.packbits(np.concatenate([np.zeros(pad, np.uint8), self._bits]))
        return int.from_bytes(packed.tobytes(), "big")


@dataclass(frozen=True)
class PadReceipt:
    start_index: int
    length: int
    pool_id: str

    @property
    def stop(self) -> int:
        return self.start_index + self.length


_pool_ids = itertools.count()


def _next_pool_id() -> str:
    return f"pool-{next(_pool_ids)}"


@dataclass(eq=False)
class KeyPool:
    """Key material plus a prefix-order consumption ledger.

    In ``replenish`` mode a shortfall is covered by calling
    ``replenish(shortfall)`` for fresh physical bits, which are appended to
    the material; in ``budget`` mode it raises :class:`PoolExhausted`.
    """

    material: BitString
    origin: str = "physical"
    pool_id: str = field(default_factory=_next_pool_id)
    mode: str = BUDGET
    replenish: Callable[[int], BitString] | None = None
    cursor: int = field(default=0, init=False)
    consumed_ranges: list[tuple[int, int]] = field(default_factory=list, init=False)
    replenished_bits: int = field(default=0, init=False)

    def __post_init__(self):
        if len(self.material) < 1:
            raise ValueError("key pool needs at least one bit of material")
        if self.mode not in POOL_MODES:
            raise ValueError(f"unknown pool mode {self.mode!r}")
        if self.mode == REPLENISH and self.replenish is None:
            raise ValueError("replenish mode needs a replenish callback")

    @property
    def size(self) -> int:
        return len(self.material)

    def remaining(self) -> int:
        return self.size - self.cursor

    def ensure(self, n: int) -> None:
        """Make ``n`` bits available or raise; never consumes anything."""
        if n < 0:
            raise ValueError("cannot draw a negative number of bits")
        if self.mode == REPLENISH:
            while self.remaining() < n:
                extra = self.replenish(n - self.remaining())
                if not len(extra):
                    break
                self.material = self.material + extra
                self.replenished_bits += len(extra)
        if n > self.remaining():
            raise PoolExhausted(n - self.remaining(), self.pool_id)

    def draw(self, n: int) -> tuple[BitString, PadReceipt]:
        self.ensure(n)
        start = self.cursor
        bits = self.material[start:start + n]
        self.cursor += n
        if n:
            self.consumed_ranges.append((start, start + n))
        return bits, PadReceipt(start, n, self.pool_id)

    def check_ledger(self) -> None:
        """Raise :class:`LedgerError` unless the single-use invariants hold."""
        prev = 0
        total = 0
        for lo, hi in self.consumed_ranges:
            if not (0 <= lo < hi <= self.size) or lo < prev:
                raise LedgerError(f"bad or overlapping range [{lo},{hi}) in {self.pool_id}")
            prev = hi
            total += hi - lo
        if total != self.cursor:
            raise LedgerError(f"ledger total {total} != cursor {self.cursor}")


def pool_create(material: BitString, origin: str = "physical", **kwargs) -> KeyPool:
    return KeyPool(material, origin=origin, **kwargs)


def pool_draw(pool: KeyPool, n: int) -> tuple[BitString, PadReceipt]:
    return pool.draw(n)


def otp_apply(data: BitString, pad: BitString) -> BitString:
    """Bitwise XOR; the pad is never truncated or cycled."""
    if len(data) != len(pad):
        raise PadLengthError(f"data has {len(data)} bits but pad has {len(pad)}")
    return BitString._wrap(np.bitwise_xor(data.bits, pad.bits))


def otp_encrypt_with_pool(data: BitString, pool: KeyPool) -> tuple[BitString, PadReceipt]:
    # draw() checks availability before touching the cursor, so a failure
    # leaves the ledger as it was
    pad, receipt = pool.draw(len(data))
    return otp_apply(data, pad), receipt


# -- key files ---------------------------------------------------------------

@dataclass(frozen=True)
class KeyFile:
    key: BitString
    origin: str
    flags: tuple[str, ...] = ()

    @property
    def partial(self) -> bool:
        return "partial" in self.flags


def format_key_file(key: BitString, origin: str, flags: Sequence[str] = ()) -> str:
    header = " ".join([KEY_FILE_MAGIC, str(len(key)), origin, *flags])
    return f"{header}\n{key.to_hex()}\n"


def parse_key_file(text: str) -> KeyFile:
    lines = text.splitlines()
    if not lines:
        raise ValueError("empty key file")
    head = lines[0].split()
    if len(head) < 3 or head[0] != KEY_FILE_MAGIC:
        raise ValueError(f"not an {KEY_FILE_MAGIC} key file")
    n = int(head[1])
    hexpart = lines[1].strip() if len(lines) > 1 else ""
    if len(hexpart) != 2 * ((n + 7) // 8):
        raise ValueError(f"key file declares {n} bits but carries {len(hexpart) // 2} bytes")
    key = BitString.from_bytes(bytes.fromhex(hexpart), n)
    return KeyFile(key, head[2], tuple(head[3:]))


def write_key_file(path: str | Path, key: BitString, origin: str, flags: Sequence[str] = ()) -> None:
    Path(path).write_text(format_key_file(key, origin, flags))


def read_key_file(path: str | Path) -> KeyFile:
    return parse_key_file(Path(path).read_text())
