"""Wire frames, transports and the eavesdropper's tap.

A frame is one type byte, a 4-byte big-endian payload length and the
payload.  Transports are reliable and in order; ``LocalLink`` connects two
in-process actors through queues and ``StreamTransport`` runs over any
connected socket.  Whatever goes over either is recorded on an
:class:`EveTap`, which is all an eavesdropper gets to see.
"""

from __future__ import annotations

import queue
import socket
import struct
import threading
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Protocol

_HEADER = struct.Struct(">BI")
RECV_TIMEOUT = 60.0


class FrameType(IntEnum):
    HELLO = 1
    PRIME_G = 2
    PUBVAL = 3
    DATA = 4
    ABORT = 5


class AbortReason(IntEnum):
    EXHAUSTED = 1
    PROTOCOL = 2
    CONFIG_MISMATCH = 3


class TransportError(Exception):
    pass


class TransportClosed(TransportError):
    """The peer closed the stream cleanly between frames."""


@dataclass(frozen=True)
class WireFrame:
    frame_type: FrameType
    payload: bytes = b""

    @property
    def length(self) -> int:
        return len(self.payload)

    def encode(self) -> bytes:
        return _HEADER.pack(int(self.frame_type), len(self.payload)) + self.payload

    @classmethod
    def decode(cls, data: bytes) -> WireFrame:
        if len(data) < _HEADER.size:
            raise TransportError("truncated frame header")
        ftype, length = _HEADER.unpack_from(data)
        payload = data[_HEADER.size:]
        if len(payload) != length:
            raise TransportError(f"frame declares {length} payload bytes, got {len(payload)}")
        return cls(FrameType(ftype), payload)


def abort_frame(reason: AbortReason) -> WireFrame:
    return WireFrame(FrameType.ABORT, bytes([int(reason)]))


def abort_reason(frame: WireFrame) -> AbortReason:
    return AbortReason(frame.payload[0]) if frame.payload else AbortReason.PROTOCOL


class Transport(Protocol):
    side: str

    def send(self, frame: WireFrame) -> None: ...

    def recv(self) -> WireFrame: ...


def direction(sender: str) -> str:
    return "A>B" if sender == "A" else "B>A"


@dataclass(frozen=True)
class TapEntry:
    seq: int
    direction: str
    frame: WireFrame

    @property
    def sender(self) -> str:
        return self.direction[0]


@dataclass
class EveTap:
    frames: list[TapEntry] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def record(self, sender: str, frame: WireFrame) -> None:
        with self._lock:
            self.frames.append(TapEntry(len(self.frames), direction(sender), frame))

    def of_type(self, *types: FrameType) -> list[TapEntry]:
        return [e for e in self.frames if e.frame.frame_type in types]

    def to_text(self) -> str:
        lines = [
            f"{e.seq} {e.direction} {e.frame.frame_type.name} {e.frame.payload.hex() or '-'}"
            for e in self.frames
        ]
        return "".join(line + "\n" for line in lines)

    @classmethod
    def from_text(cls, text: str) -> EveTap:
        tap = cls()
        for line in text.splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            seq, dirn, ftype, hexpl = line.split()
            payload = b"" if hexpl == "-" else bytes.fromhex(hexpl)
            if int(seq) != len(tap.frames):
                raise ValueError(f"tap sequence gap at {seq}")
            tap.frames.append(TapEntry(int(seq), dirn, WireFrame(FrameType[ftype], payload)))
        return tap

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def read(cls, path: str | Path) -> EveTap:
        return cls.from_text(Path(path).read_text())


class _QueueEnd:
    def __init__(self, side: str, outbox: queue.Queue, inbox: queue.Queue, tap: EveTap, timeout: float):
        self.side = side
        self._out = outbox
        self._in = inbox
        self._tap = tap
        self._timeout = timeout

    def send(self, frame: WireFrame) -> None:
        # record before enqueueing so tap order follows causality
        self._tap.record(self.side, frame)
        self._out.put(frame.encode())

    def recv(self) -> WireFrame:
        try:
            data = self._in.get(timeout=self._timeout)
        except queue.Empty:
            raise TransportError(f"{self.side}: no frame within {self._timeout}s") from None
        if data is None:
            raise TransportClosed(f"{self.side}: peer closed the link")
        return WireFrame.decode(data)

    def close(self) -> None:
        self._out.put(None)


class LocalLink:
    """Two queue-connected endpoints sharing one tap."""

    def __init__(self, tap: EveTap | None = None, timeout: float = RECV_TIMEOUT):
        self.tap = tap if tap is not None else EveTap()
        a_to_b: queue.Queue = queue.Queue()
        b_to_a: queue.Queue = queue.Queue()
        self.alice = _QueueEnd("A", a_to_b, b_to_a, self.tap, timeout)
        self.bob = _QueueEnd("B", b_to_a, a_to_b, self.tap, timeout)

    def endpoint(self, side: str) -> _QueueEnd:
        return self.alice if side == "A" else self.bob


class StreamTransport:
    """Frames over a connected stream socket.

    If a tap is given, both sent and received frames are recorded, so one
    tapped end sees the whole conversation of a strictly alternating protocol.
    """

    def __init__(self, sock: socket.socket, side: str, tap: EveTap | None = None):
        self.side = side
        self._sock = sock
        self._tap = tap
        self._peer = "B" if side == "A" else "A"

    def _read_exact(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            chunk = self._sock.recv(n - len(buf))
            if not chunk:
                raise TransportError(f"{self.side}: stream closed mid-frame")
            buf += chunk
        return bytes(buf)

    def send(self, frame: WireFrame) -> None:
        if self._tap is not None:
            self._tap.record(self.side, frame)
        try:
            self._sock.sendall(frame.encode())
        except OSError as exc:
            raise TransportError(str(exc)) from exc

    def recv(self) -> WireFrame:
        try:
            first = self._sock.recv(1)
            if not first:
                raise TransportClosed(f"{self.side}: peer closed the stream")
            head = first + self._read_exact(_HEADER.size - 1)
            _, length = _HEADER.unpack(head)
            frame = WireFrame.decode(head + self._read_exact(length))
        except OSError as exc:
            raise TransportError(str(exc)) from exc
        if self._tap is not None:
            self._tap.record(self._peer, frame)
        return frame

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_WR)
        except OSError:
            pass
