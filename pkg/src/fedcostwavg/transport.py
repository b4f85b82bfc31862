"""Wire protocol and transports between the coordinator and its clients.

Frame layout (all integers little-endian):

    magic   4 bytes   0x46 0x43 0x57 0x41 ("FCWA")
    version 1 byte    0x01
    type    1 byte    Join=0x01 GlobalModel=0x02 Update=0x03 Shutdown=0x04
    length  8 bytes   unsigned payload byte count
    payload           fields in declared order

Payload fields: integers are unsigned 64-bit little-endian, costs are IEEE-754
binary64 little-endian, and a parameter vector is its dimension (u64) followed
by that many binary64 values.

Two transports carry these frames and are interchangeable to the federation
layer: in-process byte channels (queues) and TCP sockets.  A session receives
frames for one peer; within a session, round numbers never decrease and the
parameter dimension never changes.
"""

from __future__ import annotations

import queue
import socket
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FrameError, OversizeError, ProtocolError

MAGIC = b"FCWA"
VERSION = 0x01

TYPE_JOIN = 0x01
TYPE_GLOBAL_MODEL = 0x02
TYPE_UPDATE = 0x03
TYPE_SHUTDOWN = 0x04

_HEADER = struct.Struct("<4sBBQ")
HEADER_SIZE = _HEADER.size

DEFAULT_MAX_PAYLOAD = 64 * 1024 * 1024

_U64_MAX = 2**64 - 1


@dataclass(frozen=True)
class Join:
    client_id: int
    sample_count: int


class GlobalModel:
    """Broadcast of the global model for one round."""

    __slots__ = ("round", "params")

    def __init__(self, round: int, params):
        self.round = int(round)
        self.params = np.asarray(params, dtype=np.float64)

    def __eq__(self, other):
        return (
            isinstance(other, GlobalModel)
            and self.round == other.round
            and np.array_equal(self.params, other.params)
        )

    def __repr__(self):
        return f"GlobalModel(round={self.round}, dim={self.params.shape[0]})"


class Update:
    """One client's trained parameters plus its sample count and cost."""

    __slots__ = ("round", "client_id", "sample_count", "cost", "params")

    def __init__(self, round: int, client_id: int, sample_count: int, cost: float, params):
        self.round = int(round)
        self.client_id = int(client_id)
        self.sample_count = int(sample_count)
        self.cost = float(cost)
        self.params = np.asarray(params, dtype=np.float64)

    def __eq__(self, other):
        return (
            isinstance(other, Update)
            and self.round == other.round
            and self.client_id == other.client_id
            and self.sample_count == other.sample_count
            and self.cost == other.cost
            and np.array_equal(self.params, other.params)
        )

    def __repr__(self):
        return (
            f"Update(round={self.round}, client_id={self.client_id}, "
            f"sample_count={self.sample_count}, cost={self.cost}, dim={self.params.shape[0]})"
        )


@dataclass(frozen=True)
class Shutdown:
    pass


Message = Join | GlobalModel | Update | Shutdown


def _pack_u64(value: int, what: str) -> bytes:
    if not 0 <= value <= _U64_MAX:
        raise ProtocolError(f"{what} out of u64 range: {value}")
    return struct.pack("<Q", value)


def _pack_params(params: np.ndarray) -> bytes:
    vec = np.ascontiguousarray(params, dtype="<f8")
    return _pack_u64(vec.shape[0], "dim") + vec.tobytes()


def encode(msg: Message) -> bytes:
    """Serialize a message into one self-delimiting frame."""
    if isinstance(msg, Join):
        mtype = TYPE_JOIN
        payload = _pack_u64(msg.client_id, "client_id") + _pack_u64(msg.sample_count, "sample_count")
    elif isinstance(msg, GlobalModel):
        mtype = TYPE_GLOBAL_MODEL
        payload = _pack_u64(msg.round, "round") + _pack_params(msg.params)
    elif isinstance(msg, Update):
        mtype = TYPE_UPDATE
        payload = (
            _pack_u64(msg.round, "round")
            + _pack_u64(msg.client_id, "client_id")
            + _pack_u64(msg.sample_count, "sample_count")
            + struct.pack("<d", msg.cost)
            + _pack_params(msg.params)
        )
    elif isinstance(msg, Shutdown):
        mtype = TYPE_SHUTDOWN
        payload = b""
    else:
        raise ProtocolError(f"cannot encode {type(msg).__name__}")
    return _HEADER.pack(MAGIC, VERSION, mtype, len(payload)) + payload


def _check_header(header: bytes, max_payload: int) -> tuple[int, int]:
    """Validate a raw header; returns (type, payload length)."""
    magic, version, mtype, length = _HEADER.unpack(header)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ProtocolError(f"unsupported protocol version {version}")
    if mtype not in (TYPE_JOIN, TYPE_GLOBAL_MODEL, TYPE_UPDATE, TYPE_SHUTDOWN):
        raise ProtocolError(f"unknown message type 0x{mtype:02x}")
    if length > max_payload:
        raise OversizeError(f"declared payload of {length} bytes exceeds cap of {max_payload}")
    return mtype, length


class _Reader:
    def __init__(self, buf: bytes, offset: int = 0):
        self.buf = buf
        self.pos = offset

    def take(self, k: int) -> bytes:
        if self.pos + k > len(self.buf):
            raise FrameError("payload shorter than its declared fields")
        out = self.buf[self.pos : self.pos + k]
        self.pos += k
        return out

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def params(self) -> np.ndarray:
        dim = self.u64()
        raw = self.take(8 * dim)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64)


def _decode_payload(mtype: int, payload: bytes) -> Message:
    r = _Reader(payload)
    if mtype == TYPE_JOIN:
        msg: Message = Join(r.u64(), r.u64())
    elif mtype == TYPE_GLOBAL_MODEL:
        msg = GlobalModel(r.u64(), r.params())
    elif mtype == TYPE_UPDATE:
        msg = Update(r.u64(), r.u64(), r.u64(), r.f64(), r.params())
    else:
        msg = Shutdown()
    if r.pos != len(payload):
        raise FrameError(f"{len(payload) - r.pos} trailing bytes in payload")
    return msg


def decode(frame: bytes, max_payload: int = DEFAULT_MAX_PAYLOAD) -> Message:
    """Parse exactly one complete frame."""
    if len(frame) < HEADER_SIZE:
        raise FrameError(f"frame of {len(frame)} bytes is shorter than the header")
    mtype, length = _check_header(frame[:HEADER_SIZE], max_payload)
    if len(frame) - HEADER_SIZE < length:
        raise FrameError("frame truncated: payload shorter than declared")
    if len(frame) - HEADER_SIZE > length:
        raise FrameError("frame has trailing bytes beyond declared payload")
    return _decode_payload(mtype, frame[HEADER_SIZE:])


def iter_frames(buf: bytes, max_payload: int = DEFAULT_MAX_PAYLOAD):
    """Decode a concatenation of frames in order."""
    pos = 0
    while pos < len(buf):
        if pos + HEADER_SIZE > len(buf):
            raise FrameError("trailing bytes shorter than a header")
        mtype, length = _check_header(buf[pos : pos + HEADER_SIZE], max_payload)
        if pos + HEADER_SIZE + length > len(buf):
            raise FrameError("frame truncated: payload shorter than declared")
        yield _decode_payload(mtype, buf[pos + HEADER_SIZE : pos + HEADER_SIZE + length])
        pos += HEADER_SIZE + length


def read_frame(read_exact, max_payload: int = DEFAULT_MAX_PAYLOAD) -> Message:
    """Read one frame from a stream.

    ``read_exact(k)`` must return exactly k bytes or raise FrameError.  The
    payload size is validated before any payload byte is read, so an
    oversized declaration never triggers a large allocation.
    """
    mtype, length = _check_header(read_exact(HEADER_SIZE), max_payload)
    return _decode_payload(mtype, read_exact(length))


class Session:
    """Ordered, reliable, complete-frame delivery to one peer.

    Subclasses move raw frames; this base enforces the per-session
    invariants on everything received.
    """

    def __init__(self, max_payload: int = DEFAULT_MAX_PAYLOAD):
        self.max_payload = max_payload
        self._last_round = 0
        self._dim: int | None = None

    def send(self, msg: Message) -> None:
        self._write(encode(msg))

    def receive(self) -> Message:
        msg = self._read_message()
        rnd = getattr(msg, "round", None)
        if rnd is not None:
            if rnd < self._last_round:
                raise ProtocolError(f"round went backwards: {rnd} after {self._last_round}")
            self._last_round = rnd
        params = getattr(msg, "params", None)
        if params is not None:
            if self._dim is None:
                self._dim = params.shape[0]
            elif params.shape[0] != self._dim:
                raise ProtocolError(
                    f"parameter dim changed within session: {params.shape[0]} != {self._dim}"
                )
        return msg

    def close(self) -> None:
        raise NotImplementedError

    def _write(self, frame: bytes) -> None:
        raise NotImplementedError

    def _read_message(self) -> Message:
        raise NotImplementedError


_CHANNEL_CLOSED = object()


class InprocSession(Session):
    """One endpoint of an in-process channel pair carrying encoded frames."""

    def __init__(self, inbox: queue.Queue, outbox: queue.Queue,
                 max_payload: int = DEFAULT_MAX_PAYLOAD, timeout: float | None = None):
        super().__init__(max_payload)
        self._inbox = inbox
        self._outbox = outbox
        self._timeout = timeout
        self._closed = False

    def _write(self, frame: bytes) -> None:
        if self._closed:
            raise FrameError("session is closed")
        self._outbox.put(frame)

    def _read_message(self) -> Message:
        try:
            frame = self._inbox.get(timeout=self._timeout)
        except queue.Empty:
            raise FrameError("receive timed out") from None
        if frame is _CHANNEL_CLOSED:
            raise FrameError("peer closed the channel")
        return decode(frame, self.max_payload)

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._outbox.put(_CHANNEL_CLOSED)


def inproc_pair(max_payload: int = DEFAULT_MAX_PAYLOAD,
                timeout: float | None = None) -> tuple[InprocSession, InprocSession]:
    """A connected (coordinator_side, client_side) session pair."""
    a: queue.Queue = queue.Queue()
    b: queue.Queue = queue.Queue()
    return (
        InprocSession(inbox=a, outbox=b, max_payload=max_payload, timeout=timeout),
        InprocSession(inbox=b, outbox=a, max_payload=max_payload, timeout=timeout),
    )


class TcpSession(Session):
    """Session over a connected TCP socket."""

    def __init__(self, sock: socket.socket, max_payload: int = DEFAULT_MAX_PAYLOAD):
        super().__init__(max_payload)
        self._sock = sock
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def _recv_exact(self, k: int) -> bytes:
        chunks = []
        got = 0
        while got < k:
            try:
                chunk = self._sock.recv(min(k - got, 1 << 20))
            except OSError as exc:
                raise FrameError(f"socket receive failed: {exc}") from exc
            if not chunk:
                raise FrameError("peer closed the connection")
            chunks.append(chunk)
            got += len(chunk)
        return b"".join(chunks)

    def _write(self, frame: bytes) -> None:
        try:
            self._sock.sendall(frame)
        except OSError as exc:
            raise FrameError(f"socket send failed: {exc}") from exc

    def _read_message(self) -> Message:
        # header is validated before the payload is read off the wire
        return read_frame(self._recv_exact, self.max_payload)

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


def connect(host: str, port: int, timeout: float = 30.0, retry_interval: float = 0.2,
            max_payload: int = DEFAULT_MAX_PAYLOAD) -> TcpSession:
    """Connect to a coordinator, retrying until *timeout* elapses."""
    import time

    deadline = time.monotonic() + timeout
    while True:
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
            sock.settimeout(None)
            return TcpSession(sock, max_payload)
        except OSError as exc:
            if time.monotonic() >= deadline:
                raise FrameError(f"could not connect to {host}:{port}: {exc}") from exc
            time.sleep(retry_interval)
