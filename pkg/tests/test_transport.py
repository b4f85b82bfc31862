import socket
import struct
import threading

import numpy as np
import pytest

from fedcostwavg.errors import FrameError, OversizeError, ProtocolError
from fedcostwavg.transport import (
    DEFAULT_MAX_PAYLOAD,
    HEADER_SIZE,
    MAGIC,
    GlobalModel,
    Join,
    Shutdown,
    TcpSession,
    Update,
    decode,
    encode,
    inproc_pair,
    iter_frames,
    read_frame,
)


def random_message(rng, dim=None):
    if dim is None:
        dim = int(rng.integers(0, 40))
    kind = int(rng.integers(0, 4))
    if kind == 0:
        return Join(int(rng.integers(0, 2**32)), int(rng.integers(1, 2**32)))
    if kind == 1:
        return GlobalModel(int(rng.integers(0, 1000)), rng.standard_normal(dim))
    if kind == 2:
        return Update(
            int(rng.integers(0, 1000)),
            int(rng.integers(0, 100)),
            int(rng.integers(1, 10**6)),
            float(10.0 ** rng.uniform(-6, 6)),
            rng.standard_normal(dim),
        )
    return Shutdown()


# --- frame layout ---

def test_shutdown_frame_is_exactly_14_bytes():
    frame = encode(Shutdown())
    assert len(frame) == 14 == HEADER_SIZE
    assert frame[:4] == b"FCWA" == MAGIC
    assert frame[4] == 0x01  # version
    assert frame[5] == 0x04  # type
    assert frame[6:] == b"\x00" * 8


def test_global_model_payload_length():
    frame = encode(GlobalModel(0, np.array([1.0])))
    assert len(frame) == HEADER_SIZE + 24  # round + dim + one value
    declared = struct.unpack("<Q", frame[6:14])[0]
    assert declared == 24


def test_update_field_order_on_the_wire():
    msg = Update(3, 7, 11, 2.5, np.array([1.0, -2.0]))
    payload = encode(msg)[HEADER_SIZE:]
    assert struct.unpack("<QQQ", payload[:24]) == (3, 7, 11)
    assert struct.unpack("<d", payload[24:32]) == (2.5,)
    assert struct.unpack("<Q", payload[32:40]) == (2,)
    assert np.array_equal(np.frombuffer(payload[40:], dtype="<f8"), [1.0, -2.0])


# --- roundtrip ---

def test_roundtrip_randomized_messages():
    rng = np.random.default_rng(23)
    for _ in range(500):
        msg = random_message(rng)
        assert decode(encode(msg)) == msg


def test_roundtrip_dim_zero():
    msg = GlobalModel(5, np.empty(0))
    out = decode(encode(msg))
    assert out == msg and out.params.shape == (0,)


# --- error cases ---

def test_corrupt_magic():
    frame = bytearray(encode(Shutdown()))
    frame[0] ^= 0xFF
    with pytest.raises(ProtocolError):
        decode(bytes(frame))


def test_bad_version():
    frame = bytearray(encode(Shutdown()))
    frame[4] = 0x02
    with pytest.raises(ProtocolError):
        decode(bytes(frame))


def test_unknown_type():
    frame = bytearray(encode(Shutdown()))
    frame[5] = 0x09
    with pytest.raises(ProtocolError):
        decode(bytes(frame))


def test_truncated_frame():
    frame = encode(GlobalModel(1, np.array([1.0, 2.0])))
    with pytest.raises(FrameError):
        decode(frame[:-4])


def test_truncated_header():
    with pytest.raises(FrameError):
        decode(encode(Shutdown())[:7])


def test_trailing_bytes_rejected():
    with pytest.raises(FrameError):
        decode(encode(Shutdown()) + b"x")


def test_inconsistent_inner_dim():
    # declare a 2-entry vector but ship only one value
    payload = struct.pack("<QQ", 0, 2) + struct.pack("<d", 1.0)
    frame = struct.pack("<4sBBQ", MAGIC, 1, 2, len(payload)) + payload
    with pytest.raises(FrameError):
        decode(frame)


def test_oversize_declared_length():
    frame = struct.pack("<4sBBQ", MAGIC, 1, 2, DEFAULT_MAX_PAYLOAD + 1)
    with pytest.raises(OversizeError):
        decode(frame)


def test_oversize_detected_before_payload_read():
    header = struct.pack("<4sBBQ", MAGIC, 1, 2, 1 << 40)
    reads = []

    def reader(k):
        reads.append(k)
        assert k == HEADER_SIZE, "payload must not be requested"
        return header

    with pytest.raises(OversizeError):
        read_frame(reader)
    assert reads == [HEADER_SIZE]


def test_negative_field_rejected_on_encode():
    with pytest.raises(ProtocolError):
        encode(GlobalModel(-1, np.array([1.0])))


# --- self-delimiting streams ---

def test_concatenated_frames_decode_in_order():
    rng = np.random.default_rng(31)
    msgs = [random_message(rng) for _ in range(20)]
    blob = b"".join(encode(m) for m in msgs)
    assert list(iter_frames(blob)) == msgs


def test_concatenated_stream_with_partial_tail():
    blob = encode(Shutdown()) + encode(Shutdown())[:5]
    with pytest.raises(FrameError):
        list(iter_frames(blob))


# --- in-process sessions ---

def test_inproc_pair_roundtrip():
    a, b = inproc_pair()
    msg = Update(1, 0, 10, 0.5, np.array([1.0, 2.0]))
    a.send(GlobalModel(1, np.array([0.0, 0.0])))
    assert b.receive() == GlobalModel(1, np.array([0.0, 0.0]))
    b.send(msg)
    assert a.receive() == msg


def test_inproc_close_surfaces_as_frame_error():
    a, b = inproc_pair()
    b.close()
    with pytest.raises(FrameError):
        a.receive()


def test_session_rejects_round_regression():
    a, b = inproc_pair()
    a.send(GlobalModel(5, np.array([1.0])))
    a.send(GlobalModel(4, np.array([1.0])))
    b.receive()
    with pytest.raises(ProtocolError):
        b.receive()


def test_session_rejects_dim_change():
    a, b = inproc_pair()
    a.send(GlobalModel(1, np.array([1.0])))
    a.send(GlobalModel(2, np.array([1.0, 2.0])))
    b.receive()
    with pytest.raises(ProtocolError):
        b.receive()


# --- TCP sessions ---

def tcp_session_pair():
    srv = socket.socket()
    srv.bind(("127.0.0.1", 0))
    srv.listen(1)
    port = srv.getsockname()[1]
    result = {}

    def accept():
        conn, _ = srv.accept()
        result["server"] = TcpSession(conn)

    t = threading.Thread(target=accept)
    t.start()
    client = TcpSession(socket.create_connection(("127.0.0.1", port)))
    t.join()
    srv.close()
    return result["server"], client


def test_tcp_roundtrip_and_ordering():
    server, client = tcp_session_pair()
    try:
        rng = np.random.default_rng(3)
        msgs = [Join(0, 5)] + [
            Update(r, 0, 5, float(rng.uniform(0.1, 2)), rng.standard_normal(6))
            for r in range(1, 6)
        ]
        for m in msgs:
            client.send(m)
        for m in msgs:
            assert server.receive() == m
    finally:
        server.close()
        client.close()


def test_tcp_disconnect_mid_round_is_frame_error():
    server, client = tcp_session_pair()
    client.close()
    with pytest.raises(FrameError):
        server.receive()
    server.close()
