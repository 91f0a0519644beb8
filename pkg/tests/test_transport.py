import struct
import threading
import zlib

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from fedstgd.errors import (BadCRC, BadMagic, BadVersion, ConfigError, DecodeError, PayloadMismatch,
                            PeerClosed, ProtocolTimeout, Truncated)
from fedstgd.transport import (MsgType, ProtocolMessage, connect, decode, encode, frame_size,
                               memory_pair, tcp_pairs, wire_size)
from fedstgd.transport.codec import HEADER_SIZE

tensors = st.lists(arrays(np.float64, array_shapes(min_dims=1, max_dims=3, min_side=0, max_side=4),
                          elements=st.floats(allow_nan=True, allow_infinity=True)), max_size=3)
messages = st.builds(ProtocolMessage, st.sampled_from(list(MsgType)), st.integers(0, 2**32 - 1),
                     st.integers(0, 2**32 - 1), st.integers(0, 255), st.integers(0, 2**16 - 1),
                     tensors.map(tuple))


@given(messages)
def test_round_trip_is_bit_exact(msg):
    frame = encode(msg)
    assert decode(frame) == msg
    assert len(frame) == frame_size([t.shape for t in msg.tensors])


@given(messages, st.data())
def test_any_single_byte_change_is_rejected(msg, data):
    frame = bytearray(encode(msg))
    i = data.draw(st.integers(0, len(frame) - 1))
    frame[i] ^= data.draw(st.integers(1, 255))
    with pytest.raises(DecodeError):
        decode(bytes(frame))


@given(messages, st.data())
def test_truncation_is_rejected(msg, data):
    frame = encode(msg)
    cut = data.draw(st.integers(0, len(frame) - 1))
    with pytest.raises(DecodeError):
        decode(frame[:cut])


def test_layout_of_a_known_frame():
    msg = ProtocolMessage(MsgType.P_SUM, round=2, timestep=9, k=1, client_id=3,
                          tensors=(np.array([[1.5, -2.0]]),))
    frame = encode(msg)
    assert frame[:4] == b"FSTG" and frame[4] == 1 and frame[5] == MsgType.P_SUM
    assert struct.unpack_from("<IIBHH", frame, 6) == (2, 9, 1, 3, 1)
    assert frame[HEADER_SIZE] == 2
    assert struct.unpack_from("<II", frame, HEADER_SIZE + 1) == (1, 2)
    assert struct.unpack_from("<2d", frame, HEADER_SIZE + 9) == (1.5, -2.0)
    assert struct.unpack("<I", frame[-4:])[0] == zlib.crc32(frame[:-4])
    assert wire_size([(1, 2)]) == len(frame) + 4


def _recrc(body):
    return body + struct.pack("<I", zlib.crc32(body))


def test_typed_errors():
    frame = encode(ProtocolMessage(MsgType.STATS, tensors=(np.ones(1),)))
    body = frame[:-4]
    with pytest.raises(BadMagic):
        decode(b"XSTG" + frame[4:])
    with pytest.raises(BadVersion):
        decode(_recrc(body[:4] + b"\x02" + body[5:]))
    with pytest.raises(BadCRC):
        decode(body + b"\0\0\0\0")
    with pytest.raises(Truncated):
        decode(frame[:10])
    with pytest.raises(PayloadMismatch):
        decode(_recrc(body[:HEADER_SIZE] + b"\x07" + body[HEADER_SIZE + 1:]))
    with pytest.raises(PayloadMismatch):
        decode(_recrc(body[:5] + b"\x63" + body[6:]))  # unknown message type
    with pytest.raises(PayloadMismatch):
        decode(frame + b"\0")
    with pytest.raises(PayloadMismatch):
        encode(ProtocolMessage(MsgType.STATS, tensors=(np.ones((1, 1, 1, 1)),)))


def test_message_equality_is_bitwise():
    a = ProtocolMessage(MsgType.STATS, tensors=(np.array([0.0]),))
    b = ProtocolMessage(MsgType.STATS, tensors=(np.array([-0.0]),))
    c = ProtocolMessage(MsgType.STATS, tensors=(np.array([np.nan]),))
    assert a != b
    assert c == decode(encode(c))


@pytest.mark.parametrize("kind", ["memory", "tcp"])
def test_fifo_and_byte_counters(kind):
    server, client = connect(kind, 1, timeout=5)
    msgs = [ProtocolMessage(MsgType.P_SHARE, round=i, tensors=(np.full((2, 3), i),))
            for i in range(20)]
    sent = sum(client[0].send(m) for m in msgs)
    got = [server[0].recv() for _ in msgs]
    assert got == msgs
    assert sent == server[0].bytes_recv == client[0].bytes_sent == 20 * wire_size([(2, 3)])
    assert server[0].msgs_recv == 20
    for ep in server + client:
        ep.close()


def test_memory_recv_timeout():
    a, b = memory_pair(timeout=0)
    with pytest.raises(ProtocolTimeout):
        a.recv()


def test_tcp_recv_timeout():
    server, client = tcp_pairs(1, timeout=0.05)
    try:
        with pytest.raises(ProtocolTimeout):
            server[0].recv()
    finally:
        for ep in server + client:
            ep.close()


@pytest.mark.parametrize("kind", ["memory", "tcp"])
def test_peer_closed(kind):
    server, client = connect(kind, 1, timeout=5)
    client[0].close()
    with pytest.raises(PeerClosed):
        server[0].recv()
    with pytest.raises(PeerClosed):
        server[0].recv()  # stays closed
    server[0].close()


def test_tap_sees_every_frame():
    a, b = memory_pair(timeout=1)
    seen = []
    a.tap = lambda d, f: seen.append((d, len(f)))
    b.tap = lambda d, f: seen.append((d, len(f)))
    msg = ProtocolMessage(MsgType.STATS, tensors=(np.ones(1),))
    a.send(msg)
    b.recv()
    assert [d for d, _ in seen] == ["send", "recv"]
    assert seen[0][1] == seen[1][1] == len(encode(msg))


def test_tcp_clients_map_to_their_own_server_endpoint():
    server, client = tcp_pairs(3, timeout=5)
    try:
        threads = [threading.Thread(target=client[i].send,
                                    args=(ProtocolMessage(MsgType.STATS, client_id=i,
                                                          tensors=(np.ones(1),)),))
                   for i in range(3)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert [server[i].recv().client_id for i in range(3)] == [0, 1, 2]
    finally:
        for ep in server + client:
            ep.close()


def test_unknown_transport():
    with pytest.raises(ConfigError):
        connect("carrier-pigeon", 2)
