import socket
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ra3c.distributed.protocol import (MAX_PAYLOAD, Act, Hello, ObsPayload, Params, ProtocolError, PushGrads, Tag,
                                       decode, encode, obs_payload_size, read_message, write_message)

from golden import GOLDEN, OBS_SHAPE, fixture_bytes


@pytest.mark.parametrize("name", sorted(GOLDEN))
def test_encoding_matches_golden_file(name):
    assert encode(GOLDEN[name]) == fixture_bytes(name)


@pytest.mark.parametrize("name", sorted(GOLDEN))
def test_golden_file_decodes_to_message(name):
    assert decode(fixture_bytes(name), OBS_SHAPE) == GOLDEN[name]


def test_every_tag_has_a_golden_file():
    assert {fixture_bytes(n)[4] for n in GOLDEN} == {int(t) for t in Tag}


def test_act_framing_bytes():
    assert encode(Act(13)) == bytes([0x02, 0, 0, 0, Tag.ACT, 0x0D])


def test_obs_length_formula():
    h, w = 5, 7
    assert obs_payload_size(h, w) == 8 + h * w * 3 + 21
    msg = ObsPayload(1, 2, np.zeros((h, w, 3), np.uint8), 0, 0, 0, 0, 0)
    assert len(encode(msg)) == 4 + 1 + obs_payload_size(h, w)


_f32 = st.floats(-1e6, 1e6, width=32)


@settings(max_examples=60)
@given(st.integers(8, 20), st.integers(8, 20), st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1),
       _f32, _f32, _f32, _f32, st.floats(0, 1, width=32), st.integers(0, 255), st.integers(0, 2**31))
def test_obs_roundtrip(h, w, ep, step, v, a, d, rw, prog, flags, seed):
    frame = np.random.default_rng(seed).integers(0, 256, (h, w, 3), dtype=np.uint8)
    msg = ObsPayload(ep, step, frame, v, a, d, rw, prog, flags)
    assert decode(encode(msg), (h, w)) == msg


@settings(max_examples=40)
@given(st.integers(0, 2**64 - 1), st.lists(_f32, max_size=50), st.booleans())
def test_vector_roundtrip(version, values, push):
    vec = np.array(values, np.float32)
    msg = PushGrads(version, vec) if push else Params(version, vec)
    assert decode(encode(msg)) == msg


@given(st.integers(0, 65535), st.integers(0, 65535), st.integers(0, 65535), st.integers(0, 65535),
       st.floats(0, 1e5, width=32))
def test_hello_roundtrip(h, w, t, c, length):
    assert decode(encode(Hello(h, w, t, c, length))) == Hello(h, w, t, c, length)


def test_unknown_tag_rejected():
    with pytest.raises(ProtocolError, match="tag"):
        decode(struct.pack("<I", 1) + bytes([99]))


@pytest.mark.parametrize("name", ["reset", "act", "ack", "hello", "params", "obs"])
def test_truncated_payload_rejected(name):
    data = fixture_bytes(name)
    body = data[4:-1]
    with pytest.raises(ProtocolError):
        decode(struct.pack("<I", len(body)) + body, OBS_SHAPE)


def test_length_mismatch_rejected():
    data = fixture_bytes("act")
    with pytest.raises(ProtocolError):
        decode(data + b"\x00")
    with pytest.raises(ProtocolError):
        decode(data[:-1])


def test_obs_needs_negotiated_shape():
    with pytest.raises(ProtocolError, match="negotiated"):
        decode(fixture_bytes("obs"))


def test_vector_count_must_match_payload():
    data = bytearray(fixture_bytes("params"))
    data[13] = 5  # count says 5 floats, payload carries 4
    with pytest.raises(ProtocolError):
        decode(bytes(data))


def test_out_of_range_field_rejected():
    with pytest.raises(ProtocolError):
        encode(Act(300))


def test_oversized_frame_rejected_before_reading_body():
    a, b = socket.socketpair()
    try:
        a.sendall(struct.pack("<I", MAX_PAYLOAD + 2) + bytes([Tag.PARAMS]))
        with pytest.raises(ProtocolError, match="16 MiB"):
            read_message(b)
    finally:
        a.close()
        b.close()


def test_socket_roundtrip():
    a, b = socket.socketpair()
    try:
        for name, msg in GOLDEN.items():
            write_message(a, msg)
            assert read_message(b, OBS_SHAPE) == msg
    finally:
        a.close()
        b.close()


def test_peer_close_is_connection_error():
    a, b = socket.socketpair()
    a.sendall(b"\x05\x00")
    a.close()
    with pytest.raises(ConnectionError):
        read_message(b)
    b.close()
