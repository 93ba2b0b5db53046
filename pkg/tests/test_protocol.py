import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from feakm.protocol import (
    HEADER_SIZE,
    BadMagicError,
    CollabMessage,
    InvalidPayloadError,
    PayloadOverflowError,
    TrailingBytesError,
    TruncatedPayloadError,
    UnsupportedVersionError,
    bandwidth_report,
    decode_message,
    encode_message,
    message_length,
    read_message,
    write_message,
)


def make_message(n, d, seed=0, agent=1):
    rng = np.random.default_rng(seed)
    desc = rng.standard_normal((n, d))
    if n:
        desc /= np.linalg.norm(desc, axis=1, keepdims=True)
    return CollabMessage(agent, tuple(rng.normal(size=6)), rng.uniform(0, 300, (n, 2)), rng.random(n), desc)


def test_header_and_lengths():
    assert HEADER_SIZE == 63
    assert len(encode_message(make_message(0, 64))) == 63
    assert message_length(128, 64) == 34367
    assert len(encode_message(make_message(128, 64))) == 34367


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 40), st.integers(1, 32), st.integers(0, 2 ** 32 - 1), st.integers(0, 2 ** 31))
def test_round_trip_bit_exact(n, d, agent, seed):
    m = make_message(n, d, seed, agent)
    buf = encode_message(m)
    assert len(buf) == message_length(n, d)
    assert decode_message(buf) == m
    assert encode_message(decode_message(buf)) == buf


def test_file_round_trip(tmp_path):
    m = make_message(5, 8)
    write_message(tmp_path / "a.fkm", m)
    assert read_message(tmp_path / "a.fkm") == m


def test_malformed_inputs_raise_named_errors():
    buf = encode_message(make_message(4, 8))
    with pytest.raises(BadMagicError):
        decode_message(b"XXXX" + buf[4:])
    with pytest.raises(UnsupportedVersionError):
        decode_message(buf[:4] + bytes([2]) + buf[5:])
    with pytest.raises(TruncatedPayloadError):
        decode_message(buf[:-1])
    with pytest.raises(TruncatedPayloadError):
        decode_message(buf[:20])
    with pytest.raises(TrailingBytesError):
        decode_message(buf + b"\0")
    huge = bytearray(buf)
    struct.pack_into("<IH", huge, 57, 2 ** 32 - 1, 2 ** 16 - 1)
    with pytest.raises(PayloadOverflowError):
        decode_message(bytes(huge))
    bad = bytearray(buf)
    # first descriptor component; breaks its unit norm
    struct.pack_into("<f", bad, HEADER_SIZE + 4 * 12, 7.0)
    with pytest.raises(InvalidPayloadError):
        decode_message(bytes(bad))


def test_invalid_messages_are_not_encoded():
    m = make_message(2, 4)
    m.descriptors[0] *= 2
    with pytest.raises(InvalidPayloadError):
        encode_message(m)
    with pytest.raises(InvalidPayloadError):
        CollabMessage(0, (0,) * 6, np.zeros((2, 2)), np.zeros(2), np.zeros((3, 4)))
    with pytest.raises(UnsupportedVersionError):
        encode_message(CollabMessage(0, (0,) * 6, np.zeros((0, 2)), np.zeros(0), np.zeros((0, 4)), version=9))


def test_bandwidth_report():
    msgs = [make_message(10, 16, agent=1), make_message(3, 16, agent=2), make_message(0, 16, agent=2)]
    rep = bandwidth_report(msgs)
    assert rep["per_agent"] == {1: message_length(10, 16), 2: message_length(3, 16) + 63}
    assert rep["total"] == sum(len(encode_message(m)) for m in msgs)
