import pytest
from conftest import frames
from hypothesis import given, settings
from hypothesis import strategies as st

from touchlink_lab import wire
from touchlink_lab.wire import (
    AckFrame,
    ClusterCommand,
    IdentifyRequest,
    InterPanFrame,
    MacHeader,
    ScanRequest,
    ScanResponse,
    decode_frame,
    encode_frame,
)

ZERO_HEADER = MacHeader(sequence_number=0, src_pan=0, dst_pan=0, src_short=0, dst_short=0)


def test_scan_request_hand_encoded():
    # len=16 kind flags(dst_short|src_short) seq dst_pan dst_short src_pan src_short cmd tid
    expected = bytes.fromhex("10" "01" "0a" "00" "0000" "0000" "0000" "0000" "00" "01000000")
    assert encode_frame(InterPanFrame(ZERO_HEADER, ScanRequest(1))) == expected


def test_identify_duration_little_endian():
    raw = encode_frame(InterPanFrame(ZERO_HEADER, IdentifyRequest(1, 0xFFFE)))
    assert raw.endswith(bytes.fromhex("01000000" "feff"))
    assert raw[-7] == IdentifyRequest.command_id


def test_extended_addresses_and_ack_flag():
    h = MacHeader(sequence_number=7, src_pan=0xFFFF, dst_pan=0xFFFF, src_extended=0x0102030405060708,
                  dst_extended=0x1112131415161718, ack_requested=True)
    raw = encode_frame(InterPanFrame(h, ScanRequest(0xA1B2C3D4)))
    assert raw.hex() == (
        "1c" "01" "15" "07" "ffff" "1817161514131211" "ffff" "0807060504030201" "00" "d4c3b2a1"
    )


def test_ack_frame():
    assert encode_frame(AckFrame(0x42)) == bytes([2, 3, 0x42])
    assert decode_frame(b"\x02\x03\x42") == AckFrame(0x42)


def test_scan_response_layout():
    rsp = ScanResponse(1, 2, wire.KEY_BIT_MASTER, 3, 15, 0x1A2B, 0x0002, 0x1122334455667788, True, 1)
    raw = encode_frame(InterPanFrame(ZERO_HEADER, rsp))
    payload = raw[1 + 1 + 10:]
    assert payload.hex() == (
        "01" "01000000" "02000000" "1000" "03" "0f" "2b1a" "0200" "8877665544332211" "01" "01"
    )


@given(frames)
@settings(max_examples=400)
def test_round_trip(frame):
    assert decode_frame(encode_frame(frame)) == frame


@given(frames, frames)
@settings(max_examples=400)
def test_encoding_is_injective(a, b):
    if a != b:
        assert encode_frame(a) != encode_frame(b)


@given(st.binary(max_size=1024))
@settings(max_examples=2000)
def test_decoder_is_total(data):
    try:
        frame = decode_frame(data)
    except wire.DecodeError as exc:
        assert 0 <= exc.offset <= len(data)
        return
    again = encode_frame(frame)
    assert data[:len(again)] == again


@given(st.binary(min_size=64, max_size=64))
@settings(max_examples=1000)
def test_fuzz_64_byte_strings(data):
    try:
        frame = decode_frame(data)
    except wire.DecodeError:
        return
    assert data.startswith(encode_frame(frame))


@given(frames, st.binary(max_size=16))
def test_trailing_bytes_beyond_length_are_ignored(frame, junk):
    raw = encode_frame(frame)
    assert decode_frame(raw + junk) == frame


def test_empty_input_is_truncated():
    with pytest.raises(wire.Truncated) as err:
        decode_frame(b"")
    assert err.value.offset == 0


def test_truncated_body():
    raw = encode_frame(InterPanFrame(ZERO_HEADER, ScanRequest(1)))
    with pytest.raises(wire.Truncated):
        decode_frame(raw[:-1])
    short = bytes([len(raw) - 2]) + raw[1:-1]
    with pytest.raises(wire.Truncated) as err:
        decode_frame(short)
    assert err.value.offset == len(short) - 3


def test_unknown_command_tag_offset():
    raw = bytearray(encode_frame(InterPanFrame(ZERO_HEADER, ScanRequest(1))))
    raw[12] = 0x99
    with pytest.raises(wire.UnknownCommandTag) as err:
        decode_frame(bytes(raw))
    assert err.value.offset == 12


def test_unknown_frame_kind():
    with pytest.raises(wire.UnknownCommandTag) as err:
        decode_frame(b"\x02\x09\x00")
    assert err.value.offset == 1


def test_channel_out_of_range_on_decode():
    rsp = ScanResponse(1, 2, 0, 0, 26, 0, 0, 0, False, 1)
    raw = bytearray(encode_frame(InterPanFrame(ZERO_HEADER, rsp)))
    at = 1 + 1 + 10 + 1 + 4 + 4 + 2 + 1
    assert raw[at] == 26
    raw[at] = 27
    with pytest.raises(wire.FieldOutOfRange) as err:
        decode_frame(bytes(raw))
    assert err.value.offset == at


def test_zero_transaction_id_rejected_on_decode():
    raw = bytearray(encode_frame(InterPanFrame(ZERO_HEADER, ScanRequest(1))))
    raw[13] = 0
    with pytest.raises(wire.FieldOutOfRange):
        decode_frame(bytes(raw))


def test_reserved_flags_and_bad_bool():
    raw = bytearray(encode_frame(InterPanFrame(ZERO_HEADER, ScanRequest(1))))
    raw[2] |= 0x80
    with pytest.raises(wire.FieldOutOfRange):
        decode_frame(bytes(raw))
    rsp = encode_frame(InterPanFrame(ZERO_HEADER, ScanResponse(1, 2, 0, 0, 11, 0, 0, 0, True, 1)))
    bad = bytearray(rsp)
    bad[-2] = 2
    with pytest.raises(wire.FieldOutOfRange):
        decode_frame(bytes(bad))


def test_trailing_bytes_inside_declared_length():
    raw = encode_frame(InterPanFrame(ZERO_HEADER, ScanRequest(1)))
    padded = bytes([raw[0] + 1]) + raw[1:] + b"\x00"
    with pytest.raises(wire.FieldOutOfRange):
        decode_frame(padded)


@pytest.mark.parametrize(
    "frame",
    [
        InterPanFrame(ZERO_HEADER, ScanRequest(0)),
        InterPanFrame(ZERO_HEADER, wire.NetworkUpdateRequest(1, 0, 1, 27, 0, 0)),
        InterPanFrame(ZERO_HEADER, wire.NetworkUpdateRequest(1, 0, 1, 10, 0, 0)),
        InterPanFrame(ZERO_HEADER, IdentifyRequest(1, 0x10000)),
        InterPanFrame(MacHeader(sequence_number=256, src_short=0, dst_short=0), ScanRequest(1)),
        InterPanFrame(MacHeader(dst_short=0), ScanRequest(1)),
        InterPanFrame(MacHeader(src_short=0), ScanRequest(1)),
        InterPanFrame(ZERO_HEADER, wire.NetworkStartRequest(1, 0, 4, b"short", 11, 0)),
        AckFrame(-1),
    ],
)
def test_encoder_invariants(frame):
    with pytest.raises(wire.InvariantViolation):
        encode_frame(frame)


@pytest.mark.parametrize("counter, expected", [(0, 1), (41, 42), (254, 255), (255, 0)])
def test_next_sequence(counter, expected):
    assert wire.next_sequence(counter) == expected


@given(st.integers(0, 255))
def test_next_sequence_wraps_mod_256(n):
    assert wire.next_sequence(n) == (n + 1) % 256


def test_hexdump_round_trip():
    raw = encode_frame(AckFrame(9))
    line = wire.format_hexdump(1234, 15, -41.26, raw)
    assert line == "1234 15 -41.3 020309"
    assert wire.parse_hexdump(line) == (1234, 15, -41.3, raw)


@pytest.mark.parametrize(
    "cmd, hex_",
    [
        (ClusterCommand("off"), "060000"),
        (ClusterCommand("on"), "060001"),
        (ClusterCommand("toggle"), "060002"),
        (ClusterCommand("level", 0x80), "08000080"),
        (ClusterCommand("color", 0xBEEF), "000340efbe"),
    ],
)
def test_cluster_commands(cmd, hex_):
    assert wire.encode_cluster_command(cmd).hex() == hex_
    assert wire.decode_cluster_command(bytes.fromhex(hex_)) == cmd


def test_cluster_command_errors():
    with pytest.raises(wire.InvariantViolation):
        wire.encode_cluster_command(ClusterCommand("dim"))
    with pytest.raises(wire.InvariantViolation):
        wire.encode_cluster_command(ClusterCommand("on", 1))
    with pytest.raises(wire.UnknownCommandTag):
        wire.decode_cluster_command(bytes.fromhex("060009"))
    with pytest.raises(wire.Truncated):
        wire.decode_cluster_command(bytes.fromhex("0800"))


def test_airtime():
    assert wire.airtime_us(bytes(10)) == 320
