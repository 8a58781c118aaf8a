"""Frame codec for the touchlink-lab wire format v1.

All multi-byte integers are little-endian. Every frame starts with a
one-byte length giving the number of bytes that follow it.

Common prefix
=============
| Offset | Size | Field | Notes                                          |
|--------|------|-------|------------------------------------------------|
| 0      | 1    | len   | bytes following this one (2..255)              |
| 1      | 1    | kind  | 0x01 inter-PAN touchlink, 0x02 secured NWK, 0x03 ACK |

ACK (kind 0x03): one byte sequence number, nothing else (len == 2).

MAC header (kinds 0x01, 0x02)
=============================
| Size | Field        | Present when             |
|------|--------------|--------------------------|
| 1    | flags        | always                   |
| 1    | sequence     | always                   |
| 2    | dst_pan      | always                   |
| 2    | dst_short    | flags bit 1              |
| 8    | dst_extended | flags bit 2              |
| 2    | src_pan      | always                   |
| 2    | src_short    | flags bit 3              |
| 8    | src_extended | flags bit 4              |

flags bit 0 is ack_requested; bits 5-7 must be zero.

Inter-PAN payload: command id (1 byte) followed by the command fields in
declaration order (see ``COMMAND_LAYOUTS``). Booleans are one byte, 0 or 1.
Encrypted network keys are 16 raw bytes. DeviceInfoResponse carries a
record count byte followed by 13-byte records (ieee u64, endpoint u8,
profile_id u16, device_id u16).

Secured NWK payload: dst_short u16, src_short u16, frame_counter u32,
endpoint u8, ciphertext (remaining bytes minus 4), mic u32.

The decrypted NWK payload is a cluster command: cluster id u16, command
id u8, then arguments (level: u8, color: hue u16, on/off/toggle: none).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields
from typing import ClassVar, Union

BROADCAST_SHORT = 0xFFFF
BROADCAST_PAN = 0xFFFF
BROADCAST_ENDPOINT = 0xFF
CHANNELS = range(11, 27)
PRIMARY_CHANNELS = (11, 15, 20, 25)

KIND_INTER_PAN = 0x01
KIND_SECURED_NWK = 0x02
KIND_ACK = 0x03

KEY_BIT_DEVELOPMENT = 1 << 0
KEY_BIT_MASTER = 1 << 4

IDENTIFY_STOP = 0x0000
IDENTIFY_DEFAULT = 0xFFFF

AIRTIME_US_PER_BYTE = 32

_FLAG_ACK = 0x01
_FLAG_DST_SHORT = 0x02
_FLAG_DST_EXT = 0x04
_FLAG_SRC_SHORT = 0x08
_FLAG_SRC_EXT = 0x10
_FLAG_RESERVED = 0xE0


class WireError(Exception):
    pass


class InvariantViolation(WireError, ValueError):
    """A frame handed to the encoder breaks one of its field constraints."""


class DecodeError(WireError):
    """Malformed input. ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class Truncated(DecodeError):
    pass


class UnknownCommandTag(DecodeError):
    pass


class FieldOutOfRange(DecodeError):
    pass


def next_sequence(counter: int) -> int:
    return (counter + 1) % 256


def airtime_us(data: bytes) -> int:
    return AIRTIME_US_PER_BYTE * len(data)


# --------------------------------------------------------------------------
# Frame types


@dataclass(frozen=True)
class MacHeader:
    sequence_number: int = 0
    src_pan: int = 0
    dst_pan: int = 0
    src_short: int | None = None
    dst_short: int | None = None
    src_extended: int | None = None
    dst_extended: int | None = None
    ack_requested: bool = False

    @property
    def is_broadcast(self) -> bool:
        return self.dst_short == BROADCAST_SHORT


@dataclass(frozen=True)
class SubDeviceRecord:
    ieee: int
    endpoint: int
    profile_id: int
    device_id: int


@dataclass(frozen=True)
class ScanRequest:
    command_id: ClassVar[int] = 0x00
    transaction_id: int


@dataclass(frozen=True)
class ScanResponse:
    command_id: ClassVar[int] = 0x01
    transaction_id: int
    response_id: int
    key_bitmask: int
    network_update_id: int
    channel: int
    pan_id: int
    short_addr: int
    extended_pan_id: int
    factory_new: bool
    sub_device_count: int


@dataclass(frozen=True)
class DeviceInfoRequest:
    command_id: ClassVar[int] = 0x02
    transaction_id: int


@dataclass(frozen=True)
class DeviceInfoResponse:
    command_id: ClassVar[int] = 0x03
    transaction_id: int
    sub_device_records: tuple[SubDeviceRecord, ...] = ()


@dataclass(frozen=True)
class IdentifyRequest:
    command_id: ClassVar[int] = 0x06
    transaction_id: int
    duration: int


@dataclass(frozen=True)
class ResetToFactoryNewRequest:
    command_id: ClassVar[int] = 0x07
    transaction_id: int


@dataclass(frozen=True)
class NetworkStartRequest:
    command_id: ClassVar[int] = 0x10
    transaction_id: int
    extended_pan_id: int
    key_index: int
    encrypted_network_key: bytes
    channel: int
    pan_id: int


@dataclass(frozen=True)
class NetworkJoinEndDeviceRequest:
    command_id: ClassVar[int] = 0x14
    transaction_id: int
    extended_pan_id: int
    key_index: int
    encrypted_network_key: bytes
    channel: int
    pan_id: int
    network_update_id: int
    assigned_short_addr: int


@dataclass(frozen=True)
class NetworkJoinEndDeviceResponse:
    command_id: ClassVar[int] = 0x15
    transaction_id: int
    status: int = 0


@dataclass(frozen=True)
class NetworkUpdateRequest:
    command_id: ClassVar[int] = 0x16
    transaction_id: int
    extended_pan_id: int
    network_update_id: int
    channel: int
    pan_id: int
    short_addr: int


TouchlinkCommand = Union[
    ScanRequest,
    ScanResponse,
    DeviceInfoRequest,
    DeviceInfoResponse,
    IdentifyRequest,
    ResetToFactoryNewRequest,
    NetworkStartRequest,
    NetworkJoinEndDeviceRequest,
    NetworkJoinEndDeviceResponse,
    NetworkUpdateRequest,
]

COMMAND_TYPES: dict[int, type] = {
    cls.command_id: cls
    for cls in (
        ScanRequest,
        ScanResponse,
        DeviceInfoRequest,
        DeviceInfoResponse,
        IdentifyRequest,
        ResetToFactoryNewRequest,
        NetworkStartRequest,
        NetworkJoinEndDeviceRequest,
        NetworkJoinEndDeviceResponse,
        NetworkUpdateRequest,
    )
}

# field name -> struct code; "key" is 16 raw bytes, "bool" one byte 0/1
_FIELD_CODES = {
    "transaction_id": "I",
    "response_id": "I",
    "key_bitmask": "H",
    "network_update_id": "B",
    "channel": "B",
    "pan_id": "H",
    "extended_pan_id": "Q",
    "factory_new": "bool",
    "sub_device_count": "B",
    "duration": "H",
    "key_index": "B",
    "encrypted_network_key": "key",
    "assigned_short_addr": "H",
    "short_addr": "H",
    "status": "B",
}

COMMAND_LAYOUTS: dict[type, tuple[str, ...]] = {
    cls: tuple(f.name for f in fields(cls) if f.name != "sub_device_records")
    for cls in COMMAND_TYPES.values()
}


@dataclass(frozen=True)
class InterPanFrame:
    header: MacHeader
    command: TouchlinkCommand

    kind: ClassVar[int] = KIND_INTER_PAN


@dataclass(frozen=True)
class SecuredNwkFrame:
    header: MacHeader
    src_short: int
    dst_short: int
    frame_counter: int
    endpoint: int
    ciphertext: bytes
    mic: int

    kind: ClassVar[int] = KIND_SECURED_NWK

    def aad(self) -> bytes:
        """Header bytes authenticated (not encrypted) alongside the payload."""
        return struct.pack("<HHIB", self.dst_short, self.src_short, self.frame_counter, self.endpoint)


@dataclass(frozen=True)
class AckFrame:
    sequence_number: int

    kind: ClassVar[int] = KIND_ACK


Frame = Union[InterPanFrame, SecuredNwkFrame, AckFrame]


# --------------------------------------------------------------------------
# Cluster commands carried encrypted inside SecuredNwkFrame


CLUSTER_ON_OFF = 0x0006
CLUSTER_LEVEL = 0x0008
CLUSTER_COLOR = 0x0300

_CLUSTER_IDS = {
    "off": (CLUSTER_ON_OFF, 0x00, ""),
    "on": (CLUSTER_ON_OFF, 0x01, ""),
    "toggle": (CLUSTER_ON_OFF, 0x02, ""),
    "level": (CLUSTER_LEVEL, 0x00, "B"),
    "color": (CLUSTER_COLOR, 0x40, "H"),
}
_CLUSTER_KINDS = {(c, cmd): (kind, fmt) for kind, (c, cmd, fmt) in _CLUSTER_IDS.items()}


@dataclass(frozen=True)
class ClusterCommand:
    kind: str
    value: int = 0


def encode_cluster_command(cmd: ClusterCommand) -> bytes:
    try:
        cluster, command, fmt = _CLUSTER_IDS[cmd.kind]
    except KeyError:
        raise InvariantViolation(f"unknown cluster command {cmd.kind!r}") from None
    if not fmt:
        if cmd.value != 0:
            raise InvariantViolation(f"{cmd.kind} takes no argument")
        return struct.pack("<HB", cluster, command)
    _check_uint(cmd.value, struct.calcsize("<" + fmt) * 8, "value")
    return struct.pack("<HB" + fmt, cluster, command, cmd.value)


def decode_cluster_command(data: bytes) -> ClusterCommand:
    if len(data) < 3:
        raise Truncated("cluster command header", len(data))
    cluster, command = struct.unpack_from("<HB", data)
    try:
        kind, fmt = _CLUSTER_KINDS[(cluster, command)]
    except KeyError:
        raise UnknownCommandTag(f"cluster 0x{cluster:04x} command 0x{command:02x}", 0) from None
    need = 3 + (struct.calcsize("<" + fmt) if fmt else 0)
    if len(data) < need:
        raise Truncated(f"{kind} argument", len(data))
    if len(data) > need:
        raise FieldOutOfRange("trailing bytes after cluster command", need)
    value = struct.unpack_from("<" + fmt, data, 3)[0] if fmt else 0
    return ClusterCommand(kind, value)


# --------------------------------------------------------------------------
# Encoding


def _check_uint(value, bits: int, name: str) -> None:
    if isinstance(value, bool) or not isinstance(value, int) or not 0 <= value < (1 << bits):
        raise InvariantViolation(f"{name}={value!r} does not fit in {bits} bits")


def _check_header(h: MacHeader) -> None:
    _check_uint(h.sequence_number, 8, "sequence_number")
    _check_uint(h.src_pan, 16, "src_pan")
    _check_uint(h.dst_pan, 16, "dst_pan")
    for name, bits in (("src_short", 16), ("dst_short", 16), ("src_extended", 64), ("dst_extended", 64)):
        value = getattr(h, name)
        if value is not None:
            _check_uint(value, bits, name)
    if h.src_short is None and h.src_extended is None:
        raise InvariantViolation("frame needs a short or extended source address")
    if h.dst_short is None and h.dst_extended is None:
        raise InvariantViolation("frame needs a short or extended destination address")
    if not isinstance(h.ack_requested, bool):
        raise InvariantViolation("ack_requested must be a bool")


def _encode_header(h: MacHeader) -> bytes:
    flags = 0
    if h.ack_requested:
        flags |= _FLAG_ACK
    if h.dst_short is not None:
        flags |= _FLAG_DST_SHORT
    if h.dst_extended is not None:
        flags |= _FLAG_DST_EXT
    if h.src_short is not None:
        flags |= _FLAG_SRC_SHORT
    if h.src_extended is not None:
        flags |= _FLAG_SRC_EXT
    out = bytearray(struct.pack("<BBH", flags, h.sequence_number, h.dst_pan))
    if h.dst_short is not None:
        out += struct.pack("<H", h.dst_short)
    if h.dst_extended is not None:
        out += struct.pack("<Q", h.dst_extended)
    out += struct.pack("<H", h.src_pan)
    if h.src_short is not None:
        out += struct.pack("<H", h.src_short)
    if h.src_extended is not None:
        out += struct.pack("<Q", h.src_extended)
    return bytes(out)


def _encode_command(cmd) -> bytes:
    cls = type(cmd)
    if cls not in COMMAND_LAYOUTS:
        raise InvariantViolation(f"not a touchlink command: {cls.__name__}")
    out = bytearray([cls.command_id])
    for name in COMMAND_LAYOUTS[cls]:
        value = getattr(cmd, name)
        code = _FIELD_CODES[name]
        if code == "bool":
            if not isinstance(value, bool):
                raise InvariantViolation(f"{name} must be a bool")
            out.append(int(value))
        elif code == "key":
            if not isinstance(value, (bytes, bytearray)) or len(value) != 16:
                raise InvariantViolation(f"{name} must be 16 bytes")
            out += value
        else:
            _check_uint(value, struct.calcsize(code) * 8, name)
            out += struct.pack("<" + code, value)
    if cmd.transaction_id == 0:
        raise InvariantViolation("transaction_id must be nonzero")
    channel = getattr(cmd, "channel", None)
    if channel is not None and channel not in CHANNELS:
        raise InvariantViolation(f"channel {channel} outside 11..26")
    if isinstance(cmd, DeviceInfoResponse):
        records = cmd.sub_device_records
        if len(records) > 16:
            raise InvariantViolation("at most 16 sub-device records fit in one frame")
        out.append(len(records))
        for rec in records:
            _check_uint(rec.ieee, 64, "ieee")
            _check_uint(rec.endpoint, 8, "endpoint")
            _check_uint(rec.profile_id, 16, "profile_id")
            _check_uint(rec.device_id, 16, "device_id")
            out += struct.pack("<QBHH", rec.ieee, rec.endpoint, rec.profile_id, rec.device_id)
    return bytes(out)


def encode_frame(frame: Frame) -> bytes:
    """Serialize ``frame``; raises InvariantViolation on out-of-range fields."""
    if isinstance(frame, AckFrame):
        _check_uint(frame.sequence_number, 8, "sequence_number")
        body = bytes([KIND_ACK, frame.sequence_number])
    elif isinstance(frame, InterPanFrame):
        _check_header(frame.header)
        body = bytes([KIND_INTER_PAN]) + _encode_header(frame.header) + _encode_command(frame.command)
    elif isinstance(frame, SecuredNwkFrame):
        _check_header(frame.header)
        _check_uint(frame.src_short, 16, "src_short")
        _check_uint(frame.dst_short, 16, "dst_short")
        _check_uint(frame.frame_counter, 32, "frame_counter")
        _check_uint(frame.endpoint, 8, "endpoint")
        _check_uint(frame.mic, 32, "mic")
        if not isinstance(frame.ciphertext, (bytes, bytearray)):
            raise InvariantViolation("ciphertext must be bytes")
        body = (
            bytes([KIND_SECURED_NWK])
            + _encode_header(frame.header)
            + frame.aad()
            + bytes(frame.ciphertext)
            + struct.pack("<I", frame.mic)
        )
    else:
        raise InvariantViolation(f"not a frame: {type(frame).__name__}")
    if len(body) > 255:
        raise InvariantViolation(f"frame body of {len(body)} bytes exceeds 255")
    return bytes([len(body)]) + body


# --------------------------------------------------------------------------
# Decoding


class _Reader:
    def __init__(self, data: bytes, start: int, end: int):
        self.data = data
        self.pos = start
        self.end = end

    def take(self, code: str, what: str):
        size = struct.calcsize("<" + code)
        if self.pos + size > self.end:
            raise Truncated(f"{what} needs {size} bytes", self.pos)
        value = struct.unpack_from("<" + code, self.data, self.pos)[0]
        self.pos += size
        return value

    def raw(self, size: int, what: str) -> bytes:
        if self.pos + size > self.end:
            raise Truncated(f"{what} needs {size} bytes", self.pos)
        value = bytes(self.data[self.pos:self.pos + size])
        self.pos += size
        return value

    @property
    def remaining(self) -> int:
        return self.end - self.pos


def _decode_header(r: _Reader) -> MacHeader:
    flags_at = r.pos
    flags = r.take("B", "flags")
    if flags & _FLAG_RESERVED:
        raise FieldOutOfRange(f"reserved flag bits set in 0x{flags:02x}", flags_at)
    seq = r.take("B", "sequence")
    dst_pan = r.take("H", "dst_pan")
    dst_short = r.take("H", "dst_short") if flags & _FLAG_DST_SHORT else None
    dst_ext = r.take("Q", "dst_extended") if flags & _FLAG_DST_EXT else None
    src_pan = r.take("H", "src_pan")
    src_short = r.take("H", "src_short") if flags & _FLAG_SRC_SHORT else None
    src_ext = r.take("Q", "src_extended") if flags & _FLAG_SRC_EXT else None
    if dst_short is None and dst_ext is None:
        raise FieldOutOfRange("no destination address", flags_at)
    if src_short is None and src_ext is None:
        raise FieldOutOfRange("no source address", flags_at)
    return MacHeader(
        sequence_number=seq,
        src_pan=src_pan,
        dst_pan=dst_pan,
        src_short=src_short,
        dst_short=dst_short,
        src_extended=src_ext,
        dst_extended=dst_ext,
        ack_requested=bool(flags & _FLAG_ACK),
    )


def _decode_command(r: _Reader):
    tag_at = r.pos
    tag = r.take("B", "command id")
    cls = COMMAND_TYPES.get(tag)
    if cls is None:
        raise UnknownCommandTag(f"touchlink command 0x{tag:02x}", tag_at)
    values = {}
    for name in COMMAND_LAYOUTS[cls]:
        at = r.pos
        code = _FIELD_CODES[name]
        if code == "bool":
            raw = r.take("B", name)
            if raw > 1:
                raise FieldOutOfRange(f"{name}={raw} is not a boolean", at)
            values[name] = bool(raw)
        elif code == "key":
            values[name] = r.raw(16, name)
        else:
            values[name] = r.take(code, name)
        if name == "transaction_id" and values[name] == 0:
            raise FieldOutOfRange("transaction_id is zero", at)
        if name == "channel" and values[name] not in CHANNELS:
            raise FieldOutOfRange(f"channel {values[name]} outside 11..26", at)
    if cls is DeviceInfoResponse:
        at = r.pos
        count = r.take("B", "record count")
        if count > 16:
            raise FieldOutOfRange(f"{count} sub-device records", at)
        records = []
        for _ in range(count):
            ieee = r.take("Q", "record ieee")
            endpoint = r.take("B", "record endpoint")
            profile_id = r.take("H", "record profile")
            device_id = r.take("H", "record device")
            records.append(SubDeviceRecord(ieee, endpoint, profile_id, device_id))
        values["sub_device_records"] = tuple(records)
    return cls(**values)


def decode_frame(data: bytes) -> Frame:
    """Parse one frame from the start of ``data``.

    Bytes beyond the declared length are ignored, so the result re-encodes
    to a prefix of the input. Raises a DecodeError subclass on anything
    malformed; no other exception escapes for bytes input.
    """
    data = bytes(data)
    if not data:
        raise Truncated("empty input", 0)
    length = data[0]
    end = 1 + length
    if len(data) < end:
        raise Truncated(f"declared length {length} exceeds available {len(data) - 1}", len(data))
    r = _Reader(data, 1, end)
    kind = r.take("B", "frame kind")
    if kind == KIND_ACK:
        frame: Frame = AckFrame(r.take("B", "sequence"))
    elif kind == KIND_INTER_PAN:
        header = _decode_header(r)
        frame = InterPanFrame(header, _decode_command(r))
    elif kind == KIND_SECURED_NWK:
        header = _decode_header(r)
        dst_short = r.take("H", "nwk dst_short")
        src_short = r.take("H", "nwk src_short")
        counter = r.take("I", "frame_counter")
        endpoint = r.take("B", "endpoint")
        if r.remaining < 4:
            raise Truncated("mic needs 4 bytes", r.pos)
        ciphertext = r.raw(r.remaining - 4, "ciphertext")
        mic = r.take("I", "mic")
        frame = SecuredNwkFrame(header, src_short, dst_short, counter, endpoint, ciphertext, mic)
    else:
        raise UnknownCommandTag(f"frame kind 0x{kind:02x}", 1)
    if r.remaining:
        raise FieldOutOfRange(f"{r.remaining} trailing bytes inside frame", r.pos)
    return frame


# --------------------------------------------------------------------------
# Hex-dump log lines: "<sim-time-us> <channel> <rssi-dbm> <hex-bytes>"


def format_hexdump(time_us: int, channel: int, rssi_dbm: float, data: bytes) -> str:
    return f"{time_us} {channel} {rssi_dbm:.1f} {data.hex()}"


def parse_hexdump(line: str) -> tuple[int, int, float, bytes]:
    time_s, channel_s, rssi_s, hex_s = line.split()
    return int(time_s), int(channel_s), float(rssi_s), bytes.fromhex(hex_s)
