"""Device state and the per-frame state machines for end devices and initiators.

``handle_frame`` and ``handle_initiator_frame`` mutate the state they are
given and return a Reaction (frames to send, drop reasons, state changes).
Nothing invalid ever produces an error frame; it is dropped with a reason.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace

from .. import crypto, wire
from ..airsim import Reaction
from ..crypto import IntegrityFailure, Key128, TransactionContext
from ..wire import (
    AckFrame,
    ClusterCommand,
    DeviceInfoRequest,
    DeviceInfoResponse,
    Frame,
    IdentifyRequest,
    InterPanFrame,
    MacHeader,
    NetworkJoinEndDeviceRequest,
    NetworkJoinEndDeviceResponse,
    NetworkStartRequest,
    NetworkUpdateRequest,
    ResetToFactoryNewRequest,
    ScanRequest,
    ScanResponse,
    SecuredNwkFrame,
    SubDeviceRecord,
)
from .profiles import Aftermath, ScanPolicy, VendorProfile

MASTER_KEY_INDEX = 4  # bit position of the master key in key_bitmask
LIGHT_ENDPOINT = 11
ZLL_PROFILE_ID = 0xC05E
COLOR_LIGHT_DEVICE_ID = 0x0200
RESPONSE_DELAY_US = 1000
DEFAULT_FACTORY_CHANNEL = 11


class Unsupported(Exception):
    pass


@dataclass(frozen=True)
class LampState:
    on: bool = True
    hue: int = 0x2000  # warm white
    brightness: int = 254


DEFAULT_LAMP = LampState()


@dataclass
class NetworkParams:
    pan_id: int
    extended_pan_id: int
    channel: int
    network_key: Key128
    network_update_id: int = 0
    short_addr: int = 0x0001

    def __post_init__(self):
        if self.channel not in wire.CHANNELS:
            raise ValueError(f"channel {self.channel} outside 11..26")


@dataclass
class EndDeviceState:
    profile: VendorProfile
    extended_addr: int
    master_key: Key128
    net: NetworkParams | None = None
    lamp: LampState = DEFAULT_LAMP
    identify_until: int | None = None
    pending: TransactionContext | None = None
    awaiting_ack_seq: int | None = None
    ack_deadline: int | None = None
    rx_frame_counters: dict[int, int] = field(default_factory=dict)
    mac_seq: int = 0
    factory_channel: int = DEFAULT_FACTORY_CHANNEL
    commands_applied: int = 0

    @property
    def factory_new(self) -> bool:
        return self.net is None

    @property
    def channel(self) -> int:
        return self.net.channel if self.net else self.factory_channel

    @property
    def identifying(self) -> bool:
        return self.identify_until is not None

    def take_seq(self) -> int:
        self.mac_seq = wire.next_sequence(self.mac_seq)
        return self.mac_seq


@dataclass
class InitiatorState:
    profile: VendorProfile
    extended_addr: int
    master_key: Key128
    net: NetworkParams | None = None
    button_pressed_at: int | None = None
    pending: TransactionContext | None = None
    mac_seq: int = 0
    nwk_frame_counter: int = 0
    next_short_addr: int = 0x0002
    factory_channel: int = DEFAULT_FACTORY_CHANNEL

    @property
    def factory_new(self) -> bool:
        return self.net is None

    @property
    def channel(self) -> int:
        return self.net.channel if self.net else self.factory_channel

    def take_seq(self) -> int:
        self.mac_seq = wire.next_sequence(self.mac_seq)
        return self.mac_seq

    def allocate_short(self) -> int:
        addr = self.next_short_addr
        self.next_short_addr = addr + 1 if addr < 0xFFF7 else 0x0002
        return addr

    def button_window_open(self, now: int) -> bool:
        if self.button_pressed_at is None:
            return False
        return now - self.button_pressed_at <= self.profile.button_window_s * 1_000_000


def press_button(bridge: InitiatorState, now: int) -> InitiatorState:
    if bridge.profile.scan_response_policy is not ScanPolicy.BUTTON_WINDOW:
        raise Unsupported(f"{bridge.profile.name} has no link button")
    bridge.button_pressed_at = now
    return bridge


def physical_reset(device: EndDeviceState) -> EndDeviceState:
    """Manufacturer power-cycle reset pattern."""
    if not device.profile.supports_physical_reset:
        raise Unsupported(f"{device.profile.name} lacks a physical reset")
    _wipe(device)
    return device


def rejoin_via_classical(device: EndDeviceState, net: NetworkParams) -> EndDeviceState:
    """Stand-in for classical commissioning: a factory-new device joins an open network at once."""
    if not device.factory_new:
        raise Unsupported("classical rejoin needs a factory-new device")
    device.net = replace(net)
    device.rx_frame_counters.clear()
    return device


def _wipe(device: EndDeviceState) -> None:
    device.net = None
    device.lamp = DEFAULT_LAMP
    device.identify_until = None
    device.pending = None
    device.awaiting_ack_seq = None
    device.ack_deadline = None
    device.rx_frame_counters.clear()


def settle(device: EndDeviceState, now: int) -> list[str]:
    """Apply time-driven transitions (blink end, transaction expiry) up to ``now``."""
    changes = []
    if device.identify_until is not None and now >= device.identify_until:
        changes.append(_end_identify(device))
    if device.pending is not None and device.pending.expired(now):
        device.pending = None
        device.awaiting_ack_seq = None
        device.ack_deadline = None
        changes.append("transaction-expired")
    return changes


def _end_identify(device: EndDeviceState) -> str:
    device.identify_until = None
    if device.profile.blink_aftermath is Aftermath.DEFAULT_STATE:
        device.lamp = DEFAULT_LAMP
    return f"identify-end aftermath={device.profile.blink_aftermath.value}"


# --------------------------------------------------------------------------


def _reply_header(seq: int, own_ext: int, own_pan: int, request: MacHeader, ack: bool) -> MacHeader:
    return MacHeader(
        sequence_number=seq,
        src_pan=own_pan,
        dst_pan=request.src_pan,
        src_extended=own_ext,
        dst_extended=request.src_extended,
        dst_short=None if request.src_extended is not None else request.src_short,
        ack_requested=ack,
    )


def _addressed_to(header: MacHeader, ext: int) -> bool:
    return header.dst_extended == ext or header.dst_short == wire.BROADCAST_SHORT


def _scan_response(state, frame: InterPanFrame, now: int, rng: random.Random) -> tuple[ScanResponse, MacHeader]:
    net = state.net
    rid = rng.getrandbits(32)
    state.pending = TransactionContext.opened(frame.command.transaction_id, rid, now)
    rsp = ScanResponse(
        transaction_id=frame.command.transaction_id,
        response_id=rid,
        key_bitmask=wire.KEY_BIT_MASTER,
        network_update_id=net.network_update_id if net else 0,
        channel=state.channel,
        pan_id=net.pan_id if net else 0,
        short_addr=net.short_addr if net else wire.BROADCAST_SHORT,
        extended_pan_id=net.extended_pan_id if net else 0,
        factory_new=net is None,
        sub_device_count=0 if state.profile.is_initiator else 1,
    )
    header = _reply_header(
        state.take_seq(),
        state.extended_addr,
        net.pan_id if net else wire.BROADCAST_PAN,
        frame.header,
        state.profile.requires_mac_ack,
    )
    return rsp, header


def handle_frame(
    device: EndDeviceState, frame: Frame, rssi_dbm: float, now: int, rng: random.Random
) -> Reaction:
    """Run one received frame through a bulb's state machine."""
    out = Reaction(changes=settle(device, now))
    if isinstance(frame, AckFrame):
        return _on_ack(device, frame, now, out)
    if isinstance(frame, SecuredNwkFrame):
        return _on_secured(device, frame, out)
    if not isinstance(frame, InterPanFrame):
        return out.drop("unknown-frame")

    header, cmd = frame.header, frame.command
    if header.src_extended == device.extended_addr:
        return out.drop("own-address")
    if not _addressed_to(header, device.extended_addr):
        return out  # MAC address filter, not a drop
    if rssi_dbm < device.profile.effective_threshold_dbm:
        return out.drop("rssi-below-threshold", f"{rssi_dbm:.1f}")

    if isinstance(cmd, ScanRequest):
        rsp, rsp_header = _scan_response(device, frame, now, rng)
        if device.profile.requires_mac_ack:
            raw = wire.encode_frame(InterPanFrame(rsp_header, rsp))
            device.awaiting_ack_seq = rsp_header.sequence_number
            device.ack_deadline = now + RESPONSE_DELAY_US + wire.airtime_us(raw) + device.profile.ack_deadline_us
        else:
            device.awaiting_ack_seq = None
            device.ack_deadline = None
        out.changes.append(f"transaction-open tid=0x{rsp.transaction_id:08x} rid=0x{rsp.response_id:08x}")
        out.outbound.append((InterPanFrame(rsp_header, rsp), RESPONSE_DELAY_US))
        return out

    if isinstance(cmd, (ScanResponse, DeviceInfoResponse, NetworkJoinEndDeviceResponse)):
        return out.drop("unexpected-response")

    ctx = device.pending
    if ctx is None:
        return out.drop("no-transaction")
    if cmd.transaction_id != ctx.transaction_id:
        return out.drop("transaction-mismatch", f"0x{cmd.transaction_id:08x}")
    if device.awaiting_ack_seq is not None:
        if now > device.ack_deadline:
            device.pending = None
            device.awaiting_ack_seq = None
            device.ack_deadline = None
            return out.drop("ack-timeout")
        return out.drop("awaiting-ack")

    if isinstance(cmd, DeviceInfoRequest):
        record = SubDeviceRecord(device.extended_addr, LIGHT_ENDPOINT, ZLL_PROFILE_ID, COLOR_LIGHT_DEVICE_ID)
        rsp_header = _reply_header(device.take_seq(), device.extended_addr, wire.BROADCAST_PAN, header, False)
        out.outbound.append((InterPanFrame(rsp_header, DeviceInfoResponse(ctx.transaction_id, (record,))), RESPONSE_DELAY_US))
        return out

    if isinstance(cmd, IdentifyRequest):
        if cmd.duration == wire.IDENTIFY_STOP:
            if device.identify_until is not None:
                out.changes.append(_end_identify(device))
            out.changes.append("identify-stop")
            return out
        seconds = device.profile.effective_identify_s(cmd.duration)
        device.identify_until = now + seconds * 1_000_000
        out.changes.append(f"identify-start seconds={seconds}")
        return out

    if isinstance(cmd, ResetToFactoryNewRequest):
        _wipe(device)
        out.changes.append("factory-new")
        return out

    if isinstance(cmd, NetworkUpdateRequest):
        net = device.net
        if net is None:
            return out.drop("not-joined")
        if cmd.extended_pan_id != net.extended_pan_id:
            return out.drop("extended-pan-mismatch")
        if cmd.network_update_id <= net.network_update_id:
            return out.drop("stale-update-id", f"{cmd.network_update_id}<={net.network_update_id}")
        net.channel = cmd.channel
        net.pan_id = cmd.pan_id
        net.short_addr = cmd.short_addr
        net.network_update_id = cmd.network_update_id
        device.pending = None
        out.changes.append(f"network-update channel={cmd.channel} update_id={cmd.network_update_id}")
        return out

    if isinstance(cmd, (NetworkJoinEndDeviceRequest, NetworkStartRequest)):
        if cmd.key_index != MASTER_KEY_INDEX:
            return out.drop("unsupported-key-index", str(cmd.key_index))
        key = crypto.unwrap_network_key(device.master_key, ctx, cmd.encrypted_network_key)
        if isinstance(cmd, NetworkJoinEndDeviceRequest):
            update_id, short = cmd.network_update_id, cmd.assigned_short_addr
        else:
            update_id, short = 0, 0x0001
        device.net = NetworkParams(cmd.pan_id, cmd.extended_pan_id, cmd.channel, key, update_id, short)
        device.rx_frame_counters.clear()
        device.pending = None
        out.changes.append(f"joined pan=0x{cmd.pan_id:04x} channel={cmd.channel} short=0x{short:04x}")
        if isinstance(cmd, NetworkJoinEndDeviceRequest):
            rsp_header = _reply_header(device.take_seq(), device.extended_addr, wire.BROADCAST_PAN, header, False)
            out.outbound.append((InterPanFrame(rsp_header, NetworkJoinEndDeviceResponse(ctx.transaction_id, 0)), RESPONSE_DELAY_US))
        return out

    return out.drop("unsupported-command", type(cmd).__name__)


def _on_ack(device: EndDeviceState, frame: AckFrame, now: int, out: Reaction) -> Reaction:
    if device.awaiting_ack_seq is None:
        return out
    if frame.sequence_number != device.awaiting_ack_seq:
        return out.drop("ack-seq-mismatch", str(frame.sequence_number))
    if now > device.ack_deadline:
        late = now - device.ack_deadline
        device.pending = None
        device.awaiting_ack_seq = None
        device.ack_deadline = None
        return out.drop("ack-timeout", f"late-by={late}us")
    device.awaiting_ack_seq = None
    device.ack_deadline = None
    out.changes.append("ack-received")
    return out


def _on_secured(device: EndDeviceState, frame: SecuredNwkFrame, out: Reaction) -> Reaction:
    net = device.net
    h = frame.header
    if net is None:
        return out.drop("not-joined")
    if h.dst_short not in (net.short_addr, wire.BROADCAST_SHORT):
        return out  # MAC address filter
    if h.dst_pan not in (net.pan_id, wire.BROADCAST_PAN):
        return out.drop("pan-mismatch")
    try:
        payload = crypto.ccm_decrypt(
            net.network_key, frame.src_short, frame.frame_counter, frame.ciphertext, frame.mic, frame.aad()
        )
    except IntegrityFailure:
        return out.drop("integrity-failure")
    last = device.rx_frame_counters.get(frame.src_short)
    if last is not None and frame.frame_counter <= last:
        return out.drop("replay", f"counter={frame.frame_counter}<={last}")
    device.rx_frame_counters[frame.src_short] = frame.frame_counter
    if frame.endpoint not in (LIGHT_ENDPOINT, wire.BROADCAST_ENDPOINT):
        return out.drop("unknown-endpoint", str(frame.endpoint))
    try:
        command = wire.decode_cluster_command(payload)
    except wire.DecodeError:
        return out.drop("bad-cluster-command")
    if device.identifying:
        return out.drop("identifying")
    device.lamp = apply_command(device.lamp, command)
    device.commands_applied += 1
    lamp = device.lamp
    out.changes.append(f"lamp on={int(lamp.on)} hue={lamp.hue} brightness={lamp.brightness}")
    return out


def apply_command(lamp: LampState, command: ClusterCommand) -> LampState:
    if command.kind == "on":
        return replace(lamp, on=True)
    if command.kind == "off":
        return replace(lamp, on=False)
    if command.kind == "toggle":
        return replace(lamp, on=not lamp.on)
    if command.kind == "level":
        return replace(lamp, brightness=command.value)
    if command.kind == "color":
        return replace(lamp, hue=command.value)
    raise ValueError(f"unknown command {command.kind!r}")


def seal_command(
    key: Key128,
    pan_id: int,
    src_short: int,
    dst_short: int,
    frame_counter: int,
    command: ClusterCommand,
    seq: int,
    endpoint: int = LIGHT_ENDPOINT,
) -> SecuredNwkFrame:
    """Build an encrypted application frame carrying ``command``."""
    header = MacHeader(sequence_number=seq, src_pan=pan_id, dst_pan=pan_id, src_short=src_short, dst_short=dst_short)
    draft = SecuredNwkFrame(header, src_short, dst_short, frame_counter, endpoint, b"", 0)
    ciphertext, mic = crypto.ccm_encrypt(key, src_short, frame_counter, wire.encode_cluster_command(command), draft.aad())
    return replace(draft, ciphertext=ciphertext, mic=mic)


# --------------------------------------------------------------------------


def handle_initiator_frame(
    state: InitiatorState, frame: Frame, rssi_dbm: float, now: int, rng: random.Random
) -> Reaction:
    """Bridges and gateways answer scans and resets only, per their profile."""
    out = Reaction()
    if state.pending is not None and state.pending.expired(now):
        state.pending = None
    if not isinstance(frame, InterPanFrame):
        return out
    header, cmd = frame.header, frame.command
    if header.src_extended == state.extended_addr or not _addressed_to(header, state.extended_addr):
        return out
    if isinstance(cmd, (ScanResponse, DeviceInfoResponse, NetworkJoinEndDeviceResponse)):
        return out  # consumed by the commissioning procedure via the inbox
    if rssi_dbm < state.profile.effective_threshold_dbm:
        return out.drop("rssi-below-threshold", f"{rssi_dbm:.1f}")

    if isinstance(cmd, ScanRequest):
        if not _policy_allows(state, state.profile.scan_response_policy, now):
            return out.drop("scan-policy", state.profile.scan_response_policy.value)
        rsp, rsp_header = _scan_response(state, frame, now, rng)
        out.changes.append(f"transaction-open tid=0x{rsp.transaction_id:08x} rid=0x{rsp.response_id:08x}")
        out.outbound.append((InterPanFrame(rsp_header, rsp), RESPONSE_DELAY_US))
        return out

    ctx = state.pending
    if ctx is None:
        return out.drop("no-transaction")
    if cmd.transaction_id != ctx.transaction_id:
        return out.drop("transaction-mismatch", f"0x{cmd.transaction_id:08x}")
    if isinstance(cmd, ResetToFactoryNewRequest):
        if not _policy_allows(state, state.profile.reset_policy, now):
            return out.drop("reset-policy", state.profile.reset_policy.value)
        state.net = None
        state.pending = None
        state.button_pressed_at = None
        out.changes.append("factory-new")
        return out
    return out.drop("unsupported-by-initiator", type(cmd).__name__)


def _policy_allows(state: InitiatorState, policy: ScanPolicy, now: int) -> bool:
    if policy is ScanPolicy.ALWAYS:
        return True
    if policy is ScanPolicy.NEVER:
        return False
    return state.button_window_open(now)


# --------------------------------------------------------------------------
# State snapshots: one line per device, space-separated key=value fields


def snapshot_line(node_id: str, state, now: int) -> str:
    fields = [f"node={node_id}", f"profile={state.profile.name}", f"factory_new={int(state.factory_new)}"]
    net = state.net
    if net is not None:
        fields += [
            f"channel={net.channel}",
            f"pan=0x{net.pan_id:04x}",
            f"ext_pan=0x{net.extended_pan_id:016x}",
            f"key={net.network_key.hex()}",
            f"update_id={net.network_update_id}",
            f"short=0x{net.short_addr:04x}",
        ]
    else:
        fields += [f"channel={state.channel}", "pan=-", "ext_pan=-", "key=-", "update_id=-", "short=-"]
    if isinstance(state, EndDeviceState):
        lamp = state.lamp
        remaining = "-" if state.identify_until is None else str(max(0, state.identify_until - now))
        fields += [
            f"lamp_on={int(lamp.on)}",
            f"hue={lamp.hue}",
            f"brightness={lamp.brightness}",
            f"identify_remaining_us={remaining}",
        ]
    return " ".join(fields)
