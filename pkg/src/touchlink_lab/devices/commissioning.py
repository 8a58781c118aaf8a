"""Initiator-side touchlink procedures driven over a simulated air interface."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Union

from .. import crypto, wire
from ..airsim import Air, Node
from ..crypto import TransactionContext
from ..wire import (
    ClusterCommand,
    DeviceInfoRequest,
    IdentifyRequest,
    InterPanFrame,
    MacHeader,
    NetworkJoinEndDeviceRequest,
    NetworkJoinEndDeviceResponse,
    ScanRequest,
    ScanResponse,
    SecuredNwkFrame,
)
from .nodes import EndDeviceNode, InitiatorNode
from .state import MASTER_KEY_INDEX, NetworkParams, seal_command

SCAN_DWELL_US = 250_000
IDENTIFY_SHOW_US = 1_000_000
REPLY_WAIT_US = 100_000
COMMAND_SETTLE_US = 20_000

ACK_FAILURE_REASONS = ("ack-timeout", "awaiting-ack")

TargetFilter = Union[None, int, str, Callable[["ScanHit"], bool]]


class CommissioningError(Exception):
    pass


class NoDeviceFound(CommissioningError):
    pass


class AckTimeout(CommissioningError):
    pass


class JoinRefused(CommissioningError):
    pass


@dataclass
class ScanHit:
    extended_addr: int
    channel: int
    response: ScanResponse
    rssi_dbm: float
    ctx: TransactionContext


@dataclass
class JoinReport:
    target: str | None
    extended_addr: int
    channel: int
    short_addr: int
    transaction: TransactionContext
    frames: list[str] = field(default_factory=list)


@dataclass
class RecoveryReport:
    target: str | None
    adopted: bool
    before: NetworkParams
    after: NetworkParams
    join: JoinReport | None = None


def node_by_extended(air: Air, extended_addr: int) -> Node | None:
    for node in air.nodes.values():
        if node.extended_addr == extended_addr:
            return node
    return None


def ack_failed_since(node: Node | None, since: int) -> bool:
    if node is None:
        return False
    return any(t >= since and reason.startswith(ACK_FAILURE_REASONS) for t, reason in node.drops)


def _matches(hit: ScanHit, target: TargetFilter, air: Air) -> bool:
    if target is None:
        return True
    if callable(target):
        return target(hit)
    if isinstance(target, str):
        node = air.nodes.get(target)
        return node is not None and node.extended_addr == hit.extended_addr
    return hit.extended_addr == target


def touchlink_scan(
    node: Node,
    air: Air,
    channels,
    transaction_id: int,
    src_extended: int,
    src_pan: int = wire.BROADCAST_PAN,
    seq: Callable[[], int] | None = None,
    dwell_us: int = SCAN_DWELL_US,
) -> list[ScanHit]:
    """Broadcast a ScanRequest on each channel in turn and collect the answers."""
    hits: list[ScanHit] = []
    for channel in channels:
        node.tune(channel)
        mark = len(node.inbox)
        header = MacHeader(
            sequence_number=seq() if seq else 0,
            src_pan=src_pan,
            dst_pan=wire.BROADCAST_PAN,
            src_extended=src_extended,
            dst_short=wire.BROADCAST_SHORT,
        )
        air.transmit(node, InterPanFrame(header, ScanRequest(transaction_id)), channel)
        air.run_for(dwell_us)
        seen = set()
        for rec in node.inbox[mark:]:
            frame = rec.frame
            if not isinstance(frame, InterPanFrame) or not isinstance(frame.command, ScanResponse):
                continue
            rsp = frame.command
            src = frame.header.src_extended
            if rsp.transaction_id != transaction_id or src is None or src in seen:
                continue
            seen.add(src)
            ctx = TransactionContext.opened(transaction_id, rsp.response_id, rec.time)
            hits.append(ScanHit(src, rec.channel, rsp, rec.rssi_dbm, ctx))
    return hits


def _unicast_header(seq: int, src_ext: int, dst_ext: int) -> MacHeader:
    return MacHeader(
        sequence_number=seq,
        src_pan=wire.BROADCAST_PAN,
        dst_pan=wire.BROADCAST_PAN,
        src_extended=src_ext,
        dst_extended=dst_ext,
    )


def _tx_lines(air: Air, start: int) -> list[str]:
    return [line for line in air.log[start:] if line.startswith(("tx ", "rx "))]


def run_touchlink_join(
    initiator: InitiatorNode,
    air: Air,
    target: TargetFilter = None,
    channels=wire.PRIMARY_CHANNELS,
    identify: bool = True,
) -> JoinReport:
    """Scan, identify and hand the network key to one end device."""
    st = initiator.state
    if st.net is None:
        raise CommissioningError(f"{initiator.node_id} is not part of a network")
    log_start, t0 = len(air.log), air.now
    tid = air.random_u32(nonzero=True)
    try:
        hits = touchlink_scan(
            initiator, air, channels, tid, st.extended_addr, st.net.pan_id, seq=st.take_seq
        )
        candidates = [h for h in hits if _matches(h, target, air)]
        if not candidates:
            raise NoDeviceFound(f"no touchlink target answered {initiator.node_id}")
        hit = max(candidates, key=lambda h: h.rssi_dbm)
        return _join(initiator, air, hit, tid, identify, log_start, t0)
    finally:
        initiator.tune(None)


def _join(initiator: InitiatorNode, air: Air, hit: ScanHit, tid: int, identify: bool, log_start: int, t0: int) -> JoinReport:
    st = initiator.state
    net = st.net
    initiator.tune(hit.channel)
    if hit.response.sub_device_count > 1:
        header = _unicast_header(st.take_seq(), st.extended_addr, hit.extended_addr)
        air.transmit(initiator, InterPanFrame(header, DeviceInfoRequest(tid)))
        air.run_for(REPLY_WAIT_US)
    if identify:
        header = _unicast_header(st.take_seq(), st.extended_addr, hit.extended_addr)
        air.transmit(initiator, InterPanFrame(header, IdentifyRequest(tid, wire.IDENTIFY_DEFAULT)))
        air.run_for(IDENTIFY_SHOW_US)
        header = _unicast_header(st.take_seq(), st.extended_addr, hit.extended_addr)
        air.transmit(initiator, InterPanFrame(header, IdentifyRequest(tid, wire.IDENTIFY_STOP)))
        air.run_for(COMMAND_SETTLE_US)
    short = st.allocate_short()
    request = NetworkJoinEndDeviceRequest(
        transaction_id=tid,
        extended_pan_id=net.extended_pan_id,
        key_index=MASTER_KEY_INDEX,
        encrypted_network_key=crypto.wrap_network_key(st.master_key, hit.ctx, net.network_key),
        channel=net.channel,
        pan_id=net.pan_id,
        network_update_id=net.network_update_id,
        assigned_short_addr=short,
    )
    mark = len(initiator.inbox)
    air.transmit(initiator, InterPanFrame(_unicast_header(st.take_seq(), st.extended_addr, hit.extended_addr), request))
    air.run_for(REPLY_WAIT_US)
    reply = next(
        (
            rec.frame.command
            for rec in initiator.inbox[mark:]
            if isinstance(rec.frame, InterPanFrame)
            and isinstance(rec.frame.command, NetworkJoinEndDeviceResponse)
            and rec.frame.command.transaction_id == tid
        ),
        None,
    )
    target_node = node_by_extended(air, hit.extended_addr)
    if reply is None:
        if ack_failed_since(target_node, t0):
            raise AckTimeout(f"target 0x{hit.extended_addr:016x} never saw its scan response acknowledged")
        raise JoinRefused(f"no join response from 0x{hit.extended_addr:016x}")
    if reply.status != 0:
        raise JoinRefused(f"join response status {reply.status}")
    return JoinReport(
        target=target_node.node_id if target_node else None,
        extended_addr=hit.extended_addr,
        channel=hit.channel,
        short_addr=short,
        transaction=hit.ctx,
        frames=_tx_lines(air, log_start),
    )


def bridge_touchlink_recovery(bridge: InitiatorNode, air: Air, target: TargetFilter) -> RecoveryReport:
    """Touchlink an attacked bulb back. A bridge that adopts newer settings follows the bulb instead."""
    st = bridge.state
    if st.net is None:
        raise CommissioningError(f"{bridge.node_id} is not part of a network")
    before = replace(st.net)
    log_start, t0 = len(air.log), air.now
    tid = air.random_u32(nonzero=True)
    try:
        hits = touchlink_scan(bridge, air, wire.PRIMARY_CHANNELS, tid, st.extended_addr, st.net.pan_id, seq=st.take_seq)
        candidates = [h for h in hits if _matches(h, target, air)]
        if not candidates:
            raise NoDeviceFound("recovery target did not answer")
        hit = max(candidates, key=lambda h: h.rssi_dbm)
        target_node = node_by_extended(air, hit.extended_addr)
        rsp = hit.response
        if (
            st.profile.adopts_newer_network
            and not rsp.factory_new
            and rsp.extended_pan_id == st.net.extended_pan_id
            and rsp.network_update_id > st.net.network_update_id
        ):
            st.net.channel = rsp.channel
            st.net.pan_id = rsp.pan_id
            st.net.network_update_id = rsp.network_update_id
            air.record_change(bridge, f"adopted-network channel={rsp.channel} update_id={rsp.network_update_id}")
            return RecoveryReport(target_node.node_id if target_node else None, True, before, replace(st.net))
        join = _join(bridge, air, hit, tid, True, log_start, t0)
        return RecoveryReport(join.target, False, before, replace(st.net), join)
    finally:
        bridge.tune(None)


def send_user_command(
    initiator: InitiatorNode, air: Air, dst_short: int, command: ClusterCommand, settle_us: int = COMMAND_SETTLE_US
) -> SecuredNwkFrame:
    """The legitimate controller sends one encrypted lamp command on its network channel."""
    st = initiator.state
    if st.net is None:
        raise CommissioningError(f"{initiator.node_id} is not part of a network")
    st.nwk_frame_counter += 1
    frame = seal_command(
        st.net.network_key, st.net.pan_id, st.net.short_addr, dst_short, st.nwk_frame_counter, command, st.take_seq()
    )
    air.transmit(initiator, frame)
    air.run_for(settle_us)
    return frame


def deliver_user_command(initiator: InitiatorNode, air: Air, target: EndDeviceNode, command: ClusterCommand) -> bool:
    """True when ``target`` applied the command (white-box check on its state)."""
    before = target.state.commands_applied
    dst = target.short_addr if target.short_addr is not None else wire.BROADCAST_SHORT
    send_user_command(initiator, air, dst, command)
    return target.state.commands_applied > before
