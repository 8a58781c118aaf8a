"""Deterministic discrete-event radio simulation.

Time is an integer number of microseconds. Events run in (time, insertion
order). A transmission reaches every other node listening on the same
channel after 1 us of propagation plus the frame's airtime, with the RSSI
given by a log-distance path-loss model; receptions under the noise floor
are dropped.

Event log records (one per line, fields separated by single spaces)::

    tx <src> <time> <channel> <tx-power-dbm> <hex>
    rx <dst> <time> <channel> <rssi-dbm> <hex>
    drop <node> <time> <reason> [detail...]
    state <node> <time> <change...>
    note <time> <text...>

The last four fields of ``tx``/``rx`` records are a frame hex-dump line.
"""

from __future__ import annotations

import heapq
import itertools
import math
import random
from dataclasses import dataclass, field

from . import wire
from .wire import AckFrame, Frame, InterPanFrame, SecuredNwkFrame

PROPAGATION_US = 1
DEFAULT_TURNAROUND_US = 192  # 12 symbol periods at 2.4 GHz


class InvalidChannel(ValueError):
    pass


@dataclass(frozen=True)
class PathLossModel:
    reference_loss_db: float = 34.0
    exponent: float = 2.0
    noise_floor_dbm: float = -85.0

    def __post_init__(self):
        if not self.exponent > 0:
            raise ValueError("path-loss exponent must be positive")


DEFAULT_MODEL = PathLossModel()


def rssi(model: PathLossModel, tx_power_dbm: float, distance_m: float) -> float:
    """Received power at ``distance_m``; distances at or below zero clamp to the 1 m value."""
    if distance_m <= 0:
        return tx_power_dbm - model.reference_loss_db
    return tx_power_dbm - model.reference_loss_db - 10 * model.exponent * math.log10(distance_m)


def max_distance(model: PathLossModel, tx_power_dbm: float, threshold_dbm: float) -> float:
    """Largest distance at which rssi() still reaches ``threshold_dbm``."""
    return 10 ** ((tx_power_dbm - model.reference_loss_db - threshold_dbm) / (10 * model.exponent))


@dataclass
class Reception:
    time: int
    channel: int
    rssi_dbm: float
    frame: Frame
    raw: bytes


@dataclass
class Reaction:
    """What a node does in response to one received frame."""

    outbound: list[tuple[Frame, int]] = field(default_factory=list)  # (frame, delay_us)
    drops: list[str] = field(default_factory=list)
    changes: list[str] = field(default_factory=list)

    def drop(self, reason: str, detail: str = "") -> Reaction:
        self.drops.append(f"{reason} {detail}".strip())
        return self


class Node:
    """A radio endpoint. Subclasses override ``receive`` to react to frames."""

    def __init__(
        self,
        node_id: str,
        position: tuple[float, float] = (0.0, 0.0),
        tx_power_dbm: float = 0.0,
        channel: int = 11,
        extended_addr: int = 0,
        short_addr: int | None = None,
        ack_turnaround_us: int = DEFAULT_TURNAROUND_US,
    ):
        self.node_id = node_id
        self.position = (float(position[0]), float(position[1]))
        self.tx_power_dbm = tx_power_dbm
        self._channel = channel
        self.extended_addr = extended_addr
        self._short_addr = short_addr
        self.ack_turnaround_us = ack_turnaround_us
        self.tuned: int | None = None
        self.mac_seq = 0
        self.inbox: list[Reception] = []
        self.drops: list[tuple[int, str]] = []

    @property
    def channel(self) -> int:
        return self.tuned if self.tuned is not None else self._channel

    @channel.setter
    def channel(self, value: int) -> None:
        if value not in wire.CHANNELS:
            raise InvalidChannel(f"channel {value} outside 11..26")
        self._channel = value

    def tune(self, channel: int | None) -> None:
        """Temporarily listen on ``channel``; None returns to the node's own channel."""
        if channel is not None and channel not in wire.CHANNELS:
            raise InvalidChannel(f"channel {channel} outside 11..26")
        self.tuned = channel

    def next_seq(self) -> int:
        self.mac_seq = wire.next_sequence(self.mac_seq)
        return self.mac_seq

    @property
    def short_addr(self) -> int | None:
        return self._short_addr

    @property
    def auto_ack(self) -> bool:
        return True

    def receive(self, air: Air, reception: Reception) -> Reaction | None:
        self.inbox.append(reception)
        return None


class Air:
    """One simulation instance: clock, event queue, nodes and event log."""

    def __init__(self, model: PathLossModel = DEFAULT_MODEL, seed: int = 0):
        self.model = model
        self.now = 0
        self.rng = random.Random(seed)
        self.nodes: dict[str, Node] = {}
        self.log: list[str] = []
        self._queue: list = []
        self._order = itertools.count()

    # -- setup -----------------------------------------------------------

    def add(self, node: Node) -> Node:
        if node.node_id in self.nodes:
            raise ValueError(f"duplicate node id {node.node_id!r}")
        self.nodes[node.node_id] = node
        return node

    def distance(self, a: Node, b: Node) -> float:
        return math.dist(a.position, b.position)

    def link_rssi(self, src: Node, dst: Node) -> float:
        return rssi(self.model, src.tx_power_dbm, self.distance(src, dst))

    def random_u32(self, nonzero: bool = False) -> int:
        while True:
            value = self.rng.getrandbits(32)
            if value or not nonzero:
                return value

    # -- event queue -----------------------------------------------------

    def schedule(self, time: int, callback, *args) -> None:
        if time < self.now:
            raise ValueError(f"cannot schedule at {time} before now={self.now}")
        heapq.heappush(self._queue, (time, next(self._order), callback, args))

    def run_until(self, t_end: int) -> list[str]:
        """Process every event with time <= t_end; returns the log lines added."""
        if t_end < self.now:
            raise ValueError(f"t_end {t_end} is before now={self.now}")
        start = len(self.log)
        while self._queue and self._queue[0][0] <= t_end:
            time, _, callback, args = heapq.heappop(self._queue)
            self.now = time
            callback(*args)
        self.now = t_end
        return self.log[start:]

    def run_for(self, duration_us: int) -> list[str]:
        return self.run_until(self.now + duration_us)

    @property
    def idle(self) -> bool:
        return not self._queue

    # -- logging ---------------------------------------------------------

    def note(self, text: str) -> None:
        self.log.append(f"note {self.now} {text}")

    def record_drop(self, node: Node, reason: str) -> None:
        node.drops.append((self.now, reason))
        self.log.append(f"drop {node.node_id} {self.now} {reason}")

    def record_change(self, node: Node, change: str) -> None:
        self.log.append(f"state {node.node_id} {self.now} {change}")

    # -- radio -----------------------------------------------------------

    def transmit(self, src: Node, frame: Frame, channel: int | None = None, delay_us: int = 0) -> None:
        """Send ``frame`` from ``src`` after ``delay_us``; encoding errors raise immediately."""
        channel = src.channel if channel is None else channel
        if channel not in wire.CHANNELS:
            raise InvalidChannel(f"channel {channel} outside 11..26")
        raw = wire.encode_frame(frame)
        if delay_us:
            self.schedule(self.now + delay_us, self._emit, src, raw, channel)
        else:
            self._emit(src, raw, channel)

    def _emit(self, src: Node, raw: bytes, channel: int) -> None:
        self.log.append(f"tx {src.node_id} {wire.format_hexdump(self.now, channel, src.tx_power_dbm, raw)}")
        arrival = self.now + PROPAGATION_US + wire.airtime_us(raw)
        for node in self.nodes.values():
            if node is src:
                continue
            self.schedule(arrival, self._deliver, node, raw, channel, self.link_rssi(src, node))

    def _deliver(self, node: Node, raw: bytes, channel: int, rssi_dbm: float) -> None:
        # the listening channel is checked on arrival, so a node that hops
        # while a frame is in flight misses it
        if node.channel != channel:
            return
        if rssi_dbm < self.model.noise_floor_dbm:
            self.record_drop(node, f"below-noise-floor {rssi_dbm:.1f}")
            return
        self.log.append(f"rx {node.node_id} {wire.format_hexdump(self.now, channel, rssi_dbm, raw)}")
        try:
            frame = wire.decode_frame(raw)
        except wire.DecodeError as exc:
            self.record_drop(node, f"decode-error {type(exc).__name__}")
            return
        if self._wants_ack(node, frame):
            ack = AckFrame(frame.header.sequence_number)
            self.transmit(node, ack, channel, node.ack_turnaround_us)
        reaction = node.receive(self, Reception(self.now, channel, rssi_dbm, frame, raw))
        if reaction is None:
            return
        for reason in reaction.drops:
            self.record_drop(node, reason)
        for change in reaction.changes:
            self.record_change(node, change)
        for out, delay in reaction.outbound:
            self.transmit(node, out, channel, delay)

    @staticmethod
    def _wants_ack(node: Node, frame: Frame) -> bool:
        if not isinstance(frame, (InterPanFrame, SecuredNwkFrame)):
            return False
        h = frame.header
        if not h.ack_requested or not node.auto_ack:
            return False
        if h.dst_extended is not None:
            return h.dst_extended == node.extended_addr
        return h.dst_short is not None and h.dst_short != wire.BROADCAST_SHORT and h.dst_short == node.short_addr
