from __future__ import annotations

from ..airsim import Air, Node, Reaction, Reception
from .state import EndDeviceState, InitiatorState, handle_frame, handle_initiator_frame, settle


class EndDeviceNode(Node):
    """A bulb on the air. Listening channel and short address follow its state."""

    def __init__(self, node_id, state: EndDeviceState, position=(0.0, 0.0), tx_power_dbm=0.0, **kw):
        super().__init__(node_id, position, tx_power_dbm, state.channel, state.extended_addr, **kw)
        self.state = state

    @property
    def channel(self) -> int:
        return self.state.channel

    @property
    def short_addr(self):
        return self.state.net.short_addr if self.state.net else None

    @property
    def auto_ack(self) -> bool:
        return not self.state.factory_new

    def receive(self, air: Air, reception: Reception) -> Reaction:
        return handle_frame(self.state, reception.frame, reception.rssi_dbm, air.now, air.rng)

    def settle(self, now: int) -> list[str]:
        return settle(self.state, now)


class InitiatorNode(Node):
    """A bridge, gateway or hub. ``tune`` temporarily moves it off its network channel."""

    def __init__(self, node_id, state: InitiatorState, position=(0.0, 0.0), tx_power_dbm=0.0, **kw):
        super().__init__(node_id, position, tx_power_dbm, state.channel, state.extended_addr, **kw)
        self.state = state
        self.ack_enabled = True

    @property
    def channel(self) -> int:
        return self.tuned if self.tuned is not None else self.state.channel

    @property
    def short_addr(self):
        return self.state.net.short_addr if self.state.net else None

    @property
    def auto_ack(self) -> bool:
        return self.ack_enabled and not self.state.factory_new

    def next_seq(self) -> int:
        return self.state.take_seq()

    def receive(self, air: Air, reception: Reception) -> Reaction:
        self.inbox.append(reception)
        return handle_initiator_frame(self.state, reception.frame, reception.rssi_dbm, air.now, air.rng)

    def settle(self, now: int) -> list[str]:
        return []
