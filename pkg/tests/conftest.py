from __future__ import annotations

import pytest
from hypothesis import strategies as st

from touchlink_lab import wire
from touchlink_lab.airsim import Air
from touchlink_lab.attacks import AttackerConfig, AttackerNode
from touchlink_lab.crypto import Key128
from touchlink_lab.devices import (
    EndDeviceNode,
    EndDeviceState,
    InitiatorNode,
    InitiatorState,
    NetworkParams,
    get_profile,
)

MASTER = Key128.from_hex("9f5595f10257c8a469cbbd15e4e3ac6b")
NETWORK_KEY = Key128.from_hex("00112233445566778899aabbccddeeff")

# -- acceptance summary ----------------------------------------------------
# Tests marked @pytest.mark.acceptance("AC-n", "title") roll up into one
# pass/fail line per criterion at the end of the run.

_criteria: dict[str, list] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or not (rep.when == "call" or rep.failed or rep.skipped):
        return
    key, title = marker.args
    entry = _criteria.setdefault(key, [title, True])
    entry[1] = entry[1] and rep.passed


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_criteria, key=lambda k: int(k.split("-")[1])):
        title, ok = _criteria[key]
        terminalreporter.write_line(f"{key} {'PASS' if ok else 'FAIL'} {title}")


# -- frame strategies -------------------------------------------------------

u8 = st.integers(0, 0xFF)
u16 = st.integers(0, 0xFFFF)
u32 = st.integers(0, 0xFFFFFFFF)
u64 = st.integers(0, 2**64 - 1)
tid = st.integers(1, 0xFFFFFFFF)
channel = st.integers(11, 26)
key_bytes = st.binary(min_size=16, max_size=16)


@st.composite
def headers(draw):
    src_short = draw(st.none() | u16)
    src_ext = draw(u64) if src_short is None else draw(st.none() | u64)
    dst_short = draw(st.none() | u16)
    dst_ext = draw(u64) if dst_short is None else draw(st.none() | u64)
    return wire.MacHeader(
        sequence_number=draw(u8),
        src_pan=draw(u16),
        dst_pan=draw(u16),
        src_short=src_short,
        dst_short=dst_short,
        src_extended=src_ext,
        dst_extended=dst_ext,
        ack_requested=draw(st.booleans()),
    )


records = st.builds(wire.SubDeviceRecord, u64, u8, u16, u16)

commands = st.one_of(
    st.builds(wire.ScanRequest, tid),
    st.builds(wire.ScanResponse, tid, u32, u16, u8, channel, u16, u16, u64, st.booleans(), u8),
    st.builds(wire.DeviceInfoRequest, tid),
    st.builds(wire.DeviceInfoResponse, tid, st.lists(records, max_size=16).map(tuple)),
    st.builds(wire.IdentifyRequest, tid, u16),
    st.builds(wire.ResetToFactoryNewRequest, tid),
    st.builds(wire.NetworkStartRequest, tid, u64, u8, key_bytes, channel, u16),
    st.builds(wire.NetworkJoinEndDeviceRequest, tid, u64, u8, key_bytes, channel, u16, u8, u16),
    st.builds(wire.NetworkJoinEndDeviceResponse, tid, u8),
    st.builds(wire.NetworkUpdateRequest, tid, u64, u8, channel, u16, u16),
)

frames = st.one_of(
    st.builds(wire.AckFrame, u8),
    st.builds(wire.InterPanFrame, headers(), commands),
    st.builds(wire.SecuredNwkFrame, headers(), u16, u16, u32, u8, st.binary(max_size=64), u32),
)


# -- small worlds -----------------------------------------------------------


def home_network(channel: int = 11, key: Key128 = NETWORK_KEY, update_id: int = 0) -> NetworkParams:
    return NetworkParams(0x1A2B, 0x00178801AABBCCDD, channel, key, update_id, 0x0000)


def add_bulb(air: Air, node_id: str, profile: str, position, ext: int) -> EndDeviceNode:
    state = EndDeviceState(get_profile(profile), ext, MASTER)
    return air.add(EndDeviceNode(node_id, state, position))


def add_initiator(air: Air, node_id: str, profile: str, position, ext: int, net=None) -> InitiatorNode:
    state = InitiatorState(get_profile(profile), ext, MASTER, net)
    return air.add(InitiatorNode(node_id, state, position))


def add_attacker(air: Air, node_id="eve", position=(5.0, 0.0), tx=26.0, master=None, spoof=None) -> AttackerNode:
    cfg = AttackerConfig(tx_power_dbm=tx, position=position, master_key=master, spoof_extended_src=spoof)
    return air.add(AttackerNode(node_id, cfg))


BULB_EXT = {
    "hue-bulb": 0x00178801000000A1,
    "lightify-bulb": 0x84182600000000B2,
    "link-bulb": 0x000D6F00000000C3,
}
BRIDGE_EXT = {
    "hue-bulb": 0x0017880100000001,
    "lightify-bulb": 0x8418260000000001,
    "link-bulb": 0x000D6F0000000001,
}
BRIDGE_FOR = {"hue-bulb": "hue-bridge", "lightify-bulb": "lightify-gateway", "link-bulb": "link-hub"}


@pytest.fixture
def make_home():
    """A vendor controller plus one bulb of ``profile`` placed 0.5 m apart, not yet joined."""

    def build(profile: str = "hue-bulb", seed: int = 1, channel: int = 11):
        air = Air(seed=seed)
        bridge = add_initiator(air, "bridge", BRIDGE_FOR[profile], (0.0, 0.0), BRIDGE_EXT[profile], home_network(channel))
        bulb = add_bulb(air, "bulb", profile, (0.5, 0.0), BULB_EXT[profile])
        return air, bridge, bulb

    return build
