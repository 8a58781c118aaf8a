"""ZLL end devices and initiators with vendor-specific behaviour."""

from .commissioning import (
    AckTimeout,
    CommissioningError,
    JoinRefused,
    JoinReport,
    NoDeviceFound,
    RecoveryReport,
    ScanHit,
    bridge_touchlink_recovery,
    deliver_user_command,
    run_touchlink_join,
    send_user_command,
    touchlink_scan,
)
from .nodes import EndDeviceNode, InitiatorNode
from .profiles import PROFILES, Aftermath, ScanPolicy, VendorProfile, get_profile
from .state import (
    DEFAULT_LAMP,
    EndDeviceState,
    InitiatorState,
    LampState,
    NetworkParams,
    Unsupported,
    apply_command,
    handle_frame,
    handle_initiator_frame,
    physical_reset,
    press_button,
    rejoin_via_classical,
    seal_command,
    settle,
    snapshot_line,
)

__all__ = [
    "AckTimeout",
    "CommissioningError",
    "JoinRefused",
    "JoinReport",
    "NoDeviceFound",
    "RecoveryReport",
    "ScanHit",
    "bridge_touchlink_recovery",
    "deliver_user_command",
    "run_touchlink_join",
    "send_user_command",
    "touchlink_scan",
    "EndDeviceNode",
    "InitiatorNode",
    "PROFILES",
    "Aftermath",
    "ScanPolicy",
    "VendorProfile",
    "get_profile",
    "DEFAULT_LAMP",
    "EndDeviceState",
    "InitiatorState",
    "LampState",
    "NetworkParams",
    "Unsupported",
    "apply_command",
    "handle_frame",
    "handle_initiator_frame",
    "physical_reset",
    "press_button",
    "rejoin_via_classical",
    "seal_command",
    "settle",
    "snapshot_line",
]
