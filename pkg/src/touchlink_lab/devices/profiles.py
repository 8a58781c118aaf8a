"""Per-vendor behaviour observed on real hardware, expressed as constants."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

ACK_DEADLINE_US = 864
TOUCHLINK_RSSI_THRESHOLD_DBM = -40.0


class ScanPolicy(str, Enum):
    ALWAYS = "always"
    BUTTON_WINDOW = "button-window"
    NEVER = "never"


class Aftermath(str, Enum):
    RESTORE_PREVIOUS = "restore-previous"
    DEFAULT_STATE = "default-state"


@dataclass(frozen=True)
class VendorProfile:
    name: str
    is_initiator: bool
    requires_mac_ack: bool
    ack_deadline_us: int
    scan_response_policy: ScanPolicy
    button_window_s: int
    max_identify_s: int
    default_identify_s: int
    blink_aftermath: Aftermath
    supports_physical_reset: bool
    touchlink_rssi_threshold_dbm: float = TOUCHLINK_RSSI_THRESHOLD_DBM
    # negative = less sensitive than a Hue bulb; raises the effective threshold
    rx_sensitivity_offset_db: float = 0.0
    # initiators only: who may reset us via ResetToFactoryNewRequest
    reset_policy: ScanPolicy = ScanPolicy.ALWAYS
    # initiators only: adopt a scanned device's newer network settings
    adopts_newer_network: bool = False

    def __post_init__(self):
        if self.requires_mac_ack and self.ack_deadline_us != ACK_DEADLINE_US:
            raise ValueError(f"ack deadline must be {ACK_DEADLINE_US} us when an ACK is required")
        if not 0 <= self.max_identify_s <= 0xFFFE:
            raise ValueError("max_identify_s must be within 0..65534")

    @property
    def effective_threshold_dbm(self) -> float:
        return self.touchlink_rssi_threshold_dbm - self.rx_sensitivity_offset_db

    def effective_identify_s(self, duration: int) -> int:
        """Blink length actually performed for a requested identify duration."""
        if duration == 0:
            return 0
        if duration == 0xFFFF:
            return self.default_identify_s
        return min(duration, self.max_identify_s)


def _hms(h: int, m: int, s: int) -> int:
    return 3600 * h + 60 * m + s


HUE_BULB = VendorProfile(
    name="hue-bulb",
    is_initiator=False,
    requires_mac_ack=False,
    ack_deadline_us=0,
    scan_response_policy=ScanPolicy.ALWAYS,
    button_window_s=0,
    max_identify_s=_hms(18, 12, 14),
    default_identify_s=3,
    blink_aftermath=Aftermath.RESTORE_PREVIOUS,
    supports_physical_reset=False,
)

LIGHTIFY_BULB = VendorProfile(
    name="lightify-bulb",
    is_initiator=False,
    requires_mac_ack=True,
    ack_deadline_us=ACK_DEADLINE_US,
    scan_response_policy=ScanPolicy.ALWAYS,
    button_window_s=0,
    max_identify_s=_hms(9, 12, 53),
    default_identify_s=3,
    blink_aftermath=Aftermath.DEFAULT_STATE,
    supports_physical_reset=True,
    rx_sensitivity_offset_db=-7.8,
)

LINK_BULB = VendorProfile(
    name="link-bulb",
    is_initiator=False,
    requires_mac_ack=True,
    ack_deadline_us=ACK_DEADLINE_US,
    scan_response_policy=ScanPolicy.ALWAYS,
    button_window_s=0,
    max_identify_s=_hms(9, 6, 31),
    default_identify_s=3,
    blink_aftermath=Aftermath.DEFAULT_STATE,
    supports_physical_reset=True,
    rx_sensitivity_offset_db=-2.4,
)

HUE_BRIDGE = VendorProfile(
    name="hue-bridge",
    is_initiator=True,
    requires_mac_ack=False,
    ack_deadline_us=0,
    scan_response_policy=ScanPolicy.BUTTON_WINDOW,
    button_window_s=30,
    max_identify_s=0,
    default_identify_s=0,
    blink_aftermath=Aftermath.RESTORE_PREVIOUS,
    supports_physical_reset=False,
    reset_policy=ScanPolicy.BUTTON_WINDOW,
    adopts_newer_network=True,
)

LIGHTIFY_GATEWAY = VendorProfile(
    name="lightify-gateway",
    is_initiator=True,
    requires_mac_ack=False,
    ack_deadline_us=0,
    scan_response_policy=ScanPolicy.ALWAYS,
    button_window_s=0,
    max_identify_s=0,
    default_identify_s=0,
    blink_aftermath=Aftermath.RESTORE_PREVIOUS,
    supports_physical_reset=False,
    reset_policy=ScanPolicy.ALWAYS,
)

LINK_HUB = VendorProfile(
    name="link-hub",
    is_initiator=True,
    requires_mac_ack=False,
    ack_deadline_us=0,
    scan_response_policy=ScanPolicy.NEVER,
    button_window_s=0,
    max_identify_s=0,
    default_identify_s=0,
    blink_aftermath=Aftermath.RESTORE_PREVIOUS,
    supports_physical_reset=False,
    reset_policy=ScanPolicy.NEVER,
)

PROFILES: dict[str, VendorProfile] = {
    p.name: p for p in (HUE_BULB, LIGHTIFY_BULB, LINK_BULB, HUE_BRIDGE, LIGHTIFY_GATEWAY, LINK_HUB)
}


def get_profile(name: str) -> VendorProfile:
    try:
        return PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown profile {name!r}; expected one of {', '.join(PROFILES)}") from None
