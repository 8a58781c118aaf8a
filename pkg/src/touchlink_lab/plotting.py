"""Range table and figure for the calibrated path-loss model."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .airsim import PathLossModel, max_distance, rssi  # noqa: E402
from .devices.profiles import PROFILES  # noqa: E402

BULB_PROFILES = ("hue-bulb", "lightify-bulb", "link-bulb")
RANGE_COLUMNS = ("profile", "threshold_dbm", "legit_tx_dbm", "legit_max_m", "attack_tx_dbm", "attack_max_m")


@dataclass(frozen=True)
class RangeRow:
    profile: str
    threshold_dbm: float
    legit_tx_dbm: float
    legit_max_m: float
    attack_tx_dbm: float
    attack_max_m: float

    def tsv(self) -> str:
        return "\t".join(
            [
                self.profile,
                f"{self.threshold_dbm:.1f}",
                f"{self.legit_tx_dbm:.1f}",
                f"{self.legit_max_m:.2f}",
                f"{self.attack_tx_dbm:.1f}",
                f"{self.attack_max_m:.2f}",
            ]
        )


def range_rows(model: PathLossModel, legit_tx_dbm: float, attack_tx_dbm: float, profiles=BULB_PROFILES) -> list[RangeRow]:
    rows = []
    for name in profiles:
        threshold = PROFILES[name].effective_threshold_dbm
        rows.append(
            RangeRow(
                name,
                threshold,
                legit_tx_dbm,
                max_distance(model, legit_tx_dbm, threshold),
                attack_tx_dbm,
                max_distance(model, attack_tx_dbm, threshold),
            )
        )
    return rows


def range_table(rows: list[RangeRow]) -> str:
    return "\t".join(RANGE_COLUMNS) + "\n" + "".join(r.tsv() + "\n" for r in rows)


def plot_range(model: PathLossModel, rows: list[RangeRow], path) -> Path:
    """RSSI against distance for both transmit powers, with each profile's acceptance threshold."""
    path = Path(path)
    far = max(r.attack_max_m for r in rows) * 1.3
    xs = [10 ** (k / 100) for k in range(-100, int(100 * math.log10(far)) + 1)]
    fig, ax = plt.subplots(figsize=(7, 4.2))
    for tx, style in ((rows[0].legit_tx_dbm, "-"), (rows[0].attack_tx_dbm, "--")):
        ax.plot(xs, [rssi(model, tx, x) for x in xs], style, color="black", lw=1.2, label=f"tx {tx:+.1f} dBm")
    for row, color in zip(rows, ("tab:blue", "tab:orange", "tab:green")):
        ax.axhline(row.threshold_dbm, color=color, lw=0.8, ls=":")
        ax.plot([row.attack_max_m], [row.threshold_dbm], "o", color=color, label=f"{row.profile} {row.attack_max_m:.1f} m")
        ax.plot([row.legit_max_m], [row.threshold_dbm], "s", color=color, mfc="none")
    ax.set_xscale("log")
    ax.set_xlabel("distance (m)")
    ax.set_ylabel("RSSI at device (dBm)")
    ax.grid(True, which="both", lw=0.3, alpha=0.5)
    ax.legend(fontsize=8, loc="upper right")
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
