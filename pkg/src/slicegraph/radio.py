"""Rate and channel math: the linear rate law, CQI tooling, log-distance path loss."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable

from slicegraph.domain import RadioParams, UserProfile, ValidationError

LN10 = math.log(10.0)

# Coefficients at or below this are treated as a dead channel.
ZERO_COEFF = 1e-30


class ZeroCapacityChannel(ValueError):
    """The channel cannot carry any rate at the given SNR."""


def spectral_coefficient(alpha: float, snr_db: float) -> float:
    """Achievable rate per MHz: alpha * log10(1 + 10^(snr_db/10))."""
    return alpha * math.log1p(10.0 ** (snr_db / 10.0)) / LN10


def user_rate(alpha: float, bw_mhz: float, snr_db: float) -> float:
    """Rate in Mbps for a bandwidth grant; linear in bandwidth."""
    return spectral_coefficient(alpha, snr_db) * bw_mhz


def bw_for_rate(alpha: float, rate_mbps: float, snr_db: float) -> float:
    """Minimal bandwidth achieving the target rate."""
    if rate_mbps == 0:
        return 0.0
    coeff = spectral_coefficient(alpha, snr_db)
    if coeff <= ZERO_COEFF:
        raise ZeroCapacityChannel(f"zero-capacity channel at {snr_db} dB")
    return rate_mbps / coeff


def snr_for_coefficient(alpha: float, coefficient: float) -> float:
    """Invert the rate law: SNR in dB whose spectral coefficient is given."""
    if coefficient <= 0:
        raise ValueError("coefficient must be positive")
    return 10.0 * math.log10(math.expm1(coefficient / alpha * LN10))


def snr_from_geometry(radio: RadioParams, distance_m: float) -> float:
    """Log-distance link budget: tx - pathloss - noise floor, all in dB."""
    if distance_m < 1.0:
        raise ValueError(f"distance must be >= 1 m, got {distance_m}")
    pathloss = radio.ref_loss_db + 10.0 * radio.pathloss_exponent * math.log10(distance_m)
    return radio.tx_power_dbm - pathloss - radio.noise_dbm


@dataclass(frozen=True)
class CqiTable:
    """CQI index 1..15 mapped to spectral efficiency in Mbps per MHz."""

    efficiencies: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.efficiencies) != 15:
            raise ValidationError("CQI table needs exactly 15 entries")
        for lo, hi in zip(self.efficiencies, self.efficiencies[1:]):
            if hi <= lo:
                raise ValidationError("CQI efficiencies must be strictly increasing")

    def efficiency(self, index: int) -> float:
        if not 1 <= index <= 15:
            raise ValueError(f"CQI index out of range: {index}")
        return self.efficiencies[index - 1]


def default_cqi_table(low: float = 1.0, high: float = 15.133) -> CqiTable:
    # Geometric spacing between the anchor efficiencies.
    ratio = (high / low) ** (1.0 / 14.0)
    return CqiTable(tuple(low * ratio**i for i in range(15)))


def cqi_index_to_snr(index: int, table: CqiTable, alpha: float) -> float:
    """SNR in dB whose spectral coefficient equals the table efficiency."""
    return snr_for_coefficient(alpha, table.efficiency(index))


# --- SNR override file (stands in for externally computed channel maps) ----

def load_snr_overrides(path: str | Path) -> dict[int, float]:
    """JSON map of user_id -> snr_db."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"snr file parse error at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ValidationError("snr file must be a JSON object of user_id -> snr_db")
    return {int(uid): float(snr) for uid, snr in data.items()}


def apply_snr_overrides(
    users: Iterable[UserProfile], overrides: dict[int, float]
) -> list[UserProfile]:
    return [
        replace(u, snr_db=overrides[u.id]) if u.id in overrides else u for u in users
    ]
