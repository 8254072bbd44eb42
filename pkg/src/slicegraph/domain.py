"""Core data model: slices, users, allocations, ledgers, and scenario files.

All types are immutable value objects; state updates go through the
``with_*`` helpers which return new instances.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Any, Iterable, Sequence

if TYPE_CHECKING:
    from slicegraph.optimizer import FeasibleInterval


class ValidationError(ValueError):
    """A scenario or domain object violates one of its invariants."""


class SliceKind(str, Enum):
    EMBB = "eMBB"
    URLLC = "URLLC"

    def other(self) -> SliceKind:
        return SliceKind.URLLC if self is SliceKind.EMBB else SliceKind.EMBB

    @classmethod
    def parse(cls, name: str) -> SliceKind:
        for kind in cls:
            if kind.value.lower() == str(name).strip().lower():
                return kind
        raise ValidationError(f"unknown slice kind {name!r}")


@dataclass(frozen=True)
class SliceConfig:
    """Per-slice bandwidth budget, per-user bandwidth bounds, and QoS ranges."""

    kind: SliceKind
    budget_mhz: float
    bw_min_mhz: float
    bw_max_mhz: float
    rate_min_mbps: float
    rate_max_mbps: float
    latency_max_ms: float

    def __post_init__(self) -> None:
        if self.budget_mhz <= 0:
            raise ValidationError(f"non-positive budget for {self.kind.value}")
        if self.bw_min_mhz <= 0 or self.bw_min_mhz > self.bw_max_mhz:
            raise ValidationError(f"inverted bandwidth bounds for {self.kind.value}")
        if self.bw_max_mhz > self.budget_mhz:
            raise ValidationError(
                f"per-user bandwidth cap exceeds budget for {self.kind.value}"
            )
        if self.rate_min_mbps <= 0 or self.rate_min_mbps > self.rate_max_mbps:
            raise ValidationError(f"inverted rate bounds for {self.kind.value}")
        if self.latency_max_ms <= 0:
            raise ValidationError(f"non-positive latency bound for {self.kind.value}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "budget_mhz": self.budget_mhz,
            "bw_min_mhz": self.bw_min_mhz,
            "bw_max_mhz": self.bw_max_mhz,
            "rate_min_mbps": self.rate_min_mbps,
            "rate_max_mbps": self.rate_max_mbps,
            "latency_max_ms": self.latency_max_ms,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> SliceConfig:
        return cls(
            kind=SliceKind.parse(_require(data, "kind", "slice")),
            budget_mhz=float(_require(data, "budget_mhz", "slice")),
            bw_min_mhz=float(_require(data, "bw_min_mhz", "slice")),
            bw_max_mhz=float(_require(data, "bw_max_mhz", "slice")),
            rate_min_mbps=float(_require(data, "rate_min_mbps", "slice")),
            rate_max_mbps=float(_require(data, "rate_max_mbps", "slice")),
            latency_max_ms=float(_require(data, "latency_max_ms", "slice")),
        )


# Default alpha makes the rate law coincide with Shannon capacity in log2.
DEFAULT_ALPHA = 1.0 / math.log10(2.0)


@dataclass(frozen=True)
class RadioParams:
    """Engineering coefficient plus the log-distance link-budget parameters."""

    alpha: float = DEFAULT_ALPHA
    tx_power_dbm: float = 30.0
    noise_dbm: float = -106.0
    pathloss_exponent: float = 3.0
    ref_loss_db: float = 40.0

    def __post_init__(self) -> None:
        if self.alpha <= 0:
            raise ValidationError("alpha must be positive")
        if self.pathloss_exponent < 1:
            raise ValidationError("pathloss exponent must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return {
            "alpha": self.alpha,
            "tx_power_dbm": self.tx_power_dbm,
            "noise_dbm": self.noise_dbm,
            "pathloss_exponent": self.pathloss_exponent,
            "ref_loss_db": self.ref_loss_db,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RadioParams:
        return cls(
            alpha=float(data.get("alpha", DEFAULT_ALPHA)),
            tx_power_dbm=float(data.get("tx_power_dbm", 30.0)),
            noise_dbm=float(data.get("noise_dbm", -106.0)),
            pathloss_exponent=float(data.get("pathloss_exponent", 3.0)),
            ref_loss_db=float(data.get("ref_loss_db", 40.0)),
        )


@dataclass(frozen=True)
class IntentLabel:
    slice: SliceKind
    required_rate_mbps: float
    required_latency_ms: float

    def __post_init__(self) -> None:
        if self.required_rate_mbps <= 0:
            raise ValidationError("required rate must be positive")
        if self.required_latency_ms <= 0:
            raise ValidationError("required latency must be positive")

    def to_dict(self) -> dict[str, Any]:
        return {
            "slice": self.slice.value,
            "required_rate_mbps": self.required_rate_mbps,
            "required_latency_ms": self.required_latency_ms,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> IntentLabel:
        return cls(
            slice=SliceKind.parse(_require(data, "slice", "intent")),
            required_rate_mbps=float(_require(data, "required_rate_mbps", "intent")),
            required_latency_ms=float(_require(data, "required_latency_ms", "intent")),
        )


@dataclass(frozen=True)
class UserProfile:
    id: int
    snr_db: float
    request_text: str
    ground_truth: IntentLabel

    def __post_init__(self) -> None:
        if self.id < 1:
            raise ValidationError(f"user id must be positive, got {self.id}")
        if not self.request_text:
            raise ValidationError(f"empty request text for user {self.id}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "snr_db": self.snr_db,
            "request_text": self.request_text,
            "ground_truth": self.ground_truth.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> UserProfile:
        return cls(
            id=int(_require(data, "id", "user")),
            snr_db=float(_require(data, "snr_db", "user")),
            request_text=str(_require(data, "request_text", "user")),
            ground_truth=IntentLabel.from_dict(_require(data, "ground_truth", "user")),
        )


@dataclass(frozen=True)
class Allocation:
    """One user's granted bandwidth and the raw rate the rate law yields for it.

    ``rate_mbps`` is the uncapped value of the rate law; any rate ceiling a
    slice imposes is applied where rates are reported, not here.
    """

    user_id: int
    slice: SliceKind
    bandwidth_mhz: float
    rate_mbps: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "user_id": self.user_id,
            "slice": self.slice.value,
            "bandwidth_mhz": self.bandwidth_mhz,
            "rate_mbps": self.rate_mbps,
        }


@dataclass(frozen=True)
class SliceLedger:
    """Admission record for one slice.

    ``intervals`` keeps each admitted user's feasible bandwidth interval so
    later arrivals can trigger an exact re-fill of the whole slice.
    """

    config: SliceConfig
    allocations: tuple[Allocation, ...] = ()
    intervals: tuple[FeasibleInterval, ...] = ()

    def __post_init__(self) -> None:
        ids = [a.user_id for a in self.allocations]
        if len(ids) != len(set(ids)):
            raise ValidationError("duplicate allocation in ledger")
        if self.allocated_mhz() > self.config.budget_mhz * (1 + 1e-12):
            raise ValidationError(f"ledger over budget for {self.config.kind.value}")

    def allocated_mhz(self) -> float:
        return math.fsum(a.bandwidth_mhz for a in self.allocations)

    def free_mhz(self) -> float:
        return self.config.budget_mhz - self.allocated_mhz()

    def user_ids(self) -> set[int]:
        return {a.user_id for a in self.allocations}

    def to_dict(self) -> dict[str, Any]:
        return {
            "config": self.config.to_dict(),
            "allocations": [a.to_dict() for a in self.allocations],
        }


@dataclass(frozen=True)
class NetworkState:
    """Who holds bandwidth in which slice, plus rejections and the slot clock."""

    embb: SliceLedger
    urllc: SliceLedger
    rejected: tuple[tuple[int, str], ...] = ()
    slot: int = 0

    def ledger(self, kind: SliceKind) -> SliceLedger:
        return self.embb if kind is SliceKind.EMBB else self.urllc

    def with_ledger(self, kind: SliceKind, ledger: SliceLedger) -> NetworkState:
        if kind is SliceKind.EMBB:
            return replace(self, embb=ledger)
        return replace(self, urllc=ledger)

    def with_rejection(self, user_id: int, reason: str) -> NetworkState:
        return replace(self, rejected=self.rejected + ((user_id, reason),))

    def next_slot(self) -> NetworkState:
        return replace(self, slot=self.slot + 1)

    def admitted_ids(self) -> set[int]:
        return self.embb.user_ids() | self.urllc.user_ids()

    def seen_ids(self) -> set[int]:
        return self.admitted_ids() | {uid for uid, _ in self.rejected}

    def check_partition(self) -> None:
        """Every user id sits in at most one of embb, urllc, rejected."""
        e, u = self.embb.user_ids(), self.urllc.user_ids()
        r = {uid for uid, _ in self.rejected}
        if e & u or e & r or u & r:
            raise ValidationError("user present in more than one partition")
        if len(self.rejected) != len(r):
            raise ValidationError("duplicate rejection entry")

    def to_dict(self) -> dict[str, Any]:
        return {
            "embb": self.embb.to_dict(),
            "urllc": self.urllc.to_dict(),
            "rejected": [[uid, reason] for uid, reason in self.rejected],
            "slot": self.slot,
        }


def empty_network(configs: dict[SliceKind, SliceConfig]) -> NetworkState:
    return NetworkState(
        embb=SliceLedger(config=configs[SliceKind.EMBB]),
        urllc=SliceLedger(config=configs[SliceKind.URLLC]),
    )


@dataclass(frozen=True)
class GeneratorSpec:
    """Optional per-trial user generation recipe embedded in a scenario file."""

    n: int
    radius_m: float = 500.0
    min_distance_m: float = 1.0

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValidationError("generator n must be >= 1")
        if self.min_distance_m < 1.0 or self.min_distance_m > self.radius_m:
            raise ValidationError("generator distance range invalid")

    def to_dict(self) -> dict[str, Any]:
        return {"n": self.n, "radius_m": self.radius_m, "min_distance_m": self.min_distance_m}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> GeneratorSpec:
        return cls(
            n=int(_require(data, "n", "generator")),
            radius_m=float(data.get("radius_m", 500.0)),
            min_distance_m=float(data.get("min_distance_m", 1.0)),
        )


@dataclass(frozen=True)
class Scenario:
    radio: RadioParams
    slices: tuple[SliceConfig, ...]
    users: tuple[UserProfile, ...]
    seed: int = 0
    generator: GeneratorSpec | None = None

    def configs(self) -> dict[SliceKind, SliceConfig]:
        return {s.kind: s for s in self.slices}

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {
            "radio": self.radio.to_dict(),
            "slices": [s.to_dict() for s in self.slices],
            "users": [u.to_dict() for u in self.users],
            "seed": self.seed,
        }
        if self.generator is not None:
            data["generator"] = self.generator.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Scenario:
        radio = RadioParams.from_dict(_require(data, "radio", "scenario"))
        slices = [SliceConfig.from_dict(s) for s in _require(data, "slices", "scenario")]
        users = [UserProfile.from_dict(u) for u in data.get("users", [])]
        generator = None
        if data.get("generator") is not None:
            generator = GeneratorSpec.from_dict(data["generator"])
        scenario = validate_scenario(slices, radio, users)
        return replace(scenario, seed=int(data.get("seed", 0)), generator=generator)


def validate_scenario(
    slices: Sequence[SliceConfig],
    radio: RadioParams,
    users: Sequence[UserProfile],
) -> Scenario:
    """Check cross-object invariants and assemble a Scenario.

    Raises ValidationError naming the first violated invariant. Per-object
    invariants are enforced by the constructors, so only relational checks
    live here.
    """
    kinds = [s.kind for s in slices]
    if sorted(k.value for k in kinds) != ["URLLC", "eMBB"]:
        raise ValidationError("scenario needs exactly one eMBB and one URLLC slice")
    seen: set[int] = set()
    for user in users:
        if user.id in seen:
            raise ValidationError(f"duplicate user id {user.id}")
        seen.add(user.id)
    return Scenario(radio=radio, slices=tuple(slices), users=tuple(users))


def _require(data: dict[str, Any], key: str, where: str) -> Any:
    if not isinstance(data, dict) or key not in data:
        raise ValidationError(f"missing field {key!r} in {where}")
    return data[key]


# --- file I/O -------------------------------------------------------------

def load_scenario(path: str | Path) -> Scenario:
    raw = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"scenario parse error at line {exc.lineno}: {exc.msg}") from exc
    return Scenario.from_dict(data)


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario.to_dict(), indent=2) + "\n", encoding="utf-8")


def load_users_jsonl(path: str | Path) -> list[UserProfile]:
    """Users-file alternative: one UserProfile JSON object per line."""
    users = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            users.append(UserProfile.from_dict(json.loads(line)))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"users parse error at line {lineno}: {exc.msg}") from exc
    return users


def dump_users_jsonl(users: Iterable[UserProfile], path: str | Path) -> None:
    lines = [json.dumps(u.to_dict(), sort_keys=True) for u in users]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def canonical_json(value: Any) -> str:
    """Stable serialization used for digests and replay cassettes."""
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
