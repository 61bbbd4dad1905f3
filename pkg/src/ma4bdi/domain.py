"""Shared value types for the fusion pipeline.

Everything here is immutable. The reliability ledger is a value too: updates
produce a new ledger, the old one stays valid for whoever still holds it.
"""

from __future__ import annotations

import math
from decimal import Decimal
from dataclasses import dataclass, field, fields
from datetime import date, datetime, time, timezone
from enum import Enum
from types import MappingProxyType
from typing import Iterable, Mapping, Optional, Union


class PipelineError(Exception):
    """Base class for every error raised by the pipeline.

    ``code`` is a stable machine-readable identifier such as
    ``"out-of-range-field"``; ``field`` names the offending input when there
    is one.
    """

    def __init__(self, code: str, message: str = "", field: Optional[str] = None):
        self.code = code
        self.field = field
        detail = message or code
        if field is not None and field not in detail:
            detail = f"{detail} ({field})"
        super().__init__(detail)


class ValidationError(PipelineError):
    pass


class UnknownSourceError(PipelineError):
    def __init__(self, source_id: str, condition: "Condition | None" = None):
        where = f" under {condition.value}" if condition is not None else ""
        super().__init__("unknown-source", f"no ledger entry for {source_id!r}{where}", "source_id")
        self.source_id = source_id


class SourceKind(str, Enum):
    OFFICIAL_SOCIAL = "official_social"
    STANDARD_SOCIAL = "standard_social"
    CROWDSOURCING = "crowdsourcing"
    NEWSPAPER = "newspaper"
    LOOP_SENSOR = "loop_sensor"
    GPS = "gps"
    CCTV = "cctv"
    UAV = "uav"
    WEATHER_SERVICE = "weather_service"


class Condition(str, Enum):
    CLEAR = "clear"
    RAIN = "rain"
    SNOW = "snow"
    FOG = "fog"
    UNKNOWN = "unknown"


class Knowledge(str, Enum):
    CONGESTED = "congested"
    NOT_CONGESTED = "not_congested"


@dataclass(frozen=True)
class SourceDescriptor:
    source_id: str
    source_kind: SourceKind
    display_name: str = ""


# -- payloads -----------------------------------------------------------------


@dataclass(frozen=True)
class TextPayload:
    text: str
    kind = "text"


@dataclass(frozen=True)
class GpsPayload:
    vehicle_id: str
    lat: float
    lon: float
    speed: float
    kind = "gps"


@dataclass(frozen=True)
class LoopPayload:
    road_id: str
    vehicle_count: int
    avg_speed: float
    kind = "loop"


@dataclass(frozen=True)
class VehicleCountPayload:
    """Vehicle count already extracted from an image or video frame."""

    road_id: str
    vehicle_count: int
    kind = "count"


@dataclass(frozen=True)
class WeatherPayload:
    condition: Condition
    kind = "weather"


DataPayload = Union[TextPayload, GpsPayload, LoopPayload, VehicleCountPayload, WeatherPayload]

PAYLOAD_KINDS = ("text", "gps", "loop", "count", "weather")

# which payload a source of a given kind may emit
ALLOWED_PAYLOADS: Mapping[SourceKind, str] = MappingProxyType(
    {
        SourceKind.OFFICIAL_SOCIAL: "text",
        SourceKind.STANDARD_SOCIAL: "text",
        SourceKind.CROWDSOURCING: "text",
        SourceKind.NEWSPAPER: "text",
        SourceKind.LOOP_SENSOR: "loop",
        SourceKind.GPS: "gps",
        SourceKind.CCTV: "count",
        SourceKind.UAV: "count",
        SourceKind.WEATHER_SERVICE: "weather",
    }
)


@dataclass(frozen=True)
class Observation:
    payload: DataPayload
    source: SourceDescriptor
    timestamp: datetime
    condition: Condition = Condition.UNKNOWN

    @property
    def kind(self) -> str:
        return self.payload.kind


@dataclass(frozen=True)
class Metadata:
    road_id: Optional[str] = None
    road_name: Optional[str] = None
    event_date: Optional[date] = None
    event_time: Optional[time] = None
    reason: Optional[str] = None
    resolution_date: Optional[date] = None
    resolution_time: Optional[time] = None
    extras: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if (self.resolution_date is None) != (self.resolution_time is None):
            raise ValidationError(
                "out-of-range-field",
                "resolution date and time must be both set or both null",
                "resolution_date",
            )
        object.__setattr__(self, "extras", MappingProxyType(dict(sorted(self.extras.items()))))

    def non_null_fields(self) -> frozenset[str]:
        names = {n for n in FIELD_NAMES if getattr(self, n) is not None}
        names.update(f"extras.{k}" for k in self.extras)
        return frozenset(names)

    @property
    def matchable(self) -> bool:
        return None not in (self.road_id, self.event_date, self.event_time)


FIELD_NAMES = tuple(f.name for f in fields(Metadata) if f.name != "extras")


@dataclass(frozen=True)
class ExtractedRecord:
    knowledge: Knowledge
    source: SourceDescriptor
    metadata: Metadata
    condition: Condition
    observed_at: datetime

    @property
    def source_id(self) -> str:
        return self.source.source_id


@dataclass(frozen=True, order=True)
class EventKey:
    road_id: str
    event_date: date
    window_start: time

    def __str__(self) -> str:
        return f"{self.road_id}/{self.event_date.isoformat()}/{self.window_start.strftime('%H:%M:%S')}"


@dataclass(frozen=True)
class GlobalInsight:
    event_key: EventKey
    knowledge: Knowledge
    metadata: Metadata
    score_congested: float
    score_not_congested: float
    contributing_sources: tuple[str, ...]

    def probability(self, label: Optional[Knowledge] = None) -> float:
        """Vote share of ``label`` (default: the winner); 0.5 when all weights are zero."""
        label = label or self.knowledge
        total = self.score_congested + self.score_not_congested
        if total == 0:
            return 0.5
        score = self.score_congested if label is Knowledge.CONGESTED else self.score_not_congested
        return score / total


@dataclass(frozen=True)
class StreamViewEntry:
    knowledge: Knowledge
    source: SourceDescriptor
    metadata: Metadata
    reliability: float
    produced_at: datetime


# -- reliability ledger -------------------------------------------------------

LedgerKey = tuple[str, Optional[Condition]]

@dataclass(frozen=True)
class ReliabilityLedger:
    """Per-source reliability indices, optionally specialised by condition.

    A key ``(source_id, None)`` is the unconditioned entry used whenever the
    active condition has no entry of its own.
    """

    entries: Mapping[LedgerKey, float] = field(default_factory=dict)
    floor: float = 0.0
    cap: float = 0.30
    delta: float = 0.05

    def __post_init__(self):
        if not (0.0 <= self.floor <= self.cap <= 1.0):
            raise ValidationError("out-of-range-field", "need 0 <= floor <= cap <= 1", "cap")
        if not (self.delta > 0 and math.isfinite(self.delta)):
            raise ValidationError("out-of-range-field", "delta must be positive", "delta")
        clean = {}
        for (source_id, cond), value in self.entries.items():
            if not source_id:
                raise ValidationError("out-of-range-field", "empty source id", "source_id")
            if cond is not None:
                cond = Condition(cond)
            value = float(value)
            if not (self.floor <= value <= self.cap):
                raise ValidationError(
                    "out-of-range-field",
                    f"index {value} for {source_id!r} outside [{self.floor}, {self.cap}]",
                    "index",
                )
            clean[(source_id, cond)] = value
        ordered = dict(sorted(clean.items(), key=lambda kv: _key_order(kv[0])))
        object.__setattr__(self, "entries", MappingProxyType(ordered))

    @classmethod
    def from_rows(cls, rows: Iterable[tuple], **params) -> "ReliabilityLedger":
        """Build from ``(source_id, condition_or_None, index)`` rows."""
        entries = {}
        for source_id, cond, value in rows:
            entries[(source_id, None if cond is None else Condition(cond))] = value
        return cls(entries, **params)

    def resolve_key(self, source_id: str, cond: Condition) -> LedgerKey:
        if cond is not None and (source_id, cond) in self.entries:
            return (source_id, cond)
        if (source_id, None) in self.entries:
            return (source_id, None)
        raise UnknownSourceError(source_id, cond)

    def lookup(self, source_id: str, cond: Condition) -> float:
        return self.entries[self.resolve_key(source_id, cond)]

    def clamp(self, value: float) -> float:
        return min(self.cap, max(self.floor, value))

    def step(self, value: float, agreed: bool) -> float:
        """Move ``value`` one delta up or down, then clamp.

        The sum is taken in decimal on the shortest float reprs, so configured
        values such as 0.15 - 0.05 land exactly on 0.1 instead of 0.0999...
        """
        d = Decimal(repr(self.delta))
        return self.clamp(float(Decimal(repr(value)) + (d if agreed else -d)))

    def with_updates(self, updates: Mapping[LedgerKey, float]) -> "ReliabilityLedger":
        merged = dict(self.entries)
        merged.update(updates)
        return ReliabilityLedger(merged, floor=self.floor, cap=self.cap, delta=self.delta)

    def sources(self) -> set[str]:
        return {s for s, _ in self.entries}


def _key_order(key: LedgerKey):
    source_id, cond = key
    return (source_id, "" if cond is None else cond.value)


def ledger_lookup(ledger: ReliabilityLedger, source_id: str, cond: Condition) -> float:
    return ledger.lookup(source_id, cond)


# -- validation ---------------------------------------------------------------


def _finite(value, name: str, low: float = -math.inf, high: float = math.inf) -> None:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError("out-of-range-field", f"{name} must be a number", name)
    if not math.isfinite(value) or not (low <= value <= high):
        raise ValidationError("out-of-range-field", f"{name}={value!r} out of range", name)


def _count(value, name: str) -> None:
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise ValidationError("out-of-range-field", f"{name} must be an integer >= 0", name)


def validate_observation(obs: Observation) -> Observation:
    """Check every invariant of ``obs`` and return it unchanged.

    Raises ValidationError with code ``malformed-timestamp``,
    ``payload-kind-mismatch`` or ``out-of-range-field``.
    """
    ts = obs.timestamp
    if not isinstance(ts, datetime):
        raise ValidationError("malformed-timestamp", "timestamp is not a datetime", "timestamp")
    if ts.tzinfo is None or ts.utcoffset() != timezone.utc.utcoffset(None):
        raise ValidationError("malformed-timestamp", "timestamp must be UTC", "timestamp")
    if ts.microsecond:
        raise ValidationError("malformed-timestamp", "timestamp has sub-second precision", "timestamp")

    source = obs.source
    if not isinstance(source, SourceDescriptor) or not source.source_id:
        raise ValidationError("out-of-range-field", "source id must be non-empty", "source_id")
    if not isinstance(source.source_kind, SourceKind):
        raise ValidationError("out-of-range-field", "unknown source kind", "source_kind")
    if not isinstance(obs.condition, Condition):
        raise ValidationError("out-of-range-field", "unknown condition", "condition")

    payload = obs.payload
    expected = ALLOWED_PAYLOADS[source.source_kind]
    if getattr(payload, "kind", None) != expected:
        raise ValidationError(
            "payload-kind-mismatch",
            f"{source.source_kind.value} source cannot emit a {getattr(payload, 'kind', '?')} payload",
            "payload",
        )

    if isinstance(payload, TextPayload):
        if not isinstance(payload.text, str):
            raise ValidationError("out-of-range-field", "text must be a string", "text")
    elif isinstance(payload, GpsPayload):
        _finite(payload.lat, "lat", -90.0, 90.0)
        _finite(payload.lon, "lon", -180.0, 180.0)
        _finite(payload.speed, "speed", 0.0)
    elif isinstance(payload, LoopPayload):
        if not payload.road_id:
            raise ValidationError("out-of-range-field", "road id must be non-empty", "road_id")
        _count(payload.vehicle_count, "vehicle_count")
        _finite(payload.avg_speed, "avg_speed", 0.0)
    elif isinstance(payload, VehicleCountPayload):
        if not payload.road_id:
            raise ValidationError("out-of-range-field", "road id must be non-empty", "road_id")
        _count(payload.vehicle_count, "vehicle_count")
    elif isinstance(payload, WeatherPayload):
        if not isinstance(payload.condition, Condition):
            raise ValidationError("out-of-range-field", "unknown weather condition", "condition")
    return obs
