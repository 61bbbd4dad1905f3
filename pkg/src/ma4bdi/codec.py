"""JSON encoding of pipeline values.

Observations travel as envelopes::

    {"ts": "2017-07-11T08:10:00Z", "source_id": "UserA",
     "source_kind": "official_social", "condition": "rain",
     "payload": {"kind": "text", "text": "..."}}

``condition`` and ``display_name`` are optional. Timestamps are ISO 8601 or
day-first ``dd/mm/yyyy HH:MM[:SS]``; both are read as UTC when no offset is
given.
"""

from __future__ import annotations

import json
from datetime import date, datetime, time, timezone
from typing import Iterable, Iterator

from .domain import (
    Condition,
    EventKey,
    GlobalInsight,
    GpsPayload,
    Knowledge,
    LoopPayload,
    Metadata,
    Observation,
    ReliabilityLedger,
    SourceDescriptor,
    SourceKind,
    StreamViewEntry,
    TextPayload,
    ValidationError,
    VehicleCountPayload,
    WeatherPayload,
    validate_observation,
)

_DAY_FIRST = ("%d/%m/%Y %H:%M:%S", "%d/%m/%Y %H:%M")


def parse_timestamp(value) -> datetime:
    if isinstance(value, datetime):
        ts = value
    elif isinstance(value, str):
        text = value.strip()
        ts = None
        try:
            ts = datetime.fromisoformat(text[:-1] + "+00:00" if text.endswith("Z") else text)
        except ValueError:
            for fmt in _DAY_FIRST:
                try:
                    ts = datetime.strptime(text, fmt)
                    break
                except ValueError:
                    continue
        if ts is None:
            raise ValidationError("malformed-timestamp", f"cannot parse {value!r}", "timestamp")
    else:
        raise ValidationError("malformed-timestamp", f"cannot parse {value!r}", "timestamp")
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


# -- observations ---------------------------------------------------------------


def _payload_from_json(body: dict):
    kind = body.get("kind")
    try:
        if kind == "text":
            return TextPayload(body["text"])
        if kind == "gps":
            return GpsPayload(str(body["vehicle_id"]), body["lat"], body["lon"], body["speed"])
        if kind == "loop":
            return LoopPayload(str(body["road_id"]), body["vehicle_count"], body["avg_speed"])
        if kind == "count":
            return VehicleCountPayload(str(body["road_id"]), body["vehicle_count"])
        if kind == "weather":
            return WeatherPayload(Condition(body["condition"]))
    except KeyError as exc:
        raise ValidationError("out-of-range-field", f"payload lacks {exc.args[0]!r}", exc.args[0]) from exc
    except ValueError as exc:
        raise ValidationError("out-of-range-field", str(exc), "condition") from exc
    raise ValidationError("payload-kind-mismatch", f"unknown payload kind {kind!r}", "payload")


def _payload_to_json(payload) -> dict:
    body = {"kind": payload.kind}
    body.update(
        {k: (v.value if isinstance(v, Condition) else v) for k, v in vars(payload).items()}
    )
    return body


def observation_from_json(body: dict) -> Observation:
    """Decode and validate one envelope."""
    if not isinstance(body, dict):
        raise ValidationError("out-of-range-field", "envelope must be an object", "envelope")
    try:
        kind = SourceKind(body["source_kind"])
    except KeyError as exc:
        raise ValidationError("out-of-range-field", "envelope lacks source_kind", "source_kind") from exc
    except ValueError as exc:
        raise ValidationError("out-of-range-field", str(exc), "source_kind") from exc
    try:
        cond = Condition(body.get("condition") or "unknown")
    except ValueError as exc:
        raise ValidationError("out-of-range-field", str(exc), "condition") from exc
    if "ts" not in body:
        raise ValidationError("malformed-timestamp", "envelope lacks ts", "timestamp")
    payload = body.get("payload")
    if not isinstance(payload, dict):
        raise ValidationError("out-of-range-field", "envelope lacks payload", "payload")
    obs = Observation(
        payload=_payload_from_json(payload),
        source=SourceDescriptor(str(body.get("source_id", "")), kind, str(body.get("display_name", ""))),
        timestamp=parse_timestamp(body["ts"]),
        condition=cond,
    )
    return validate_observation(obs)


def observation_to_json(obs: Observation) -> dict:
    body = {
        "ts": format_timestamp(obs.timestamp),
        "source_id": obs.source.source_id,
        "source_kind": obs.source.source_kind.value,
        "payload": _payload_to_json(obs.payload),
    }
    if obs.source.display_name:
        body["display_name"] = obs.source.display_name
    if obs.condition is not Condition.UNKNOWN:
        body["condition"] = obs.condition.value
    return body


def observation_line(obs: Observation) -> str:
    return json.dumps(observation_to_json(obs), sort_keys=True, ensure_ascii=True)


def read_observations(path) -> Iterator[tuple[int, dict]]:
    """Yield ``(line_number, decoded_json)`` for every non-blank line.

    Raises ValueError on a line that is not JSON.
    """
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    yield lineno, json.loads(line)
                except ValueError as exc:
                    raise ValueError(f"{path}:{lineno}: {exc}") from exc


def write_observations(path, observations: Iterable[Observation]) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for obs in observations:
            fh.write(observation_line(obs) + "\n")


# -- metadata, keys, insights ------------------------------------------------------


def _iso(v):
    return None if v is None else v.isoformat()


def metadata_to_json(m: Metadata) -> dict:
    return {
        "road_id": m.road_id,
        "road_name": m.road_name,
        "event_date": _iso(m.event_date),
        "event_time": _iso(m.event_time),
        "reason": m.reason,
        "resolution_date": _iso(m.resolution_date),
        "resolution_time": _iso(m.resolution_time),
        "extras": dict(m.extras),
    }


def metadata_from_json(body: dict) -> Metadata:
    def d(key):
        v = body.get(key)
        return None if v is None else date.fromisoformat(v)

    def t(key):
        v = body.get(key)
        return None if v is None else time.fromisoformat(v)

    return Metadata(
        road_id=body.get("road_id"),
        road_name=body.get("road_name"),
        event_date=d("event_date"),
        event_time=t("event_time"),
        reason=body.get("reason"),
        resolution_date=d("resolution_date"),
        resolution_time=t("resolution_time"),
        extras=body.get("extras") or {},
    )


def key_to_json(k: EventKey) -> dict:
    return {"road_id": k.road_id, "event_date": k.event_date.isoformat(), "window_start": k.window_start.isoformat()}


def key_from_json(body: dict) -> EventKey:
    return EventKey(body["road_id"], date.fromisoformat(body["event_date"]), time.fromisoformat(body["window_start"]))


def insight_to_json(ins: GlobalInsight) -> dict:
    return {
        "key": key_to_json(ins.event_key),
        "knowledge": ins.knowledge.value,
        "metadata": metadata_to_json(ins.metadata),
        "score_congested": ins.score_congested,
        "score_not_congested": ins.score_not_congested,
        "sources": list(ins.contributing_sources),
    }


def insight_from_json(body: dict) -> GlobalInsight:
    return GlobalInsight(
        event_key=key_from_json(body["key"]),
        knowledge=Knowledge(body["knowledge"]),
        metadata=metadata_from_json(body["metadata"]),
        score_congested=float(body["score_congested"]),
        score_not_congested=float(body["score_not_congested"]),
        contributing_sources=tuple(body["sources"]),
    )


def ledger_to_json(ledger: ReliabilityLedger) -> dict:
    return {
        "floor": ledger.floor,
        "cap": ledger.cap,
        "delta": ledger.delta,
        "entries": [
            {"source_id": s, "condition": None if c is None else c.value, "index": v}
            for (s, c), v in ledger.entries.items()
        ],
    }


def ledger_from_json(body: dict) -> ReliabilityLedger:
    return ReliabilityLedger.from_rows(
        ((e["source_id"], e.get("condition"), e["index"]) for e in body["entries"]),
        floor=float(body.get("floor", 0.0)),
        cap=float(body.get("cap", 0.30)),
        delta=float(body.get("delta", 0.05)),
    )


def stream_entry_to_json(e: StreamViewEntry) -> dict:
    return {
        "knowledge": e.knowledge.value,
        "source_id": e.source.source_id,
        "source_kind": e.source.source_kind.value,
        "display_name": e.source.display_name,
        "metadata": metadata_to_json(e.metadata),
        "reliability": e.reliability,
        "produced_at": format_timestamp(e.produced_at),
    }


def stream_entry_from_json(body: dict) -> StreamViewEntry:
    return StreamViewEntry(
        knowledge=Knowledge(body["knowledge"]),
        source=SourceDescriptor(body["source_id"], SourceKind(body["source_kind"]), body.get("display_name", "")),
        metadata=metadata_from_json(body["metadata"]),
        reliability=float(body["reliability"]),
        produced_at=parse_timestamp(body["produced_at"]),
    )
