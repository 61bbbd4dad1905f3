"""Builders shared by the test modules."""

import random
from datetime import date, datetime, time, timedelta, timezone

from ma4bdi import codec
from ma4bdi.domain import (
    Condition,
    ExtractedRecord,
    GpsPayload,
    Knowledge,
    LoopPayload,
    Metadata,
    Observation,
    ReliabilityLedger,
    SourceDescriptor,
    SourceKind,
    TextPayload,
    VehicleCountPayload,
    WeatherPayload,
)
from ma4bdi.extraction import Road, RoadDb

DAY = date(2017, 7, 11)

SEED_ROWS = [
    ("UserA", None, 0.30),
    ("UserB", None, 0.15),
    ("UserC", None, 0.15),
    ("UserD", None, 0.15),
    ("ID1", "rain", 0.10),
    ("ID1", "snow", 0.10),
    ("ID1", "fog", 0.10),
    ("ID1", "clear", 0.15),
]

KINDS = {
    "UserA": SourceKind.OFFICIAL_SOCIAL,
    "UserB": SourceKind.STANDARD_SOCIAL,
    "UserC": SourceKind.CROWDSOURCING,
    "UserD": SourceKind.NEWSPAPER,
    "ID1": SourceKind.CCTV,
}


def utc(*args) -> datetime:
    return datetime(*args, tzinfo=timezone.utc)


def seed_ledger(**params) -> ReliabilityLedger:
    return ReliabilityLedger.from_rows(SEED_ROWS, **params)


def source(source_id, kind=None):
    return SourceDescriptor(source_id, kind or KINDS.get(source_id, SourceKind.STANDARD_SOCIAL))


def record(source_id, knowledge, hhmm, *, road="100", day=DAY, cond=Condition.UNKNOWN, **meta):
    h, m = hhmm
    t = time(h, m)
    md = Metadata(road_id=road, road_name=meta.pop("road_name", "Alpha"), event_date=day, event_time=t, **meta)
    k = Knowledge(knowledge) if isinstance(knowledge, str) else knowledge
    return ExtractedRecord(k, source(source_id), md, cond, datetime.combine(day, t, timezone.utc))


def incident_records():
    """Five extracted records describing one morning incident on road 100."""
    return [
        record("UserA", "congested", (8, 10), reason="accident"),
        record("UserB", "congested", (8, 10), reason="accident"),
        record("UserC", "not_congested", (8, 10)),
        record("UserD", "congested", (8, 18), resolution_date=DAY, resolution_time=time(18, 0)),
        record("ID1", "not_congested", (8, 15), cond=Condition.RAIN),
    ]


def roads() -> RoadDb:
    return RoadDb(
        [
            Road("100", "Alpha", 41.8800, -87.6300, 40),
            Road("101", "Beta", 41.8900, -87.6200, 60),
            Road("102", "Gamma", 41.8700, -87.6400, 35),
            Road("104", "Lake Shore", 41.8950, -87.6150, 80),
        ]
    )


# -- synthetic scenarios -----------------------------------------------------------

CONGESTED_TEXTS = [
    "Accident on {road} road, traffic blocked",
    "Huge traffic jam on {road}, cars not moving",
    "Heavy congestion on {road} after a crash",
]
CLEAR_TEXTS = [
    "{road} road is clear, traffic flowing smoothly",
    "Traffic moving freely on {road} this morning",
]
NOISE_TEXTS = ["Nice weather today, going to the beach", "Cooking pasta for dinner tonight"]

SYNTH_SOURCES = (
    [(f"tw{i}", SourceKind.STANDARD_SOCIAL) for i in range(8)]
    + [("police", SourceKind.OFFICIAL_SOCIAL), ("news", SourceKind.NEWSPAPER)]
    + [("loop1", SourceKind.LOOP_SENSOR), ("gps1", SourceKind.GPS), ("cam1", SourceKind.CCTV)]
)


def synthetic_ledger() -> ReliabilityLedger:
    rows = [(sid, None, 0.15) for sid, _ in SYNTH_SOURCES]
    rows += [("cam1", "rain", 0.10), ("cam1", "clear", 0.15)]
    return ReliabilityLedger.from_rows(rows)


def synthetic_scenario(n: int, seed: int = 0, start=None) -> list[Observation]:
    """``n`` observations of every payload kind spread over a morning."""
    rng = random.Random(seed)
    db = roads()
    ts = start or utc(2017, 7, 11, 7, 0)
    out = []
    for _ in range(n):
        ts = ts + timedelta(seconds=rng.randint(0, 20))
        sid, kind = rng.choice(SYNTH_SOURCES + [("wx", SourceKind.WEATHER_SERVICE)])
        road = rng.choice(db.roads)
        src = SourceDescriptor(sid, kind)
        if kind is SourceKind.WEATHER_SERVICE:
            payload = WeatherPayload(rng.choice([Condition.CLEAR, Condition.RAIN]))
        elif kind is SourceKind.LOOP_SENSOR:
            payload = LoopPayload(road.road_id, rng.randint(0, 90), float(rng.randint(0, 80)))
        elif kind is SourceKind.GPS:
            payload = GpsPayload(f"v{rng.randint(1, 50)}", road.lat, road.lon, float(rng.randint(0, 80)))
        elif kind is SourceKind.CCTV:
            payload = VehicleCountPayload(road.road_id, rng.randint(0, 100))
        else:
            pool = rng.choice([CONGESTED_TEXTS, CLEAR_TEXTS, NOISE_TEXTS])
            payload = TextPayload(rng.choice(pool).format(road=road.road_name))
        out.append(Observation(payload, src, ts))
    return out


def write_scenario(path, observations):
    codec.write_observations(path, observations)
    return path


def load_scenario(path) -> list[Observation]:
    return [codec.observation_from_json(body) for _, body in codec.read_observations(path)]
