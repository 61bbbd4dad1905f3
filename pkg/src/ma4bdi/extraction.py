"""Multimodal processing: metadata extraction and one knowledge engine per payload type.

The text engine is a multinomial naive Bayes classifier trained by the batch
layer and reused unchanged by the speed layer. Speed and count engines are
threshold rules; image and video sources arrive as pre-extracted vehicle
counts.
"""

from __future__ import annotations

import json
import logging
import math
import re
from array import array
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import date, time
from typing import Iterable, Mapping, Optional, Sequence

from . import kernels, storage
from .domain import (
    ExtractedRecord,
    GpsPayload,
    Knowledge,
    LoopPayload,
    Metadata,
    Observation,
    PipelineError,
    TextPayload,
    VehicleCountPayload,
    WeatherPayload,
)

log = logging.getLogger(__name__)

IRRELEVANT = "irrelevant"
# canonical order; argmax ties resolve to the earliest class here
CLASSES = (Knowledge.CONGESTED.value, Knowledge.NOT_CONGESTED.value, IRRELEVANT)

_TOKEN_RE = re.compile(r"[^\W_]+")


class ExtractionError(PipelineError):
    pass


class TrainingError(PipelineError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase, then split on every run of non-alphanumeric characters."""
    return _TOKEN_RE.findall(text.lower())


# -- text model ---------------------------------------------------------------


@dataclass(frozen=True)
class TextModel:
    """Trained multinomial naive Bayes model.

    ``log_likelihood[c]`` has one column per vocabulary token plus a final
    column for any out-of-vocabulary token, so each row is a proper
    distribution.
    """

    vocabulary: Mapping[str, int]
    classes: tuple[str, ...]
    log_prior: tuple[float, ...]
    log_likelihood: tuple[tuple[float, ...], ...]
    smoothing_alpha: float = 1.0
    _prior_buf: array = field(init=False, repr=False, compare=False)
    _lik_buf: array = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_prior_buf", array("d", self.log_prior))
        flat = array("d")
        for row in self.log_likelihood:
            flat.extend(row)
        object.__setattr__(self, "_lik_buf", flat)

    @property
    def width(self) -> int:
        return len(self.vocabulary) + 1

    @property
    def oov_id(self) -> int:
        return len(self.vocabulary)

    def token_ids(self, tokens: Iterable[str]) -> array:
        get, oov = self.vocabulary.get, self.oov_id
        return array("q", [get(t, oov) for t in tokens])

    def log_scores(self, text: str) -> list[float]:
        ids = self.token_ids(tokenize(text))
        return kernels.nb_log_scores(ids, self._prior_buf, self._lik_buf, self.width)

    # persistence

    def to_json(self) -> dict:
        return {
            "alpha": self.smoothing_alpha,
            "classes": list(self.classes),
            "log_likelihood": [list(r) for r in self.log_likelihood],
            "log_prior": list(self.log_prior),
            "vocabulary": sorted(self.vocabulary, key=self.vocabulary.__getitem__),
        }

    @classmethod
    def from_json(cls, body: dict) -> "TextModel":
        try:
            vocab = {tok: i for i, tok in enumerate(body["vocabulary"])}
            model = cls(
                vocabulary=vocab,
                classes=tuple(body["classes"]),
                log_prior=tuple(float(v) for v in body["log_prior"]),
                log_likelihood=tuple(tuple(float(v) for v in row) for row in body["log_likelihood"]),
                smoothing_alpha=float(body["alpha"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise storage.StorageError("corrupt-views", f"malformed text model: {exc}") from exc
        if len(model.log_prior) != len(model.classes) or any(
            len(r) != model.width for r in model.log_likelihood
        ):
            raise storage.StorageError("corrupt-views", "text model tables have inconsistent shapes")
        return model


def train_text_model(corpus: Sequence[tuple[str, str]], alpha: float = 1.0) -> TextModel:
    if not corpus:
        raise TrainingError("empty-corpus", "training corpus is empty", "corpus")
    if not (alpha > 0 and math.isfinite(alpha)):
        raise TrainingError("out-of-range-field", "alpha must be positive", "alpha")

    doc_counts: Counter[str] = Counter()
    token_counts: dict[str, Counter[str]] = defaultdict(Counter)
    for text, label in corpus:
        if label not in CLASSES:
            raise TrainingError("unknown-class-label", f"unknown class {label!r}", "class")
        doc_counts[label] += 1
        token_counts[label].update(tokenize(text))

    vocab = {tok: i for i, tok in enumerate(sorted(set().union(*token_counts.values())))}
    classes = tuple(c for c in CLASSES if doc_counts[c])
    n_docs = len(corpus)
    width = len(vocab) + 1

    log_prior = tuple(math.log(doc_counts[c] / n_docs) for c in classes)
    rows = []
    for c in classes:
        counts = token_counts[c]
        denom = sum(counts.values()) + alpha * width
        row = [0.0] * width
        for tok, i in vocab.items():
            row[i] = math.log((counts[tok] + alpha) / denom)
        row[-1] = math.log(alpha / denom)
        rows.append(tuple(row))
    return TextModel(vocab, classes, log_prior, tuple(rows), float(alpha))


def classify_text(model: TextModel, text: str) -> tuple[str, float]:
    """Most probable class for ``text`` and its normalised posterior."""
    scores = model.log_scores(text)
    best = max(range(len(scores)), key=lambda i: (scores[i], -i))
    top = scores[best]
    total = math.fsum(math.exp(s - top) for s in scores)
    return model.classes[best], 1.0 / total


def save_text_model(model: TextModel, path) -> None:
    storage.write(path, "text-model", model.to_json())


def load_text_model(path) -> TextModel:
    return TextModel.from_json(storage.read(path, "text-model"))


def load_corpus(path) -> list[tuple[str, str]]:
    """Read a line-delimited ``{"text": ..., "class": ...}`` corpus."""
    corpus = []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    corpus.append((str(rec["text"]), str(rec["class"])))
                except (ValueError, KeyError, TypeError) as exc:
                    raise TrainingError("corrupt-corpus", f"{path}:{lineno}: {exc}") from exc
    except OSError as exc:
        raise storage.StorageError("io-failure", f"cannot read corpus {path}: {exc}") from exc
    return corpus


# -- roads and engine configuration -------------------------------------------


@dataclass(frozen=True)
class Road:
    road_id: str
    road_name: str
    lat: float
    lon: float
    capacity: int


class RoadDb:
    """Static road reference data with lookups by id, name and position."""

    def __init__(self, roads: Iterable[Road]):
        self.roads = tuple(roads)
        self._by_id: dict[str, Road] = {}
        for road in self.roads:
            if road.road_id in self._by_id:
                raise ValueError(f"duplicate road id {road.road_id!r}")
            if isinstance(road.capacity, bool) or not isinstance(road.capacity, int) or road.capacity <= 0:
                raise ValueError(f"road {road.road_id!r}: capacity must be a positive integer")
            self._by_id[road.road_id] = road
        self._names = [(tuple(tokenize(r.road_name)), r) for r in self.roads if tokenize(r.road_name)]
        self._lats = array("d", [r.lat for r in self.roads])
        self._lons = array("d", [r.lon for r in self.roads])

    def __contains__(self, road_id) -> bool:
        return road_id in self._by_id

    def __iter__(self):
        return iter(self.roads)

    def __len__(self):
        return len(self.roads)

    def get(self, road_id: str) -> Optional[Road]:
        return self._by_id.get(road_id)

    def nearest(self, lat: float, lon: float) -> tuple[Optional[Road], float]:
        idx, dist = kernels.nearest_point(lat, lon, self._lats, self._lons)
        return (self.roads[idx] if idx >= 0 else None), dist

    def find_in_tokens(self, tokens: Sequence[str]) -> Optional[Road]:
        """Road whose name appears earliest in ``tokens`` (longer names win ties)."""
        best = None
        for name, road in self._names:
            n = len(name)
            for start in range(len(tokens) - n + 1):
                if tuple(tokens[start : start + n]) == name:
                    rank = (start, -n, road.road_id)
                    if best is None or rank < best[0]:
                        best = (rank, road)
                    break
        return best[1] if best else None

    @classmethod
    def from_json(cls, body: dict) -> "RoadDb":
        return cls(
            Road(
                str(r["road_id"]),
                str(r["road_name"]),
                float(r["lat"]),
                float(r["lon"]),
                r["capacity"],
            )
            for r in body["roads"]
        )

    @classmethod
    def load(cls, path) -> "RoadDb":
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_json(json.load(fh))
        except OSError as exc:
            raise storage.StorageError("io-failure", f"cannot read road db {path}: {exc}") from exc


@dataclass(frozen=True)
class EngineConfig:
    speed_threshold_kmh: float = 20.0
    gps_match_radius_m: float = 100.0
    gps_window_min: int = 5

    def __post_init__(self):
        for name in ("speed_threshold_kmh", "gps_match_radius_m", "gps_window_min"):
            value = getattr(self, name)
            if isinstance(value, bool) or not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be strictly positive, got {value!r}")
        if not isinstance(self.gps_window_min, int):
            raise ValueError("gps_window_min must be an integer")


# -- metadata -------------------------------------------------------------------

REASON_KEYWORDS = {
    "accident": "accident",
    "crash": "accident",
    "collision": "accident",
    "works": "works",
    "roadworks": "works",
    "maintenance": "works",
    "construction": "works",
    "repairs": "works",
    "event": "event",
    "concert": "event",
    "match": "event",
    "festival": "event",
    "marathon": "event",
    "parade": "event",
}

RESOLUTION_CUES = frozenset(
    {"until", "till", "resolved", "resolution", "reopen", "reopens", "reopened", "cleared", "normal", "expected"}
)
_DATE_RE = re.compile(r"\b(\d{1,2})/(\d{1,2})/(\d{4})\b")
_TIME_RE = re.compile(r"\b([01]?\d|2[0-3])[:h]([0-5]\d)\b")


def _text_reason(tokens: Sequence[str]) -> Optional[str]:
    for tok in tokens:
        if tok in REASON_KEYWORDS:
            return REASON_KEYWORDS[tok]
    return None


def _text_resolution(text: str, tokens: Sequence[str], event_date: date):
    if RESOLUTION_CUES.isdisjoint(tokens):
        return None, None
    times = _TIME_RE.findall(text)
    if not times:
        return None, None
    hh, mm = times[-1]
    res_date = event_date
    dates = _DATE_RE.findall(text)
    if dates:
        d, m, y = (int(v) for v in dates[-1])
        try:
            res_date = date(y, m, d)  # day/month/year
        except ValueError:
            pass
    return res_date, time(int(hh), int(mm))


def extract_metadata(obs: Observation, roads: RoadDb, cfg: EngineConfig) -> Metadata:
    ts = obs.timestamp
    event_date, event_time = ts.date(), ts.time().replace(tzinfo=None)
    payload = obs.payload
    road_id = road_name = reason = res_date = res_time = None

    if isinstance(payload, (LoopPayload, VehicleCountPayload)):
        road_id = payload.road_id
        road = roads.get(road_id)
        road_name = road.road_name if road else None
    elif isinstance(payload, GpsPayload):
        road, dist = roads.nearest(payload.lat, payload.lon)
        if road is None or dist > cfg.gps_match_radius_m:
            raise ExtractionError(
                "unmatched-location", f"no road within {cfg.gps_match_radius_m} m", "lat"
            )
        road_id, road_name = road.road_id, road.road_name
    elif isinstance(payload, TextPayload):
        tokens = tokenize(payload.text)
        road = roads.find_in_tokens(tokens)
        if road is None:
            raise ExtractionError("no-road-reference", "text names no known road", "text")
        road_id, road_name = road.road_id, road.road_name
        reason = _text_reason(tokens)
        res_date, res_time = _text_resolution(payload.text, tokens, event_date)

    return Metadata(
        road_id=road_id,
        road_name=road_name,
        event_date=event_date,
        event_time=event_time,
        reason=reason,
        resolution_date=res_date,
        resolution_time=res_time,
    )


# -- knowledge engines ----------------------------------------------------------


def classify_speed(avg_speed: float, cfg: EngineConfig) -> Knowledge:
    if avg_speed < 0:
        raise ExtractionError("negative-speed", f"speed {avg_speed} < 0", "avg_speed")
    return Knowledge.CONGESTED if avg_speed < cfg.speed_threshold_kmh else Knowledge.NOT_CONGESTED


def classify_count(vehicle_count: int, road: Optional[Road]) -> Knowledge:
    if road is None:
        raise ExtractionError("unknown-road", "vehicle count for a road missing from the road db", "road_id")
    return Knowledge.CONGESTED if vehicle_count > road.capacity else Knowledge.NOT_CONGESTED


def aggregate_gps(
    window: Iterable[Observation], roads: RoadDb, cfg: EngineConfig
) -> tuple[list[tuple[str, float]], int]:
    """Mean GPS speed per matched road, sorted by road id, and the number of
    readings dropped because no road lies within the match radius."""
    speeds: dict[str, list[float]] = defaultdict(list)
    dropped = 0
    for obs in window:
        p = obs.payload
        road, dist = roads.nearest(p.lat, p.lon)
        if road is None or dist > cfg.gps_match_radius_m:
            dropped += 1
            continue
        speeds[road.road_id].append(p.speed)
    return [(rid, math.fsum(v) / len(v)) for rid, v in sorted(speeds.items())], dropped


def process(
    obs: Observation, model: TextModel, roads: RoadDb, cfg: EngineConfig
) -> Optional[ExtractedRecord]:
    """Run the engine for ``obs``'s payload type.

    Returns None for weather reports and for text the model deems irrelevant.
    """
    payload = obs.payload
    if isinstance(payload, WeatherPayload):
        return None
    if isinstance(payload, TextPayload):
        label, _ = classify_text(model, payload.text)
        if label == IRRELEVANT:
            return None
        knowledge = Knowledge(label)
        meta = extract_metadata(obs, roads, cfg)
    elif isinstance(payload, GpsPayload):
        meta = extract_metadata(obs, roads, cfg)
        knowledge = classify_speed(payload.speed, cfg)
    elif isinstance(payload, LoopPayload):
        meta = extract_metadata(obs, roads, cfg)
        knowledge = classify_speed(payload.avg_speed, cfg)
    elif isinstance(payload, VehicleCountPayload):
        meta = extract_metadata(obs, roads, cfg)
        knowledge = classify_count(payload.vehicle_count, roads.get(payload.road_id))
    else:
        raise ExtractionError("unroutable-kind", f"no engine for {type(payload).__name__}", "payload")
    return ExtractedRecord(knowledge, obs.source, meta, obs.condition, obs.timestamp)
