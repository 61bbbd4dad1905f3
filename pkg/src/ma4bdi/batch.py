"""Batch processing mode: staging, full-recompute iterations and persisted views.

Every iteration recomputes the views from all staged data: retrain the text
model, run extraction over every observation, match, and fuse starting from
the seed ledger. Because the ledger is refolded from its seed rather than
threaded from the previous iteration, re-running with no new data reproduces
the same views, and a from-scratch run over the same data is byte-identical.
"""

from __future__ import annotations

import bisect
import dataclasses
import logging
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from . import codec, storage
from .domain import (
    PAYLOAD_KINDS,
    Condition,
    EventKey,
    ExtractedRecord,
    GlobalInsight,
    Knowledge,
    Observation,
    PipelineError,
    ReliabilityLedger,
    UnknownSourceError,
    validate_observation,
)
from .extraction import EngineConfig, RoadDb, TextModel, aggregate_gps, process, train_text_model
from .fusion import FusionConfig, fuse, match_records

log = logging.getLogger(__name__)

VIEW_FILES = ("ledger", "insights", "history", "model")


class StagingStore:
    """Append-only observation partitions, one per payload kind."""

    def __init__(self):
        self.partitions: dict[str, list[Observation]] = {k: [] for k in PAYLOAD_KINDS}
        self._lock = threading.Lock()

    def __len__(self):
        return sum(len(p) for p in self.partitions.values())

    def stage(self, obs: Observation) -> "StagingStore":
        validate_observation(obs)
        with self._lock:
            self.partitions[obs.kind].append(obs)
        return self

    def observations(self) -> list[Observation]:
        """All staged observations in processing order (timestamp, then source)."""
        with self._lock:
            merged = [o for k in PAYLOAD_KINDS for o in self.partitions[k]]
        return sorted(merged, key=lambda o: (o.timestamp, o.source.source_id))

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with self._lock:
            for kind, obs in self.partitions.items():
                codec.write_observations(directory / f"{kind}.jsonl", obs)

    @classmethod
    def load(cls, directory) -> "StagingStore":
        store = cls()
        directory = Path(directory)
        for kind in PAYLOAD_KINDS:
            path = directory / f"{kind}.jsonl"
            if path.exists():
                for _, body in codec.read_observations(path):
                    store.stage(codec.observation_from_json(body))
        return store


def stage(store: StagingStore, obs: Observation) -> StagingStore:
    return store.stage(obs)


@dataclass(frozen=True)
class HistoryEntry:
    key: EventKey
    knowledge: Knowledge
    timestamp: datetime


@dataclass(frozen=True)
class BatchViews:
    insights: Mapping[EventKey, GlobalInsight] = field(default_factory=dict)
    ledger: ReliabilityLedger = field(default_factory=ReliabilityLedger)
    model: Optional[TextModel] = None
    history: tuple[HistoryEntry, ...] = ()
    iteration: int = 0
    # per-iteration counters, not part of the view
    stats: Mapping[str, int] = field(default_factory=dict, compare=False, repr=False)


class ConditionTimeline:
    """Ambient weather over time, built from weather observations."""

    def __init__(self, weather: Iterable[Observation]):
        points = sorted((o.timestamp, i, o.payload.condition) for i, o in enumerate(weather))
        self._times = [p[0] for p in points]
        self._conds = [p[2] for p in points]

    def at(self, ts: datetime) -> Condition:
        i = bisect.bisect_right(self._times, ts)
        return self._conds[i - 1] if i else Condition.UNKNOWN

    def resolve(self, obs: Observation) -> Observation:
        if obs.condition is not Condition.UNKNOWN:
            return obs
        cond = self.at(obs.timestamp)
        return obs if cond is Condition.UNKNOWN else dataclasses.replace(obs, condition=cond)


def extract_records(
    observations: Sequence[Observation], model: TextModel, roads: RoadDb, engine_cfg: EngineConfig
) -> tuple[list[tuple[Observation, Optional[ExtractedRecord]]], int]:
    """Run every non-weather observation through its engine under the ambient
    condition at its timestamp.

    Returns ``(observation, record_or_None)`` pairs for the observations that
    did not fail, plus the number that failed and were skipped.
    """
    timeline = ConditionTimeline(o for o in observations if o.kind == "weather")
    out = []
    skipped = 0
    for obs in observations:
        if obs.kind == "weather":
            continue
        try:
            out.append((obs, process(timeline.resolve(obs), model, roads, engine_cfg)))
        except PipelineError as exc:
            skipped += 1
            log.warning("skipping %s observation from %s at %s: %s", obs.kind, obs.source.source_id,
                        codec.format_timestamp(obs.timestamp), exc)
    return out, skipped


def run_batch_iteration(
    store: StagingStore,
    prev: BatchViews,
    corpus: Sequence[tuple[str, str]],
    seed_ledger: ReliabilityLedger,
    roads: RoadDb,
    engine_cfg: EngineConfig = EngineConfig(),
    fusion_cfg: FusionConfig = FusionConfig(),
    alpha: float = 1.0,
) -> BatchViews:
    model = train_text_model(corpus, alpha)
    observations = store.observations()
    extracted, skipped = extract_records(observations, model, roads, engine_cfg)
    records = [rec for _, rec in extracted if rec is not None]
    irrelevant = len(extracted) - len(records)
    known = []
    for rec in records:
        try:
            seed_ledger.resolve_key(rec.source_id, rec.condition)
        except UnknownSourceError as exc:
            skipped += 1
            log.warning("skipping record: %s", exc)
            continue
        known.append(rec)
    records = known

    gps = [o for o in observations if o.kind == "gps"]
    if gps:
        speeds, dropped = aggregate_gps(gps, roads, engine_cfg)
        for road_id, speed in speeds:
            log.info("gps mean speed on road %s: %.1f km/h", road_id, speed)
        if dropped:
            log.info("%d gps readings matched no road", dropped)

    clusters = match_records(records, prev.insights.values(), fusion_cfg)
    insights, ledger = fuse(clusters, seed_ledger)
    history = tuple(
        HistoryEntry(i.event_key, i.knowledge, datetime.combine(i.event_key.event_date,
                                                                 i.event_key.window_start, timezone.utc))
        for i in insights
    )
    return BatchViews(
        insights={i.event_key: i for i in insights},
        ledger=ledger,
        model=model,
        history=history,
        iteration=prev.iteration + 1,
        stats={"observations": len(observations), "records": len(records),
               "skipped": skipped, "irrelevant": irrelevant, "clusters": len(clusters)},
    )


# -- persistence --------------------------------------------------------------------


def _history_to_json(h: HistoryEntry) -> dict:
    return {"key": codec.key_to_json(h.key), "knowledge": h.knowledge.value,
            "timestamp": codec.format_timestamp(h.timestamp)}


def persist_views(views: BatchViews, directory) -> None:
    directory = Path(directory)
    storage.write(directory / "ledger", "ledger", codec.ledger_to_json(views.ledger))
    storage.write(
        directory / "insights",
        "insights",
        {"insights": [codec.insight_to_json(views.insights[k]) for k in sorted(views.insights)]},
    )
    storage.write(directory / "history", "history", {"entries": [_history_to_json(h) for h in views.history]})
    if views.model is not None:
        storage.write(directory / "model", "text-model", views.model.to_json())
    storage.write(directory / "manifest", "manifest", {"iteration": views.iteration})


def load_views(directory) -> BatchViews:
    directory = Path(directory)
    if not directory.is_dir():
        raise storage.StorageError("io-failure", f"views directory {directory} does not exist")
    try:
        ledger = codec.ledger_from_json(storage.read(directory / "ledger", "ledger"))
        insights = [codec.insight_from_json(b) for b in storage.read(directory / "insights", "insights")["insights"]]
        history = tuple(
            HistoryEntry(codec.key_from_json(b["key"]), Knowledge(b["knowledge"]),
                         codec.parse_timestamp(b["timestamp"]))
            for b in storage.read(directory / "history", "history")["entries"]
        )
        model = None
        if (directory / "model").exists():
            model = TextModel.from_json(storage.read(directory / "model", "text-model"))
        iteration = int(storage.read(directory / "manifest", "manifest")["iteration"])
    except storage.StorageError:
        raise
    except (KeyError, TypeError, ValueError, PipelineError) as exc:
        raise storage.StorageError("corrupt-views", f"{directory}: {exc}") from exc
    return BatchViews(
        insights={i.event_key: i for i in insights},
        ledger=ledger,
        model=model,
        history=history,
        iteration=iteration,
    )
