"""Stream processing mode.

Observations are routed by payload kind straight to the extraction engines
built by the batch layer; results land in in-memory stream views tagged with
the source's reliability from the current ledger snapshot. Nothing on the
ingest path touches the filesystem.
"""

from __future__ import annotations

import contextlib
import dataclasses
import heapq
import itertools
import logging
import sys
import threading
import time as _time
from collections import Counter
from datetime import date, datetime, time, timedelta
from typing import Callable, Iterable, NamedTuple, Optional

from .domain import (
    Condition,
    Observation,
    PipelineError,
    ReliabilityLedger,
    StreamViewEntry,
    validate_observation,
)
from .extraction import EngineConfig, RoadDb, TextModel, process

log = logging.getLogger(__name__)


class RoutingError(PipelineError):
    pass


class StreamViews:
    """Quadruplets keyed by (road_id, date, time bucket)."""

    def __init__(self, bucket_min: int = 15, freshness_horizon_min: int = 60):
        if bucket_min <= 0 or freshness_horizon_min <= 0:
            raise ValueError("bucket and freshness horizon must be positive")
        self.bucket_min = bucket_min
        self.freshness_horizon_min = freshness_horizon_min
        self.entries: dict[tuple[str, date, time], list[StreamViewEntry]] = {}
        self._lock = threading.Lock()

    def __len__(self):
        return sum(len(v) for v in self.entries.values())

    def bucket(self, t: time) -> time:
        minutes = t.hour * 60 + t.minute
        minutes -= minutes % self.bucket_min
        return time(minutes // 60, minutes % 60)

    def add(self, entry: StreamViewEntry) -> None:
        m = entry.metadata
        key = (m.road_id, m.event_date, self.bucket(m.event_time))
        with self._lock:
            self.entries.setdefault(key, []).append(entry)

    def all_entries(self) -> list[StreamViewEntry]:
        with self._lock:
            return [e for k in sorted(self.entries) for e in self.entries[k]]

    def fresh(self, road_id: str, at: datetime) -> list[StreamViewEntry]:
        """Entries for ``road_id`` in the latest bucket that has any entry
        produced within the freshness horizon before ``at``."""
        oldest = at - timedelta(minutes=self.freshness_horizon_min)
        with self._lock:
            candidates = [
                (k, e)
                for k, es in self.entries.items()
                if k[0] == road_id
                for e in es
                if oldest <= e.produced_at <= at
            ]
        if not candidates:
            return []
        latest = max(k for k, _ in candidates)
        return [e for k, e in candidates if k == latest]


class Snapshot(NamedTuple):
    model: TextModel
    ledger: ReliabilityLedger


def process_stream(
    obs: Observation, model: TextModel, ledger: ReliabilityLedger, roads: RoadDb, cfg: EngineConfig
) -> Optional[StreamViewEntry]:
    record = process(obs, model, roads, cfg)
    if record is None:
        return None
    reliability = ledger.lookup(record.source_id, record.condition)
    return StreamViewEntry(record.knowledge, record.source, record.metadata, reliability, obs.timestamp)


class Broker:
    """In-process message broker with virtual delivery time.

    Envelopes are delivered in (delivery time, weather first, publish order),
    which keeps each source's messages FIFO and makes a replay deterministic.
    """

    def __init__(self):
        self.routes: dict[str, Callable[[Observation], object]] = {}
        self._queue: list = []
        self._seq = itertools.count()
        self.clock: Optional[datetime] = None

    def register(self, kind: str, handler: Callable[[Observation], object]) -> None:
        self.routes[kind] = handler

    def dispatch(self, obs: Observation):
        handler = self.routes.get(obs.kind)
        if handler is None:
            raise RoutingError("unroutable-kind", f"no engine registered for {obs.kind!r}", "payload")
        return handler(obs)

    def publish(self, obs: Observation, deliver_at: Optional[datetime] = None) -> None:
        at = deliver_at or obs.timestamp
        heapq.heappush(self._queue, (at, obs.kind != "weather", next(self._seq), obs))

    def __len__(self):
        return len(self._queue)

    def run(self, deliver: Callable[[Observation], object], speed_factor: float = 0.0, sleep=_time.sleep):
        """Deliver every queued envelope; yields ``(obs, result)``.

        With ``speed_factor`` > 0 the gaps between delivery times are replayed
        in real time divided by that factor; 0 replays as fast as possible.
        """
        while self._queue:
            at, _, _, obs = heapq.heappop(self._queue)
            if speed_factor > 0 and self.clock is not None and at > self.clock:
                sleep((at - self.clock).total_seconds() / speed_factor)
            self.clock = at if self.clock is None else max(self.clock, at)
            yield obs, deliver(obs)


class SpeedLayer:
    """Ties the broker, the engines and the stream views together.

    ``staging`` receives a copy of every ingested observation for the next
    batch iteration; failures there never affect the stream.
    """

    def __init__(
        self,
        snapshot: Snapshot,
        roads: RoadDb,
        cfg: EngineConfig = EngineConfig(),
        views: Optional[StreamViews] = None,
        staging=None,
    ):
        self._snapshot = snapshot
        self.roads = roads
        self.cfg = cfg
        self.views = views if views is not None else StreamViews()
        self.staging = staging
        self.ambient = Condition.UNKNOWN
        self.counters: Counter[str] = Counter()
        self.latencies: list[float] = []
        self.broker = Broker()
        for kind in ("text", "gps", "loop", "count"):
            self.broker.register(kind, self._on_record)
        self.broker.register("weather", self._on_weather)

    @property
    def snapshot(self) -> Snapshot:
        return self._snapshot

    def refresh_models(self, views) -> None:
        """Swap in the model and ledger of freshly computed batch views."""
        if views.model is None:
            raise ValueError("batch views carry no text model")
        # a single reference assignment; readers see the old or the new pair
        self._snapshot = Snapshot(views.model, views.ledger)

    def _on_weather(self, obs: Observation) -> None:
        self.ambient = obs.payload.condition
        self.counters["weather"] += 1
        return None

    def _on_record(self, obs: Observation) -> Optional[StreamViewEntry]:
        snap = self._snapshot
        if obs.condition is Condition.UNKNOWN and self.ambient is not Condition.UNKNOWN:
            obs = dataclasses.replace(obs, condition=self.ambient)
        try:
            entry = process_stream(obs, snap.model, snap.ledger, self.roads, self.cfg)
        except PipelineError as exc:
            self.counters["dropped"] += 1
            log.debug("dropped %s observation from %s: %s", obs.kind, obs.source.source_id, exc)
            return None
        if entry is None:
            self.counters["irrelevant"] += 1
            return None
        self.views.add(entry)
        self.counters["processed"] += 1
        return entry

    def ingest(self, obs: Observation) -> Optional[StreamViewEntry]:
        start = _time.perf_counter()
        validate_observation(obs)
        if self.staging is not None:
            try:
                self.staging.stage(obs)
            except Exception as exc:  # fire-and-forget
                log.warning("staging copy failed: %s", exc)
        try:
            return self.broker.dispatch(obs)
        finally:
            self.latencies.append(_time.perf_counter() - start)

    def replay(self, observations: Iterable[Observation], speed_factor: float = 0.0, sleep=_time.sleep):
        """Publish ``observations`` and deliver them in timestamp order.

        Yields ``(observation, entry_or_None)``.
        """
        for obs in observations:
            self.broker.publish(obs)
        yield from self.broker.run(self.ingest, speed_factor, sleep)


def ingest(layer: SpeedLayer, raw: Observation) -> Optional[StreamViewEntry]:
    return layer.ingest(raw)


def refresh_models(layer: SpeedLayer, views) -> None:
    layer.refresh_models(views)


_io_counters: list[Counter] = []
_io_hook_lock = threading.Lock()
_io_hook_installed = False


def _audit(event, args):
    if event == "open" and _io_counters:
        path = args[0] if args else None
        for counts in list(_io_counters):
            counts[str(path)] += 1


@contextlib.contextmanager
def count_file_io():
    """Count every file open made by this process inside the block.

    Backed by the interpreter's ``open`` audit event, so it sees builtins,
    ``io``, ``os`` and pathlib alike. Yields a Counter keyed by path.
    """
    global _io_hook_installed
    with _io_hook_lock:
        if not _io_hook_installed:
            sys.addaudithook(_audit)
            _io_hook_installed = True
    counts: Counter[str] = Counter()
    _io_counters.append(counts)
    try:
        yield counts
    finally:
        _io_counters.remove(counts)
