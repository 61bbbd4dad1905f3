"""Serving side: road-state queries and congestion-avoiding routes.

A segment query answers from the freshest stream view entry, falls back to a
batch insight covering the requested time, and finally predicts from the
batch history.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from enum import Enum
from typing import Iterable, Optional, Sequence

from . import storage
from .batch import BatchViews, HistoryEntry
from .domain import Knowledge, PipelineError
from .extraction import RoadDb
from .speed import StreamViews


class QueryError(PipelineError):
    pass


class Provenance(str, Enum):
    STREAM = "stream"
    BATCH = "batch"
    PREDICTED = "predicted"


@dataclass(frozen=True)
class InsightAnswer:
    road_id: str
    state: Knowledge
    reliability: float
    provenance: Provenance
    as_of: datetime


def _utc(at: datetime) -> datetime:
    return at.replace(tzinfo=timezone.utc) if at.tzinfo is None else at.astimezone(timezone.utc)


def predict_state(road_id: str, at: datetime, history: Iterable[HistoryEntry]) -> tuple[Knowledge, float]:
    """Laplace-smoothed congestion frequency for the same weekday and hour.

    Returns the more likely state and its probability; a 0.5 tie predicts
    ``not_congested``.
    """
    at = _utc(at)
    n = c = 0
    for h in history:
        k = h.key
        if k.road_id == road_id and k.event_date.weekday() == at.weekday() and k.window_start.hour == at.hour:
            n += 1
            c += h.knowledge is Knowledge.CONGESTED
    p = (c + 1) / (n + 2)
    if p > 0.5:
        return Knowledge.CONGESTED, p
    return Knowledge.NOT_CONGESTED, 1.0 - p


def _batch_answer(road_id: str, at: datetime, batch: BatchViews, validity_min: int) -> Optional[InsightAnswer]:
    best = None
    for key, ins in batch.insights.items():
        if key.road_id != road_id or key.event_date != at.date():
            continue
        start = datetime.combine(key.event_date, key.window_start, timezone.utc)
        m = ins.metadata
        if m.resolution_date is not None:
            end = datetime.combine(m.resolution_date, m.resolution_time, timezone.utc)
        else:
            end = start + timedelta(minutes=validity_min)
        if start <= at < end and (best is None or key > best.event_key):
            best = ins
    if best is None:
        return None
    start = datetime.combine(best.event_key.event_date, best.event_key.window_start, timezone.utc)
    return InsightAnswer(road_id, best.knowledge, best.probability(), Provenance.BATCH, start)


def query_segment(
    road_id: str,
    at: datetime,
    streams: StreamViews,
    batch: BatchViews,
    roads: Optional[RoadDb] = None,
) -> InsightAnswer:
    """State of ``road_id`` at ``at``.

    Batch insights without a resolution time stay valid for the stream
    freshness horizon after their window start.
    """
    if roads is not None and road_id not in roads:
        raise QueryError("unknown-road", f"unknown road {road_id!r}", "road_id")
    at = _utc(at)

    entries = streams.fresh(road_id, at)
    if entries:
        top = max(entries, key=lambda e: (e.reliability, e.produced_at))
        return InsightAnswer(road_id, top.knowledge, top.reliability, Provenance.STREAM, top.produced_at)

    answer = _batch_answer(road_id, at, batch, streams.freshness_horizon_min)
    if answer is not None:
        return answer

    state, p = predict_state(road_id, at, batch.history)
    return InsightAnswer(road_id, state, p, Provenance.PREDICTED, at)


# -- routing ----------------------------------------------------------------------


@dataclass(frozen=True)
class Edge:
    source: str
    target: str
    road_id: str
    length_m: float


class RoadGraph:
    """Undirected road network; each edge is one traversable road section."""

    def __init__(self, nodes: dict[str, tuple[float, float]], edges: Sequence[Edge]):
        self.nodes = dict(nodes)
        self.edges = tuple(edges)
        self.adjacency: dict[str, list[tuple[int, str]]] = {n: [] for n in self.nodes}
        for i, e in enumerate(self.edges):
            if e.source not in self.nodes or e.target not in self.nodes:
                raise ValueError(f"edge {i} references an unknown node")
            if not (e.length_m > 0 and math.isfinite(e.length_m)):
                raise ValueError(f"edge {i} must have a positive length")
            self.adjacency[e.source].append((i, e.target))
            self.adjacency[e.target].append((i, e.source))

    def road_ids(self) -> set[str]:
        return {e.road_id for e in self.edges}

    @classmethod
    def from_json(cls, body: dict) -> "RoadGraph":
        nodes = {str(n["node_id"]): (float(n["lat"]), float(n["lon"])) for n in body["nodes"]}
        edges = [Edge(str(e["from"]), str(e["to"]), str(e["road_id"]), float(e["length_m"])) for e in body["edges"]]
        return cls(nodes, edges)

    @classmethod
    def load(cls, path) -> "RoadGraph":
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_json(json.load(fh))
        except OSError as exc:
            raise storage.StorageError("io-failure", f"cannot read road graph {path}: {exc}") from exc


@dataclass(frozen=True)
class Route:
    edges: tuple[Edge, ...]
    report: tuple[InsightAnswer, ...]
    length_m: float
    effective_length_m: float


def shortest_path(graph: RoadGraph, origin: str, dest: str, weight) -> tuple[list[int], float]:
    """Dijkstra over edge indices; ``weight(edge_index)`` gives the cost.

    Returns the edge indices of the path and its total cost.
    """
    dist = {origin: 0.0}
    back: dict[str, tuple[str, int]] = {}
    heap = [(0.0, origin)]
    done = set()
    while heap:
        d, node = heapq.heappop(heap)
        if node in done:
            continue
        done.add(node)
        if node == dest:
            break
        for i, nxt in graph.adjacency[node]:
            nd = d + weight(i)
            if nxt not in dist or nd < dist[nxt]:
                dist[nxt] = nd
                back[nxt] = (node, i)
                heapq.heappush(heap, (nd, nxt))
    if dest not in done:
        raise QueryError("unreachable", f"no route from {origin!r} to {dest!r}", "to")
    path = []
    node = dest
    while node != origin:
        node, i = back[node]
        path.append(i)
    path.reverse()
    return path, dist[dest]


def query_route(
    origin: str,
    dest: str,
    at: datetime,
    graph: RoadGraph,
    streams: StreamViews,
    batch: BatchViews,
    penalty: float = 5.0,
) -> Route:
    """Shortest route where congested sections count ``penalty`` times their length."""
    for name, node in (("from", origin), ("to", dest)):
        if node not in graph.nodes:
            raise QueryError("unknown-node", f"unknown node {node!r}", name)
    if not (penalty >= 1.0 and math.isfinite(penalty)):
        raise ValueError("penalty must be >= 1")
    if origin == dest:
        return Route((), (), 0.0, 0.0)

    answers: dict[str, InsightAnswer] = {}

    def answer(road_id):
        if road_id not in answers:
            answers[road_id] = query_segment(road_id, at, streams, batch)
        return answers[road_id]

    def weight(i):
        e = graph.edges[i]
        return e.length_m * (penalty if answer(e.road_id).state is Knowledge.CONGESTED else 1.0)

    path, cost = shortest_path(graph, origin, dest, weight)
    edges = tuple(graph.edges[i] for i in path)
    return Route(edges, tuple(answer(e.road_id) for e in edges), math.fsum(e.length_m for e in edges), cost)
