"""Matching and merging of extracted records into global insights.

Records about the same road and day are chained into events when they lie
within ``match_window_min`` of each other. Each event is decided by a
reliability-weighted vote, its metadata is the union of the records that
agree with the verdict, and every participating source is rewarded or
penalised by one ledger step.
"""

from __future__ import annotations

import math
from array import array
from collections import defaultdict
from dataclasses import dataclass
from datetime import date, datetime, time, timedelta
from typing import Iterable, Mapping, Sequence

from . import kernels
from .domain import (
    FIELD_NAMES,
    EventKey,
    ExtractedRecord,
    GlobalInsight,
    Knowledge,
    Metadata,
    PipelineError,
    ReliabilityLedger,
)

# scores closer than this (relative) count as a tie
TIE_REL_TOL = 1e-9


class FusionError(PipelineError):
    pass


@dataclass(frozen=True)
class FusionConfig:
    match_window_min: int = 15

    def __post_init__(self):
        if isinstance(self.match_window_min, bool) or not isinstance(self.match_window_min, int):
            raise ValueError("match_window_min must be an integer")
        if self.match_window_min <= 0:
            raise ValueError("match_window_min must be positive")


@dataclass(frozen=True)
class EventCluster:
    key: EventKey
    records: tuple[ExtractedRecord, ...]

    def __post_init__(self):
        if not self.records:
            raise FusionError("empty-cluster", "an event cluster needs at least one record")


@dataclass(frozen=True)
class VoteResult:
    winner: Knowledge
    scores: Mapping[Knowledge, float]

    def probability(self, label: Knowledge) -> float:
        """Share of the total vote weight; for display only, never used to decide."""
        total = sum(self.scores.values())
        return 0.5 if total == 0 else self.scores[label] / total


def _seconds(t: time) -> int:
    return t.hour * 3600 + t.minute * 60 + t.second


def _record_order(r: ExtractedRecord):
    return (r.metadata.event_time, r.source_id, r.knowledge.value, r.observed_at)


def match_records(
    records: Iterable[ExtractedRecord],
    existing: Iterable[GlobalInsight] = (),
    cfg: FusionConfig = FusionConfig(),
) -> list[EventCluster]:
    """Partition records into events, sorted by event key.

    Existing insight keys take part in the chaining as anchors, so a cluster
    that reaches an already stored event reuses its key. Within a cluster only
    the earliest record per (source, knowledge) is kept.
    """
    groups: dict[tuple[str, date], list[ExtractedRecord]] = defaultdict(list)
    for r in records:
        if not r.metadata.matchable:
            raise FusionError(
                "missing-match-key", f"record from {r.source_id!r} lacks road/date/time", "metadata"
            )
        groups[(r.metadata.road_id, r.metadata.event_date)].append(r)

    anchors: dict[tuple[str, date], set[time]] = defaultdict(set)
    for ins in existing:
        k = ins.event_key
        if (k.road_id, k.event_date) in groups:
            anchors[(k.road_id, k.event_date)].add(k.window_start)

    window = cfg.match_window_min * 60
    clusters = []
    for (road_id, day), recs in groups.items():
        # anchors sort before records at the same instant
        items = [(_seconds(t), 0, t) for t in anchors[(road_id, day)]]
        items += [(_seconds(r.metadata.event_time), 1, r) for r in sorted(recs, key=_record_order)]
        items.sort(key=lambda it: it[:2])
        labels = kernels.chain_labels(array("q", [it[0] for it in items]), window)

        chains: dict[int, list] = defaultdict(list)
        for label, item in zip(labels, items):
            chains[label].append(item)
        for chain in chains.values():
            members = [it[2] for it in chain if it[1] == 1]
            if not members:
                continue
            anchored = [it[2] for it in chain if it[1] == 0]
            start = min(anchored) if anchored else members[0].metadata.event_time
            seen = set()
            kept = []
            for r in members:
                tag = (r.source_id, r.knowledge)
                if tag not in seen:
                    seen.add(tag)
                    kept.append(r)
            clusters.append(EventCluster(EventKey(road_id, day, start), tuple(kept)))
    clusters.sort(key=lambda c: c.key)
    return clusters


def weighted_vote(cluster: EventCluster, ledger: ReliabilityLedger) -> VoteResult:
    weights: dict[Knowledge, list[float]] = {k: [] for k in Knowledge}
    for r in cluster.records:
        weights[r.knowledge].append(ledger.lookup(r.source_id, r.condition))
    scores = {k: math.fsum(v) for k, v in weights.items()}
    yes, no = scores[Knowledge.CONGESTED], scores[Knowledge.NOT_CONGESTED]
    if yes > no and not math.isclose(yes, no, rel_tol=TIE_REL_TOL):
        winner = Knowledge.CONGESTED
    else:
        winner = Knowledge.NOT_CONGESTED
    return VoteResult(winner, scores)


def merge_metadata(cluster: EventCluster, winner: Knowledge, ledger: ReliabilityLedger) -> Metadata:
    """Union of the metadata of the records that agree with ``winner``.

    Each field comes from the most reliable agreeing source that has it
    (ties: lowest source id). The event time is the earliest agreeing time;
    the resolution date and time are taken together from one record.
    """
    agreeing = [r for r in cluster.records if r.knowledge is winner]
    if not agreeing:
        # only reachable when every weight is zero and the tie went to a label nobody voted
        agreeing = list(cluster.records)
    ranked = sorted(agreeing, key=lambda r: (-ledger.lookup(r.source_id, r.condition), r.source_id))

    def pick(name):
        for r in ranked:
            value = getattr(r.metadata, name)
            if value is not None:
                return value
        return None

    merged = {name: pick(name) for name in FIELD_NAMES}
    merged["event_time"] = min(r.metadata.event_time for r in agreeing if r.metadata.event_time is not None)
    merged["resolution_date"] = merged["resolution_time"] = None
    for r in ranked:
        if r.metadata.resolution_date is not None:
            merged["resolution_date"] = r.metadata.resolution_date
            merged["resolution_time"] = r.metadata.resolution_time
            break

    extras = {}
    for r in reversed(ranked):
        extras.update(r.metadata.extras)
    return Metadata(**merged, extras=extras)


def update_reliability(
    ledger: ReliabilityLedger, cluster: EventCluster, winner: Knowledge
) -> ReliabilityLedger:
    """Step each participating source's active entry by +delta if it agreed
    with ``winner`` and -delta otherwise, clamped to the ledger bounds."""
    updates = {}
    seen = set()
    for r in cluster.records:
        if r.source_id in seen:
            continue
        seen.add(r.source_id)
        key = ledger.resolve_key(r.source_id, r.condition)
        updates[key] = ledger.step(ledger.entries[key], r.knowledge is winner)
    return ledger.with_updates(updates)


def fuse(
    clusters: Sequence[EventCluster], ledger: ReliabilityLedger
) -> tuple[list[GlobalInsight], ReliabilityLedger]:
    insights = []
    for cluster in sorted(clusters, key=lambda c: c.key):
        vote = weighted_vote(cluster, ledger)
        meta = merge_metadata(cluster, vote.winner, ledger)
        insights.append(
            GlobalInsight(
                event_key=cluster.key,
                knowledge=vote.winner,
                metadata=meta,
                score_congested=vote.scores[Knowledge.CONGESTED],
                score_not_congested=vote.scores[Knowledge.NOT_CONGESTED],
                contributing_sources=tuple(sorted({r.source_id for r in cluster.records})),
            )
        )
        ledger = update_reliability(ledger, cluster, vote.winner)
    return insights, ledger


def key_datetime(key: EventKey) -> datetime:
    return datetime.combine(key.event_date, key.window_start)


def window_end(key: EventKey, minutes: int) -> datetime:
    return key_datetime(key) + timedelta(minutes=minutes)
