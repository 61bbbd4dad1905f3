"""Command line entry point.

Exit codes: 0 success, 1 a ``--check`` query found congestion, 2 operational
error. Human output goes to stdout, diagnostics to stderr; lines starting
with ``#>`` are meant for machines.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from datetime import datetime, timezone
from pathlib import Path
from statistics import fmean

from . import codec, storage
from .batch import BatchViews, StagingStore, load_views, persist_views, run_batch_iteration
from .config import Config, load_config
from .domain import Knowledge, Observation, PipelineError
from .extraction import RoadDb, TrainingError, load_corpus, save_text_model, train_text_model
from .query import RoadGraph, query_route, query_segment
from .speed import Snapshot, SpeedLayer, StreamViews

log = logging.getLogger("ma4bdi")

EXIT_OK, EXIT_CONGESTED, EXIT_ERROR = 0, 1, 2


class CliError(Exception):
    pass


def _fail(msg: str) -> int:
    print(f"ma4bdi: error: {msg}", file=sys.stderr)
    return EXIT_ERROR


def _views_dir(args, cfg: Config) -> Path:
    if args.views:
        return Path(args.views)
    if cfg.path("views"):
        return cfg.path("views")
    return Path("views")


def _read_scenario(path) -> tuple[list[Observation], int]:
    """Decode a scenario file; invalid envelopes are logged and counted.

    Raises CliError when the file is missing or is not line-delimited JSON.
    """
    observations, bad = [], 0
    try:
        for lineno, body in codec.read_observations(path):
            try:
                observations.append(codec.observation_from_json(body))
            except PipelineError as exc:
                bad += 1
                log.warning("%s:%d: %s", path, lineno, exc)
    except (OSError, ValueError) as exc:
        raise CliError(f"unparseable scenario: {exc}") from exc
    return observations, bad


def _fmt_key(key) -> str:
    return f"road {key.road_id} {key.event_date.isoformat()} {key.window_start.strftime('%H:%M')}"


# -- stream views persistence (between commands only, never on the ingest path) --


def _save_stream_views(views: StreamViews, directory: Path) -> None:
    storage.write(
        directory / "stream",
        "stream-views",
        {
            "bucket_min": views.bucket_min,
            "freshness_horizon_min": views.freshness_horizon_min,
            "entries": [codec.stream_entry_to_json(e) for e in views.all_entries()],
        },
    )


def _load_stream_views(directory: Path, horizon: int, bucket: int) -> StreamViews:
    views = StreamViews(bucket, horizon)
    if (directory / "stream").exists():
        body = storage.read(directory / "stream", "stream-views")
        for e in body["entries"]:
            views.add(codec.stream_entry_from_json(e))
    return views


def _append_staging(directory: Path, staged: StagingStore, new: list[Observation]) -> int:
    """Add observations not yet present in ``staged``; returns how many were added."""
    known = {codec.observation_line(o) for o in staged.observations()}
    added = 0
    for obs in new:
        line = codec.observation_line(obs)
        if line not in known:
            known.add(line)
            staged.stage(obs)
            added += 1
    staged.save(directory / "staging")
    return added


# -- commands -------------------------------------------------------------------------


def cmd_train(args, cfg: Config) -> int:
    corpus_path = args.corpus or cfg.path("corpus")
    if corpus_path is None:
        return _fail("no corpus given (--corpus or paths.corpus)")
    try:
        model = train_text_model(load_corpus(corpus_path), cfg.alpha)
        save_text_model(model, args.out)
    except (TrainingError, storage.StorageError) as exc:
        return _fail(str(exc))
    print(f"trained text model: {len(model.vocabulary)} tokens, {len(model.classes)} classes -> {args.out}")
    priors = " ".join(f"{c}={math.exp(lp):.4f}" for c, lp in zip(model.classes, model.log_prior))
    print(f"class priors: {priors}")
    print(f"#> model path={args.out} vocabulary={len(model.vocabulary)} classes={','.join(model.classes)}")
    return EXIT_OK


def cmd_batch(args, cfg: Config) -> int:
    views_dir = _views_dir(args, cfg)
    observations, bad = _read_scenario(args.scenario)
    roads = RoadDb.load(cfg.path("roads"))
    corpus = load_corpus(cfg.path("corpus"))

    staged = StagingStore.load(views_dir / "staging") if (views_dir / "staging").is_dir() else StagingStore()
    prev = load_views(views_dir) if (views_dir / "manifest").exists() else BatchViews(ledger=cfg.ledger)
    added = _append_staging(views_dir, staged, observations)

    views = run_batch_iteration(staged, prev, corpus, cfg.ledger, roads, cfg.engine, cfg.fusion, cfg.alpha)
    persist_views(views, views_dir)

    print(f"batch iteration {views.iteration}: {len(staged)} staged ({added} new), "
          f"{views.stats['records']} records, {len(views.insights)} insights, "
          f"{views.stats['skipped'] + bad} skipped")
    for key in sorted(views.insights):
        ins = views.insights[key]
        print(f"{_fmt_key(key)} | {ins.knowledge.value} {ins.score_congested:.2f}/{ins.score_not_congested:.2f}"
              f" | {','.join(ins.contributing_sources)}")
        print(f"#> insight road={key.road_id} date={key.event_date.isoformat()} window={key.window_start.isoformat()}"
              f" winner={ins.knowledge.value} congested={ins.score_congested!r}"
              f" not_congested={ins.score_not_congested!r} sources={','.join(ins.contributing_sources)}")
    for (source, cond), value in views.ledger.entries.items():
        print(f"#> ledger source={source} condition={cond.value if cond else '-'} index={value!r}")
    return EXIT_OK


def cmd_stream(args, cfg: Config) -> int:
    views_dir = _views_dir(args, cfg)
    if not (views_dir / "model").exists():
        return _fail(f"missing batch-built text model {views_dir / 'model'}; run 'ma4bdi batch' first")
    batch = load_views(views_dir)
    observations, bad = _read_scenario(args.scenario)
    roads = RoadDb.load(cfg.path("roads"))

    staging = StagingStore()
    layer = SpeedLayer(
        Snapshot(batch.model, batch.ledger),
        roads,
        cfg.engine,
        StreamViews(cfg.fusion.match_window_min, cfg.freshness_horizon_min),
        staging=staging,
    )
    for obs, entry in layer.replay(observations, args.speed_factor):
        if entry is not None:
            m = entry.metadata
            print(f"stream {_fmt_key_entry(m)} | {entry.knowledge.value} | r={entry.reliability:.2f}"
                  f" | {entry.source.source_id}")
            print(f"#> entry road={m.road_id} date={m.event_date.isoformat()} time={m.event_time.isoformat()}"
                  f" knowledge={entry.knowledge.value} reliability={entry.reliability!r}"
                  f" source={entry.source.source_id} at={codec.format_timestamp(entry.produced_at)}")

    # persisted after the replay so the ingest path stays free of I/O
    _save_stream_views(layer.views, views_dir)
    on_disk = StagingStore.load(views_dir / "staging") if (views_dir / "staging").is_dir() else StagingStore()
    _append_staging(views_dir, on_disk, staging.observations())

    c = layer.counters
    print(f"#> counters processed={c['processed']} dropped={c['dropped'] + bad}"
          f" irrelevant={c['irrelevant']} weather={c['weather']}")
    lat = layer.latencies
    print(f"#> latency max_ms={max(lat, default=0.0) * 1e3:.3f} mean_ms={(fmean(lat) if lat else 0.0) * 1e3:.3f}",
          file=sys.stderr if args.quiet_latency else sys.stdout)
    return EXIT_OK


def _fmt_key_entry(m) -> str:
    return f"road {m.road_id} {m.event_date.isoformat()} {m.event_time.strftime('%H:%M')}"


def _parse_at(value) -> datetime:
    if value is None:
        return datetime.now(timezone.utc).replace(microsecond=0)
    return codec.parse_timestamp(value)


def cmd_query(args, cfg: Config) -> int:
    views_dir = _views_dir(args, cfg)
    if not (views_dir / "manifest").exists():
        return _fail(f"no batch views in {views_dir}; run 'ma4bdi batch' first")
    batch = load_views(views_dir)
    streams = _load_stream_views(views_dir, cfg.freshness_horizon_min, cfg.fusion.match_window_min)
    at = _parse_at(args.at)

    if args.kind == "segment":
        roads = RoadDb.load(cfg.path("roads"))
        answer = query_segment(args.road, at, streams, batch, roads)
        print(f"{'road':<8}{'state':<15}{'reliability':<13}{'provenance':<12}as of")
        print(f"{answer.road_id:<8}{answer.state.value:<15}{answer.reliability * 100:>6.1f} %     "
              f"{answer.provenance.value:<12}{codec.format_timestamp(answer.as_of)}")
        print(f"#> segment road={answer.road_id} state={answer.state.value} reliability={answer.reliability!r}"
              f" provenance={answer.provenance.value} as_of={codec.format_timestamp(answer.as_of)}")
        congested = answer.state is Knowledge.CONGESTED
    else:
        graph = RoadGraph.load(cfg.path("graph"))
        route = query_route(args.origin, args.dest, at, graph, streams, batch, cfg.penalty_factor)
        print(f"route {args.origin} -> {args.dest}: {len(route.edges)} sections, {route.length_m:.0f} m"
              f" (effective {route.effective_length_m:.0f} m)")
        for edge, ans in zip(route.edges, route.report):
            print(f"  {edge.source}->{edge.target} road {edge.road_id:<6}{edge.length_m:>8.0f} m  "
                  f"{ans.state.value:<14}{ans.reliability * 100:5.1f} % ({ans.provenance.value})")
            print(f"#> edge from={edge.source} to={edge.target} road={edge.road_id} state={ans.state.value}"
                  f" reliability={ans.reliability!r} provenance={ans.provenance.value}")
        print(f"#> route from={args.origin} to={args.dest} edges={len(route.edges)}"
              f" length_m={route.length_m!r} effective_m={route.effective_length_m!r}")
        congested = any(a.state is Knowledge.CONGESTED for a in route.report)
    return EXIT_CONGESTED if (args.check and congested) else EXIT_OK


# -- argument parsing -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # SUPPRESS keeps a subcommand's unset option from clobbering the global one
    common.add_argument("--config", default=argparse.SUPPRESS,
                        help="JSON config file (default: $MA4BDI_CONFIG, then the bundled one)")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                        help="log progress to stderr")

    parser = argparse.ArgumentParser(
        prog="ma4bdi", description="Traffic event fusion: train, batch, stream and query.", parents=[common]
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train the text model from a corpus")
    p.add_argument("--corpus", help="line-delimited {text, class} records")
    p.add_argument("--out", required=True, help="model file to write")

    p = sub.add_parser("batch", parents=[common], help="stage a scenario and run one batch iteration")
    p.add_argument("--scenario", required=True)
    p.add_argument("--views")

    p = sub.add_parser("stream", parents=[common], help="replay a scenario through the speed layer")
    p.add_argument("--scenario", required=True)
    p.add_argument("--views")
    p.add_argument("--speed-factor", type=float, default=0.0,
                   help="replay speed relative to scenario time; 0 = as fast as possible")
    p.add_argument("--quiet-latency", action="store_true", help="print the latency line on stderr")

    p = sub.add_parser("query", parents=[common], help="query a road segment or a route")
    p.add_argument("kind", choices=("segment", "route"))
    p.add_argument("--views")
    p.add_argument("--road")
    p.add_argument("--from", dest="origin")
    p.add_argument("--to", dest="dest")
    p.add_argument("--at", help="query time (ISO 8601 or dd/mm/yyyy HH:MM), default now")
    p.add_argument("--check", action="store_true", help="exit 1 when the answer is congested")
    return parser


COMMANDS = {"train": cmd_train, "batch": cmd_batch, "stream": cmd_stream, "query": cmd_query}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.command == "query":
        if args.kind == "segment" and not args.road:
            parser.error("query segment needs --road")
        if args.kind == "route" and not (args.origin and args.dest):
            parser.error("query route needs --from and --to")
    if getattr(args, "speed_factor", 0.0) < 0:
        parser.error("--speed-factor must be >= 0")
    try:
        cfg = load_config(getattr(args, "config", None))
        return COMMANDS[args.command](args, cfg)
    except CliError as exc:
        return _fail(str(exc))
    except PipelineError as exc:
        return _fail(f"{exc.code}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
