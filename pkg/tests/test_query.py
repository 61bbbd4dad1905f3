import itertools
import random
from datetime import datetime, time, timedelta, timezone

import pytest
from hypothesis import given, settings, strategies as st

from ma4bdi.batch import BatchViews, HistoryEntry, StagingStore, run_batch_iteration
from ma4bdi.domain import EventKey, Knowledge
from ma4bdi.extraction import RoadDb
from ma4bdi.query import (
    Edge,
    Provenance,
    QueryError,
    RoadGraph,
    predict_state,
    query_route,
    query_segment,
    shortest_path,
)
from ma4bdi.speed import Snapshot, SpeedLayer, StreamViews

from helpers import DAY, load_scenario, utc

C, N = Knowledge.CONGESTED, Knowledge.NOT_CONGESTED


def hist(road, day, hh, knowledge):
    key = EventKey(road, day, time(hh, 0))
    return HistoryEntry(key, knowledge, datetime.combine(day, key.window_start, timezone.utc))


# same weekday as DAY (a Tuesday), different weeks
TUESDAYS = [DAY - timedelta(weeks=w) for w in range(1, 6)]


@pytest.fixture(scope="module")
def incident_views(cfg, corpus, scenario_path):
    store = StagingStore()
    obs = load_scenario(scenario_path)
    for o in obs:
        store.stage(o)
    roads = RoadDb.load(cfg.path("roads"))
    views = run_batch_iteration(store, BatchViews(), corpus, cfg.ledger, roads, cfg.engine, cfg.fusion)
    layer = SpeedLayer(Snapshot(views.model, views.ledger), roads, cfg.engine)
    list(layer.replay(obs))
    return views, layer.views, roads


# -- predict_state ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "labels, state, p",
    [
        ([C, C, C], C, 4 / 5),
        ([], N, 1 / 2),
        ([N, N, N, N], N, 5 / 6),
        ([C, N], N, 1 / 2),
        ([C, C, N], C, 3 / 5),
    ],
)
def test_predict_state_laplace(labels, state, p):
    history = [hist("100", d, 8, k) for d, k in zip(TUESDAYS, labels)]
    assert predict_state("100", utc(2017, 7, 11, 8, 30), history) == (state, pytest.approx(p, abs=1e-12))


def test_predict_state_only_counts_same_road_weekday_and_hour():
    history = [
        hist("100", TUESDAYS[0], 8, C),
        hist("101", TUESDAYS[1], 8, C),  # other road
        hist("100", TUESDAYS[2] + timedelta(days=1), 8, C),  # Wednesday
        hist("100", TUESDAYS[3], 9, C),  # other hour
    ]
    assert predict_state("100", utc(2017, 7, 11, 8, 59), history) == (C, pytest.approx(2 / 3))


@given(st.integers(0, 20), st.integers(0, 20))
def test_predict_state_probability_is_at_least_half(c, n):
    history = [hist("100", DAY, 8, C)] * c + [hist("100", DAY, 8, N)] * n
    state, p = predict_state("100", utc(2017, 7, 11, 8, 0), history)
    assert 0.5 <= p < 1.0
    assert (state is C) == (c > n)


# -- segment queries -------------------------------------------------------------------------


def test_precedence_stream_then_batch_then_predicted(incident_views):
    views, streams, roads = incident_views
    at = utc(2017, 7, 11, 8, 30)

    stream = query_segment("100", at, streams, views, roads)
    assert stream.provenance is Provenance.STREAM
    assert stream.state is C

    batch = query_segment("100", at, StreamViews(), views, roads)
    assert batch.provenance is Provenance.BATCH
    assert batch.state is C
    assert batch.reliability == pytest.approx(0.60 / 0.85)

    history = (hist("100", TUESDAYS[0], 8, C),)
    predicted = query_segment("100", at, StreamViews(), BatchViews(history=history), roads)
    assert predicted.provenance is Provenance.PREDICTED
    assert (predicted.state, predicted.reliability) == (C, pytest.approx(2 / 3))


def test_stream_answer_prefers_most_reliable(incident_views):
    views, streams, roads = incident_views
    ans = query_segment("100", utc(2017, 7, 11, 8, 12), streams, views, roads)
    # UserA (0.30) outranks UserB and UserC in the 08:00 bucket
    assert (ans.state, ans.reliability) == (C, 0.30)


def test_batch_answer_holds_until_resolution(incident_views):
    views, _, roads = incident_views
    assert query_segment("100", utc(2017, 7, 11, 17, 59), StreamViews(), views, roads).provenance is Provenance.BATCH
    after = query_segment("100", utc(2017, 7, 11, 18, 0), StreamViews(), views, roads)
    assert after.provenance is Provenance.PREDICTED


def test_unknown_road(incident_views):
    views, streams, roads = incident_views
    with pytest.raises(QueryError) as err:
        query_segment("999", utc(2017, 7, 11, 8, 30), streams, views, roads)
    assert err.value.code == "unknown-road"


# -- routing ------------------------------------------------------------------------------------


def square_graph(cfg):
    return RoadGraph.load(cfg.path("graph"))


def test_route_detours_around_congestion(cfg, incident_views):
    views, _, _ = incident_views
    route = query_route("A", "D", utc(2017, 7, 11, 9, 30), square_graph(cfg), StreamViews(), views)
    assert [e.road_id for e in route.edges] == ["102", "103"]
    assert route.length_m == 2400


def test_route_without_congestion_is_shortest(cfg):
    route = query_route("A", "D", utc(2017, 7, 11, 9, 30), square_graph(cfg), StreamViews(), BatchViews())
    assert [e.road_id for e in route.edges] == ["100", "101"]
    assert route.length_m == route.effective_length_m == 2000
    assert all(a.provenance is Provenance.PREDICTED for a in route.report)


def test_route_to_self_is_empty(cfg):
    route = query_route("B", "B", utc(2017, 7, 11, 9, 30), square_graph(cfg), StreamViews(), BatchViews())
    assert route.edges == () and route.length_m == 0


def test_route_unknown_node(cfg):
    with pytest.raises(QueryError) as err:
        query_route("A", "Z", utc(2017, 7, 11), square_graph(cfg), StreamViews(), BatchViews())
    assert err.value.code == "unknown-node"


def test_route_unreachable():
    g = RoadGraph({"a": (0, 0), "b": (0, 1), "c": (1, 1)}, [Edge("a", "b", "1", 10.0)])
    with pytest.raises(QueryError) as err:
        shortest_path(g, "a", "c", lambda i: g.edges[i].length_m)
    assert err.value.code == "unreachable"


def brute_force_cost(graph, origin, dest, weight):
    """Cheapest simple path by enumerating every node ordering."""
    best = None
    others = [n for n in graph.nodes if n not in (origin, dest)]
    for k in range(len(others) + 1):
        for mid in itertools.permutations(others, k):
            hops = [origin, *mid, dest]
            cost = 0.0
            for a, b in zip(hops, hops[1:]):
                options = [weight(i) for i, nxt in graph.adjacency[a] if nxt == b]
                if not options:
                    break
                cost += min(options)
            else:
                best = cost if best is None else min(best, cost)
    return best


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_dijkstra_matches_enumeration(seed):
    rng = random.Random(seed)
    nodes = {str(i): (0.0, 0.0) for i in range(rng.randint(2, 7))}
    names = sorted(nodes)
    edges = [
        Edge(a, b, f"{a}-{b}", float(rng.randint(1, 20)))
        for a, b in itertools.combinations(names, 2)
        if rng.random() < 0.5
    ]
    graph = RoadGraph(nodes, edges)
    congested = {e.road_id for e in edges if rng.random() < 0.3}
    penalty = rng.choice([1.0, 2.5, 5.0])

    def weight(i):
        e = graph.edges[i]
        return e.length_m * (penalty if e.road_id in congested else 1.0)

    expected = brute_force_cost(graph, names[0], names[-1], weight)
    if expected is None:
        with pytest.raises(QueryError):
            shortest_path(graph, names[0], names[-1], weight)
    else:
        path, cost = shortest_path(graph, names[0], names[-1], weight)
        assert cost == pytest.approx(expected)
        assert sum(weight(i) for i in path) == pytest.approx(cost)
