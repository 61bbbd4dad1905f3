import itertools
import math
from datetime import date, time
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from ma4bdi.domain import (
    Condition,
    GpsPayload,
    Knowledge,
    LoopPayload,
    Observation,
    SourceDescriptor,
    SourceKind,
    TextPayload,
    VehicleCountPayload,
    WeatherPayload,
)
from ma4bdi.extraction import (
    EngineConfig,
    ExtractionError,
    Road,
    RoadDb,
    TrainingError,
    aggregate_gps,
    classify_count,
    classify_speed,
    classify_text,
    extract_metadata,
    load_text_model,
    process,
    save_text_model,
    tokenize,
    train_text_model,
)

from helpers import utc
from oracles import EXHAUSTIVE_CORPUS, oracle_posteriors

CFG = EngineConfig()
TWO_DOCS = [("huge jam on alpha", "congested"), ("nice weather today", "irrelevant")]


# -- training and classification --------------------------------------------------------


def test_tokenize():
    assert tokenize("Accident, ALPHA road--blocked!! 18:00") == ["accident", "alpha", "road", "blocked", "18", "00"]
    assert tokenize("  ,;  ") == []


def test_two_document_model_prior():
    model = train_text_model(TWO_DOCS, 1.0)
    priors = dict(zip(model.classes, model.log_prior))
    assert math.exp(priors["congested"]) == pytest.approx(0.5, abs=1e-15)
    assert model.classes == ("congested", "irrelevant")
    assert len(model.vocabulary) == 7


def test_two_document_model_classifies_jam():
    # by hand: (2/12)^3 vs (1/11)^3 at equal priors -> 1331 / (1331 + 216)
    label, post = classify_text(train_text_model(TWO_DOCS, 1.0), "jam on alpha")
    assert label == "congested"
    assert post == pytest.approx(1331 / 1547, abs=1e-12)
    assert oracle_posteriors(TWO_DOCS, 1, "jam on alpha")["congested"] == Fraction(1331, 1547)


def test_empty_text_returns_prior_argmax():
    model = train_text_model(TWO_DOCS + [("slow traffic", "congested")], 1.0)
    label, post = classify_text(model, "")
    assert label == "congested"
    assert post == pytest.approx(2 / 3)


def test_unseen_tokens_follow_the_oracle():
    # token totals differ (4 vs 3), so the unseen mass does not cancel
    model = train_text_model(TWO_DOCS, 1.0)
    expected = oracle_posteriors(TWO_DOCS, 1, "zzz qqq")
    label, post = classify_text(model, "zzz qqq")
    assert label == max(expected, key=expected.get) == "irrelevant"
    assert post == pytest.approx(float(expected["irrelevant"]), abs=1e-12)


def test_single_document_prior_is_certain():
    model = train_text_model([("road closed", "congested")], 1.0)
    assert model.log_prior == (0.0,)
    assert classify_text(model, "anything at all") == ("congested", 1.0)


def test_training_errors():
    with pytest.raises(TrainingError) as err:
        train_text_model([], 1.0)
    assert err.value.code == "empty-corpus"
    with pytest.raises(TrainingError) as err:
        train_text_model([("x", "maybe")], 1.0)
    assert err.value.code == "unknown-class-label"
    with pytest.raises(TrainingError):
        train_text_model(TWO_DOCS, 0.0)


def test_likelihood_rows_are_distributions(model):
    for row in model.log_likelihood:
        assert math.fsum(math.exp(v) for v in row) == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("alpha", [1.0, 0.5])
def test_exhaustive_small_vocabulary_matches_oracle(alpha):
    model = train_text_model(EXHAUSTIVE_CORPUS, alpha)
    words = sorted(model.vocabulary) + ["zzz"]
    assert len(words) <= 10
    for n in range(4):
        for combo in itertools.product(words, repeat=n):
            text = " ".join(combo)
            exact = oracle_posteriors(EXHAUSTIVE_CORPUS, alpha, text)
            label, post = classify_text(model, text)
            best = max(exact.values())
            assert exact[label] == best, text
            assert post == pytest.approx(float(best), abs=1e-9), text


def test_training_is_deterministic(corpus, tmp_path):
    a, b = train_text_model(corpus), train_text_model(list(corpus))
    assert a == b
    save_text_model(a, tmp_path / "a")
    save_text_model(b, tmp_path / "b")
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
    for text, _ in corpus:
        assert classify_text(a, text) == classify_text(b, text)


def test_model_round_trip(model, tmp_path):
    save_text_model(model, tmp_path / "m")
    loaded = load_text_model(tmp_path / "m")
    assert loaded == model
    assert classify_text(loaded, "jam on Alpha") == classify_text(model, "jam on Alpha")


# -- threshold engines ------------------------------------------------------------------


@pytest.mark.parametrize(
    "speed, expected",
    [(10.0, Knowledge.CONGESTED), (20.0, Knowledge.NOT_CONGESTED), (55.0, Knowledge.NOT_CONGESTED)],
)
def test_classify_speed(speed, expected):
    assert classify_speed(speed, CFG) is expected


def test_classify_speed_rejects_negative():
    with pytest.raises(ExtractionError) as err:
        classify_speed(-1.0, CFG)
    assert err.value.code == "negative-speed"


ROAD = Road("100", "Alpha", 41.88, -87.63, 40)


@pytest.mark.parametrize(
    "count, expected",
    [(50, Knowledge.CONGESTED), (40, Knowledge.NOT_CONGESTED), (0, Knowledge.NOT_CONGESTED)],
)
def test_classify_count(count, expected):
    assert classify_count(count, ROAD) is expected


def test_classify_count_unknown_road():
    with pytest.raises(ExtractionError) as err:
        classify_count(3, None)
    assert err.value.code == "unknown-road"


@given(st.floats(0, 300), st.floats(0, 300))
def test_speed_engine_is_monotone(a, b):
    slow, fast = sorted((a, b))
    if classify_speed(fast, CFG) is Knowledge.CONGESTED:
        assert classify_speed(slow, CFG) is Knowledge.CONGESTED


@given(st.integers(0, 500), st.integers(0, 500))
def test_count_engine_is_monotone(a, b):
    low, high = sorted((a, b))
    if classify_count(low, ROAD) is Knowledge.CONGESTED:
        assert classify_count(high, ROAD) is Knowledge.CONGESTED


# -- metadata and dispatch ----------------------------------------------------------------

LOOP = SourceDescriptor("LOOP7", SourceKind.LOOP_SENSOR)
GPS = SourceDescriptor("GPS1", SourceKind.GPS)
DB = RoadDb([ROAD])
# ~500 m north of Alpha
FAR_LAT = ROAD.lat + 500 / 111_195


def gps(lat, lon, speed=30.0, ts=utc(2017, 7, 11, 8, 0)):
    return Observation(GpsPayload("v1", lat, lon, speed), GPS, ts)


def test_loop_metadata():
    obs = Observation(LoopPayload("100", 12, 45.0), LOOP, utc(2017, 7, 11, 8, 15))
    m = extract_metadata(obs, DB, CFG)
    assert (m.road_id, m.road_name, m.event_date, m.event_time) == ("100", "Alpha", date(2017, 7, 11), time(8, 15))
    assert m.reason is None and m.resolution_date is None


def test_gps_on_a_road_matches_it():
    assert extract_metadata(gps(ROAD.lat, ROAD.lon), DB, CFG).road_id == "100"


def test_gps_far_from_every_road():
    with pytest.raises(ExtractionError) as err:
        extract_metadata(gps(FAR_LAT, ROAD.lon), DB, CFG)
    assert err.value.code == "unmatched-location"
    # a wider radius picks it up
    assert extract_metadata(gps(FAR_LAT, ROAD.lon), DB, EngineConfig(gps_match_radius_m=600)).road_id == "100"


def test_text_metadata_reason_and_resolution(roads):
    obs = Observation(
        TextPayload("Heavy congestion on Alpha. Normal traffic expected to resume on 11/07/2017 at 18:00."),
        SourceDescriptor("UserD", SourceKind.NEWSPAPER),
        utc(2017, 7, 11, 8, 18),
    )
    m = extract_metadata(obs, roads, CFG)
    assert (m.road_id, m.resolution_date, m.resolution_time) == ("100", date(2017, 7, 11), time(18, 0))
    assert m.reason is None


def test_text_picks_earliest_and_longest_road_name(roads):
    tokens = tokenize("jam on lake shore near alpha")
    assert roads.find_in_tokens(tokens).road_id == "104"
    assert roads.find_in_tokens(tokenize("the shore")) is None


def test_text_without_road_reference(roads, model):
    obs = Observation(TextPayload("accident, huge jam"), SourceDescriptor("u", SourceKind.STANDARD_SOCIAL),
                      utc(2017, 7, 11, 9, 0))
    with pytest.raises(ExtractionError) as err:
        process(obs, model, roads, CFG)
    assert err.value.code == "no-road-reference"


def test_process_official_tweet(roads, model):
    obs = Observation(
        TextPayload("accident, alpha road blocked"),
        SourceDescriptor("UserA", SourceKind.OFFICIAL_SOCIAL),
        utc(2017, 7, 11, 8, 10),
    )
    rec = process(obs, model, roads, CFG)
    assert rec.knowledge is Knowledge.CONGESTED
    assert rec.source.source_id == "UserA"
    assert (rec.metadata.road_id, rec.metadata.road_name, rec.metadata.reason) == ("100", "Alpha", "accident")
    assert rec.metadata.event_time == time(8, 10)


def test_process_weather_and_irrelevant_text(roads, model):
    weather = Observation(WeatherPayload(Condition.RAIN), SourceDescriptor("W", SourceKind.WEATHER_SERVICE),
                          utc(2017, 7, 11, 8, 0))
    assert process(weather, model, roads, CFG) is None
    chatter = Observation(TextPayload("Cooking pasta for dinner tonight"),
                          SourceDescriptor("u", SourceKind.STANDARD_SOCIAL), utc(2017, 7, 11, 8, 0))
    assert process(chatter, model, roads, CFG) is None


def test_process_cctv_keeps_condition(roads, model):
    obs = Observation(VehicleCountPayload("100", 25), SourceDescriptor("ID1", SourceKind.CCTV),
                      utc(2017, 7, 11, 8, 15), Condition.RAIN)
    rec = process(obs, model, roads, CFG)
    assert rec.knowledge is Knowledge.NOT_CONGESTED
    assert rec.condition is Condition.RAIN


@given(st.sampled_from(["text", "loop", "gps", "count"]), st.integers(0, 120), st.integers(0, 3))
def test_process_records_are_always_matchable(kind, number, road_idx):
    db = RoadDb([ROAD, Road("101", "Beta", 41.89, -87.62, 60)])
    road = db.roads[road_idx % 2]
    payload, src = {
        "text": (TextPayload(f"Huge traffic jam on {road.road_name}"), SourceKind.STANDARD_SOCIAL),
        "loop": (LoopPayload(road.road_id, number, float(number)), SourceKind.LOOP_SENSOR),
        "gps": (GpsPayload("v", road.lat, road.lon, float(number)), SourceKind.GPS),
        "count": (VehicleCountPayload(road.road_id, number), SourceKind.CCTV),
    }[kind]
    model = train_text_model([("huge traffic jam", "congested"), ("clear road", "not_congested")])
    rec = process(Observation(payload, SourceDescriptor("s", src), utc(2017, 7, 11, 8, 0)), model, db, CFG)
    assert rec is not None and rec.metadata.matchable


# -- gps aggregation ----------------------------------------------------------------------------


def test_aggregate_gps_mean():
    window = [gps(ROAD.lat, ROAD.lon, 10.0), gps(ROAD.lat, ROAD.lon, 30.0)]
    assert aggregate_gps(window, DB, CFG) == ([("100", 20.0)], 0)


def test_aggregate_gps_empty():
    assert aggregate_gps([], DB, CFG) == ([], 0)


def test_aggregate_gps_drops_unmatched():
    window = [gps(ROAD.lat, ROAD.lon, 12.0), gps(FAR_LAT, ROAD.lon, 50.0)]
    # oracle: group by hand
    assert aggregate_gps(window, DB, CFG) == ([("100", 12.0)], 1)
