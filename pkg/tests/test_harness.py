import json

import pytest

from skylink import (
    ParseError,
    SchemaVersionMismatch,
    UnknownReference,
    aggregate,
    campaign,
    list_fixtures,
    load_scenario,
    parse_scenario,
    run,
    serialize,
)

from conftest import notes, outcomes, records, scenario, variant

NOMINAL_SEED42_HASH = "9b2436022a2745942bec129e02db7745de8b3bed77c4d1c4bb865882bc202073"


def test_nominal_layout(nominal):
    kinds = [n["kind"] for n in nominal.data["nodes"]]
    assert kinds.count("uav") == 1 and kinds.count("uavc") == 1
    assert len(nominal.data["world"]["base_stations"]) == 3


@pytest.mark.parametrize("name", list_fixtures())
def test_fixture_round_trips(name):
    s = load_scenario(name)
    assert parse_scenario(serialize(s)) == s
    assert serialize(parse_scenario(serialize(s))) == serialize(s)


def test_load_by_path(tmp_path, nominal):
    p = tmp_path / "s.json"
    p.write_text(serialize(nominal))
    assert load_scenario(p) == nominal


def test_unknown_node_reference():
    script = [{"at": 0, "action": "start_aa", "node": "uav-9"}]
    with pytest.raises(UnknownReference) as exc:
        variant("nominal", script=script)
    assert exc.value.ref == "uav-9"


def test_empty_file_is_parse_error():
    with pytest.raises(ParseError):
        parse_scenario("")


def test_bad_json_reports_line():
    text = serialize(scenario("nominal")).replace('"horizon_ms": 5000', '"horizon_ms": ,', 1)
    with pytest.raises(ParseError) as exc:
        parse_scenario(text)
    assert exc.value.line > 1


def test_schema_version_checked():
    doc = json.loads(serialize(scenario("nominal")))
    doc["schema_version"] = 99
    with pytest.raises(SchemaVersionMismatch):
        parse_scenario(json.dumps(doc))
    del doc["schema_version"]
    with pytest.raises(SchemaVersionMismatch):
        parse_scenario(json.dumps(doc))


def test_nominal_outcomes():
    recs = records("nominal")
    assert outcomes(recs, "UasAa", src="uav-1")[0]["outcome"] == "Success"
    assert outcomes(recs, "C2Establish", src="uav-1")[0]["outcome"] == "Success"
    verdicts = [r["payload"]["verdict"] for r in notes(recs, "location_verdict")]
    assert verdicts and set(verdicts) == {"Consistent"}


def test_spoof_outcome_is_mismatch():
    verdicts = [r["payload"]["verdict"] for r in notes(records("spoof"), "location_verdict")]
    assert "Mismatch" in verdicts


def test_golden_trace_hash(nominal):
    """Frozen so any unintended change to the simulator's output shows up here."""
    assert run(nominal, 42).trace.all_records()[-1]["trace_hash"] == NOMINAL_SEED42_HASH


def test_campaign_empty_range(nominal):
    agg = campaign(nominal, range(0))
    assert agg["runs"] == 0 and agg["per_seed"] == []
    assert aggregate("x", []) == {"scenario": "x", "runs": 0, "per_seed": []}


def test_campaign_parallel_matches_serial():
    sc = scenario("jam_p03")
    strip = lambda agg: [{k: v for k, v in s.items() if k != "wall_s"} for s in agg["per_seed"]]
    serial = campaign(sc, range(6), workers=1)
    parallel = campaign(sc, range(6), workers=2)
    assert strip(serial) == strip(parallel)
    assert serial["completion_rate"] == parallel["completion_rate"]


def test_campaign_aggregates():
    agg = campaign(scenario("location_noise"), range(20), workers=1)
    assert agg["runs"] == 20 and agg["unique_trace_hashes"] == 20
    assert agg["rms_location_error_m"] > 0
    assert agg["location_mismatch_rate"] == 0.0
