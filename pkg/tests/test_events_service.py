import json
import threading

import pytest
from fastapi.testclient import TestClient

from conftest import small_wav
from soundmem.events import (
    EventLog,
    EventRecord,
    ReplayError,
    accepted_sessions,
    events_from_games,
    finish_payload,
    iter_events,
    replay_events,
    sessions_from_replay,
    write_events,
)
from soundmem.experiment import PlanConfig, validate_session
from soundmem.service import ExperimentService, ServiceConfig, create_app, load_pool_manifest
from soundmem.simulant import SimulantProfile, simulate_games

POOL_IDS = [f"s{i:03d}" for i in range(80)]
ROLE_TAGS = ("target_first", "target_second", "vigilance_first", "vigilance_second", "filler")


@pytest.fixture
def audio_pool(tmp_path):
    manifest = {}
    for i, sid in enumerate(POOL_IDS):
        path = tmp_path / f"{sid}.wav"
        path.write_bytes(small_wav(200.0 + 10 * i))
        manifest[sid] = str(path)
    return manifest


def service_client(tmp_path, audio_pool, n_targets=1, base_seed=5):
    config = ServiceConfig(
        pool_manifest=audio_pool,
        event_log_path=tmp_path / "events.jsonl",
        plan_cfg=PlanConfig(n_target_pairs=n_targets),
        base_seed=base_seed,
    )
    return TestClient(create_app(config)), config


# ---------------------------------------------------------------------------
# event log and replay


def test_event_record_round_trip():
    rec = EventRecord(3, 1700, "click", "s1", {"position": 2, "latency_ms": 410.5})
    assert EventRecord.from_json(rec.to_json()) == rec
    with pytest.raises(ReplayError):
        EventRecord.from_json("{not json")


def test_event_log_seq_continues_across_reopen(tmp_path):
    path = tmp_path / "log.jsonl"
    log = EventLog(path)
    log.append("session_started", "a", {"worker_id": "w", "plan": _tiny_plan_dict("a")}, ts=1)
    log.close()
    log = EventLog(path)
    rec = log.append("survey_submitted", "a", {"community": "urban"}, ts=2)
    log.close()
    assert rec.seq == 2
    assert [r.seq for r in iter_events(path)] == [1, 2]


def _tiny_plan_dict(session_id):
    games = simulate_games(POOL_IDS, SimulantProfile.uniform(POOL_IDS), 1, seed=1,
                           plan_cfg=PlanConfig(n_target_pairs=1))
    doc = games[0].plan.to_dict()
    doc["session_id"] = session_id
    return doc


def simulated_events(n_games=3, seed=2):
    profile = SimulantProfile.uniform(POOL_IDS, recall=0.8, confuse=0.05, vigilance=1.0)
    games = simulate_games(POOL_IDS, profile, n_games, seed=seed,
                           plan_cfg=PlanConfig(n_target_pairs=1))
    return games, events_from_games(games)


def test_replay_complete_session_matches_live_validation():
    games, records = simulated_events()
    replayed = replay_events(records)
    assert len(replayed) == 3
    for game in games:
        state = replayed[game.plan.session_id]
        assert state.status == "finished"
        assert state.clicks == game.log.clicks
        live = finish_payload(game.plan, game.log)
        assert state.reported == live


def test_replay_truncated_log_leaves_session_active():
    _, records = simulated_events(1)
    replayed = replay_events(records[:-10])
    state = next(iter(replayed.values()))
    assert state.status == "active"
    assert sessions_from_replay(replayed, only_finished=True) == []


def test_replay_rejects_seq_regression():
    _, records = simulated_events(1)
    records[5] = EventRecord(1, records[5].ts, records[5].kind,
                             records[5].session_id, records[5].payload)
    with pytest.raises(ReplayError, match="seq"):
        replay_events(records)


def test_replay_rejects_orphan_events():
    _, records = simulated_events(1)
    orphan = EventRecord(9999, 0, "click", "nope", {"position": 0})
    with pytest.raises(ReplayError, match="orphan"):
        replay_events(records + [orphan])


def test_replay_rejects_double_finish():
    _, records = simulated_events(1)
    last = records[-1]
    dup = EventRecord(last.seq + 1, last.ts + 1, last.kind, last.session_id, last.payload)
    with pytest.raises(ReplayError, match="second session_finished"):
        replay_events(records + [dup])


def test_accepted_sessions_filters_by_validation():
    profile = SimulantProfile.uniform(POOL_IDS, recall=0.0, confuse=0.0, vigilance=0.0)
    games = simulate_games(POOL_IDS, profile, 2, seed=3, plan_cfg=PlanConfig(n_target_pairs=1))
    replayed = replay_events(events_from_games(games))
    assert accepted_sessions(replayed) == []


def test_write_events_round_trip(tmp_path):
    _, records = simulated_events(2)
    path = tmp_path / "events.jsonl"
    write_events(records, path)
    back = list(iter_events(path))
    assert back == records


# ---------------------------------------------------------------------------
# HTTP service


def test_start_session_slot_count(tmp_path, audio_pool):
    client, _ = service_client(tmp_path, audio_pool)
    r = client.post("/api/session", json={"worker_id": "w1"})
    assert r.status_code == 200
    assert 68 <= r.json()["n_slots"] <= 72


def test_ninth_round_rejected(tmp_path, audio_pool):
    client, _ = service_client(tmp_path, audio_pool)
    for _ in range(8):
        assert client.post("/api/session", json={"worker_id": "w1"}).status_code == 200
    assert client.post("/api/session", json={"worker_id": "w1"}).status_code == 409


def test_concurrent_double_start_counts_two_rounds(tmp_path, audio_pool):
    client, _ = service_client(tmp_path, audio_pool)
    results = []

    def start():
        results.append(client.post("/api/session", json={"worker_id": "w"}))

    threads = [threading.Thread(target=start) for _ in range(2)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert all(r.status_code == 200 for r in results)
    ids = {r.json()["session_id"] for r in results}
    assert len(ids) == 2
    for _ in range(6):
        assert client.post("/api/session", json={"worker_id": "w"}).status_code == 200
    assert client.post("/api/session", json={"worker_id": "w"}).status_code == 409


def test_clip_serving_is_strictly_sequential(tmp_path, audio_pool):
    client, _ = service_client(tmp_path, audio_pool)
    sid = client.post("/api/session", json={"worker_id": "w"}).json()["session_id"]
    r = client.get(f"/api/session/{sid}/clip/5")
    assert r.status_code == 409
    assert r.json()["detail"]["expected_position"] == 0
    r = client.get(f"/api/session/{sid}/clip/0")
    assert r.status_code == 200
    assert r.headers["content-type"] == "audio/wav"
    assert r.content[:4] == b"RIFF"
    assert client.get(f"/api/session/{sid}/clip/0").status_code == 409
    assert client.get(f"/api/session/{sid}/clip/1").status_code == 200


def test_click_validation_and_idempotency(tmp_path, audio_pool):
    client, _ = service_client(tmp_path, audio_pool)
    sid = client.post("/api/session", json={"worker_id": "w"}).json()["session_id"]
    assert client.post(f"/api/session/{sid}/click", json={"position": 0}).status_code == 400
    client.get(f"/api/session/{sid}/clip/0")
    r1 = client.post(f"/api/session/{sid}/click", json={"position": 0, "latency_ms": 333.0})
    r2 = client.post(f"/api/session/{sid}/click", json={"position": 0})
    assert r1.json()["counted"] is True
    assert r2.json()["counted"] is False
    assert client.post("/api/session/missing/click", json={"position": 0}).status_code == 404


def test_finish_requires_all_slots_served(tmp_path, audio_pool):
    client, cfg = service_client(tmp_path, audio_pool)
    start = client.post("/api/session", json={"worker_id": "w"}).json()
    sid, n = start["session_id"], start["n_slots"]
    assert client.post(f"/api/session/{sid}/finish").status_code == 409
    for pos in range(n):
        client.get(f"/api/session/{sid}/clip/{pos}")
    r = client.post(f"/api/session/{sid}/finish")
    assert r.status_code == 200
    body = r.json()
    assert body["accepted"] is False  # no clicks at all fails vigilance
    assert body["display_score"] == 0
    assert client.get(f"/api/session/{sid}/clip/0").status_code == 409
    assert client.post(f"/api/session/{sid}/finish").status_code == 409


def test_rejected_session_still_reports_scores(tmp_path, audio_pool):
    client, _ = service_client(tmp_path, audio_pool)
    start = client.post("/api/session", json={"worker_id": "w"}).json()
    sid, n = start["session_id"], start["n_slots"]
    for pos in range(n):
        client.get(f"/api/session/{sid}/clip/{pos}")
        client.post(f"/api/session/{sid}/click", json={"position": pos})
    body = client.post(f"/api/session/{sid}/finish").json()
    assert body["vigilance_score"] == 1.0
    assert body["false_positive_rate"] == 1.0
    assert body["accepted"] is False


def test_survey_payload_recorded_verbatim(tmp_path, audio_pool):
    client, config = service_client(tmp_path, audio_pool)
    sid = client.post("/api/session", json={"worker_id": "w"}).json()["session_id"]
    payload = {"community": "urban", "hours_per_location": {"home": 6, "work": 8.5}}
    assert client.post(f"/api/session/{sid}/survey", json=payload).status_code == 200
    surveys = [r for r in iter_events(config.event_log_path) if r.kind == "survey_submitted"]
    assert surveys[0].payload == payload


def test_headphone_check_stub(tmp_path, audio_pool):
    client, _ = service_client(tmp_path, audio_pool)
    body = client.get("/api/headphone-check").json()
    assert body == {"passed": True, "experimental": True}


def test_no_response_exposes_role_tags(tmp_path, audio_pool):
    client, _ = service_client(tmp_path, audio_pool)
    responses = []
    start = client.post("/api/session", json={"worker_id": "w"})
    responses.append(start)
    sid, n = start.json()["session_id"], start.json()["n_slots"]
    responses.append(client.get(f"/api/session/{sid}/clip/5"))  # 409 body
    for pos in range(n):
        client.get(f"/api/session/{sid}/clip/{pos}")
    responses.append(client.post(f"/api/session/{sid}/click", json={"position": 1}))
    responses.append(client.post(f"/api/session/{sid}/finish"))
    responses.append(client.get("/api/headphone-check"))
    for r in responses:
        text = r.text + json.dumps(dict(r.headers))
        for tag in ROLE_TAGS:
            assert tag not in text


def test_live_scores_equal_replayed_scores(tmp_path, audio_pool):
    client, config = service_client(tmp_path, audio_pool)
    live = {}
    for w in range(3):
        start = client.post("/api/session", json={"worker_id": f"w{w}"}).json()
        sid, n = start["session_id"], start["n_slots"]
        for pos in range(n):
            client.get(f"/api/session/{sid}/clip/{pos}")
            if pos % 3 == 0:
                client.post(f"/api/session/{sid}/click", json={"position": pos, "latency_ms": 400.0})
        live[sid] = client.post(f"/api/session/{sid}/finish").json()
    replayed = replay_events(config.event_log_path)
    for sid, reported in live.items():
        state = replayed[sid]
        recomputed = finish_payload(state.plan, state.to_log())
        assert recomputed == reported
        assert state.reported == reported


def test_service_restores_worker_state_from_log(tmp_path, audio_pool):
    client, config = service_client(tmp_path, audio_pool)
    for _ in range(8):
        assert client.post("/api/session", json={"worker_id": "w"}).status_code == 200
    # new process over the same event log
    app2 = create_app(ServiceConfig(
        pool_manifest=audio_pool,
        event_log_path=config.event_log_path,
        plan_cfg=config.plan_cfg,
        base_seed=config.base_seed,
    ))
    client2 = TestClient(app2)
    assert client2.post("/api/session", json={"worker_id": "w"}).status_code == 409
    assert client2.post("/api/session", json={"worker_id": "fresh"}).status_code == 200


def test_pool_manifest_loader(tmp_path):
    path = tmp_path / "pool.csv"
    path.write_text("sound_id,path\na,/x/a.wav\nb,/x/b.wav\n", encoding="utf-8")
    assert load_pool_manifest(path) == {"a": "/x/a.wav", "b": "/x/b.wav"}
    bad = tmp_path / "bad.csv"
    bad.write_text("sound_id,file\na,/x/a.wav\n", encoding="utf-8")
    with pytest.raises(ValueError):
        load_pool_manifest(bad)
