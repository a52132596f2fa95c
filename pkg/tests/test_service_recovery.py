"""Recovery and configuration edges beyond the happy lifecycle."""

import json

import pytest
from fastapi.testclient import TestClient

from vqn.service import ServiceState, create_app, load_config
from vqn.service.bus import EventBus
from vqn.service.config import ConfigError

from conftest import make_service_config, scan_journal_invariants


def test_torn_assignment_recovers_as_served(tmp_path):
    """Crash between the assignment append and the status append.

    The restarted instance must treat the user as serving (not waiting),
    finish the torn status transition, and never hand them a second pair.
    """
    config = make_service_config(tmp_path)
    state = ServiceState(config)
    with TestClient(create_app(config, state=state)) as client:
        r = client.post("/api/v1/auth/login", json={"user": "alice", "secret": "a-secret"})
        headers = {"Authorization": f"Bearer {r.json()['token']}"}
        client.post("/api/v1/pair-requests", headers=headers)
        state.wait_idle()

    # rewrite the journal, dropping everything after the assignment event
    lines = [json.loads(l) for l in open(config.store_path)]
    cut = next(i for i, e in enumerate(lines) if e["kind"] == "assignment") + 1
    with open(config.store_path, "w") as fh:
        for event in lines[:cut]:
            fh.write(json.dumps(event) + "\n")

    resumed = ServiceState(config)
    try:
        record = next(r for r in resumed.store.state.requests.values() if r.kind == "channel_pair")
        assert record.status == "processed"  # torn transition finished
        assert record.result_ref.startswith("pair:")
        session = resumed.sessions_by_user["alice"]
        assert session.state == "served"
        assert resumed.queue_position("alice") is None
        # a worker cycle must not assign alice anything further
        resumed._allocation_cycle()
        held = [r for r in resumed.store.state.resources.values() if r.assigned_to == "alice"]
        assert len(held) == 1
    finally:
        resumed.store.close()
    scan_journal_invariants(config.store_path)


def test_allocator_and_store_resources_stay_mirrored(tmp_path):
    config = make_service_config(tmp_path)
    state = ServiceState(config)
    with TestClient(create_app(config, state=state)) as client:
        r = client.post("/api/v1/auth/login", json={"user": "bob", "secret": "b-secret"})
        headers = {"Authorization": f"Bearer {r.json()['token']}"}

        def assert_mirrored():
            with state.lock:
                for pair in state.alloc.resources:
                    rec = state.store.state.resources[pair.id]
                    assert rec.assigned_to == pair.assigned_to
                    assert rec.signal == pair.signal and rec.idler == pair.idler

        assert_mirrored()
        client.post("/api/v1/pair-requests", headers=headers)
        state.wait_idle()
        assert_mirrored()
        pair_id = next(r.pair_id for r in state.store.state.resources.values() if r.assigned_to == "bob")
        client.post("/api/v1/measurements", headers=headers, json={
            "pair_id": pair_id, "function": "coincidence", "params": {"duration_s": 0.5}})
        with state.lock:
            live = next(p for p in state.alloc.resources if p.id == pair_id)
            assert state.store.state.resources[pair_id].current_rate_hz == live.rate.rate_at(state.clock())
        client.post(f"/api/v1/pairs/{pair_id}/release", headers=headers)
        state.wait_idle()
        assert_mirrored()


def test_get_request_not_found_and_forbidden(tmp_path):
    config = make_service_config(tmp_path)
    state = ServiceState(config)
    with TestClient(create_app(config, state=state)) as client:
        r = client.post("/api/v1/auth/login", json={"user": "alice", "secret": "a-secret"})
        a_headers = {"Authorization": f"Bearer {r.json()['token']}"}
        r = client.post("/api/v1/auth/login", json={"user": "bob", "secret": "b-secret"})
        b_headers = {"Authorization": f"Bearer {r.json()['token']}"}

        assert client.get("/api/v1/pair-requests/zzz", headers=a_headers).status_code == 404
        request_id = client.post("/api/v1/pair-requests", headers=a_headers).json()["request_id"]
        r = client.get(f"/api/v1/pair-requests/{request_id}", headers=b_headers)
        assert r.status_code == 403
        assert r.json()["code"] == "forbidden"


def test_counter_rejects_foreign_channel(tmp_path):
    config = make_service_config(tmp_path)
    state = ServiceState(config)
    with TestClient(create_app(config, state=state)) as client:
        r = client.post("/api/v1/auth/login", json={"user": "alice", "secret": "a-secret"})
        headers = {"Authorization": f"Bearer {r.json()['token']}"}
        client.post("/api/v1/pair-requests", headers=headers)
        state.wait_idle()
        pair_id = next(r.pair_id for r in state.store.state.resources.values() if r.assigned_to == "alice")
        rec = state.store.state.resources[pair_id]
        foreign = next(ch for ch in (26, 16, 25, 17, 24, 18) if ch not in (rec.signal, rec.idler))
        r = client.post("/api/v1/measurements", headers=headers, json={
            "pair_id": pair_id, "function": "counter",
            "params": {"duration_s": 0.01, "bin_width_ps": 100, "n_bins": 10, "channel": foreign},
        })
        assert r.status_code == 422
        assert r.json()["field"] == "channel"
        # the happy path with an explicit channel still works
        r = client.post("/api/v1/measurements", headers=headers, json={
            "pair_id": pair_id, "function": "counter",
            "params": {"duration_s": 0.01, "bin_width_ps": 100, "n_bins": 10, "channel": rec.idler},
        })
        assert r.status_code == 200
        assert r.json()["result"]["channel"] == rec.idler


def test_event_bus_sequences_and_fanout():
    bus = EventBus()
    q1 = bus.subscribe("response")
    q2 = bus.subscribe("response")
    first = bus.publish("response", {"n": 1})
    second = bus.publish("response", {"n": 2})
    other = bus.publish("user_request", {"n": 3})
    assert (first.seq, second.seq) == (1, 2)  # per-topic, strictly increasing
    assert other.seq == 1
    for q in (q1, q2):
        assert q.get_nowait().payload == {"n": 1}
        assert q.get_nowait().payload == {"n": 2}


def test_load_config_file_and_env_overrides(tmp_path):
    path = tmp_path / "svc.json"
    path.write_text(json.dumps({
        "listen_port": 9000,
        "users": {"op": "s"},
        "policy": "fcfs",
        "notification": {"sink": "log", "path": str(tmp_path / "n.log")},
        "store_path": str(tmp_path / "j.jsonl"),
    }))
    env = {
        "VQN_LISTEN_PORT": "9100",
        "VQN_POLICY": "hungarian",
        "VQN_NOTIFY_SINK": "webhook",
        "VQN_NOTIFY_URL": "http://hooks.local/x",
        "UNRELATED": "ignored",
    }
    config = load_config(path, env=env)
    assert config.listen_port == 9100  # env wins over file
    assert config.policy == "hungarian"
    assert config.notification.sink == "webhook"
    assert config.notification.url == "http://hooks.local/x"
    assert config.users == {"op": "s"}  # file value survives

    with pytest.raises(ConfigError):
        load_config(path, env={"VQN_LISTEN_PORT": "not-a-port"})
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"policy": "round_robin"}))
    with pytest.raises(ConfigError):
        load_config(bad, env={})


def test_webhook_sink_requires_url():
    with pytest.raises(ConfigError):
        from vqn.service.config import NotificationConfig
        NotificationConfig(sink="webhook", url="")
