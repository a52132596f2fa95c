import http.server
import json
import threading

import pytest
from fastapi.testclient import TestClient

from vqn.service import JournalStore, ServiceState, create_app
from vqn.service.config import NotificationConfig
from vqn.service.store import StatusOrderError, StoreState

from conftest import make_service_config, scan_journal_invariants


class FakeClock:
    def __init__(self, start=1000.0):
        self.now = start

    def __call__(self):
        return self.now

    def advance(self, dt):
        self.now += dt


@pytest.fixture
def service(tmp_path):
    config = make_service_config(tmp_path)
    state = ServiceState(config)
    app = create_app(config, state=state)
    with TestClient(app) as client:
        yield client, state, config
    # lifespan shutdown stopped the worker and closed the journal


def login(client, user="alice", secret="a-secret"):
    r = client.post("/api/v1/auth/login", json={"user": user, "secret": secret})
    assert r.status_code == 200, r.text
    token = r.json()["token"]
    return {"Authorization": f"Bearer {token}"}


def acquire_pair(client, state, headers):
    r = client.post("/api/v1/pair-requests", headers=headers)
    assert r.status_code == 200, r.text
    request_id = r.json()["request_id"]
    state.wait_idle()
    r = client.get(f"/api/v1/pair-requests/{request_id}", headers=headers)
    doc = r.json()
    assert doc["result_ref"], doc
    return request_id, doc["result_ref"].split(":", 1)[1]


# -- auth -----------------------------------------------------------------


def test_login_and_bad_credentials(service):
    client, state, _ = service
    headers = login(client)
    assert client.get("/api/v1/resources", headers=headers).status_code == 200

    r = client.post("/api/v1/auth/login", json={"user": "alice", "secret": "nope"})
    assert r.status_code == 401
    assert r.json()["code"] == "auth_failed"

    r = client.get("/api/v1/resources")
    assert r.status_code == 401


def test_token_expiry(tmp_path):
    clock = FakeClock()
    config = make_service_config(tmp_path, token_ttl_s=60.0)
    state = ServiceState(config, clock=clock)
    app = create_app(config, state=state)
    with TestClient(app) as client:
        headers = login(client)
        assert client.get("/api/v1/queue/position", headers=headers).status_code == 200
        clock.advance(61.0)
        r = client.get("/api/v1/queue/position", headers=headers)
        assert r.status_code == 401
        assert r.json()["code"] == "token_expired"


def test_healthz_open(service):
    client, _, _ = service
    r = client.get("/api/v1/healthz")
    assert r.status_code == 200
    assert r.json()["status"] == "ok"


# -- request lifecycle -------------------------------------------------------


def test_submit_assign_notify_lifecycle(service, tmp_path):
    client, state, config = service
    headers = login(client)
    r = client.post("/api/v1/pair-requests", headers=headers)
    assert r.status_code == 200
    doc = r.json()
    assert doc["status"] == "processing"  # immediate acknowledgment

    state.wait_idle()
    r = client.get(f"/api/v1/pair-requests/{doc['request_id']}", headers=headers)
    record = r.json()
    assert record["status"] == "completed"  # assigned and notification delivered
    assert record["result_ref"].startswith("pair:")

    lines = (tmp_path / "notify.log").read_text().splitlines()
    assert len(lines) == 1
    note = json.loads(lines[0])
    assert note["user_id"] == "alice"
    assert note["request_id"] == doc["request_id"]


def test_duplicate_request_conflict(service):
    client, state, _ = service
    headers = login(client)
    client.post("/api/v1/pair-requests", headers=headers)
    r = client.post("/api/v1/pair-requests", headers=headers)
    assert r.status_code == 409
    assert r.json()["code"] == "pair_already_requested"


def test_three_users_three_pairs_all_served(service):
    client, state, _ = service
    ids = {}
    for user, secret in (("alice", "a-secret"), ("bob", "b-secret"), ("cara", "c-secret")):
        headers = login(client, user, secret)
        r = client.post("/api/v1/pair-requests", headers=headers)
        ids[user] = (headers, r.json()["request_id"])
    state.wait_idle()
    pairs = set()
    for user, (headers, request_id) in ids.items():
        doc = client.get(f"/api/v1/pair-requests/{request_id}", headers=headers).json()
        assert doc["status"] == "completed"
        pairs.add(doc["result_ref"])
    assert len(pairs) == 3  # three distinct pairs

    resources = client.get("/api/v1/resources", headers=ids["alice"][0]).json()["resources"]
    assert all(r["status"] == "assigned" for r in resources)


def test_queue_position_and_release_cycle(service):
    client, state, _ = service
    held = {}
    for user, secret in (("alice", "a-secret"), ("bob", "b-secret"), ("cara", "c-secret")):
        headers = login(client, user, secret)
        _, pair = acquire_pair(client, state, headers)
        held[user] = (headers, pair)

    config_users = {"dave": "d-secret"}
    state.config.users.update(config_users)
    d_headers = login(client, "dave", "d-secret")
    r = client.post("/api/v1/pair-requests", headers=d_headers)
    assert r.json()["queue_position"] == 1
    state.wait_idle()
    assert client.get("/api/v1/queue/position", headers=d_headers).json()["position"] == 1

    # release by alice frees a pair for dave within one worker cycle
    a_headers, a_pair = held["alice"]
    r = client.post(f"/api/v1/pairs/{a_pair}/release", headers=a_headers)
    assert r.json()["released"] is True
    state.wait_idle()
    assert client.get("/api/v1/queue/position", headers=d_headers).json()["position"] is None
    resources = {r["pair_id"]: r for r in client.get("/api/v1/resources", headers=d_headers).json()["resources"]}
    assert resources[a_pair]["assigned_to"] == "dave"

    # double release is a no-op, not an error
    r = client.post(f"/api/v1/pairs/{a_pair}/release", headers=a_headers)
    assert r.status_code == 200
    assert r.json()["released"] is False

    # releasing someone else's pair is forbidden
    b_headers, b_pair = held["bob"]
    r = client.post(f"/api/v1/pairs/{b_pair}/release", headers=a_headers)
    assert r.status_code == 403


def test_release_then_rerequest(service):
    client, state, _ = service
    headers = login(client)
    _, pair = acquire_pair(client, state, headers)
    client.post(f"/api/v1/pairs/{pair}/release", headers=headers)
    state.wait_idle()
    _, pair2 = acquire_pair(client, state, headers)
    assert pair2  # re-request succeeds after release


# -- measurements ---------------------------------------------------------------


def test_count_rate_measurement(service):
    client, state, _ = service
    headers = login(client)
    _, pair = acquire_pair(client, state, headers)
    resources = {x["pair_id"]: x for x in client.get("/api/v1/resources", headers=headers).json()["resources"]}
    signal, idler = resources[pair]["signal"], resources[pair]["idler"]
    r = client.post("/api/v1/measurements", headers=headers, json={
        "pair_id": pair, "function": "count_rate", "params": {"duration_s": 0.05},
    })
    assert r.status_code == 200, r.text
    rates = r.json()["result"]["rates_hz"]
    assert set(rates) == {str(signal), str(idler)}
    for rate in rates.values():
        assert 200_000 < rate < 330_000


def test_counter_measurement_shape(service):
    client, state, _ = service
    headers = login(client)
    _, pair = acquire_pair(client, state, headers)
    r = client.post("/api/v1/measurements", headers=headers, json={
        "pair_id": pair, "function": "counter",
        "params": {"duration_s": 0.02, "bin_width_ps": 100, "n_bins": 100},
    })
    assert r.status_code == 200
    result = r.json()["result"]
    assert result["bin_width_ps"] == 100
    assert len(result["counts"]) == 100


def test_coincidence_measurement_updates_rate(service):
    client, state, _ = service
    headers = login(client)
    _, pair = acquire_pair(client, state, headers)
    r = client.post("/api/v1/measurements", headers=headers, json={
        "pair_id": pair, "function": "coincidence", "params": {"duration_s": 1.0},
    })
    assert r.status_code == 200
    result = r.json()["result"]
    assert result["car"] is not None and result["car"] > 100
    resources = {x["pair_id"]: x for x in client.get("/api/v1/resources", headers=headers).json()["resources"]}
    assert resources[pair]["current_rate_hz"] == pytest.approx(result["cc_hz"])


def test_measurement_validation_errors(service):
    client, state, _ = service
    headers = login(client)
    _, pair = acquire_pair(client, state, headers)

    r = client.post("/api/v1/measurements", headers=headers, json={
        "pair_id": pair, "function": "counter", "params": {"duration_s": 0.01},
    })
    assert r.status_code == 422
    assert r.json()["field"] == "bin_width_ps"

    r = client.post("/api/v1/measurements", headers=headers, json={
        "pair_id": pair, "function": "count_rate", "params": {"duration_s": 900.0},
    })
    assert r.status_code == 422
    assert r.json()["field"] == "duration_s"

    r = client.post("/api/v1/measurements", headers=headers, json={
        "pair_id": pair, "function": "teleport", "params": {"duration_s": 0.1},
    })
    assert r.status_code == 422
    assert r.json()["field"] == "function"


def test_measurement_requires_ownership(service):
    client, state, _ = service
    a_headers = login(client, "alice", "a-secret")
    b_headers = login(client, "bob", "b-secret")
    _, pair = acquire_pair(client, state, a_headers)
    r = client.post("/api/v1/measurements", headers=b_headers, json={
        "pair_id": pair, "function": "count_rate", "params": {"duration_s": 0.01},
    })
    assert r.status_code == 403

    # released pairs cannot be measured either
    client.post(f"/api/v1/pairs/{pair}/release", headers=a_headers)
    r = client.post("/api/v1/measurements", headers=a_headers, json={
        "pair_id": pair, "function": "count_rate", "params": {"duration_s": 0.01},
    })
    assert r.status_code == 403


def test_stub_backend_unavailable(tmp_path):
    config = make_service_config(tmp_path, backend="stub")
    state = ServiceState(config)
    app = create_app(config, state=state)
    with TestClient(app) as client:
        headers = login(client)
        _, pair = acquire_pair(client, state, headers)
        r = client.post("/api/v1/measurements", headers=headers, json={
            "pair_id": pair, "function": "count_rate", "params": {"duration_s": 0.01},
        })
        assert r.status_code == 503
        assert r.json()["code"] == "backend_unavailable"


# -- notifications ----------------------------------------------------------------


class _Webhook(http.server.BaseHTTPRequestHandler):
    received = []

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        type(self).received.append(json.loads(self.rfile.read(length)))
        self.send_response(200)
        self.end_headers()

    def log_message(self, *args):
        pass


def test_webhook_delivery(tmp_path):
    server = http.server.HTTPServer(("127.0.0.1", 0), _Webhook)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    try:
        url = f"http://127.0.0.1:{server.server_port}/hook"
        config = make_service_config(
            tmp_path,
            notification=NotificationConfig(sink="webhook", url=url, path=str(tmp_path / "dead")),
        )
        state = ServiceState(config)
        with TestClient(create_app(config, state=state)) as client:
            headers = login(client)
            request_id, _ = acquire_pair(client, state, headers)
            doc = client.get(f"/api/v1/pair-requests/{request_id}", headers=headers).json()
            assert doc["status"] == "completed"
            assert doc["delivery_failed"] is False
        assert any(n["request_id"] == request_id for n in _Webhook.received)
    finally:
        server.shutdown()


def test_webhook_failure_dead_letters_and_completes(tmp_path):
    config = make_service_config(
        tmp_path,
        notification=NotificationConfig(
            sink="webhook", url="http://127.0.0.1:9/unreachable",
            path=str(tmp_path / "dead"), max_attempts=5, backoff_base_s=0.002,
        ),
    )
    state = ServiceState(config)
    with TestClient(create_app(config, state=state)) as client:
        headers = login(client)
        request_id, _ = acquire_pair(client, state, headers)
        doc = client.get(f"/api/v1/pair-requests/{request_id}", headers=headers).json()
        assert doc["status"] == "completed"  # lifecycle still terminates
        assert doc["delivery_failed"] is True
    dead = (tmp_path / "dead.deadletter").read_text().splitlines()
    assert len(dead) == 1


# -- persistence / crash consistency ------------------------------------------------


def test_status_never_moves_backward():
    state = StoreState()
    state.apply({"seq": 1, "kind": "request_submitted",
                 "data": {"request_id": "r1", "user_id": "u", "request_kind": "channel_pair", "at": 1.0}})
    state.apply({"seq": 2, "kind": "status", "data": {"request_id": "r1", "status": "completed", "at": 2.0}})
    with pytest.raises(StatusOrderError):
        state.apply({"seq": 3, "kind": "status", "data": {"request_id": "r1", "status": "processing", "at": 3.0}})


def test_replay_reconstructs_identical_state(service, tmp_path):
    client, state, config = service
    a_headers = login(client, "alice", "a-secret")
    b_headers = login(client, "bob", "b-secret")
    _, pair = acquire_pair(client, state, a_headers)
    client.post("/api/v1/measurements", headers=a_headers, json={
        "pair_id": pair, "function": "count_rate", "params": {"duration_s": 0.01}})
    client.post("/api/v1/pair-requests", headers=b_headers)
    state.wait_idle()
    client.post(f"/api/v1/pairs/{pair}/release", headers=a_headers)
    state.wait_idle()

    live = state.store.state.snapshot()
    replayed = JournalStore.replay(config.store_path).snapshot()
    assert replayed == live


def test_torn_trailing_write_is_ignored(tmp_path):
    config = make_service_config(tmp_path)
    state = ServiceState(config)
    app = create_app(config, state=state)
    with TestClient(app) as client:
        headers = login(client)
        acquire_pair(client, state, headers)
        snapshot = state.store.state.snapshot()
    with open(config.store_path, "a", encoding="utf-8") as fh:
        fh.write('{"seq": 9999, "kind": "status", "data": {"request')  # torn write
    assert JournalStore.replay(config.store_path).snapshot() == snapshot


def test_restart_mid_queue_resumes(tmp_path):
    config = make_service_config(tmp_path)
    state = ServiceState(config)
    app = create_app(config, state=state)
    with TestClient(app) as client:
        for user, secret in (("alice", "a-secret"), ("bob", "b-secret"), ("cara", "c-secret")):
            acquire_pair(client, state, login(client, user, secret))
        state.config.users["dave"] = "d-secret"
        d_headers = login(client, "dave", "d-secret")
        client.post("/api/v1/pair-requests", headers=d_headers)  # queued: no free pair
        state.wait_idle()
        before = state.store.state.snapshot()
    # process "crashed" with dave still queued; a new instance resumes from disk
    state2 = ServiceState(config)
    app2 = create_app(config, state=state2)
    with TestClient(app2) as client:
        assert state2.store.state.snapshot() == before
        state2.wait_idle()
        # no double assignment after restart: dave still waiting, 3 pairs held
        held = [r for r in state2.store.state.resources.values() if r.assigned_to]
        assert len(held) == 3
        assert state2.queue_position("dave") == 1
        # releasing lets the queued user in
        a_headers = login(client, "alice", "a-secret")
        a_pair = next(r.pair_id for r in state2.store.state.resources.values() if r.assigned_to == "alice")
        client.post(f"/api/v1/pairs/{a_pair}/release", headers=a_headers)
        state2.wait_idle()
        resources = state2.store.state.resources
        assert any(r.assigned_to == "dave" for r in resources.values())
    scan_journal_invariants(config.store_path)


def test_journal_invariants_after_busy_session(service, tmp_path):
    client, state, config = service
    for round_ in range(3):
        held = {}
        for user, secret in (("alice", "a-secret"), ("bob", "b-secret"), ("cara", "c-secret")):
            headers = login(client, user, secret)
            _, pair = acquire_pair(client, state, headers)
            held[user] = (headers, pair)
        for headers, pair in held.values():
            client.post(f"/api/v1/pairs/{pair}/release", headers=headers)
        state.wait_idle()
    summary = scan_journal_invariants(config.store_path)
    assert summary["assignments"] == 9
    assert summary["releases"] == 9
    assert summary["max_concurrent"] <= 3
