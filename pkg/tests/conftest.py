import json
from pathlib import Path

import pytest

from vqn.service.config import NotificationConfig, ServiceConfig


def make_service_config(tmp_path: Path, **overrides) -> ServiceConfig:
    users = overrides.pop("users", {"alice": "a-secret", "bob": "b-secret", "cara": "c-secret"})
    notification = overrides.pop(
        "notification",
        NotificationConfig(sink="log", path=str(tmp_path / "notify.log")),
    )
    defaults = dict(
        users=users,
        notification=notification,
        store_path=str(tmp_path / "journal.jsonl"),
        policy="fcfs",
        backend="virtual",
        max_measurement_s=5.0,
        source_seed=7,
    )
    defaults.update(overrides)
    return ServiceConfig(**defaults)


def scan_journal_invariants(journal_path) -> dict:
    """Fold the journal, asserting allocation safety at every event.

    Returns summary counters.  Checks: the assigned-pairs relation stays
    injective both ways at every prefix, statuses never move backward, and
    the number of simultaneously assigned pairs never exceeds the pair count.
    """
    holders: dict[str, str] = {}  # pair -> user
    status: dict[str, str] = {}
    order = {"processing": 0, "processed": 1, "completed": 2}
    n_pairs = 0
    counters = {"assignments": 0, "releases": 0, "max_concurrent": 0, "requests": 0}
    for line in Path(journal_path).read_text().splitlines():
        event = json.loads(line)
        kind, data = event["kind"], event["data"]
        if kind == "resources_declared":
            n_pairs += len(data["pairs"])
        elif kind == "request_submitted":
            counters["requests"] += 1
            status[data["request_id"]] = "processing"
        elif kind == "status":
            rid = data["request_id"]
            assert order[data["status"]] >= order[status[rid]], f"{rid} went backward"
            status[rid] = data["status"]
        elif kind == "assignment":
            pair, user = data["pair_id"], data["user_id"]
            assert pair not in holders, f"pair {pair} double-assigned"
            assert user not in holders.values(), f"user {user} holds two pairs"
            holders[pair] = user
            counters["assignments"] += 1
            counters["max_concurrent"] = max(counters["max_concurrent"], len(holders))
            assert len(holders) <= n_pairs
        elif kind == "released":
            assert holders.get(data["pair_id"]) == data["user_id"]
            del holders[data["pair_id"]]
            counters["releases"] += 1
    counters["statuses"] = status
    counters["held_at_end"] = dict(holders)
    return counters


@pytest.fixture
def service_config(tmp_path):
    return make_service_config(tmp_path)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker and report.when == "call":
        label = marker.kwargs.get("label", item.name)
        verdict = "PASS" if report.passed else "FAIL"
        print(f"\nACCEPTANCE {verdict}: {label}", flush=True)
