"""Append-only journal and the request/resource records derived from it.

Every state change is one JSON line; in-memory state is exactly the fold of
the journal, so replaying the file after a crash reconstructs identical
request and resource state.  A partially written trailing line (crash during
append) is ignored on recovery.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field, asdict
from pathlib import Path

STATUS_PROCESSING = "processing"
STATUS_PROCESSED = "processed"
STATUS_COMPLETED = "completed"
_STATUS_ORDER = {STATUS_PROCESSING: 0, STATUS_PROCESSED: 1, STATUS_COMPLETED: 2}

KIND_CHANNEL_PAIR = "channel_pair"
KIND_MEASUREMENT = "measurement"
KIND_RELEASE = "release"


class StoreError(RuntimeError):
    pass


class StatusOrderError(StoreError):
    """Attempted backward move in processing -> processed -> completed."""


@dataclass
class RequestRecord:
    id: str
    user_id: str
    kind: str
    status: str
    created_at: float
    updated_at: float
    payload: dict = field(default_factory=dict)
    result_ref: str | None = None
    delivery_failed: bool = False

    def advance(self, status: str, at: float) -> None:
        if _STATUS_ORDER[status] < _STATUS_ORDER[self.status]:
            raise StatusOrderError(f"request {self.id}: {self.status} -> {status}")
        self.status = status
        self.updated_at = max(at, self.updated_at)


@dataclass
class ResourceRecord:
    pair_id: str
    signal: int
    idler: int
    current_rate_hz: float
    assigned_to: str | None = None
    assigned_since: float | None = None

    @property
    def status(self) -> str:
        return "free" if self.assigned_to is None else "assigned"


@dataclass
class StoreState:
    """Pure fold of the journal; compared wholesale in recovery tests."""

    requests: dict = field(default_factory=dict)  # id -> RequestRecord
    resources: dict = field(default_factory=dict)  # pair_id -> ResourceRecord
    results: dict = field(default_factory=dict)  # request id -> measurement payload

    def apply(self, event: dict) -> None:
        kind = event["kind"]
        data = event["data"]
        if kind == "resources_declared":
            for p in data["pairs"]:
                if p["pair_id"] not in self.resources:
                    self.resources[p["pair_id"]] = ResourceRecord(
                        pair_id=p["pair_id"], signal=p["signal"], idler=p["idler"],
                        current_rate_hz=p["rate_hz"],
                    )
        elif kind == "request_submitted":
            self.requests[data["request_id"]] = RequestRecord(
                id=data["request_id"], user_id=data["user_id"], kind=data["request_kind"],
                status=STATUS_PROCESSING, created_at=data["at"], updated_at=data["at"],
                payload=data.get("payload", {}),
            )
        elif kind == "status":
            record = self.requests[data["request_id"]]
            record.advance(data["status"], data["at"])
            if data.get("delivery_failed"):
                record.delivery_failed = True
        elif kind == "result":
            record = self.requests[data["request_id"]]
            record.result_ref = data["result_ref"]
            record.updated_at = max(data["at"], record.updated_at)
            if "result" in data:
                self.results[data["request_id"]] = data["result"]
        elif kind == "assignment":
            res = self.resources[data["pair_id"]]
            res.assigned_to = data["user_id"]
            res.assigned_since = data["at"]
        elif kind == "released":
            res = self.resources[data["pair_id"]]
            res.assigned_to = None
            res.assigned_since = None
        elif kind == "rate_updated":
            self.resources[data["pair_id"]].current_rate_hz = data["rate_hz"]
        else:
            raise StoreError(f"unknown journal event kind {kind!r}")

    def snapshot(self) -> dict:
        return {
            "requests": {k: asdict(v) for k, v in sorted(self.requests.items())},
            "resources": {k: asdict(v) for k, v in sorted(self.resources.items())},
            "results": {k: self.results[k] for k in sorted(self.results)},
        }


class JournalStore:
    """Write-ahead journal with the folded state attached.

    ``append`` persists the event (write + flush + fsync) before applying it,
    so memory never runs ahead of disk.
    """

    def __init__(self, path):
        self.path = Path(path)
        self.state = StoreState()
        self.events: list[dict] = []
        self._lock = threading.Lock()
        self._seq = 0
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if self.path.exists():
            for event in self._read_journal(self.path):
                self.state.apply(event)
                self.events.append(event)
                self._seq = event["seq"]
        self._fh = open(self.path, "a", encoding="utf-8")

    @staticmethod
    def _read_journal(path: Path) -> list[dict]:
        events = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                try:
                    event = json.loads(line)
                except json.JSONDecodeError:
                    break  # torn trailing write from a crash; discard
                events.append(event)
        return events

    def append(self, kind: str, data: dict) -> dict:
        with self._lock:
            self._seq += 1
            event = {"seq": self._seq, "kind": kind, "data": data}
            self._fh.write(json.dumps(event) + "\n")
            self._fh.flush()
            os.fsync(self._fh.fileno())
            self.state.apply(event)
            self.events.append(event)
            return event

    def close(self) -> None:
        with self._lock:
            if not self._fh.closed:
                self._fh.close()

    @classmethod
    def replay(cls, path) -> StoreState:
        """Rebuild state purely from the journal file."""
        state = StoreState()
        for event in cls._read_journal(Path(path)):
            state.apply(event)
        return state
