"""Service state machine: request lifecycle, allocation worker, notifications.

One ``ServiceState`` owns everything behind the HTTP handlers.  The
allocation worker is the single writer of allocation decisions; it consumes
pair-request and release events from the bus and matches free pairs to
waiting users under the configured policy.  Request records advance
processing -> processed (assignment) -> completed (notification delivered)
and every transition is journaled before it is applied, so a crash-restart
reconstructs identical state from the journal alone.
"""

from __future__ import annotations

import hmac
import logging
import secrets
import threading
import time
import uuid
from dataclasses import dataclass

from ..allocation import (
    SERVED,
    WAITING,
    AllocationState,
    ChannelPairResource,
    PiecewiseRate,
    UserSession,
    allocate,
    release_pair,
)
from ..measurement import (
    CoincidenceSpec,
    HistogramSpec,
    MeasurementError,
    coincidence_count,
    count_rate,
    counter,
)
from .backend import BackendUnavailable, StubBackend, VirtualBackend
from .bus import TOPIC_RESPONSE, TOPIC_USER_REQUEST, EventBus
from .config import BACKEND_VIRTUAL, ServiceConfig
from .notify import NotificationSink
from .store import (
    KIND_CHANNEL_PAIR,
    KIND_MEASUREMENT,
    KIND_RELEASE,
    STATUS_COMPLETED,
    STATUS_PROCESSED,
    STATUS_PROCESSING,
    JournalStore,
    RequestRecord,
)

MEASUREMENT_FUNCTIONS = ("count_rate", "counter", "coincidence")
MAX_COUNTER_BINS = 100_000

log = logging.getLogger("vqn.service")


class ApiError(Exception):
    def __init__(self, status_code: int, code: str, message: str, field: str | None = None):
        super().__init__(message)
        self.status_code = status_code
        self.code = code
        self.message = message
        self.field = field

    def body(self) -> dict:
        body = {"code": self.code, "message": self.message}
        if self.field:
            body["field"] = self.field
        return body


@dataclass
class TokenInfo:
    user_id: str
    expires_at: float


def _require(params: dict, name: str, kind, *, minimum=None):
    if name not in params:
        raise ApiError(422, "validation_error", f"missing parameter {name!r}", field=name)
    value = params[name]
    try:
        value = kind(value)
    except (TypeError, ValueError):
        raise ApiError(422, "validation_error", f"parameter {name!r} must be {kind.__name__}", field=name)
    if minimum is not None and value < minimum:
        raise ApiError(422, "validation_error", f"parameter {name!r} must be >= {minimum}", field=name)
    return value


class ServiceState:
    def __init__(self, config: ServiceConfig, clock=time.time):
        self.config = config
        self.clock = clock
        self.lock = threading.RLock()
        self.bus = EventBus()
        self.store = JournalStore(config.store_path)
        self.backend = VirtualBackend(config.source_seed) if config.backend == BACKEND_VIRTUAL else StubBackend()
        self.sink = NotificationSink(config.notification)
        self.alloc = AllocationState()
        self.sessions_by_user: dict[str, UserSession] = {}  # live (waiting/served) sessions
        self.last_released: dict[str, str] = {}  # user -> last pair they held
        self.tokens: dict[str, TokenInfo] = {}

        self._declare_resources()
        self._rebuild_from_store()

        self._request_events = self.bus.subscribe(TOPIC_USER_REQUEST)
        self._response_events = self.bus.subscribe(TOPIC_RESPONSE)
        self._stop = threading.Event()
        self._worker = threading.Thread(target=self._worker_loop, name="allocation-worker", daemon=True)
        self._notifier = threading.Thread(target=self._notify_loop, name="notifier", daemon=True)
        self._started = False

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> None:
        if not self._started:
            self._started = True
            self._worker.start()
            self._notifier.start()
            self._replay_pending_responses()

    def stop(self) -> None:
        self._stop.set()
        self.bus.publish(TOPIC_USER_REQUEST, {"event": "shutdown"})
        self.bus.publish(TOPIC_RESPONSE, {"event": "shutdown"})
        for thread in (self._worker, self._notifier):
            if thread.is_alive():
                thread.join(timeout=5.0)
        self.store.close()

    def wait_idle(self) -> None:
        """Block until worker and notifier have drained their event queues."""
        self._request_events.join()
        self._response_events.join()

    # -- startup recovery --------------------------------------------------

    def _declare_resources(self) -> None:
        plan = self.backend.pair_plan()
        missing = [p for p in plan if p["pair_id"] not in self.store.state.resources]
        if missing:
            self.store.append("resources_declared", {"pairs": plan})

    def _rebuild_from_store(self) -> None:
        """Reconstruct allocator state from the journaled record state."""
        for rec in self.store.state.resources.values():
            self.alloc.resources.append(
                ChannelPairResource(
                    rec.pair_id, rec.signal, rec.idler,
                    PiecewiseRate(rec.current_rate_hz),
                    assigned_to=rec.assigned_to, assigned_since=rec.assigned_since,
                )
            )
        assigned_pair_by_user = {
            r.assigned_to: r for r in self.store.state.resources.values() if r.assigned_to
        }
        latest_by_user: dict[str, RequestRecord] = {}
        for req in self.store.state.requests.values():
            if req.kind != KIND_CHANNEL_PAIR:
                continue
            current = latest_by_user.get(req.user_id)
            if current is None or req.created_at > current.created_at:
                latest_by_user[req.user_id] = req
        for user_id, req in latest_by_user.items():
            if user_id in assigned_pair_by_user:
                # an assignment event outranks the request status: a crash
                # between the assignment append and the status append must
                # not resurrect the user as waiting (they hold a pair)
                res = assigned_pair_by_user[user_id]
                session = UserSession(user_id, arrival_time=req.created_at)
                session.begin_service(res.pair_id, res.assigned_since or req.created_at, res.current_rate_hz)
                self.alloc.sessions.append(session)
                self.sessions_by_user[user_id] = session
                if req.status == STATUS_PROCESSING:
                    # finish the torn transition
                    self.store.append("result", {"request_id": req.id,
                                                 "result_ref": f"pair:{res.pair_id}", "at": self.clock()})
                    self.store.append("status", {"request_id": req.id,
                                                 "status": STATUS_PROCESSED, "at": self.clock()})
            elif req.status == STATUS_PROCESSING:
                session = UserSession(user_id, arrival_time=req.created_at)
                self.alloc.sessions.append(session)
                self.sessions_by_user[user_id] = session
        for event in self.store.events:
            if event["kind"] == "released":
                self.last_released[event["data"]["user_id"]] = event["data"]["pair_id"]

    def _replay_pending_responses(self) -> None:
        # assignments whose notification never completed get re-published
        # (at-least-once delivery)
        with self.lock:
            stuck = [
                r for r in self.store.state.requests.values()
                if r.kind == KIND_CHANNEL_PAIR and r.status == STATUS_PROCESSED
            ]
            for record in stuck:
                res = next(
                    (x for x in self.store.state.resources.values() if x.assigned_to == record.user_id),
                    None,
                )
                if res is not None:
                    self._publish_assignment(record, res.pair_id)

    # -- auth ----------------------------------------------------------------

    def login(self, user: str, secret: str) -> dict:
        expected = self.config.users.get(user)
        if expected is None or not hmac.compare_digest(str(expected), str(secret)):
            raise ApiError(401, "auth_failed", "unknown user or wrong secret")
        token = secrets.token_urlsafe(24)
        expires_at = self.clock() + self.config.token_ttl_s
        with self.lock:
            self.tokens[token] = TokenInfo(user, expires_at)
        return {"token": token, "expires_at": expires_at}

    def authenticate(self, token: str | None) -> str:
        if not token:
            raise ApiError(401, "auth_required", "missing bearer token")
        with self.lock:
            info = self.tokens.get(token)
            if info is None:
                raise ApiError(401, "auth_failed", "unknown token")
            if self.clock() >= info.expires_at:
                del self.tokens[token]
                raise ApiError(401, "token_expired", "token expired; log in again")
            return info.user_id

    # -- request lifecycle -----------------------------------------------------

    def _new_request(self, user_id: str, kind: str, payload: dict, now: float) -> RequestRecord:
        request_id = uuid.uuid4().hex[:12]
        self.store.append(
            "request_submitted",
            {"request_id": request_id, "user_id": user_id, "request_kind": kind,
             "payload": payload, "at": now},
        )
        return self.store.state.requests[request_id]

    def submit_pair_request(self, user_id: str) -> dict:
        now = self.clock()
        with self.lock:
            live = self.sessions_by_user.get(user_id)
            if live is not None and live.state in (WAITING, SERVED):
                raise ApiError(409, "pair_already_requested",
                               f"user {user_id} already has a live channel-pair request")
            record = self._new_request(user_id, KIND_CHANNEL_PAIR, {}, now)
            session = UserSession(user_id, arrival_time=now)
            self.alloc.sessions.append(session)
            self.sessions_by_user[user_id] = session
            # acknowledgment snapshot: the worker may advance the record the
            # instant the event is published
            ack = {"request_id": record.id, "status": record.status,
                   "queue_position": self._queue_position_locked(user_id)}
        self.bus.publish(TOPIC_USER_REQUEST, {"event": "pair_request", "request_id": record.id})
        return ack

    def release(self, user_id: str, pair_id: str) -> dict:
        now = self.clock()
        with self.lock:
            pair = next((r for r in self.alloc.resources if r.id == pair_id), None)
            if pair is None:
                raise ApiError(404, "not_found", f"unknown pair {pair_id}")
            if pair.assigned_to != user_id:
                # repeating an already-performed release is a no-op success,
                # even if the pair has been handed to someone else since
                if self.last_released.get(user_id) == pair_id:
                    return {"released": False, "pair_id": pair_id, "note": "already released"}
                raise ApiError(403, "forbidden", f"pair {pair_id} is not held by {user_id}")
            record = self._new_request(user_id, KIND_RELEASE, {"pair_id": pair_id}, now)
            release_pair(self.alloc, pair_id, now)
            departed = self.sessions_by_user.pop(user_id, None)
            if departed is not None and departed in self.alloc.sessions:
                self.alloc.sessions.remove(departed)
            self.last_released[user_id] = pair_id
            self.store.append("released", {"pair_id": pair_id, "user_id": user_id, "at": now})
            self.store.append("status", {"request_id": record.id, "status": STATUS_PROCESSED, "at": now})
            self.store.append("status", {"request_id": record.id, "status": STATUS_COMPLETED, "at": now})
        self.bus.publish(TOPIC_USER_REQUEST, {"event": "release", "pair_id": pair_id})
        return {"released": True, "pair_id": pair_id, "request_id": record.id}

    # -- measurements ---------------------------------------------------------

    def _measurement_params(self, function: str, params: dict) -> dict:
        if function == "count_rate":
            return {"duration_s": self._duration(params)}
        if function == "counter":
            spec = HistogramSpec(
                bin_width_ps=_require(params, "bin_width_ps", int, minimum=1),
                n_bins=_require(params, "n_bins", int, minimum=1),
            )
            if spec.n_bins > MAX_COUNTER_BINS:
                raise ApiError(422, "validation_error", f"n_bins capped at {MAX_COUNTER_BINS}", field="n_bins")
            return {
                "duration_s": self._duration(params),
                "spec": spec,
                "start_ps": int(params.get("start_ps", 0)),
                "channel": params.get("channel"),
            }
        if function == "coincidence":
            try:
                spec = CoincidenceSpec(
                    window_ps=int(params.get("window_ps", 500)),
                    background_offset_ps=int(params.get("background_offset_ps", 1000)),
                    background_width_ps=int(params.get("background_width_ps", 500)),
                )
            except MeasurementError as exc:
                raise ApiError(422, "validation_error", str(exc), field="window_ps")
            return {"duration_s": self._duration(params), "spec": spec}
        raise ApiError(422, "validation_error",
                       f"function must be one of {MEASUREMENT_FUNCTIONS}", field="function")

    def _duration(self, params: dict) -> float:
        duration = _require(params, "duration_s", float, minimum=1e-6)
        if duration > self.config.max_measurement_s:
            raise ApiError(422, "validation_error",
                           f"duration_s capped at {self.config.max_measurement_s}", field="duration_s")
        return duration

    def run_measurement(self, user_id: str, pair_id: str, function: str, params: dict) -> dict:
        submitted_at = self.clock()
        parsed = self._measurement_params(function, params)
        with self.lock:
            pair = next((r for r in self.alloc.resources if r.id == pair_id), None)
            if pair is None:
                raise ApiError(404, "not_found", f"unknown pair {pair_id}")
            if pair.assigned_to != user_id:
                raise ApiError(403, "forbidden", f"pair {pair_id} is not held by {user_id}")
            signal, idler = pair.signal, pair.idler
        channel = parsed.pop("channel", None)
        if function == "counter":
            channel = signal if channel is None else int(channel)
            if channel not in (signal, idler):
                raise ApiError(422, "validation_error",
                               f"channel must be {signal} or {idler}", field="channel")

        # acquisition runs outside the lock: it may take seconds and touches
        # no allocation state
        duration = parsed["duration_s"]
        try:
            streams = self.backend.acquire(signal, idler, duration)
        except BackendUnavailable as exc:
            raise ApiError(503, "backend_unavailable", str(exc))

        if function == "count_rate":
            rates = count_rate(streams, [signal, idler], duration)
            result = {"rates_hz": {str(ch): rates[ch] for ch in (signal, idler)}, "duration_s": duration}
        elif function == "counter":
            hist = counter(streams[channel], parsed["spec"], parsed["start_ps"])
            result = {"channel": channel, **hist.to_dict()}
        else:
            outcome = coincidence_count(streams[signal], streams[idler], parsed["spec"], duration)
            result = outcome.to_dict()

        # the measurement record is journaled once the synchronous work is
        # done; a failed acquisition leaves no half-open record behind
        now = self.clock()
        with self.lock:
            record = self._new_request(
                user_id, KIND_MEASUREMENT, {"pair_id": pair_id, "function": function}, submitted_at
            )
            if function == "coincidence":
                rate = result["cc_hz"]
                pair = next((r for r in self.alloc.resources if r.id == pair_id), None)
                if pair is not None:
                    pair.rate.set_rate(now, rate)
                    self.store.append("rate_updated", {"pair_id": pair_id, "rate_hz": rate, "at": now})
            self.store.append("result", {"request_id": record.id, "result_ref": f"result:{record.id}",
                                         "result": result, "at": now})
            self.store.append("status", {"request_id": record.id, "status": STATUS_PROCESSED, "at": now})
            self.store.append("status", {"request_id": record.id, "status": STATUS_COMPLETED, "at": now})
        return {"request_id": record.id, "pair_id": pair_id, "function": function, "result": result}

    # -- queries ---------------------------------------------------------------

    def get_request(self, user_id: str, request_id: str) -> RequestRecord:
        with self.lock:
            record = self.store.state.requests.get(request_id)
            if record is None:
                raise ApiError(404, "not_found", f"unknown request {request_id}")
            if record.user_id != user_id:
                raise ApiError(403, "forbidden", "request belongs to another user")
            return record

    def queue_position(self, user_id: str) -> int | None:
        with self.lock:
            return self._queue_position_locked(user_id)

    def _queue_position_locked(self, user_id: str) -> int | None:
        for k, session in enumerate(self.alloc.waiting_sessions(), start=1):
            if session.user_id == user_id:
                return k
        return None

    def list_resources(self) -> list[dict]:
        with self.lock:
            out = []
            for rec in sorted(self.store.state.resources.values(), key=lambda r: r.pair_id):
                out.append({
                    "pair_id": rec.pair_id,
                    "signal": rec.signal,
                    "idler": rec.idler,
                    "current_rate_hz": rec.current_rate_hz,
                    "status": rec.status,
                    "assigned_to": rec.assigned_to,
                })
            return out

    # -- allocation worker -------------------------------------------------------

    def _publish_assignment(self, record: RequestRecord, pair_id: str) -> None:
        pair = self.store.state.resources[pair_id]
        self.bus.publish(TOPIC_RESPONSE, {
            "event": "assigned",
            "request_id": record.id,
            "user_id": record.user_id,
            "pair_id": pair_id,
            "signal": pair.signal,
            "idler": pair.idler,
            "rate_hz": pair.current_rate_hz,
        })

    def _allocation_cycle(self) -> None:
        now = self.clock()
        with self.lock:
            assigned = allocate(self.alloc, now, self.config.policy)
            for pair_id, user_id in assigned:
                record = self._waiting_request(user_id)
                self.store.append("assignment", {"pair_id": pair_id, "user_id": user_id,
                                                 "request_id": record.id if record else None, "at": now})
                if record is not None:
                    # result_ref lets pollers discover which pair they got
                    self.store.append("result", {"request_id": record.id,
                                                 "result_ref": f"pair:{pair_id}", "at": now})
                    self.store.append("status", {"request_id": record.id,
                                                 "status": STATUS_PROCESSED, "at": now})
                    self._publish_assignment(record, pair_id)

    def _waiting_request(self, user_id: str) -> RequestRecord | None:
        candidates = [
            r for r in self.store.state.requests.values()
            if r.user_id == user_id and r.kind == KIND_CHANNEL_PAIR and r.status == STATUS_PROCESSING
        ]
        return min(candidates, key=lambda r: r.created_at) if candidates else None

    def _worker_loop(self) -> None:
        while not self._stop.is_set():
            event = self._request_events.get()
            try:
                if event.payload.get("event") != "shutdown":
                    self._allocation_cycle()
            except Exception:  # keep the worker alive; state stays journal-consistent
                log.exception("allocation cycle failed")
            finally:
                self._request_events.task_done()

    def _notify_loop(self) -> None:
        while not self._stop.is_set():
            event = self._response_events.get()
            try:
                if event.payload.get("event") == "assigned":
                    self._deliver(event.payload)
            except Exception:
                log.exception("notification delivery failed")
            finally:
                self._response_events.task_done()

    def _deliver(self, payload: dict) -> None:
        outcome = self.sink.deliver(payload)  # outside the lock: may block on retries
        now = self.clock()
        with self.lock:
            record = self.store.state.requests.get(payload["request_id"])
            if record is None or record.status == STATUS_COMPLETED:
                return
            self.store.append("status", {
                "request_id": record.id, "status": STATUS_COMPLETED, "at": now,
                "delivery_failed": not outcome.delivered,
            })
