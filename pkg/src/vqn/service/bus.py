"""In-process pub/sub with per-topic sequence numbers.

Stands in for the hosted request/response channels: one topic carries
incoming pair requests, the other carries allocation updates.  Delivery is
at-least-once: every subscriber queue receives every event published after
it subscribed.
"""

from __future__ import annotations

import queue
import threading
from dataclasses import dataclass

TOPIC_USER_REQUEST = "user_request"
TOPIC_RESPONSE = "response"


@dataclass(frozen=True)
class BusEvent:
    topic: str
    seq: int
    payload: dict


class EventBus:
    def __init__(self, topics=(TOPIC_USER_REQUEST, TOPIC_RESPONSE)):
        self._lock = threading.Lock()
        self._seqs = {t: 0 for t in topics}
        self._subscribers: dict[str, list[queue.Queue]] = {t: [] for t in topics}

    def subscribe(self, topic: str) -> "queue.Queue[BusEvent]":
        q: queue.Queue = queue.Queue()
        with self._lock:
            self._subscribers[topic].append(q)
        return q

    def publish(self, topic: str, payload: dict) -> BusEvent:
        with self._lock:
            self._seqs[topic] += 1
            event = BusEvent(topic, self._seqs[topic], dict(payload))
            targets = list(self._subscribers[topic])
        for q in targets:
            q.put(event)
        return event
