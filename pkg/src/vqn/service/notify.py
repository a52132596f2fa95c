"""User notification delivery: webhook POST or append-only log.

Substitutes for a hosted email service.  Webhook failures are retried with
exponential backoff up to ``max_attempts``; exhausted deliveries land in a
dead-letter log so the request lifecycle can still terminate.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import httpx

from .config import NotificationConfig, SINK_LOG, SINK_WEBHOOK


@dataclass(frozen=True)
class DeliveryRecord:
    delivered: bool
    attempts: int
    sink: str


class NotificationSink:
    def __init__(self, config: NotificationConfig, sleep=time.sleep):
        self.config = config
        self._sleep = sleep
        self._lock = threading.Lock()

    def _append(self, path: Path, payload: dict) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        with self._lock, open(path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(payload) + "\n")

    def deliver(self, payload: dict) -> DeliveryRecord:
        if self.config.sink == SINK_LOG:
            self._append(Path(self.config.path), payload)
            return DeliveryRecord(True, 1, SINK_LOG)
        return self._deliver_webhook(payload)

    def _deliver_webhook(self, payload: dict) -> DeliveryRecord:
        attempts = 0
        while attempts < self.config.max_attempts:
            attempts += 1
            try:
                response = httpx.post(self.config.url, json=payload, timeout=5.0)
                if response.status_code < 300:
                    return DeliveryRecord(True, attempts, SINK_WEBHOOK)
            except httpx.HTTPError:
                pass
            if attempts < self.config.max_attempts:
                self._sleep(self.config.backoff_base_s * 2 ** (attempts - 1))
        self._append(Path(self.config.path + ".deadletter"), payload)
        return DeliveryRecord(False, attempts, SINK_WEBHOOK)
