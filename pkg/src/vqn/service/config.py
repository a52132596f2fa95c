"""Service configuration: JSON file plus VQN_-prefixed environment overrides."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

BACKEND_VIRTUAL = "virtual"
BACKEND_STUB = "stub"

SINK_LOG = "log"
SINK_WEBHOOK = "webhook"

ENV_PREFIX = "VQN_"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NotificationConfig:
    sink: str = SINK_LOG
    path: str = "vqn_notifications.log"  # log sink target and dead-letter base
    url: str = ""  # webhook sink target
    max_attempts: int = 5
    backoff_base_s: float = 0.1

    def __post_init__(self):
        if self.sink not in (SINK_LOG, SINK_WEBHOOK):
            raise ConfigError(f"unknown notification sink {self.sink!r}")
        if self.sink == SINK_WEBHOOK and not self.url:
            raise ConfigError("webhook sink requires a url")


@dataclass(frozen=True)
class ServiceConfig:
    listen_host: str = "127.0.0.1"
    listen_port: int = 8077
    users: dict = field(default_factory=dict)  # user -> secret
    policy: str = "fcfs"  # deployed default; "hungarian" selectable
    backend: str = BACKEND_VIRTUAL
    notification: NotificationConfig = field(default_factory=NotificationConfig)
    store_path: str = "vqn_journal.jsonl"
    token_ttl_s: float = 3600.0
    max_measurement_s: float = 120.0
    source_seed: int = 7

    def __post_init__(self):
        if self.backend not in (BACKEND_VIRTUAL, BACKEND_STUB):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.policy not in ("fcfs", "hungarian"):
            raise ConfigError(f"unknown policy {self.policy!r}")
        if self.token_ttl_s <= 0 or self.max_measurement_s <= 0:
            raise ConfigError("token_ttl_s and max_measurement_s must be positive")


_ENV_FIELDS = {
    "LISTEN_HOST": ("listen_host", str),
    "LISTEN_PORT": ("listen_port", int),
    "POLICY": ("policy", str),
    "BACKEND": ("backend", str),
    "STORE_PATH": ("store_path", str),
    "TOKEN_TTL_S": ("token_ttl_s", float),
    "MAX_MEASUREMENT_S": ("max_measurement_s", float),
    "SOURCE_SEED": ("source_seed", int),
    "NOTIFY_SINK": ("notification.sink", str),
    "NOTIFY_PATH": ("notification.path", str),
    "NOTIFY_URL": ("notification.url", str),
}


def load_config(path=None, env=None) -> ServiceConfig:
    """Build a ServiceConfig from an optional JSON file and the environment."""
    doc: dict = {}
    if path is not None:
        doc = json.loads(Path(path).read_text())
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top-level JSON object expected")
    env = os.environ if env is None else env
    notification = dict(doc.pop("notification", {}))
    for env_name, (target, cast) in _ENV_FIELDS.items():
        raw = env.get(ENV_PREFIX + env_name)
        if raw is None:
            continue
        try:
            value = cast(raw)
        except ValueError as exc:
            raise ConfigError(f"{ENV_PREFIX + env_name}: {exc}") from exc
        if target.startswith("notification."):
            notification[target.split(".", 1)[1]] = value
        else:
            doc[target] = value
    try:
        return ServiceConfig(notification=NotificationConfig(**notification), **doc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
