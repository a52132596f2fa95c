from .app import create_app
from .config import NotificationConfig, ServiceConfig, load_config
from .core import ApiError, ServiceState
from .store import JournalStore, RequestRecord, ResourceRecord, StoreState

__all__ = [
    "ApiError",
    "JournalStore",
    "NotificationConfig",
    "RequestRecord",
    "ResourceRecord",
    "ServiceConfig",
    "ServiceState",
    "StoreState",
    "create_app",
    "load_config",
]
