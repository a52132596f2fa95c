"""HTTP/JSON API over the service state machine.

Paths are stable for the browser console; errors are rendered uniformly as
``{"code", "message", "field"?}``.
"""

from __future__ import annotations

from contextlib import asynccontextmanager
from dataclasses import asdict

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .config import ServiceConfig
from .core import ApiError, ServiceState


class LoginBody(BaseModel):
    user: str
    secret: str


class MeasurementBody(BaseModel):
    pair_id: str
    function: str
    params: dict = {}


def _bearer_token(request: Request) -> str | None:
    header = request.headers.get("authorization", "")
    if header.lower().startswith("bearer "):
        return header[7:].strip()
    return None


def create_app(config: ServiceConfig, state: ServiceState | None = None, static_dir=None) -> FastAPI:
    service = state or ServiceState(config)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        service.start()
        try:
            yield
        finally:
            service.stop()

    app = FastAPI(title="virtual quantum network service", lifespan=lifespan)
    app.state.service = service

    @app.exception_handler(ApiError)
    async def api_error_handler(request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status_code, content=exc.body())

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        first = exc.errors()[0] if exc.errors() else {}
        field = ".".join(str(p) for p in first.get("loc", []) if p != "body") or None
        body = {"code": "validation_error", "message": first.get("msg", "invalid request body")}
        if field:
            body["field"] = field
        return JSONResponse(status_code=422, content=body)

    def current_user(request: Request) -> str:
        return service.authenticate(_bearer_token(request))

    @app.get("/api/v1/healthz")
    def healthz():
        return {"status": "ok", "backend": service.backend.name}

    @app.post("/api/v1/auth/login")
    def login(body: LoginBody):
        return service.login(body.user, body.secret)

    @app.post("/api/v1/pair-requests")
    def submit_pair_request(request: Request):
        user = current_user(request)
        return service.submit_pair_request(user)

    @app.get("/api/v1/pair-requests/{request_id}")
    def get_pair_request(request_id: str, request: Request):
        user = current_user(request)
        record = service.get_request(user, request_id)
        doc = asdict(record)
        doc["request_id"] = doc.pop("id")
        return doc

    @app.get("/api/v1/queue/position")
    def queue_position(request: Request):
        user = current_user(request)
        return {"position": service.queue_position(user)}

    @app.get("/api/v1/resources")
    def resources(request: Request):
        current_user(request)
        return {"resources": service.list_resources()}

    @app.post("/api/v1/measurements")
    def measurements(body: MeasurementBody, request: Request):
        user = current_user(request)
        return service.run_measurement(user, body.pair_id, body.function, body.params)

    @app.post("/api/v1/pairs/{pair_id}/release")
    def release(pair_id: str, request: Request):
        user = current_user(request)
        return service.release(user, pair_id)

    if static_dir is not None:
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="console")

    return app
