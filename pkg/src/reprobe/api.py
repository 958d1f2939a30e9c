"""HTTP management API: the only external mutation path into the agent.

Plugin upload/removal, instance lifecycle, reconfiguration, and status all
live under /api/v1. Every non-2xx response body is a single error object
{"code", "message", "details?"} with a machine-readable code.
"""

from __future__ import annotations

import json
import logging
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any

from .agent import Agent
from .errors import BindFailure, ReprobeError
from .model import COLLECTOR, PUBLISHER, InstanceConfig, Kind

log = logging.getLogger(__name__)

DEFAULT_BIND = "127.0.0.1:7700"

_ERROR_STATUS = {
    "unauthorized": 401,
    "unknown_plugin": 404,
    "unknown_instance": 404,
    "register_conflict": 409,
    "plugin_in_use": 409,
    "builtin_immutable": 409,
    "illegal_state": 409,
    "already_terminal": 409,
    "malformed_bundle": 422,
    "schema_invalid": 422,
    "invalid_config": 422,
    "spawn_failed": 500,
}

_KIND_BY_SEGMENT: dict[str, Kind] = {"collectors": COLLECTOR, "publishers": PUBLISHER}


class ApiError(Exception):
    def __init__(self, code: str, message: str, details: list | None = None):
        super().__init__(message)
        self.code = code
        self.message = message
        self.details = details

    @property
    def status(self) -> int:
        return _ERROR_STATUS.get(self.code, 500)

    def body(self) -> dict[str, Any]:
        payload: dict[str, Any] = {"code": self.code, "message": self.message}
        if self.details is not None:
            payload["details"] = self.details
        return payload

    @classmethod
    def from_exception(cls, exc: Exception) -> "ApiError":
        if isinstance(exc, ReprobeError):
            details = None
            violations = getattr(exc, "violations", None)
            if violations:
                details = [
                    v.to_payload() if hasattr(v, "to_payload") else {"message": str(v)}
                    for v in violations
                ]
            return cls(exc.code, exc.message, details)
        log.exception("unhandled API error")
        return cls("internal_error", str(exc))


def parse_bind(bind: str) -> tuple[str, int]:
    host, _, port = bind.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"bind must be host:port, got {bind!r}")
    return host, int(port)


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    agent: Agent  # set by the server subclass

    # --- plumbing ------------------------------------------------------------

    def log_message(self, fmt, *args):
        log.debug("api: " + fmt, *args)

    def _body(self) -> bytes:
        length = int(self.headers.get("Content-Length") or 0)
        return self.rfile.read(length) if length else b""

    def _json_body(self) -> dict[str, Any]:
        raw = self._body()
        if not raw:
            return {}
        try:
            payload = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ApiError("invalid_config", f"request body is not JSON: {exc}")
        if not isinstance(payload, dict):
            raise ApiError("invalid_config", "request body must be a JSON object")
        return payload

    def _respond(self, status: int, payload: Any = None) -> None:
        body = b"" if payload is None else json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        if body:
            self.wfile.write(body)

    def _authorize(self) -> None:
        token = self.agent.auth_token
        if not token:
            return
        header = self.headers.get("Authorization", "")
        if header != f"Bearer {token}":
            raise ApiError("unauthorized", "missing or invalid bearer token")

    def _dispatch(self, method: str) -> None:
        try:
            self._authorize()
            for pattern, handler in _ROUTES[method]:
                match = pattern.match(self.path)
                if match:
                    handler(self, **match.groupdict())
                    return
            raise ApiError("not_found", f"no route for {method} {self.path}")
        except ApiError as err:
            status = err.status if err.code != "not_found" else 404
            self._respond(status, err.body())
        except ReprobeError as exc:
            err = ApiError.from_exception(exc)
            self._respond(err.status, err.body())
        except Exception as exc:  # last resort: keep the daemon alive
            err = ApiError.from_exception(exc)
            self._respond(500, err.body())

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")

    def do_PATCH(self):
        self._dispatch("PATCH")

    def do_DELETE(self):
        self._dispatch("DELETE")

    # --- endpoints ---------------------------------------------------------------

    def _status(self):
        self._respond(200, self.agent.status())

    def _list_plugins(self):
        self._respond(200, {"plugins": [d.to_payload() for d in self.agent.store.list()]})

    def _upload_plugin(self):
        descriptor = self.agent.upload_plugin(self._body())
        self._respond(201, descriptor.to_payload())

    def _delete_plugin(self, plugin_id: str):
        self.agent.remove_plugin(plugin_id)
        self._respond(204)

    def _manager(self, kind_segment: str):
        kind = _KIND_BY_SEGMENT.get(kind_segment)
        if kind is None:
            raise ApiError("not_found", f"unknown instance kind {kind_segment!r}")
        return self.agent.manager_for(kind)

    def _list_instances(self, kind_segment: str):
        manager = self._manager(kind_segment)
        self._respond(200, {"instances": manager.list_instances(public=True)})

    def _create_instance(self, kind_segment: str):
        manager = self._manager(kind_segment)
        payload = self._json_body()
        cfg = InstanceConfig.from_payload(payload, manager.kind)
        instance_id = manager.instantiate(cfg.plugin_id, cfg)
        self._respond(201, manager.instance_payload(instance_id))

    def _get_instance(self, kind_segment: str, instance_id: str):
        manager = self._manager(kind_segment)
        self._respond(
            200, manager.instance_payload(instance_id, include_audit=True, public=True)
        )

    def _patch_instance(self, kind_segment: str, instance_id: str):
        manager = self._manager(kind_segment)
        effective = manager.reconfigure(instance_id, self._json_body())
        self._respond(200, {"config": effective.to_payload(manager.kind)})

    def _delete_instance(self, kind_segment: str, instance_id: str):
        manager = self._manager(kind_segment)
        manager.destroy(instance_id)
        self._respond(204)


def _route(pattern: str):
    return re.compile(pattern)


_ROUTES = {
    "GET": [
        (_route(r"^/api/v1/status$"), _Handler._status),
        (_route(r"^/api/v1/plugins$"), _Handler._list_plugins),
        (_route(r"^/api/v1/(?P<kind_segment>collectors|publishers)$"), _Handler._list_instances),
        (
            _route(r"^/api/v1/(?P<kind_segment>collectors|publishers)/(?P<instance_id>[^/]+)$"),
            _Handler._get_instance,
        ),
    ],
    "POST": [
        (_route(r"^/api/v1/plugins$"), _Handler._upload_plugin),
        (_route(r"^/api/v1/(?P<kind_segment>collectors|publishers)$"), _Handler._create_instance),
    ],
    "PATCH": [
        (
            _route(
                r"^/api/v1/(?P<kind_segment>collectors|publishers)/(?P<instance_id>[^/]+)/config$"
            ),
            _Handler._patch_instance,
        ),
    ],
    "DELETE": [
        (_route(r"^/api/v1/plugins/(?P<plugin_id>[^/]+)$"), _Handler._delete_plugin),
        (
            _route(r"^/api/v1/(?P<kind_segment>collectors|publishers)/(?P<instance_id>[^/]+)$"),
            _Handler._delete_instance,
        ),
    ],
}


class ManagementServer:
    """Threaded HTTP server bound to the agent."""

    def __init__(self, agent: Agent, bind: str = DEFAULT_BIND):
        host, port = parse_bind(bind)
        handler = type("BoundHandler", (_Handler,), {"agent": agent})
        try:
            self._httpd = ThreadingHTTPServer((host, port), handler)
        except OSError as exc:
            raise BindFailure(f"cannot bind {bind}: {exc}") from exc
        self.host, self.port = self._httpd.server_address[:2]
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)

    @property
    def endpoint(self) -> str:
        return f"http://{self.host}:{self.port}"

    def start(self) -> "ManagementServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
