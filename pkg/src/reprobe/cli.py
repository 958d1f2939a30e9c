"""Operator command line: run the agent daemon and drive its management API.

Exit codes for control commands: 0 on success (2xx), 1 when the API refuses
the request (the error object is rendered), 2 when the endpoint cannot be
reached at all.
"""

from __future__ import annotations

import argparse
import json
import os
import signal
import sys
import threading
import time
from pathlib import Path
from typing import Any

import requests

from .agent import Agent
from .api import DEFAULT_BIND, ManagementServer, parse_bind
from .errors import BindFailure, InvalidConfig, ReprobeError
from .model import (
    MAX_PERIOD_MS,
    MIN_PERIOD_MS,
    COLLECTOR,
    PUBLISHER,
    InstanceConfig,
    parse_duration_ms,
    validate_instance_config,
)

DEFAULT_ENDPOINT = f"http://{DEFAULT_BIND}"
TOKEN_ENV = "REPROBE_TOKEN"

_PATCHABLE_FIELDS = {
    "samplingPeriod",
    "indicators",
    "activeSampler",
    "activeAnalyzer",
    "topics",
    "targetSpec",
    "analyzerParams",
}


class Transport:
    """Thin HTTP client for the management API."""

    def __init__(self, endpoint: str, token: str | None):
        self.endpoint = endpoint.rstrip("/")
        self.session = requests.Session()
        if token:
            self.session.headers["Authorization"] = f"Bearer {token}"

    def request(self, method: str, path: str, **kwargs) -> requests.Response:
        return self.session.request(method, f"{self.endpoint}{path}", timeout=30, **kwargs)


def _render_error(response: requests.Response) -> None:
    try:
        body = response.json()
        print(f"error: {body.get('code')}: {body.get('message')}", file=sys.stderr)
        for detail in body.get("details") or []:
            print(f"  - {detail.get('field')}: {detail.get('message')}", file=sys.stderr)
    except ValueError:
        print(f"error: HTTP {response.status_code}", file=sys.stderr)


def _finish(response: requests.Response, as_json: bool, human=None) -> int:
    if response.status_code >= 400:
        if as_json:
            print(response.text)
        _render_error(response)
        return 1
    if as_json:
        print(response.text if response.text else "{}")
    elif human is not None:
        human(response)
    return 0


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except ValueError:
        return raw


def _build_patch(assignments: list[str]) -> dict[str, Any]:
    patch: dict[str, Any] = {}
    params: dict[str, Any] = {}
    for assignment in assignments:
        key, sep, raw = assignment.partition("=")
        if not sep:
            raise ValueError(f"expected key=value, got {assignment!r}")
        value = _parse_value(raw)
        if key == "indicators" and isinstance(value, str):
            value = [item for item in value.split(",") if item]
        if key == "topics" and isinstance(value, str) and "," in value:
            value = [item for item in value.split(",") if item]
        if key in _PATCHABLE_FIELDS:
            patch[key] = value
        else:
            params[key] = value  # bare keys address plugin parameters
    if params:
        merged = patch.setdefault("analyzerParams", {})
        merged.update(params)
    return patch


# --- serve ---------------------------------------------------------------------


def _load_config_file(path: str) -> dict[str, Any]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ReprobeError(f"cannot read config {path!r}: {exc}")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ReprobeError(f"config {path!r} is not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise ReprobeError(f"config {path!r} must be a JSON object")
    return doc


def _prevalidate_bootstrap(agent: Agent, entries: list, problems: list[str]) -> None:
    for index, entry in enumerate(entries):
        label = f"bootstrap[{index}]"
        if not isinstance(entry, dict):
            problems.append(f"{label}: must be an object")
            continue
        kind = entry.get("kind")
        if kind not in (COLLECTOR, PUBLISHER):
            problems.append(f"{label}: kind must be collector|publisher, got {kind!r}")
            continue
        payload = entry.get("config") or {}
        try:
            cfg = InstanceConfig.from_payload(payload, kind)
            stored = agent.store.get(cfg.plugin_id)
            validate_instance_config(cfg, stored.descriptor, agent.period_bounds)
        except InvalidConfig as exc:
            problems.extend(f"{label}: {v}" for v in exc.violations)
        except ReprobeError as exc:
            problems.append(f"{label}: {exc.message}")


def cmd_serve(args: argparse.Namespace) -> int:
    try:
        doc = _load_config_file(args.config)
    except ReprobeError as exc:
        print(f"config error: {exc.message}", file=sys.stderr)
        return 1

    problems: list[str] = []
    bind = doc.get("bind", DEFAULT_BIND)
    try:
        parse_bind(bind)
    except ValueError as exc:
        problems.append(str(exc))
    token = os.environ.get(TOKEN_ENV) or doc.get("authToken")
    bounds_doc = doc.get("periodBounds") or {}
    try:
        bounds = (
            parse_duration_ms(bounds_doc.get("min", MIN_PERIOD_MS)),
            parse_duration_ms(bounds_doc.get("max", MAX_PERIOD_MS)),
        )
        if bounds[0] >= bounds[1]:
            problems.append("periodBounds: min must be below max")
    except ValueError as exc:
        problems.append(f"periodBounds: {exc}")
        bounds = (MIN_PERIOD_MS, MAX_PERIOD_MS)
    bootstrap = doc.get("bootstrap") or []

    agent = Agent(auth_token=token, period_bounds=bounds)
    _prevalidate_bootstrap(agent, bootstrap, problems)
    if problems:
        for problem in problems:
            print(f"config error: {problem}", file=sys.stderr)
        return 1

    try:
        server = ManagementServer(agent, bind).start()
    except BindFailure as exc:
        print(f"bind failure: {exc.message}", file=sys.stderr)
        return 1

    try:
        started = agent.bootstrap(bootstrap)
    except ReprobeError as exc:
        print(f"bootstrap error: {exc.message}", file=sys.stderr)
        server.stop()
        agent.shutdown()
        return 1

    print(f"agent listening on {server.endpoint} ({len(started)} bootstrap instance(s))")
    stop = threading.Event()
    if threading.current_thread() is threading.main_thread():
        signal.signal(signal.SIGINT, lambda *_: stop.set())
        signal.signal(signal.SIGTERM, lambda *_: stop.set())
    try:
        stop.wait()
    finally:
        server.stop()
        agent.shutdown()
        print("agent stopped")
    return 0


# --- control commands -------------------------------------------------------------


def cmd_status(args, transport: Transport) -> int:
    response = transport.request("GET", "/api/v1/status")

    def human(resp):
        body = resp.json()
        print(f"version {body['agentVersion']}, uptime {body['uptimeSeconds']:.1f}s")
        print(f"plugins: {body['plugins']}")
        print(f"collectors: {body['instances']['collectors'] or 'none'}")
        print(f"publishers: {body['instances']['publishers'] or 'none'}")
        for sub_id, stats in sorted(body.get("bus", {}).items()):
            print(
                f"bus {sub_id}: depth={stats['depth']} enqueued={stats['enqueued']} "
                f"drained={stats['drained']} dropped={stats['dropped']}"
            )

    return _finish(response, args.json, human)


def cmd_plugin(args, transport: Transport) -> int:
    if args.plugin_cmd == "ls":
        response = transport.request("GET", "/api/v1/plugins")

        def human(resp):
            for plugin in resp.json()["plugins"]:
                print(f"{plugin['id']}\t{plugin['kind']}\t{plugin['provenance']}\t{plugin['version']}")

        return _finish(response, args.json, human)
    if args.plugin_cmd == "upload":
        try:
            data = Path(args.bundle).read_bytes()
        except OSError as exc:
            print(f"error: cannot read bundle: {exc}", file=sys.stderr)
            return 1
        response = transport.request("POST", "/api/v1/plugins", data=data)
        return _finish(response, args.json, lambda r: print(r.json()["id"]))
    response = transport.request("DELETE", f"/api/v1/plugins/{args.plugin_id}")
    return _finish(response, args.json)


def _instance_commands(kind_segment: str):
    def handler(args, transport: Transport) -> int:
        sub = args.instance_cmd
        if sub == "ls":
            response = transport.request("GET", f"/api/v1/{kind_segment}")

            def human(resp):
                for inst in resp.json()["instances"]:
                    period = inst["config"].get("samplingPeriod", "-")
                    print(f"{inst['instanceId']}\t{inst['pluginId']}\t{inst['state']}\t{period}")

            return _finish(response, args.json, human)
        if sub == "create":
            try:
                payload = json.loads(Path(args.file).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                print(f"error: cannot read config: {exc}", file=sys.stderr)
                return 1
            response = transport.request("POST", f"/api/v1/{kind_segment}", json=payload)
            return _finish(response, args.json, lambda r: print(r.json()["instanceId"]))
        if sub == "set":
            try:
                patch = _build_patch(args.assignments)
            except ValueError as exc:
                print(f"error: {exc}", file=sys.stderr)
                return 1
            response = transport.request(
                "PATCH", f"/api/v1/{kind_segment}/{args.instance_id}/config", json=patch
            )
            return _finish(
                response, args.json, lambda r: print(json.dumps(r.json()["config"], indent=2))
            )
        response = transport.request("DELETE", f"/api/v1/{kind_segment}/{args.instance_id}")
        return _finish(response, args.json)

    return handler


def cmd_watch(args, transport: Transport) -> int:
    """Poll one instance and print its adaptation trail."""
    deadline = time.monotonic() + args.duration
    printed_header = False
    while True:
        found = None
        for segment in ("collectors", "publishers"):
            response = transport.request("GET", f"/api/v1/{segment}/{args.instance_id}")
            if response.status_code == 200:
                found = response.json()
                break
            if response.status_code != 404:
                _render_error(response)
                return 1
        if found is None:
            print(f"error: unknown instance {args.instance_id!r}", file=sys.stderr)
            return 1
        if not printed_header and not args.json:
            print("time\tperiod\tlast-command\treason")
            printed_header = True
        period = found["config"].get("samplingPeriod", "-")
        audit = found.get("audit") or []
        action = audit[-1]["action"] if audit else "-"
        reason = (audit[-1]["detail"].get("reason", "") if audit else "") or "-"
        if args.json:
            print(json.dumps({"period": period, "lastCommand": action, "reason": reason}))
        else:
            print(f"{time.strftime('%H:%M:%S')}\t{period}\t{action}\t{reason}")
        if time.monotonic() >= deadline:
            return 0
        time.sleep(args.interval)


# --- argument wiring ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reprobe", description=__doc__)
    parser.add_argument(
        "--endpoint",
        default=os.environ.get("REPROBE_ENDPOINT", DEFAULT_ENDPOINT),
        help="management API base URL for control commands",
    )
    parser.add_argument("--token", default=None, help=f"bearer token (or ${TOKEN_ENV})")
    parser.add_argument("--json", action="store_true", help="emit raw response bodies")
    commands = parser.add_subparsers(dest="command", required=True)

    serve = commands.add_parser("serve", help="run the agent daemon")
    serve.add_argument("-c", "--config", required=True, help="agent config JSON file")
    serve.set_defaults(func=cmd_serve, needs_transport=False)

    status = commands.add_parser("status", help="agent status")
    status.set_defaults(func=cmd_status, needs_transport=True)

    plugin = commands.add_parser("plugin", help="plugin registry operations")
    plugin_sub = plugin.add_subparsers(dest="plugin_cmd", required=True)
    plugin_sub.add_parser("ls")
    upload = plugin_sub.add_parser("upload")
    upload.add_argument("bundle")
    rm = plugin_sub.add_parser("rm")
    rm.add_argument("plugin_id")
    plugin.set_defaults(func=cmd_plugin, needs_transport=True)

    for name, segment in (("col", "collectors"), ("pub", "publishers")):
        group = commands.add_parser(name, help=f"{segment} lifecycle")
        group_sub = group.add_subparsers(dest="instance_cmd", required=True)
        group_sub.add_parser("ls")
        create = group_sub.add_parser("create")
        create.add_argument("-f", "--file", required=True, help="instance config JSON file")
        setter = group_sub.add_parser("set")
        setter.add_argument("instance_id")
        setter.add_argument("assignments", nargs="+", metavar="key=value")
        remover = group_sub.add_parser("rm")
        remover.add_argument("instance_id")
        group.set_defaults(func=_instance_commands(segment), needs_transport=True)

    watch = commands.add_parser("watch", help="stream an instance's adaptation trail")
    watch.add_argument("instance_id")
    watch.add_argument("--duration", type=float, default=10.0, help="seconds to watch")
    watch.add_argument("--interval", type=float, default=1.0, help="poll interval seconds")
    watch.set_defaults(func=cmd_watch, needs_transport=True)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if not args.needs_transport:
        return args.func(args)
    token = args.token or os.environ.get(TOKEN_ENV)
    transport = Transport(args.endpoint, token)
    try:
        return args.func(args, transport)
    except requests.RequestException as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return 2
    finally:
        transport.session.close()


if __name__ == "__main__":
    sys.exit(main())
