"""Shared test utilities: independent oracles and random generators.

The oracles here deliberately re-derive expected behavior through a
different route than the production code (naive two-pass statistics, a
plain-list bus model) so the main suites and the acceptance suite can check
implementations against them.
"""

from __future__ import annotations

import math
import random
import socket
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from reprobe.model import Observation, filter_matches


def naive_stability(window, epsilon=1e-9):
    """Brute-force two-pass coefficient of variation."""
    n = len(window)
    mean = sum(window) / n
    variance = sum((x - mean) ** 2 for x in window) / n
    sigma = math.sqrt(variance)
    if sigma == 0.0:
        return 0.0
    return sigma / max(abs(mean), epsilon)


def random_observation(rng: random.Random, topic: str | None = None) -> Observation:
    value = rng.choice(
        [
            rng.uniform(-1e9, 1e9),
            float(rng.randrange(-10_000, 10_000)),
            rng.uniform(-1e-6, 1e-6),
            0.0,
        ]
    )
    labels = {
        f"k{rng.randrange(50)}": rng.choice(["a", "b", "ünïcödé", "x y\tz", ""])
        for _ in range(rng.randrange(4))
    }
    return Observation(
        indicator=rng.choice(["cpu.total_pct", "mem.used_bytes", "sig.value"])
        + f".{rng.randrange(100)}",
        target=rng.choice(["host-1", "host-2", ""]),
        timestamp=rng.randrange(1, 2**62),
        value=value,
        unit=rng.choice(["", "%", "bytes"]),
        labels=labels,
        topic=topic or rng.choice(["sys.cpu", "sys.mem", "app.haproxy", "t"]),
        source_instance=rng.choice(["c1", "c2", ""]),
    )


class ReferenceBus:
    """Plain-list model of the fan-out bus used for differential testing."""

    def __init__(self):
        self.subs = {}

    def subscribe(self, sub_id, topic_filter, capacity):
        assert sub_id not in self.subs
        self.subs[sub_id] = {
            "filter": tuple(topic_filter),
            "capacity": capacity,
            "queue": [],
            "enqueued": 0,
            "drained": 0,
            "dropped": 0,
        }

    def unsubscribe(self, sub_id):
        del self.subs[sub_id]

    def publish(self, batch):
        for obs in batch:
            for sub in self.subs.values():
                if not filter_matches(sub["filter"], obs.topic):
                    continue
                if len(sub["queue"]) >= sub["capacity"]:
                    sub["queue"].pop(0)
                    sub["dropped"] += 1
                sub["queue"].append(obs)
                sub["enqueued"] += 1

    def drain(self, sub_id, max_items):
        sub = self.subs[sub_id]
        out = sub["queue"][:max_items]
        del sub["queue"][: len(out)]
        sub["drained"] += len(out)
        return out


class ScriptedHttpServer:
    """Tiny HTTP stub returning a scripted sequence of status codes."""

    def __init__(self, statuses):
        self.statuses = list(statuses)
        self.requests: list[bytes] = []
        self.content_types: list[str] = []
        self._lock = threading.Lock()
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = self.rfile.read(length)
                with stub._lock:
                    stub.requests.append(body)
                    stub.content_types.append(self.headers.get("Content-Type", ""))
                    status = stub.statuses.pop(0) if stub.statuses else 200
                self.send_response(status)
                self.send_header("Content-Length", "0")
                self.end_headers()

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.port = self.server.server_address[1]
        self.url = f"http://127.0.0.1:{self.port}/ingest"
        self._thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self._thread.start()

    def close(self):
        self.server.shutdown()
        self.server.server_close()


def free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


# --- external plugin fixtures --------------------------------------------------

COLLECTOR_PLUGIN_SOURCE = r'''#!/usr/bin/env python3
import json
import sys

config = {}


def respond(obj):
    sys.stdout.write(json.dumps(obj) + "\n")
    sys.stdout.flush()


for line in sys.stdin:
    line = line.strip()
    if not line:
        continue
    msg = json.loads(line)
    op = msg.get("op")
    if op == "hello":
        respond({"ok": True, "result": {"schemaVersion": msg.get("schemaVersion")}})
    elif op == "configure":
        config = msg.get("config", {})
        if config.get("analyzerParams", {}).get("rejectConfig"):
            respond({"ok": False, "error": "config rejected"})
        else:
            respond({"ok": True})
    elif op == "sample":
        params = config.get("analyzerParams", {})
        value = float(params.get("value", 1.25))
        obs = [
            {"indicator": name, "value": value, "unit": "u", "labels": {"src": "ext"}}
            for name in sorted(config.get("indicators", []))
        ]
        commands = []
        if params.get("emitCommand"):
            commands = [{"command": "setSamplingPeriod", "periodMs": 400, "reason": "ext"}]
        respond({"ok": True, "observations": obs, "commands": commands})
    elif op == "shutdown":
        respond({"ok": True})
        break
    else:
        respond({"ok": False, "error": "unsupported op"})
'''

PUBLISHER_PLUGIN_SOURCE = r'''#!/usr/bin/env python3
import json
import sys

config = {}


def respond(obj):
    sys.stdout.write(json.dumps(obj) + "\n")
    sys.stdout.flush()


for line in sys.stdin:
    line = line.strip()
    if not line:
        continue
    msg = json.loads(line)
    op = msg.get("op")
    if op == "hello":
        respond({"ok": True})
    elif op == "configure":
        config = msg.get("config", {})
        respond({"ok": True})
    elif op == "publish":
        path = config.get("analyzerParams", {}).get("path")
        with open(path, "a", encoding="utf-8") as fh:
            for obs in msg.get("batch", []):
                fh.write(json.dumps(obs) + "\n")
        respond({"ok": True})
    elif op == "shutdown":
        respond({"ok": True})
        break
    else:
        respond({"ok": False, "error": "unsupported op"})
'''

SILENT_PLUGIN_SOURCE = "#!/usr/bin/env python3\nimport time\ntime.sleep(60)\n"

CRASHING_PLUGIN_SOURCE = "#!/usr/bin/env python3\nraise SystemExit(3)\n"


def make_external_bundle(
    plugin_id="ext-col",
    kind="collector",
    source=None,
    version="1.0.0",
    param_schema=None,
    extra_manifest=None,
):
    from reprobe.bundle import make_bundle

    if source is None:
        source = COLLECTOR_PLUGIN_SOURCE if kind == "collector" else PUBLISHER_PLUGIN_SOURCE
    manifest = {
        "id": plugin_id,
        "kind": kind,
        "version": version,
        "entry": "plugin.py",
        "paramSchema": param_schema
        or [
            {"name": "value", "type": "real", "default": 1.25},
            {"name": "emitCommand", "type": "bool"},
            {"name": "rejectConfig", "type": "bool"},
            {"name": "path", "type": "string"},
            {"name": "flushInterval", "type": "duration", "default": 100},
            {"name": "queueCapacity", "type": "int", "default": 1024},
            {"name": "batchMax", "type": "int", "default": 500},
        ],
    }
    if extra_manifest:
        manifest.update(extra_manifest)
    return make_bundle(manifest, {"plugin.py": source.encode("utf-8")})
