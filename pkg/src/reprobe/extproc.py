"""External plugin host: newline-delimited JSON over a subprocess's stdio.

Agent-to-plugin messages: {"op":"hello","schemaVersion":1},
{"op":"configure","config":{...}}, {"op":"sample","deadlineMs":N} for
collectors, {"op":"publish","batch":[...]} for publishers, {"op":"shutdown"}.
The plugin answers every message with {"ok":true,...} or
{"ok":false,"error":"..."}; sample responses carry "observations" and
optionally "commands". Plugin stderr is forwarded to the agent log.
"""

from __future__ import annotations

import json
import logging
import queue
import subprocess
import sys
import threading
from typing import Any, Mapping

from .errors import InvalidConfig, SamplerFailure, SinkUnavailable, SpawnFailed
from .model import (
    AdaptationCommand,
    InstanceConfig,
    Kind,
    PluginDescriptor,
    Violation,
    observation_to_payload,
)
from .plugins.base import Reading, Sampler, Sink, SinkResult, TickContext

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_HANDSHAKE_TIMEOUT_S = 5.0
DEFAULT_REQUEST_TIMEOUT_S = 5.0


class PluginProcess:
    """One hosted plugin subprocess; requests are serialized, one in flight."""

    def __init__(self, entry_path: str, workdir: str, name: str = "plugin"):
        self.name = name
        argv = [sys.executable, entry_path] if entry_path.endswith(".py") else [entry_path]
        try:
            self._proc = subprocess.Popen(
                argv,
                cwd=workdir,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise SpawnFailed(f"cannot start {entry_path!r}: {exc}") from exc
        self._lock = threading.Lock()
        self._responses: queue.Queue[dict] = queue.Queue()
        self._stdout_thread = threading.Thread(target=self._pump_stdout, daemon=True)
        self._stderr_thread = threading.Thread(target=self._pump_stderr, daemon=True)
        self._stdout_thread.start()
        self._stderr_thread.start()

    def _pump_stdout(self) -> None:
        assert self._proc.stdout is not None
        for line in self._proc.stdout:
            line = line.strip()
            if not line:
                continue
            try:
                self._responses.put(json.loads(line))
            except json.JSONDecodeError:
                log.warning("plugin %s: undecodable line: %.200s", self.name, line)

    def _pump_stderr(self) -> None:
        assert self._proc.stderr is not None
        for line in self._proc.stderr:
            log.info("plugin %s stderr: %s", self.name, line.rstrip())

    def request(self, payload: Mapping[str, Any], timeout_s: float) -> dict:
        with self._lock:
            if self._proc.poll() is not None:
                raise SpawnFailed(f"plugin {self.name} exited with {self._proc.returncode}")
            try:
                assert self._proc.stdin is not None
                self._proc.stdin.write(json.dumps(payload, separators=(",", ":")) + "\n")
                self._proc.stdin.flush()
            except (OSError, ValueError) as exc:
                raise SpawnFailed(f"plugin {self.name}: broken stdin: {exc}") from exc
            try:
                return self._responses.get(timeout=timeout_s)
            except queue.Empty:
                raise TimeoutError(f"plugin {self.name}: no response within {timeout_s}s")

    def handshake(self, config_payload: Mapping[str, Any], timeout_s: float) -> None:
        try:
            hello = self.request({"op": "hello", "schemaVersion": SCHEMA_VERSION}, timeout_s)
            if not hello.get("ok"):
                raise SpawnFailed(f"plugin {self.name}: hello rejected: {hello.get('error')}")
            configured = self.request({"op": "configure", "config": dict(config_payload)}, timeout_s)
            if not configured.get("ok"):
                raise SpawnFailed(
                    f"plugin {self.name}: configure rejected: {configured.get('error')}"
                )
        except (TimeoutError, SpawnFailed) as exc:
            self.close(grace_s=0.2)
            if isinstance(exc, SpawnFailed):
                raise
            raise SpawnFailed(f"plugin {self.name}: handshake timed out") from exc

    def close(self, grace_s: float = 2.0) -> None:
        if self._proc.poll() is None:
            try:
                with self._lock:
                    if self._proc.stdin is not None:
                        self._proc.stdin.write('{"op":"shutdown"}\n')
                        self._proc.stdin.flush()
            except (OSError, ValueError):
                pass
            try:
                self._proc.wait(grace_s)
            except subprocess.TimeoutExpired:
                self._proc.terminate()
                try:
                    self._proc.wait(1.0)
                except subprocess.TimeoutExpired:
                    self._proc.kill()
        for stream in (self._proc.stdin, self._proc.stdout, self._proc.stderr):
            if stream is not None:
                try:
                    stream.close()
                except OSError:
                    pass


def _reading_from_payload(payload: Mapping[str, Any]) -> Reading:
    labels = payload.get("labels") or {}
    timestamp = payload.get("timestamp")
    return Reading(
        indicator=str(payload["indicator"]),
        value=float(payload["value"]),
        unit=str(payload.get("unit", "")),
        labels={str(k): str(v) for k, v in labels.items()},
        timestamp_ns=int(timestamp) if timestamp is not None else None,
        target=payload.get("target"),
    )


class ExternalSampler(Sampler):
    """Adapter presenting a hosted collector process as a metric sampler.

    Commands returned alongside observations are stashed and drained by the
    collector runtime after the tick.
    """

    def __init__(self, process: PluginProcess):
        self._process = process
        self._commands: list[AdaptationCommand] = []

    def sample(self, ctx: TickContext) -> list[Reading]:
        deadline_ms = int(ctx.config.sampling_period_ms or 1000)
        try:
            response = self._process.request(
                {"op": "sample", "deadlineMs": deadline_ms},
                timeout_s=max(0.5, deadline_ms / 1000.0),
            )
        except (TimeoutError, SpawnFailed) as exc:
            raise SamplerFailure(str(exc)) from exc
        if not response.get("ok"):
            raise SamplerFailure(f"plugin error: {response.get('error')}")
        readings = [_reading_from_payload(p) for p in response.get("observations", [])]
        for payload in response.get("commands", []):
            try:
                self._commands.append(AdaptationCommand.from_payload(payload))
            except (KeyError, ValueError) as exc:
                log.warning("plugin %s: bad command %r (%s)", self._process.name, payload, exc)
        return readings

    def drain_commands(self) -> list[AdaptationCommand]:
        commands, self._commands = self._commands, []
        return commands

    def reconfigure(self, cfg: InstanceConfig) -> None:
        """Push a new configuration into the running process."""
        response = self._process.request(
            {"op": "configure", "config": cfg.to_payload("collector")},
            DEFAULT_REQUEST_TIMEOUT_S,
        )
        if not response.get("ok"):
            raise InvalidConfig(
                [Violation("plugin_rejected", "config", str(response.get("error")))]
            )

    def close(self) -> None:
        self._process.close()


class ExternalSink(Sink):
    """Adapter presenting a hosted publisher process as a sink."""

    def __init__(self, process: PluginProcess, timeout_s: float = DEFAULT_REQUEST_TIMEOUT_S):
        self._process = process
        self._timeout_s = timeout_s

    def publish(self, batch) -> SinkResult:
        batch = list(batch)
        payload = {
            "op": "publish",
            "batch": [observation_to_payload(obs) for obs in batch],
        }
        try:
            response = self._process.request(payload, self._timeout_s)
        except (TimeoutError, SpawnFailed) as exc:
            raise SinkUnavailable(str(exc)) from exc
        if not response.get("ok"):
            raise SinkUnavailable(f"plugin error: {response.get('error')}")
        return SinkResult(delivered=len(batch))

    def close(self) -> None:
        self._process.close()


def spawn_plugin(
    desc: PluginDescriptor,
    kind: Kind,
    cfg: InstanceConfig,
    entry_path: str,
    workdir: str,
    handshake_timeout_s: float = DEFAULT_HANDSHAKE_TIMEOUT_S,
) -> PluginProcess:
    """Start and handshake an external plugin process for one instance."""
    process = PluginProcess(entry_path, workdir, name=desc.id)
    process.handshake(cfg.to_payload(kind), handshake_timeout_s)
    return process
