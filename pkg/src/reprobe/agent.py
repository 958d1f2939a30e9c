"""The probe agent: one data bus, one plugin store, and the two lifecycle
managers, wired to a shared clock."""

from __future__ import annotations

import tempfile
import time
from pathlib import Path
from typing import Any

from . import __version__
from .bus import DataBus
from .clock import Clock, WallClock
from .errors import InvalidConfig, UnknownInstance
from .lifecycle import LifecycleManager, PluginStore
from .model import (
    COLLECTOR,
    MAX_PERIOD_MS,
    MIN_PERIOD_MS,
    PUBLISHER,
    InstanceConfig,
    Kind,
    PluginDescriptor,
    Violation,
)
from .plugins import CaptureSink


class Agent:
    def __init__(
        self,
        clock: Clock | None = None,
        period_bounds: tuple[int, int] = (MIN_PERIOD_MS, MAX_PERIOD_MS),
        auth_token: str | None = None,
        data_dir: str | Path | None = None,
        handshake_timeout_s: float = 5.0,
    ):
        self.clock = clock or WallClock()
        self.auth_token = auth_token
        self.period_bounds = period_bounds
        self.bus = DataBus()
        if data_dir is None:
            self._tempdir = tempfile.TemporaryDirectory(prefix="reprobe-")
            data_dir = self._tempdir.name
        else:
            self._tempdir = None
        self.store = PluginStore(Path(data_dir) / "plugins")
        self.captures: dict[str, CaptureSink] = {}
        self.collectors = LifecycleManager(
            COLLECTOR,
            self.store,
            self.bus,
            self.clock,
            period_bounds,
            handshake_timeout_s=handshake_timeout_s,
            capture_registry=self.captures,
        )
        self.publishers = LifecycleManager(
            PUBLISHER,
            self.store,
            self.bus,
            self.clock,
            period_bounds,
            handshake_timeout_s=handshake_timeout_s,
            capture_registry=self.captures,
        )
        self.started_at_ns = time.time_ns()
        self._started_monotonic = time.monotonic()

    # --- plugin operations (shared namespace, both kinds) ---------------------

    def upload_plugin(self, data: bytes) -> PluginDescriptor:
        return self.store.upload(data)

    def remove_plugin(self, plugin_id: str) -> None:
        self.store.remove(plugin_id, self._live_instances_of)

    def _live_instances_of(self, plugin_id: str) -> int:
        return self.collectors.live_instances_of(plugin_id) + self.publishers.live_instances_of(
            plugin_id
        )

    def manager_for(self, kind: Kind) -> LifecycleManager:
        return self.collectors if kind == COLLECTOR else self.publishers

    def find_instance(self, instance_id: str) -> tuple[Kind, LifecycleManager]:
        for manager in (self.collectors, self.publishers):
            try:
                manager.get(instance_id)
                return manager.kind, manager
            except UnknownInstance:
                continue
        raise UnknownInstance(f"no instance {instance_id!r}")

    # --- bootstrap & teardown -------------------------------------------------

    def bootstrap(self, entries: list[dict[str, Any]]) -> list[str]:
        """Start the configured initial topology; entry shape:
        {"kind": "collector"|"publisher", "config": {instance config payload}}."""
        started = []
        for index, entry in enumerate(entries):
            kind = entry.get("kind")
            if kind not in (COLLECTOR, PUBLISHER):
                raise InvalidConfig(
                    [Violation("kind_mismatch", f"bootstrap[{index}].kind", f"bad kind {kind!r}")]
                )
            payload = entry.get("config") or {}
            cfg = InstanceConfig.from_payload(payload, kind)
            instance_id = self.manager_for(kind).instantiate(
                cfg.plugin_id, cfg, instance_id=entry.get("instanceId")
            )
            started.append(instance_id)
        return started

    def shutdown(self) -> None:
        self.collectors.stop_all()
        self.publishers.stop_all()

    # --- status -----------------------------------------------------------------

    def uptime_seconds(self) -> float:
        return time.monotonic() - self._started_monotonic

    def status(self) -> dict[str, Any]:
        return {
            "agentVersion": __version__,
            "startedAtNs": self.started_at_ns,
            "uptimeSeconds": self.uptime_seconds(),
            "plugins": self.store.counts(),
            "instances": {
                "collectors": self.collectors.state_counts(),
                "publishers": self.publishers.state_counts(),
            },
            "bus": {
                sub_id: stats.to_payload() for sub_id, stats in self.bus.stats().items()
            },
        }
