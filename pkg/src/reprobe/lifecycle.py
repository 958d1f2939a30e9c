"""Plugin registry and the collector/publisher lifecycle managers.

The two managers are the same machinery parameterized by kind: they upload
and remove plugins, and instantiate, destroy, and reconfigure instances.
Mutations are serialized per manager; none of them ever touch the data path,
so collectors keep ticking and publishers keep draining during any lifecycle
operation on other instances.
"""

from __future__ import annotations

import itertools
import logging
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping

from . import bundle as bundle_mod
from .bus import DataBus
from .clock import Clock
from .errors import (
    AlreadyTerminal,
    BuiltinImmutable,
    IllegalState,
    IllegalTransition,
    InvalidConfig,
    PluginInUse,
    RegisterConflict,
    SpawnFailed,
    UnknownInstance,
    UnknownPlugin,
)
from .extproc import ExternalSampler, ExternalSink, spawn_plugin
from .model import (
    COLLECTOR,
    PUBLISHER,
    InstanceConfig,
    Kind,
    PluginDescriptor,
    Violation,
    merge_patch,
    validate_instance_config,
)
from .plugins import (
    BUILTIN_DESCRIPTORS,
    CaptureSink,
    build_analyzer,
    build_sampler,
    build_sink,
    check_builtin_config,
)
from .runtime import CollectorRuntime, PublisherRuntime

log = logging.getLogger(__name__)

CREATED = "Created"
RUNNING = "Running"
RECONFIGURING = "Reconfiguring"
STOPPED = "Stopped"
FAILED = "Failed"

TERMINAL_STATES = (STOPPED, FAILED)

LEGAL_TRANSITIONS = frozenset(
    {
        (CREATED, RUNNING),
        (RUNNING, RECONFIGURING),
        (RECONFIGURING, RUNNING),
        (RUNNING, STOPPED),
        (CREATED, FAILED),
        (RUNNING, FAILED),
        (RECONFIGURING, FAILED),
    }
)


class InstanceRecord:
    """State and bookkeeping for one plugin instance."""

    def __init__(self, instance_id: str, plugin_id: str, kind: Kind, config: InstanceConfig):
        self.instance_id = instance_id
        self.plugin_id = plugin_id
        self.kind = kind
        self.config = config
        self.state = CREATED
        self.started_at_ns = 0
        self.last_error: str | None = None
        self.transitions: list[tuple[str, str]] = []
        self._lock = threading.Lock()

    def transition(self, to: str, expected: tuple[str, ...] | None = None, error: str | None = None) -> bool:
        """Move to ``to`` if legal. With ``expected`` given, silently refuse
        when the current state is not among them (lost races are benign);
        without it, an illegal move raises IllegalTransition."""
        with self._lock:
            if expected is not None and self.state not in expected:
                return False
            if (self.state, to) not in LEGAL_TRANSITIONS:
                raise IllegalTransition(f"{self.state} -> {to} for {self.instance_id}")
            self.transitions.append((self.state, to))
            self.state = to
            if to == RUNNING and self.started_at_ns == 0:
                self.started_at_ns = time.time_ns()
            if error is not None:
                self.last_error = error
            return True

    def snapshot(self) -> dict[str, Any]:
        with self._lock:
            return {
                "instanceId": self.instance_id,
                "pluginId": self.plugin_id,
                "kind": self.kind,
                "state": self.state,
                "config": self.config.to_payload(self.kind),
                "startedAtNs": self.started_at_ns,
                "lastError": self.last_error,
            }


@dataclass
class _StoredPlugin:
    descriptor: PluginDescriptor
    digest: str | None = None          # sha256 of the uploaded bundle
    bundle_dir: Path | None = None     # extraction directory
    entry_path: Path | None = None


class PluginStore:
    """Single plugin namespace shared by both managers."""

    def __init__(self, plugins_dir: Path):
        self._plugins_dir = plugins_dir
        self._lock = threading.Lock()
        self._plugins: dict[str, _StoredPlugin] = {
            desc.id: _StoredPlugin(descriptor=desc) for desc in BUILTIN_DESCRIPTORS.values()
        }

    def get(self, plugin_id: str) -> _StoredPlugin:
        with self._lock:
            stored = self._plugins.get(plugin_id)
        if stored is None:
            raise UnknownPlugin(f"no plugin {plugin_id!r}")
        return stored

    def list(self) -> list[PluginDescriptor]:
        with self._lock:
            return [p.descriptor for p in self._plugins.values()]

    def counts(self) -> dict[str, int]:
        with self._lock:
            builtin = sum(1 for p in self._plugins.values() if p.descriptor.provenance == "builtin")
            return {"builtin": builtin, "external": len(self._plugins) - builtin}

    def upload(self, data: bytes) -> PluginDescriptor:
        """Register an uploaded bundle. Re-uploading byte-identical bundles is
        idempotent; any other clash with an existing id is a conflict."""
        desc = bundle_mod.read_bundle(data)
        digest = bundle_mod.bundle_digest(data)
        with self._lock:
            existing = self._plugins.get(desc.id)
            if existing is not None:
                if existing.digest == digest:
                    return existing.descriptor
                raise RegisterConflict(f"plugin id {desc.id!r} already registered")
            bundle_dir = self._plugins_dir / f"{desc.id}-{digest[:12]}"
            entry_path = bundle_mod.extract_bundle(data, bundle_dir)
            self._plugins[desc.id] = _StoredPlugin(
                descriptor=desc, digest=digest, bundle_dir=bundle_dir, entry_path=entry_path
            )
            return desc

    def remove(self, plugin_id: str, live_check: Callable[[str], int]) -> None:
        with self._lock:
            stored = self._plugins.get(plugin_id)
            if stored is None:
                raise UnknownPlugin(f"no plugin {plugin_id!r}")
            if stored.descriptor.provenance == "builtin":
                raise BuiltinImmutable(f"builtin plugin {plugin_id!r} cannot be removed")
            live = live_check(plugin_id)
            if live:
                raise PluginInUse(f"plugin {plugin_id!r} has {live} live instance(s)")
            del self._plugins[plugin_id]


class LifecycleManager:
    """Lifecycle operations for one plugin kind (collectors or publishers)."""

    def __init__(
        self,
        kind: Kind,
        store: PluginStore,
        bus: DataBus,
        clock: Clock,
        period_bounds: tuple[int, int],
        handshake_timeout_s: float = 5.0,
        capture_registry: dict[str, CaptureSink] | None = None,
    ):
        self.kind = kind
        self._store = store
        self._bus = bus
        self._clock = clock
        self._period_bounds = period_bounds
        self._handshake_timeout_s = handshake_timeout_s
        self._captures = capture_registry if capture_registry is not None else {}
        self._mutation = threading.Lock()  # one lifecycle mutation in flight
        self._lock = threading.Lock()      # guards the instance table
        self._instances: dict[str, tuple[InstanceRecord, Any]] = {}
        self._ids = itertools.count(1)

    # --- queries -------------------------------------------------------------

    def list_instances(self, public: bool = False) -> list[dict[str, Any]]:
        """With ``public`` set (the API view), destroyed instances vanish from
        listings while Failed ones stay visible with their lastError."""
        with self._lock:
            ids = [
                iid
                for iid, (record, _) in self._instances.items()
                if not (public and record.state == STOPPED)
            ]
        return [self.instance_payload(instance_id) for instance_id in ids]

    def get(self, instance_id: str) -> tuple[InstanceRecord, Any]:
        with self._lock:
            entry = self._instances.get(instance_id)
        if entry is None:
            raise UnknownInstance(f"no {self.kind} instance {instance_id!r}")
        return entry

    def instance_payload(
        self, instance_id: str, include_audit: bool = False, public: bool = False
    ) -> dict[str, Any]:
        """Snapshot for the API; config and stats come from the live runtime
        so internally-triggered adaptations show up immediately."""
        record, runtime = self.get(instance_id)
        if public and record.state == STOPPED:
            raise UnknownInstance(f"no {self.kind} instance {instance_id!r}")
        payload = record.snapshot()
        if runtime is not None:
            payload["config"] = runtime.config().to_payload(self.kind)
            payload["stats"] = runtime.stats()
            if include_audit:
                payload["audit"] = [entry.to_payload() for entry in runtime.audit()]
        elif include_audit:
            payload["audit"] = []
        return payload

    def live_instances_of(self, plugin_id: str) -> int:
        with self._lock:
            return sum(
                1
                for record, _ in self._instances.values()
                if record.plugin_id == plugin_id and record.state not in TERMINAL_STATES
            )

    def state_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        with self._lock:
            for record, _ in self._instances.values():
                counts[record.state] = counts.get(record.state, 0) + 1
        return counts

    # --- lifecycle mutations ----------------------------------------------------

    def instantiate(self, plugin_id: str, cfg: InstanceConfig, instance_id: str | None = None) -> str:
        with self._mutation:
            stored = self._store.get(plugin_id)
            desc = stored.descriptor
            if desc.kind != self.kind:
                raise InvalidConfig(
                    [Violation("kind_mismatch", "pluginId", f"{plugin_id!r} is a {desc.kind}")]
                )
            cfg = validate_instance_config(cfg, desc, self._period_bounds)
            if desc.provenance == "builtin":
                problems = check_builtin_config(desc, cfg)
                if problems:
                    raise InvalidConfig(
                        [Violation("plugin_param_invalid", "analyzerParams", p) for p in problems]
                    )
            instance_id = instance_id or f"{self.kind[:3]}-{next(self._ids)}"
            with self._lock:
                if instance_id in self._instances:
                    raise InvalidConfig(
                        [Violation("duplicate_instance", "instanceId", instance_id)]
                    )
            record = InstanceRecord(instance_id, plugin_id, self.kind, cfg)
            with self._lock:
                self._instances[instance_id] = (record, None)
            try:
                runtime = self._build_runtime(instance_id, stored, cfg)
                runtime.start()
            except Exception as exc:
                record.transition(FAILED, expected=(CREATED,), error=str(exc))
                if isinstance(exc, (SpawnFailed, InvalidConfig)):
                    raise
                raise SpawnFailed(str(exc)) from exc
            with self._lock:
                self._instances[instance_id] = (record, runtime)
            record.transition(RUNNING, expected=(CREATED,))
            return instance_id

    def destroy(self, instance_id: str) -> None:
        with self._mutation:
            record, runtime = self.get(instance_id)
            if record.state in TERMINAL_STATES:
                raise AlreadyTerminal(f"instance {instance_id} is {record.state}")
            if runtime is not None:
                runtime.stop()
            # a concurrent failure may have turned the record Failed already;
            # the runtime is down either way, so that outcome stands
            record.transition(STOPPED, expected=(RUNNING,))

    def reconfigure(self, instance_id: str, patch: Mapping[str, Any]) -> InstanceConfig:
        with self._mutation:
            record, runtime = self.get(instance_id)
            if record.state in TERMINAL_STATES or record.state != RUNNING:
                raise IllegalState(f"instance {instance_id} is {record.state}")
            desc = self._store.get(record.plugin_id).descriptor
            current: InstanceConfig = runtime.config()
            merged = merge_patch(current, patch, self.kind)
            merged = validate_instance_config(merged, desc, self._period_bounds)
            if desc.provenance == "builtin":
                problems = check_builtin_config(desc, merged)
                if problems:
                    raise InvalidConfig(
                        [Violation("plugin_param_invalid", "analyzerParams", p) for p in problems]
                    )
            if not record.transition(RECONFIGURING, expected=(RUNNING,)):
                raise IllegalState(f"instance {instance_id} is {record.state}")
            try:
                effective = runtime.controller_apply("api", dict(patch), wait=True)
            except Exception:
                record.transition(RUNNING, expected=(RECONFIGURING,))
                raise
            record.transition(RUNNING, expected=(RECONFIGURING,))
            record.config = effective
            return effective

    def stop_all(self) -> None:
        with self._mutation:
            with self._lock:
                entries = list(self._instances.values())
            for record, runtime in entries:
                if record.state in TERMINAL_STATES or runtime is None:
                    continue
                runtime.stop()
                record.transition(STOPPED, expected=(RUNNING,))

    # --- runtime construction ------------------------------------------------------

    def _build_runtime(self, instance_id: str, stored: _StoredPlugin, cfg: InstanceConfig):
        desc = stored.descriptor
        if self.kind == COLLECTOR:
            if desc.provenance == "builtin":
                sampler_factory = lambda sampler_id, c: build_sampler(desc, sampler_id, c)
            else:
                sampler_factory = self._external_sampler_factory(stored)
            return CollectorRuntime(
                instance_id,
                desc,
                cfg,
                self._bus,
                self._clock,
                sampler_factory=sampler_factory,
                analyzer_factory=build_analyzer,
                on_failed=self._on_runtime_failed,
            )
        if desc.provenance == "builtin":
            def sink_factory(c: InstanceConfig):
                sink = build_sink(desc, c)
                if isinstance(sink, CaptureSink):
                    self._captures[instance_id] = sink
                return sink
        else:
            sink_factory = self._external_sink_factory(stored)
        return PublisherRuntime(
            instance_id, desc, cfg, self._bus, self._clock, sink_factory=sink_factory
        )

    def _external_sampler_factory(self, stored: _StoredPlugin):
        desc = stored.descriptor

        def factory(sampler_id: str, cfg: InstanceConfig) -> ExternalSampler:
            process = spawn_plugin(
                desc,
                COLLECTOR,
                cfg,
                str(stored.entry_path),
                str(stored.bundle_dir),
                handshake_timeout_s=self._handshake_timeout_s,
            )
            return ExternalSampler(process)

        return factory

    def _external_sink_factory(self, stored: _StoredPlugin):
        desc = stored.descriptor

        def factory(cfg: InstanceConfig) -> ExternalSink:
            process = spawn_plugin(
                desc,
                PUBLISHER,
                cfg,
                str(stored.entry_path),
                str(stored.bundle_dir),
                handshake_timeout_s=self._handshake_timeout_s,
            )
            return ExternalSink(process)

        return factory

    def _on_runtime_failed(self, instance_id: str, error: str) -> None:
        try:
            record, _ = self.get(instance_id)
        except UnknownInstance:
            return
        record.transition(FAILED, expected=(RUNNING, RECONFIGURING, CREATED), error=error)
