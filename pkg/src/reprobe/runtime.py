"""Instance runtimes: the collector tick loop with its controller, and the
publisher flush loop.

A collector runs two flows. Data flow: each tick, the single active sampler
reads the configured indicators and the single active analyzer transforms
them before they leave for the bus. Control flow: configuration changes from
the management API (reactive) and adaptation commands from analyzers
(proactive) all funnel through :meth:`CollectorRuntime.controller_apply`,
are queued, and take effect atomically between ticks, never inside one.
"""

from __future__ import annotations

import logging
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

from .bus import DataBus, Subscription
from .clock import Clock
from .errors import IllegalState, InvalidCommand, SinkUnavailable
from .model import (
    MAX_PERIOD_MS,
    MIN_PERIOD_MS,
    SET_PARAM,
    SET_SAMPLING_PERIOD,
    SWITCH_ANALYZER,
    SWITCH_SAMPLER,
    AdaptationCommand,
    InstanceConfig,
    Kind,
    Observation,
    PluginDescriptor,
    _check_param_type,
    merge_patch,
)
from .plugins.analyzers import AdaptiveRateParams
from .plugins.base import Analyzer, Reading, Sampler, Sink, TickContext

log = logging.getLogger(__name__)

FAILURE_THRESHOLD = 5
APPLY_TIMEOUT_S = 10.0
PUBLISHER_DRAIN_DEADLINE_S = 2.0

SOURCE_API = "api"
SOURCE_ANALYZER = "analyzer"


@dataclass(frozen=True)
class AuditEntry:
    """One applied (or rejected) configuration change."""

    seq: int
    tick: int
    timestamp_ns: int
    source: str
    action: str
    detail: Mapping[str, Any]
    applied: bool = True

    def to_payload(self) -> dict[str, Any]:
        return {
            "seq": self.seq,
            "tick": self.tick,
            "timestampNs": self.timestamp_ns,
            "source": self.source,
            "action": self.action,
            "detail": dict(self.detail),
            "applied": self.applied,
        }


class _PendingChange:
    __slots__ = ("source", "change", "done", "result", "error")

    def __init__(self, source: str, change):
        self.source = source
        self.change = change
        self.done = threading.Event()
        self.result: InstanceConfig | None = None
        self.error: Exception | None = None


def render_target(target: Mapping[str, str]) -> str:
    return ",".join(f"{k}={v}" for k, v in sorted(target.items()))


class _BaseRuntime:
    """Shared scheduler-loop skeleton: park on the clock, wake on demand."""

    def __init__(self, instance_id: str, clock: Clock):
        self.instance_id = instance_id
        self._clock = clock
        self._wake = threading.Event()
        self._ready = threading.Event()
        self._stop = False
        self._lock = threading.Lock()
        self._pending: deque[_PendingChange] = deque()
        self._audit: list[AuditEntry] = []
        self._audit_seq = 0
        self._thread = threading.Thread(target=self._run, daemon=True, name=instance_id)

    def start(self, timeout_s: float = 10.0) -> None:
        self._thread.start()
        if not self._ready.wait(timeout_s):
            raise RuntimeError(f"runtime {self.instance_id} failed to start")

    def stop(self, timeout_s: float = 10.0) -> None:
        self._stop = True
        self._wake.set()
        if self._thread.is_alive():
            self._thread.join(timeout_s)

    def alive(self) -> bool:
        return self._thread.is_alive()

    def audit(self) -> list[AuditEntry]:
        with self._lock:
            return list(self._audit)

    def _record_audit(self, tick: int, source: str, action: str, detail: Mapping[str, Any], applied=True):
        with self._lock:
            self._audit_seq += 1
            self._audit.append(
                AuditEntry(
                    seq=self._audit_seq,
                    tick=tick,
                    timestamp_ns=self._clock.now_ns(),
                    source=source,
                    action=action,
                    detail=detail,
                    applied=applied,
                )
            )

    def _enqueue(self, pending: _PendingChange, wait: bool, timeout_s: float):
        with self._lock:
            if self._stop:
                raise IllegalState(f"instance {self.instance_id} is stopping")
            self._pending.append(pending)
        self._wake.set()
        if not wait:
            return None
        if not pending.done.wait(timeout_s):
            raise IllegalState(f"instance {self.instance_id} did not apply the change in time")
        if pending.error is not None:
            raise pending.error
        return pending.result

    def _take_pending(self) -> list[_PendingChange]:
        with self._lock:
            taken = list(self._pending)
            self._pending.clear()
        return taken

    def _cancel_pending(self) -> None:
        for pending in self._take_pending():
            pending.error = IllegalState(f"instance {self.instance_id} stopped")
            pending.done.set()

    def _run(self) -> None:
        raise NotImplementedError


class CollectorRuntime(_BaseRuntime):
    def __init__(
        self,
        instance_id: str,
        desc: PluginDescriptor,
        cfg: InstanceConfig,
        bus: DataBus,
        clock: Clock,
        sampler_factory: Callable[[str, InstanceConfig], Sampler],
        analyzer_factory: Callable[[str], Analyzer],
        on_failed: Callable[[str, str], None] | None = None,
        failure_threshold: int = FAILURE_THRESHOLD,
    ):
        super().__init__(instance_id, clock)
        self._desc = desc
        self._config = cfg
        self._bus = bus
        self._sampler_factory = sampler_factory
        self._analyzer_factory = analyzer_factory
        self._on_failed = on_failed
        self._failure_threshold = failure_threshold
        self._sampler = sampler_factory(cfg.active_sampler or "", cfg)
        self._analyzer = analyzer_factory(cfg.active_analyzer or "")
        self._tick_count = 0
        self._last_tick_ns = 0
        self._consecutive_failures = 0
        self._failed = False
        self._last_error = ""
        self._emitted = 0
        self._dropped_out_of_set = 0
        self._sampler_calls: dict[str, int] = {}
        self._analyzer_calls: dict[str, int] = {}

    # --- public surface ----------------------------------------------------

    def config(self) -> InstanceConfig:
        return self._config

    def effective_period_ms(self) -> int:
        return int(self._config.sampling_period_ms or 0)

    def tick_count(self) -> int:
        return self._tick_count

    def controller_apply(
        self,
        source: str,
        change: AdaptationCommand | Mapping[str, Any],
        wait: bool = True,
        timeout_s: float = APPLY_TIMEOUT_S,
    ) -> InstanceConfig | None:
        """Queue a config change; it lands atomically between ticks.

        ``change`` is either an analyzer adaptation command or an API-style
        partial config payload. Commands are validated here so bad ones fail
        fast at their source.
        """
        if isinstance(change, AdaptationCommand):
            self._validate_command(change)
        return self._enqueue(_PendingChange(source, change), wait, timeout_s)

    def stats(self) -> dict[str, Any]:
        with self._lock:
            return {
                "ticks": self._tick_count,
                "emitted": self._emitted,
                "consecutiveFailures": self._consecutive_failures,
                "droppedOutOfSet": self._dropped_out_of_set,
                "samplerCalls": dict(self._sampler_calls),
                "analyzerCalls": dict(self._analyzer_calls),
            }

    def last_error(self) -> str:
        return self._last_error

    # --- command validation ---------------------------------------------------

    def _validate_command(self, command: AdaptationCommand) -> None:
        if command.command == SWITCH_SAMPLER and command.target_id not in self._desc.samplers:
            raise InvalidCommand(f"unknown sampler {command.target_id!r}")
        if command.command == SWITCH_ANALYZER and command.target_id not in self._desc.analyzers:
            raise InvalidCommand(f"unknown analyzer {command.target_id!r}")
        if command.command == SET_PARAM:
            spec = self._desc.param(command.key or "")
            if spec is None:
                raise InvalidCommand(f"unknown parameter {command.key!r}")
            _, ok = _check_param_type(spec, command.value)
            if not ok:
                raise InvalidCommand(f"parameter {command.key!r} expects {spec.type}")
        if command.command == SET_SAMPLING_PERIOD and command.period_ms is None:
            raise InvalidCommand("setSamplingPeriod needs a period")

    # --- scheduler loop ----------------------------------------------------------

    def _period_ns(self) -> int:
        return int(self._config.sampling_period_ms or MIN_PERIOD_MS) * 1_000_000

    def _run(self) -> None:
        try:
            self._last_tick_ns = self._clock.now_ns()
            while True:
                deadline = self._last_tick_ns + self._period_ns()
                self._clock.wait_until(deadline, self._wake, on_parked=self._ready.set)
                if self._stop:
                    return
                self._wake.clear()
                self._apply_pending()
                if self._stop:
                    return
                now = self._clock.now_ns()
                if now >= self._last_tick_ns + self._period_ns():
                    self._run_once(now)
                    self._last_tick_ns = self._clock.now_ns()
                    if self._failed:
                        return
                    self._apply_pending()
        finally:
            self._cancel_pending()
            try:
                self._sampler.close()
            except Exception:
                log.exception("collector %s: sampler close failed", self.instance_id)
            self._clock.detach()

    def _run_once(self, now_ns: int) -> None:
        cfg = self._config  # single read: the whole tick sees one snapshot
        ctx = TickContext(config=cfg, tick_index=self._tick_count, now_ns=now_ns)
        self._sampler_calls[cfg.active_sampler or ""] = (
            self._sampler_calls.get(cfg.active_sampler or "", 0) + 1
        )
        try:
            readings = self._sampler.sample(ctx)
        except Exception as exc:
            self._consecutive_failures += 1
            self._last_error = f"sampler failure: {exc}"
            log.warning("collector %s: tick skipped (%s)", self.instance_id, exc)
            if self._consecutive_failures >= self._failure_threshold:
                self._failed = True
                if self._on_failed is not None:
                    self._on_failed(self.instance_id, self._last_error)
            return
        self._consecutive_failures = 0

        allowed = set(cfg.indicators)
        in_set = [r for r in readings if r.indicator in allowed]
        self._dropped_out_of_set += len(readings) - len(in_set)

        self._analyzer_calls[cfg.active_analyzer or ""] = (
            self._analyzer_calls.get(cfg.active_analyzer or "", 0) + 1
        )
        out, commands = self._analyzer.process(in_set, ctx)
        out = [r for r in out if r.indicator in allowed]
        drain_commands = getattr(self._sampler, "drain_commands", None)
        if drain_commands is not None:
            commands = list(commands) + drain_commands()

        batch = [self._stamp(r, cfg, now_ns) for r in out]
        if batch:
            self._bus.publish(batch)
            self._emitted += len(batch)
        self._tick_count += 1
        for command in commands:
            try:
                self.controller_apply(SOURCE_ANALYZER, command, wait=False)
            except InvalidCommand as exc:
                self._record_audit(
                    self._tick_count, SOURCE_ANALYZER, command.command,
                    {"error": str(exc), **command.to_payload()}, applied=False,
                )

    def _stamp(self, reading: Reading, cfg: InstanceConfig, now_ns: int) -> Observation:
        return Observation(
            indicator=reading.indicator,
            target=reading.target if reading.target is not None else render_target(cfg.target),
            timestamp=reading.timestamp_ns or now_ns,
            value=reading.value,
            unit=reading.unit,
            labels=reading.labels,
            topic=cfg.topic or "",
            source_instance=self.instance_id,
        )

    # --- applying changes -----------------------------------------------------------

    def _apply_pending(self) -> None:
        for pending in self._take_pending():
            try:
                if isinstance(pending.change, AdaptationCommand):
                    self._apply_command(pending.source, pending.change)
                else:
                    self._apply_patch(pending.source, pending.change)
                pending.result = self._config
            except Exception as exc:
                pending.error = exc
            finally:
                pending.done.set()

    def _apply_command(self, source: str, command: AdaptationCommand) -> None:
        cfg = self._config
        detail: dict[str, Any] = command.to_payload()
        if command.command == SET_SAMPLING_PERIOD:
            bounds = AdaptiveRateParams.from_params(cfg.params)
            period = bounds.clamp(command.period_ms or 0)
            period = max(MIN_PERIOD_MS, min(MAX_PERIOD_MS, period))
            detail["effectivePeriodMs"] = period
            new_cfg = merge_patch(cfg, {"samplingPeriod": period}, "collector")
        elif command.command == SWITCH_SAMPLER:
            new_cfg = merge_patch(cfg, {"activeSampler": command.target_id}, "collector")
        elif command.command == SWITCH_ANALYZER:
            new_cfg = merge_patch(cfg, {"activeAnalyzer": command.target_id}, "collector")
        else:  # setParam
            new_cfg = merge_patch(
                cfg, {"analyzerParams": {command.key: command.value}}, "collector"
            )
        self._swap_config(new_cfg)
        self._record_audit(self._tick_count, source, command.command, detail)

    def _apply_patch(self, source: str, payload: Mapping[str, Any]) -> None:
        new_cfg = merge_patch(self._config, payload, "collector")
        self._swap_config(new_cfg)
        self._record_audit(self._tick_count, source, "patch", dict(payload))

    def _swap_config(self, new_cfg: InstanceConfig) -> None:
        old = self._config
        sampler_switch = new_cfg.active_sampler != old.active_sampler
        behavior_switch = sampler_switch or new_cfg.active_analyzer != old.active_analyzer
        sampler_affected = (
            sampler_switch
            or new_cfg.params != old.params
            or new_cfg.target != old.target
            or new_cfg.indicators != old.indicators
            or new_cfg.sampling_period_ms != old.sampling_period_ms
        )
        if sampler_affected:
            reconfigure = getattr(self._sampler, "reconfigure", None)
            if reconfigure is not None:
                # hosted plugin processes take a configure message in place;
                # a rejection aborts the swap and the old config stays live
                reconfigure(new_cfg)
            elif sampler_switch or new_cfg.params != old.params:
                replaced = self._sampler
                self._sampler = self._sampler_factory(new_cfg.active_sampler or "", new_cfg)
                replaced.close()
        if behavior_switch:
            # fresh analyzer: in-window samples are discarded on any switch
            self._analyzer = self._analyzer_factory(new_cfg.active_analyzer or "")
        self._config = new_cfg


class PublisherRuntime(_BaseRuntime):
    def __init__(
        self,
        instance_id: str,
        desc: PluginDescriptor,
        cfg: InstanceConfig,
        bus: DataBus,
        clock: Clock,
        sink_factory: Callable[[InstanceConfig], Sink],
        drain_deadline_s: float = PUBLISHER_DRAIN_DEADLINE_S,
    ):
        super().__init__(instance_id, clock)
        self._desc = desc
        self._config = cfg
        self._bus = bus
        self._sink_factory = sink_factory
        self._sink = sink_factory(cfg)
        self._drain_deadline_s = drain_deadline_s
        self._subscription: Subscription | None = None
        self._delivered = 0
        self._lost = 0
        self._retries = 0
        self._flushes = 0
        self._last_error = ""

    def config(self) -> InstanceConfig:
        return self._config

    def last_error(self) -> str:
        return self._last_error

    def controller_apply(
        self,
        source: str,
        change: Mapping[str, Any],
        wait: bool = True,
        timeout_s: float = APPLY_TIMEOUT_S,
    ) -> InstanceConfig | None:
        return self._enqueue(_PendingChange(source, change), wait, timeout_s)

    def stats(self) -> dict[str, Any]:
        with self._lock:
            payload = {
                "delivered": self._delivered,
                "lost": self._lost,
                "retries": self._retries,
                "flushes": self._flushes,
                "lastError": self._last_error,
            }
        if self._subscription is not None:
            payload["subscription"] = self._subscription.stats().to_payload()
        return payload

    def _flush_interval_ns(self) -> int:
        return int(self._config.params.get("flushInterval", 100)) * 1_000_000

    def _batch_max(self) -> int:
        return max(1, int(self._config.params.get("batchMax", 500)))

    def _subscribe(self) -> None:
        capacity = max(1, int(self._config.params.get("queueCapacity", 1024)))
        self._subscription = self._bus.subscribe(
            self.instance_id, self._config.topic_filter or (), capacity
        )

    def _run(self) -> None:
        self._subscribe()
        last_flush = self._clock.now_ns()
        try:
            while True:
                deadline = last_flush + self._flush_interval_ns()
                self._clock.wait_until(deadline, self._wake, on_parked=self._ready.set)
                if self._stop:
                    return
                self._wake.clear()
                self._apply_pending()
                if self._stop:
                    return
                now = self._clock.now_ns()
                if now >= last_flush + self._flush_interval_ns():
                    self._flush()
                    last_flush = self._clock.now_ns()
        finally:
            self._cancel_pending()
            self._final_drain()
            try:
                self._bus.unsubscribe(self.instance_id)
            except Exception:
                pass
            try:
                self._sink.close()
            except Exception:
                log.exception("publisher %s: sink close failed", self.instance_id)
            self._clock.detach()

    def _flush(self) -> None:
        sub = self._subscription
        if sub is None:
            return
        while True:
            try:
                batch = sub.drain(self._batch_max())
            except Exception:
                return
            if not batch:
                return
            self._deliver(batch)

    def _deliver(self, batch: list[Observation]) -> None:
        try:
            result = self._sink.publish(batch)
        except SinkUnavailable as exc:
            # drained observations that cannot be delivered count as lost;
            # the instance stays up and keeps trying on later flushes
            with self._lock:
                self._lost += len(batch)
                self._last_error = str(exc)
            log.warning("publisher %s: %s", self.instance_id, exc)
            return
        with self._lock:
            self._delivered += result.delivered
            self._retries += result.retries
            self._flushes += 1

    def _final_drain(self) -> None:
        """Flush whatever is queued before unsubscribing, up to a deadline."""
        sub = self._subscription
        if sub is None:
            return
        deadline = time.monotonic() + self._drain_deadline_s
        while time.monotonic() < deadline:
            try:
                batch = sub.drain(self._batch_max())
            except Exception:
                return
            if not batch:
                return
            self._deliver(batch)

    def _apply_pending(self) -> None:
        for pending in self._take_pending():
            try:
                self._apply_patch(pending.source, pending.change)
                pending.result = self._config
            except Exception as exc:
                pending.error = exc
            finally:
                pending.done.set()

    def _apply_patch(self, source: str, payload: Mapping[str, Any]) -> None:
        old = self._config
        new_cfg = merge_patch(old, payload, "publisher")
        resubscribe = new_cfg.topic_filter != old.topic_filter or new_cfg.params.get(
            "queueCapacity"
        ) != old.params.get("queueCapacity")
        rebuild_sink = new_cfg.params != old.params
        self._config = new_cfg
        if resubscribe and self._subscription is not None:
            self._flush()  # do not strand queued observations
            try:
                self._bus.unsubscribe(self.instance_id)
            except Exception:
                pass
            self._subscribe()
        if rebuild_sink:
            try:
                self._sink.close()
            except Exception:
                pass
            self._sink = self._sink_factory(new_cfg)
        self._record_audit(0, source, "patch", dict(payload))
