"""Shared domain vocabulary: observations, plugin descriptors, instance
configurations, adaptation commands, and their validation.

All values here are immutable after construction and safe to share across
threads. The canonical NDJSON encoding of observations is defined in
:func:`canonical_encode`; it is the wire format of every sink.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Literal, Mapping

from .errors import InvalidConfig

Kind = Literal["collector", "publisher"]
Provenance = Literal["builtin", "external"]
Scalar = str | int | float | bool

COLLECTOR: Kind = "collector"
PUBLISHER: Kind = "publisher"

# Global sampling-period bounds, milliseconds. Guards spin loops on one end
# and dead collectors on the other.
MIN_PERIOD_MS = 10
MAX_PERIOD_MS = 3_600_000

PARAM_TYPES = ("string", "int", "real", "bool", "duration")

_DURATION_RE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*(ms|s|m|h)?\s*$")
_DURATION_UNIT_MS = {"ms": 1, "s": 1000, "m": 60_000, "h": 3_600_000}


def parse_duration_ms(value: int | float | str) -> int:
    """Parse a duration into integer milliseconds.

    Accepts bare numbers (already milliseconds) or strings like "500ms",
    "2s", "1m", "1h".
    """
    if isinstance(value, bool):
        raise ValueError(f"not a duration: {value!r}")
    if isinstance(value, (int, float)):
        if not math.isfinite(value) or value < 0:
            raise ValueError(f"not a duration: {value!r}")
        return int(round(value))
    m = _DURATION_RE.match(value)
    if not m:
        raise ValueError(f"not a duration: {value!r}")
    number, unit = m.groups()
    return int(round(float(number) * _DURATION_UNIT_MS[unit or "ms"]))


def format_duration_ms(ms: int) -> str:
    """Render milliseconds as the shortest exact duration string."""
    for unit, factor in (("h", 3_600_000), ("m", 60_000), ("s", 1000)):
        if ms != 0 and ms % factor == 0:
            return f"{ms // factor}{unit}"
    return f"{ms}ms"


def topic_matches(pattern: str, topic: str) -> bool:
    """Exact-name or trailing-`*` prefix match."""
    if pattern.endswith("*"):
        return topic.startswith(pattern[:-1])
    return topic == pattern


def filter_matches(topic_filter: Iterable[str], topic: str) -> bool:
    return any(topic_matches(p, topic) for p in topic_filter)


# ---------------------------------------------------------------------------
# Observation and its canonical encoding
# ---------------------------------------------------------------------------

_OBSERVATION_KEYS = (
    "indicator",
    "target",
    "timestamp",
    "value",
    "unit",
    "labels",
    "topic",
    "sourceInstance",
)


@dataclass(frozen=True)
class Observation:
    """One sampled indicator value, tagged with its routing topic."""

    indicator: str
    target: str
    timestamp: int  # nanoseconds since the Unix epoch
    value: float
    unit: str = ""
    labels: Mapping[str, str] = field(default_factory=dict)
    topic: str = ""
    source_instance: str = ""

    def __post_init__(self) -> None:
        if not self.indicator:
            raise ValueError("indicator must be nonempty")
        if not self.topic:
            raise ValueError("topic must be nonempty")
        if not isinstance(self.timestamp, int) or self.timestamp <= 0:
            raise ValueError(f"timestamp must be a positive integer: {self.timestamp!r}")
        value = float(self.value)
        if not math.isfinite(value):
            raise ValueError(f"value must be finite: {value!r}")
        if value == 0.0:
            value = 0.0  # normalize -0.0 so equal observations encode equally
        object.__setattr__(self, "value", value)
        labels = {str(k): str(v) for k, v in self.labels.items()}
        object.__setattr__(self, "labels", labels)


def observation_to_payload(obs: Observation) -> dict[str, Any]:
    """The canonical JSON-object form: fixed key order, labels sorted."""
    return {
        "indicator": obs.indicator,
        "target": obs.target,
        "timestamp": obs.timestamp,
        "value": obs.value,
        "unit": obs.unit,
        "labels": dict(sorted(obs.labels.items())),
        "topic": obs.topic,
        "sourceInstance": obs.source_instance,
    }


def canonical_encode(obs: Observation) -> bytes:
    """Encode one observation as a canonical NDJSON line.

    Keys are emitted in a fixed order and labels sorted by key, so equal
    observations always produce byte-identical lines.
    """
    payload = observation_to_payload(obs)
    return (json.dumps(payload, ensure_ascii=False, separators=(",", ":")) + "\n").encode("utf-8")


def canonical_encode_batch(batch: Iterable[Observation]) -> bytes:
    return b"".join(canonical_encode(obs) for obs in batch)


def canonical_decode(line: str | bytes) -> Observation:
    """Decode one NDJSON line back into an Observation."""
    if isinstance(line, bytes):
        line = line.decode("utf-8")
    payload = json.loads(line)
    if not isinstance(payload, dict):
        raise ValueError("observation line must be a JSON object")
    missing = [k for k in _OBSERVATION_KEYS if k not in payload]
    extra = [k for k in payload if k not in _OBSERVATION_KEYS]
    if missing or extra:
        raise ValueError(f"bad observation keys: missing={missing} extra={extra}")
    return Observation(
        indicator=payload["indicator"],
        target=payload["target"],
        timestamp=payload["timestamp"],
        value=payload["value"],
        unit=payload["unit"],
        labels=payload["labels"],
        topic=payload["topic"],
        source_instance=payload["sourceInstance"],
    )


def canonical_decode_lines(data: str | bytes) -> list[Observation]:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return [canonical_decode(line) for line in data.splitlines() if line.strip()]


# ---------------------------------------------------------------------------
# Plugin descriptors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamSpec:
    """One entry of a plugin's scalar-typed parameter schema."""

    name: str
    type: str  # one of PARAM_TYPES
    required: bool = False
    default: Scalar | None = None

    def __post_init__(self) -> None:
        if self.type not in PARAM_TYPES:
            raise ValueError(f"unknown param type: {self.type!r}")


@dataclass(frozen=True)
class PluginDescriptor:
    """Identity and capabilities of a loadable collector/publisher behavior."""

    id: str
    kind: Kind
    provenance: Provenance
    version: str
    param_schema: tuple[ParamSpec, ...] = ()
    samplers: tuple[str, ...] = ()   # collector plugins: selectable sampler ids
    analyzers: tuple[str, ...] = ()  # collector plugins: selectable analyzer ids
    entry: str = ""                  # external plugins: executable path in bundle

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("plugin id must be nonempty")
        if self.kind not in (COLLECTOR, PUBLISHER):
            raise ValueError(f"unknown plugin kind: {self.kind!r}")
        if self.provenance not in ("builtin", "external"):
            raise ValueError(f"unknown provenance: {self.provenance!r}")
        if self.provenance == "external" and not self.entry:
            raise ValueError("external plugins must declare an entry path")
        names = [p.name for p in self.param_schema]
        if len(names) != len(set(names)):
            raise ValueError("param schema names must be unique")

    def param(self, name: str) -> ParamSpec | None:
        for spec in self.param_schema:
            if spec.name == name:
                return spec
        return None

    def to_payload(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "kind": self.kind,
            "provenance": self.provenance,
            "version": self.version,
            "paramSchema": [
                {
                    "name": p.name,
                    "type": p.type,
                    "required": p.required,
                    "default": p.default,
                }
                for p in self.param_schema
            ],
            "samplers": list(self.samplers),
            "analyzers": list(self.analyzers),
            "entry": self.entry,
        }


# ---------------------------------------------------------------------------
# Instance configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InstanceConfig:
    """Everything an instance needs to operate.

    Collectors use ``sampling_period_ms``, ``indicators``, ``active_sampler``,
    ``active_analyzer`` and ``topic``; publishers use ``topic_filter``. The
    ``params`` map is validated against the plugin's parameter schema and
    carries analyzer parameters (collectors) or sink settings (publishers).
    """

    plugin_id: str
    target: Mapping[str, str] = field(default_factory=dict)
    indicators: tuple[str, ...] = ()
    sampling_period_ms: int | None = None
    active_sampler: str | None = None
    active_analyzer: str | None = None
    params: Mapping[str, Scalar] = field(default_factory=dict)
    topic: str | None = None
    topic_filter: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "target", dict(self.target))
        object.__setattr__(self, "indicators", tuple(sorted(set(self.indicators))))
        object.__setattr__(self, "params", dict(self.params))
        if self.topic_filter is not None:
            object.__setattr__(self, "topic_filter", tuple(self.topic_filter))

    def to_payload(self, kind: Kind) -> dict[str, Any]:
        payload: dict[str, Any] = {
            "pluginId": self.plugin_id,
            "targetSpec": dict(self.target),
            "analyzerParams": dict(self.params),
        }
        if kind == COLLECTOR:
            payload["indicators"] = list(self.indicators)
            if self.sampling_period_ms is not None:
                payload["samplingPeriod"] = format_duration_ms(self.sampling_period_ms)
            payload["activeSampler"] = self.active_sampler
            payload["activeAnalyzer"] = self.active_analyzer
            payload["topics"] = self.topic
        else:
            payload["topics"] = list(self.topic_filter or ())
        return payload

    @classmethod
    def from_payload(cls, payload: Mapping[str, Any], kind: Kind) -> "InstanceConfig":
        """Build a config from an API/CLI JSON body. Shape errors raise
        InvalidConfig; semantic validation happens against the descriptor."""
        violations: list[Violation] = []
        data: dict[str, Any] = {}
        data["plugin_id"] = str(payload.get("pluginId", ""))
        data["target"] = dict(payload.get("targetSpec") or {})
        if "analyzerParams" in payload:
            if not isinstance(payload["analyzerParams"], Mapping):
                violations.append(Violation("type_mismatch", "analyzerParams", "must be an object"))
            else:
                data["params"] = dict(payload["analyzerParams"])
        if kind == COLLECTOR:
            data["indicators"] = tuple(payload.get("indicators") or ())
            if payload.get("samplingPeriod") is not None:
                try:
                    data["sampling_period_ms"] = parse_duration_ms(payload["samplingPeriod"])
                except ValueError:
                    violations.append(
                        Violation("type_mismatch", "samplingPeriod", "must be a duration")
                    )
            data["active_sampler"] = payload.get("activeSampler")
            data["active_analyzer"] = payload.get("activeAnalyzer")
            topics = payload.get("topics")
            if topics is not None and not isinstance(topics, str):
                violations.append(
                    Violation("type_mismatch", "topics", "collector topics must be a string")
                )
            else:
                data["topic"] = topics
        else:
            topics = payload.get("topics")
            if topics is not None and (
                isinstance(topics, str) or not isinstance(topics, Iterable)
            ):
                violations.append(
                    Violation("type_mismatch", "topics", "publisher topics must be a list")
                )
            else:
                data["topic_filter"] = tuple(topics) if topics is not None else None
        if violations:
            raise InvalidConfig(violations)
        return cls(**data)


@dataclass(frozen=True)
class Violation:
    """One field-level validation problem."""

    code: str
    field: str
    message: str

    def __str__(self) -> str:
        return f"{self.field}: {self.message} [{self.code}]"

    def to_payload(self) -> dict[str, str]:
        return {"code": self.code, "field": self.field, "message": self.message}


def _check_param_type(spec: ParamSpec, value: Scalar) -> tuple[Scalar | None, bool]:
    """Returns (coerced value, ok). Durations coerce strings to int ms."""
    if spec.type == "string":
        return (value, True) if isinstance(value, str) else (None, False)
    if spec.type == "bool":
        return (value, True) if isinstance(value, bool) else (None, False)
    if spec.type == "int":
        return (value, True) if isinstance(value, int) and not isinstance(value, bool) else (None, False)
    if spec.type == "real":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return (None, False)
        return (float(value), True) if math.isfinite(float(value)) else (None, False)
    if spec.type == "duration":
        try:
            return (parse_duration_ms(value), True)
        except (ValueError, TypeError):
            return (None, False)
    return (None, False)


def validate_params(
    params: Mapping[str, Scalar],
    schema: tuple[ParamSpec, ...],
    violations: list[Violation],
) -> dict[str, Scalar]:
    """Validate a params map against a schema; fills defaults, appends every
    problem to ``violations`` instead of stopping at the first."""
    known = {spec.name: spec for spec in schema}
    out: dict[str, Scalar] = {}
    for name, value in params.items():
        spec = known.get(name)
        if spec is None:
            violations.append(Violation("unknown_param", name, "unknown parameter"))
            continue
        coerced, ok = _check_param_type(spec, value)
        if not ok:
            violations.append(
                Violation("type_mismatch", name, f"expected {spec.type}, got {value!r}")
            )
            continue
        out[name] = coerced  # type: ignore[assignment]
    for spec in schema:
        if spec.name in out:
            continue
        if spec.default is not None:
            coerced, ok = _check_param_type(spec, spec.default)
            out[spec.name] = coerced if ok else spec.default  # type: ignore[assignment]
        elif spec.required:
            violations.append(
                Violation("missing_required_param", spec.name, "required parameter missing")
            )
    return out


def validate_instance_config(
    cfg: InstanceConfig,
    desc: PluginDescriptor,
    period_bounds: tuple[int, int] = (MIN_PERIOD_MS, MAX_PERIOD_MS),
) -> InstanceConfig:
    """Validate ``cfg`` against the plugin's schema and kind.

    Returns the config with parameter defaults filled in, or raises
    :class:`InvalidConfig` carrying the complete list of violations.
    Validating an already-validated config returns an equal config.
    """
    violations: list[Violation] = []
    if cfg.plugin_id and cfg.plugin_id != desc.id:
        violations.append(
            Violation("plugin_mismatch", "pluginId", f"config is for {cfg.plugin_id!r}")
        )
    params = validate_params(cfg.params, desc.param_schema, violations)
    updates: dict[str, Any] = {"plugin_id": desc.id, "params": params}

    if desc.kind == COLLECTOR:
        if not cfg.indicators:
            violations.append(
                Violation("empty_indicators", "indicators", "at least one indicator required")
            )
        period = cfg.sampling_period_ms
        if period is None:
            violations.append(
                Violation("period_out_of_range", "samplingPeriod", "sampling period required")
            )
        else:
            lo, hi = period_bounds
            if not (lo <= period <= hi):
                violations.append(
                    Violation(
                        "period_out_of_range",
                        "samplingPeriod",
                        f"{period}ms outside [{lo}ms, {hi}ms]",
                    )
                )
        sampler = cfg.active_sampler
        if sampler is None and len(desc.samplers) == 1:
            sampler = desc.samplers[0]
        if sampler not in desc.samplers:
            violations.append(
                Violation("unknown_sampler", "activeSampler", f"{sampler!r} not in {list(desc.samplers)}")
            )
        analyzer = cfg.active_analyzer
        if analyzer is None and desc.analyzers:
            analyzer = desc.analyzers[0]
        if analyzer not in desc.analyzers:
            violations.append(
                Violation(
                    "unknown_analyzer", "activeAnalyzer", f"{analyzer!r} not in {list(desc.analyzers)}"
                )
            )
        if not cfg.topic:
            violations.append(Violation("empty_topic", "topics", "routing topic required"))
        updates.update(active_sampler=sampler, active_analyzer=analyzer)
    else:
        if not cfg.topic_filter:
            violations.append(Violation("empty_topic_filter", "topics", "topic filter required"))

    if violations:
        raise InvalidConfig(violations)
    return replace(cfg, **updates)


_CONFIG_PATCH_FIELDS = {
    "targetSpec",
    "indicators",
    "samplingPeriod",
    "activeSampler",
    "activeAnalyzer",
    "analyzerParams",
    "topics",
}


def merge_patch(cfg: InstanceConfig, patch: Mapping[str, Any], kind: Kind) -> InstanceConfig:
    """Apply a partial-config patch: absent fields stay unchanged,
    ``analyzerParams`` merges per key. ``pluginId`` cannot be patched."""
    violations: list[Violation] = []
    unknown = set(patch) - _CONFIG_PATCH_FIELDS
    for name in sorted(unknown):
        code = "plugin_rebind" if name == "pluginId" else "unknown_field"
        violations.append(Violation(code, name, "field cannot be patched"))
    if violations:
        raise InvalidConfig(violations)

    merged = dict(patch)
    if "analyzerParams" in merged and isinstance(merged["analyzerParams"], Mapping):
        params = dict(cfg.params)
        params.update(merged["analyzerParams"])
        merged["analyzerParams"] = params
    payload = cfg.to_payload(kind)
    payload.update(merged)
    payload["pluginId"] = cfg.plugin_id
    return InstanceConfig.from_payload(payload, kind)


# ---------------------------------------------------------------------------
# Adaptation commands
# ---------------------------------------------------------------------------

SET_SAMPLING_PERIOD = "setSamplingPeriod"
SWITCH_SAMPLER = "switchSampler"
SWITCH_ANALYZER = "switchAnalyzer"
SET_PARAM = "setParam"

_COMMAND_KINDS = (SET_SAMPLING_PERIOD, SWITCH_SAMPLER, SWITCH_ANALYZER, SET_PARAM)


@dataclass(frozen=True)
class AdaptationCommand:
    """An analyzer-issued request to the collector's controller."""

    command: str
    issued_by: str = ""
    reason: str = ""
    period_ms: int | None = None   # setSamplingPeriod
    target_id: str | None = None   # switchSampler / switchAnalyzer
    key: str | None = None         # setParam
    value: Scalar | None = None    # setParam

    def __post_init__(self) -> None:
        if self.command not in _COMMAND_KINDS:
            raise ValueError(f"unknown command: {self.command!r}")

    @classmethod
    def set_period(cls, period_ms: int, issued_by: str = "", reason: str = "") -> "AdaptationCommand":
        return cls(SET_SAMPLING_PERIOD, issued_by, reason, period_ms=int(period_ms))

    @classmethod
    def switch_sampler(cls, target: str, issued_by: str = "", reason: str = "") -> "AdaptationCommand":
        return cls(SWITCH_SAMPLER, issued_by, reason, target_id=target)

    @classmethod
    def switch_analyzer(cls, target: str, issued_by: str = "", reason: str = "") -> "AdaptationCommand":
        return cls(SWITCH_ANALYZER, issued_by, reason, target_id=target)

    @classmethod
    def set_param(cls, key: str, value: Scalar, issued_by: str = "", reason: str = "") -> "AdaptationCommand":
        return cls(SET_PARAM, issued_by, reason, key=key, value=value)

    def to_payload(self) -> dict[str, Any]:
        payload: dict[str, Any] = {"command": self.command}
        if self.period_ms is not None:
            payload["periodMs"] = self.period_ms
        if self.target_id is not None:
            payload["id"] = self.target_id
        if self.key is not None:
            payload["key"] = self.key
            payload["value"] = self.value
        if self.issued_by:
            payload["issuedBy"] = self.issued_by
        if self.reason:
            payload["reason"] = self.reason
        return payload

    @classmethod
    def from_payload(cls, payload: Mapping[str, Any]) -> "AdaptationCommand":
        command = payload.get("command")
        if command not in _COMMAND_KINDS:
            raise ValueError(f"unknown command: {command!r}")
        kwargs: dict[str, Any] = {
            "issued_by": str(payload.get("issuedBy", "")),
            "reason": str(payload.get("reason", "")),
        }
        if command == SET_SAMPLING_PERIOD:
            kwargs["period_ms"] = parse_duration_ms(payload["periodMs"])
        elif command in (SWITCH_SAMPLER, SWITCH_ANALYZER):
            kwargs["target_id"] = str(payload["id"])
        else:
            kwargs["key"] = str(payload["key"])
            kwargs["value"] = payload["value"]
        return cls(command, **kwargs)
