"""Compiled-in collector and publisher plugins.

Collectors: a deterministic synthetic-signal sampler and a psutil-backed
host-metrics sampler, each combinable with the passthrough / aggregate /
adaptive-rate analyzers. Publishers: NDJSON file, HTTP batch, and in-memory
capture sinks.
"""

from __future__ import annotations

from ..model import COLLECTOR, PUBLISHER, InstanceConfig, ParamSpec, PluginDescriptor
from .analyzers import (
    ADAPTIVE_ANALYZER_ID,
    AdaptiveRateAnalyzer,
    AdaptiveRateParams,
    AggregateAnalyzer,
    PassthroughAnalyzer,
    adaptive_decision,
    stability_score,
)
from .base import Analyzer, Reading, Sampler, Sink, SinkResult, TickContext
from .samplers import (
    DEFAULT_SIGNAL_JSON,
    SYSTEM_INDICATORS,
    SyntheticSampler,
    SystemSampler,
    system_sample,
)
from .signal import SignalSegment, SyntheticSignal, SyntheticSignalSpec
from .sinks import CaptureSink, FileSink, HttpSink, file_sink_publish, http_sink_publish

__all__ = [
    "ADAPTIVE_ANALYZER_ID",
    "AdaptiveRateAnalyzer",
    "AdaptiveRateParams",
    "AggregateAnalyzer",
    "Analyzer",
    "BUILTIN_DESCRIPTORS",
    "CaptureSink",
    "DEFAULT_SIGNAL_JSON",
    "FileSink",
    "HttpSink",
    "PassthroughAnalyzer",
    "Reading",
    "SYSTEM_INDICATORS",
    "Sampler",
    "SignalSegment",
    "Sink",
    "SinkResult",
    "SyntheticSampler",
    "SyntheticSignal",
    "SyntheticSignalSpec",
    "SystemSampler",
    "TickContext",
    "adaptive_decision",
    "build_analyzer",
    "build_sampler",
    "build_sink",
    "check_builtin_config",
    "file_sink_publish",
    "http_sink_publish",
    "stability_score",
    "system_sample",
]

ANALYZER_IDS = ("passthrough", "aggregate", ADAPTIVE_ANALYZER_ID)

_ADAPTIVE_PARAMS = (
    ParamSpec("windowSize", "int", default=8),
    ParamSpec("lowThreshold", "real", default=0.05),
    ParamSpec("highThreshold", "real", default=0.25),
    ParamSpec("factor", "real", default=2.0),
    ParamSpec("minPeriod", "duration", default=50),
    ParamSpec("maxPeriod", "duration", default=1600),
    ParamSpec("epsilon", "real", default=1e-9),
)

_PUBLISHER_PARAMS = (
    ParamSpec("flushInterval", "duration", default=100),
    ParamSpec("queueCapacity", "int", default=1024),
    ParamSpec("batchMax", "int", default=500),
)

BUILTIN_DESCRIPTORS: dict[str, PluginDescriptor] = {
    desc.id: desc
    for desc in (
        PluginDescriptor(
            id="synthetic-sampler",
            kind=COLLECTOR,
            provenance="builtin",
            version="1.0.0",
            param_schema=(
                ParamSpec("signal", "string", default=DEFAULT_SIGNAL_JSON),
                ParamSpec("fingerprint", "bool"),
            )
            + _ADAPTIVE_PARAMS,
            samplers=("synthetic",),
            analyzers=ANALYZER_IDS,
        ),
        PluginDescriptor(
            id="system-metrics",
            kind=COLLECTOR,
            provenance="builtin",
            version="1.0.0",
            param_schema=_ADAPTIVE_PARAMS,
            samplers=("procfs",),
            analyzers=ANALYZER_IDS,
        ),
        PluginDescriptor(
            id="file-sink",
            kind=PUBLISHER,
            provenance="builtin",
            version="1.0.0",
            param_schema=(ParamSpec("path", "string", required=True),) + _PUBLISHER_PARAMS,
        ),
        PluginDescriptor(
            id="http-sink",
            kind=PUBLISHER,
            provenance="builtin",
            version="1.0.0",
            param_schema=(
                ParamSpec("url", "string", required=True),
                ParamSpec("retries", "int", default=2),
                ParamSpec("backoff", "duration", default=250),
                ParamSpec("timeout", "duration", default=5000),
            )
            + _PUBLISHER_PARAMS,
        ),
        PluginDescriptor(
            id="capture-sink",
            kind=PUBLISHER,
            provenance="builtin",
            version="1.0.0",
            param_schema=_PUBLISHER_PARAMS,
        ),
    )
}


def build_sampler(desc: PluginDescriptor, sampler_id: str, cfg: InstanceConfig) -> Sampler:
    if desc.id == "synthetic-sampler" and sampler_id == "synthetic":
        return SyntheticSampler(cfg)
    if desc.id == "system-metrics" and sampler_id == "procfs":
        return SystemSampler(cfg)
    raise ValueError(f"no builtin sampler {sampler_id!r} in plugin {desc.id!r}")


def build_analyzer(analyzer_id: str) -> Analyzer:
    if analyzer_id == "passthrough":
        return PassthroughAnalyzer()
    if analyzer_id == "aggregate":
        return AggregateAnalyzer()
    if analyzer_id == ADAPTIVE_ANALYZER_ID:
        return AdaptiveRateAnalyzer()
    raise ValueError(f"no builtin analyzer {analyzer_id!r}")


def build_sink(desc: PluginDescriptor, cfg: InstanceConfig) -> Sink:
    params = cfg.params
    if desc.id == "file-sink":
        return FileSink(str(params["path"]))
    if desc.id == "http-sink":
        return HttpSink(
            str(params["url"]),
            retries=int(params.get("retries", 2)),
            backoff_s=int(params.get("backoff", 250)) / 1000.0,
            timeout_s=int(params.get("timeout", 5000)) / 1000.0,
        )
    if desc.id == "capture-sink":
        return CaptureSink()
    raise ValueError(f"no builtin sink in plugin {desc.id!r}")


def check_builtin_config(desc: PluginDescriptor, cfg: InstanceConfig) -> list[str]:
    """Plugin-specific validation beyond the scalar schema; returns problem
    strings so the caller can fold them into a complete violation list."""
    problems: list[str] = []
    if desc.kind == COLLECTOR:
        try:
            build_sampler(desc, cfg.active_sampler or "", cfg)
        except ValueError as exc:
            problems.append(str(exc))
        if ADAPTIVE_ANALYZER_ID in desc.analyzers:
            try:
                AdaptiveRateParams.from_params(cfg.params)
            except ValueError as exc:
                problems.append(f"adaptive params: {exc}")
    return problems
