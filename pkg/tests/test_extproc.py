import json
from pathlib import Path

import pytest

from helpers import (
    COLLECTOR_PLUGIN_SOURCE,
    CRASHING_PLUGIN_SOURCE,
    PUBLISHER_PLUGIN_SOURCE,
    SILENT_PLUGIN_SOURCE,
)
from reprobe.errors import SamplerFailure, SinkUnavailable, SpawnFailed
from reprobe.extproc import ExternalSampler, ExternalSink, PluginProcess, spawn_plugin
from reprobe.model import COLLECTOR, PUBLISHER, InstanceConfig, Observation, PluginDescriptor
from reprobe.plugins.base import TickContext


def write_entry(tmp_path: Path, source: str) -> str:
    entry = tmp_path / "plugin.py"
    entry.write_text(source)
    return str(entry)


def desc(kind=COLLECTOR, plugin_id="ext"):
    return PluginDescriptor(
        id=plugin_id, kind=kind, provenance="external", version="1.0.0",
        samplers=("main",), analyzers=("passthrough",), entry="plugin.py",
    )


def collector_cfg(**params):
    return InstanceConfig(
        plugin_id="ext",
        indicators=("a.x", "a.y"),
        sampling_period_ms=100,
        active_sampler="main",
        active_analyzer="passthrough",
        topic="ext.data",
        params=params,
    )


def test_spawn_handshake_and_sample(tmp_path):
    entry = write_entry(tmp_path, COLLECTOR_PLUGIN_SOURCE)
    process = spawn_plugin(desc(), COLLECTOR, collector_cfg(), entry, str(tmp_path))
    sampler = ExternalSampler(process)
    readings = sampler.sample(TickContext(collector_cfg(), 0, 1000))
    assert [r.indicator for r in readings] == ["a.x", "a.y"]
    assert all(r.value == 1.25 and r.labels == {"src": "ext"} for r in readings)
    sampler.close()


def test_external_sampler_forwards_commands(tmp_path):
    entry = write_entry(tmp_path, COLLECTOR_PLUGIN_SOURCE)
    cfg = collector_cfg(emitCommand=True)
    process = spawn_plugin(desc(), COLLECTOR, cfg, entry, str(tmp_path))
    sampler = ExternalSampler(process)
    sampler.sample(TickContext(cfg, 0, 1000))
    commands = sampler.drain_commands()
    assert len(commands) == 1 and commands[0].period_ms == 400
    assert sampler.drain_commands() == []
    sampler.close()


def test_handshake_timeout_is_spawn_failure(tmp_path):
    entry = write_entry(tmp_path, SILENT_PLUGIN_SOURCE)
    with pytest.raises(SpawnFailed):
        spawn_plugin(desc(), COLLECTOR, collector_cfg(), entry, str(tmp_path), handshake_timeout_s=0.4)


def test_early_exit_is_spawn_failure(tmp_path):
    entry = write_entry(tmp_path, CRASHING_PLUGIN_SOURCE)
    with pytest.raises(SpawnFailed):
        spawn_plugin(desc(), COLLECTOR, collector_cfg(), entry, str(tmp_path), handshake_timeout_s=0.8)


def test_configure_rejection_is_spawn_failure(tmp_path):
    entry = write_entry(tmp_path, COLLECTOR_PLUGIN_SOURCE)
    with pytest.raises(SpawnFailed):
        spawn_plugin(
            desc(), COLLECTOR, collector_cfg(rejectConfig=True), entry, str(tmp_path),
            handshake_timeout_s=1.0,
        )


def test_dead_process_turns_into_sampler_failure(tmp_path):
    entry = write_entry(tmp_path, COLLECTOR_PLUGIN_SOURCE)
    process = spawn_plugin(desc(), COLLECTOR, collector_cfg(), entry, str(tmp_path))
    sampler = ExternalSampler(process)
    process.close()
    with pytest.raises(SamplerFailure):
        sampler.sample(TickContext(collector_cfg(), 0, 1000))


def test_external_sink_appends_batch(tmp_path):
    entry = write_entry(tmp_path, PUBLISHER_PLUGIN_SOURCE)
    out_path = tmp_path / "out.ndjson"
    cfg = InstanceConfig(
        plugin_id="ext", topic_filter=("*",), params={"path": str(out_path)}
    )
    process = spawn_plugin(desc(PUBLISHER), PUBLISHER, cfg, entry, str(tmp_path))
    sink = ExternalSink(process)
    batch = [
        Observation(indicator="a.x", target="h", timestamp=i + 1, value=float(i), topic="t")
        for i in range(3)
    ]
    result = sink.publish(batch)
    assert result.delivered == 3
    sink.close()
    lines = [json.loads(line) for line in out_path.read_text().splitlines()]
    assert [entry["timestamp"] for entry in lines] == [1, 2, 3]
    assert lines[0]["indicator"] == "a.x"


def test_shutdown_terminates_process(tmp_path):
    entry = write_entry(tmp_path, COLLECTOR_PLUGIN_SOURCE)
    process = spawn_plugin(desc(), COLLECTOR, collector_cfg(), entry, str(tmp_path))
    process.close()
    assert process._proc.poll() is not None
