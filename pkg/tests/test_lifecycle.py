import random

import pytest

from helpers import (
    CRASHING_PLUGIN_SOURCE,
    SILENT_PLUGIN_SOURCE,
    make_external_bundle,
)
from reprobe.agent import Agent
from reprobe.bundle import make_bundle, read_bundle
from reprobe.clock import VirtualClock
from reprobe.errors import (
    AlreadyTerminal,
    BuiltinImmutable,
    IllegalState,
    InvalidConfig,
    MalformedBundle,
    PluginInUse,
    RegisterConflict,
    SchemaInvalid,
    SpawnFailed,
    UnknownInstance,
    UnknownPlugin,
)
from reprobe.lifecycle import LEGAL_TRANSITIONS, RUNNING, STOPPED
from reprobe.model import COLLECTOR, PUBLISHER, InstanceConfig
from reprobe.plugins import BUILTIN_DESCRIPTORS


@pytest.fixture
def agent(tmp_path):
    agent = Agent(clock=VirtualClock(), data_dir=tmp_path, handshake_timeout_s=1.0)
    yield agent
    agent.shutdown()


def collector_payload(**overrides):
    base = {
        "pluginId": "synthetic-sampler",
        "indicators": ["sig.value"],
        "samplingPeriod": "100ms",
        "activeSampler": "synthetic",
        "activeAnalyzer": "passthrough",
        "topics": "sys.sig",
    }
    base.update(overrides)
    return base


def collector_cfg(**overrides):
    return InstanceConfig.from_payload(collector_payload(**overrides), COLLECTOR)


def capture_cfg(**overrides):
    payload = {"pluginId": "capture-sink", "topics": ["sys.*"]}
    payload.update(overrides)
    return InstanceConfig.from_payload(payload, PUBLISHER)


def ext_collector_cfg(plugin_id, **overrides):
    return collector_cfg(
        pluginId=plugin_id, activeSampler="main", indicators=["a.x"], **overrides
    )


# --- plugin store ----------------------------------------------------------------

def test_fresh_agent_lists_exactly_the_builtins(agent):
    assert {d.id for d in agent.store.list()} == set(BUILTIN_DESCRIPTORS)


def test_upload_external_plugin_and_reupload_idempotent(agent):
    bundle = make_external_bundle("ext-col")
    desc = agent.upload_plugin(bundle)
    assert desc.id == "ext-col" and desc.provenance == "external"
    again = agent.upload_plugin(bundle)
    assert again == desc
    assert agent.store.counts() == {"builtin": len(BUILTIN_DESCRIPTORS), "external": 1}


def test_upload_conflicting_bundle_same_id(agent):
    agent.upload_plugin(make_external_bundle("ext-col", version="1.0.0"))
    with pytest.raises(RegisterConflict):
        agent.upload_plugin(make_external_bundle("ext-col", version="2.0.0"))


def test_upload_shadowing_builtin_id_conflicts(agent):
    with pytest.raises(RegisterConflict):
        agent.upload_plugin(make_external_bundle("synthetic-sampler"))


def test_upload_garbage_is_malformed(agent):
    with pytest.raises(MalformedBundle):
        agent.upload_plugin(b"this is not a tar archive")


def test_upload_bad_manifest_is_schema_invalid(agent):
    bundle = make_bundle({"id": "x", "kind": "collector"}, {"plugin.py": b""})
    with pytest.raises(SchemaInvalid):
        agent.upload_plugin(bundle)
    bundle = make_bundle(
        {"id": "x", "kind": "collector", "entry": "missing.py"}, {"plugin.py": b""}
    )
    with pytest.raises(SchemaInvalid):
        agent.upload_plugin(bundle)


def test_bundle_round_trip_descriptor():
    desc = read_bundle(make_external_bundle("ext-col", kind="collector"))
    assert desc.samplers == ("main",)
    assert "passthrough" in desc.analyzers
    assert desc.entry == "plugin.py"


def test_remove_plugin_guards(agent):
    with pytest.raises(UnknownPlugin):
        agent.remove_plugin("ghost")
    with pytest.raises(BuiltinImmutable):
        agent.remove_plugin("synthetic-sampler")
    agent.upload_plugin(make_external_bundle("ext-col"))
    iid = agent.collectors.instantiate("ext-col", ext_collector_cfg("ext-col"))
    with pytest.raises(PluginInUse):
        agent.remove_plugin("ext-col")
    agent.collectors.destroy(iid)
    agent.remove_plugin("ext-col")
    with pytest.raises(UnknownPlugin):
        agent.collectors.instantiate("ext-col", ext_collector_cfg("ext-col"))


# --- instantiate -------------------------------------------------------------------

def test_instantiate_builtin_collector_reaches_running(agent):
    iid = agent.collectors.instantiate("synthetic-sampler", collector_cfg())
    record, runtime = agent.collectors.get(iid)
    assert record.state == RUNNING
    assert runtime.alive()
    listed = agent.collectors.list_instances()
    assert [r["state"] for r in listed] == [RUNNING]


def test_two_instances_same_plugin_distinct_source_tags(agent):
    tap = agent.bus.subscribe("tap", ["*"], 10000)
    a = agent.collectors.instantiate("synthetic-sampler", collector_cfg())
    b = agent.collectors.instantiate("synthetic-sampler", collector_cfg(topics="sys.other"))
    assert a != b
    agent.clock.advance_ms(100)
    sources = {o.source_instance for o in tap.drain(100)}
    assert sources == {a, b}


def test_instantiate_unknown_analyzer_is_invalid_config(agent):
    with pytest.raises(InvalidConfig):
        agent.collectors.instantiate(
            "synthetic-sampler", collector_cfg(activeAnalyzer="nonexistent")
        )


def test_instantiate_kind_mismatch(agent):
    with pytest.raises(InvalidConfig):
        agent.collectors.instantiate("capture-sink", capture_cfg())


def test_instantiate_unknown_plugin(agent):
    with pytest.raises(UnknownPlugin):
        agent.collectors.instantiate("ghost", collector_cfg())


def test_spawn_failure_leaves_failed_record_with_error(agent):
    agent.upload_plugin(make_external_bundle("ext-dead", source=CRASHING_PLUGIN_SOURCE))
    with pytest.raises(SpawnFailed):
        agent.collectors.instantiate("ext-dead", ext_collector_cfg("ext-dead"))
    records = agent.collectors.list_instances()
    assert len(records) == 1
    assert records[0]["state"] == "Failed"
    assert records[0]["lastError"]


def test_spawn_timeout_with_silent_plugin(agent):
    agent.upload_plugin(make_external_bundle("ext-mute", source=SILENT_PLUGIN_SOURCE))
    with pytest.raises(SpawnFailed):
        agent.collectors.instantiate("ext-mute", ext_collector_cfg("ext-mute"))


# --- destroy --------------------------------------------------------------------------

def test_destroy_stops_and_is_terminal(agent):
    iid = agent.collectors.instantiate("synthetic-sampler", collector_cfg())
    agent.collectors.destroy(iid)
    record, runtime = agent.collectors.get(iid)
    assert record.state == STOPPED
    assert not runtime.alive()
    with pytest.raises(AlreadyTerminal):
        agent.collectors.destroy(iid)
    with pytest.raises(UnknownInstance):
        agent.collectors.destroy("ghost")


def test_destroy_publisher_flushes_queue_to_sink(agent):
    from reprobe.model import Observation

    pid = agent.publishers.instantiate("capture-sink", capture_cfg())
    batch = [
        Observation(indicator="cpu", target="h", timestamp=i + 1, value=1.0, topic="sys.cpu")
        for i in range(5)
    ]
    agent.bus.publish(batch)
    agent.publishers.destroy(pid)
    assert [o.timestamp for o in agent.captures[pid].records()] == [1, 2, 3, 4, 5]
    assert pid not in agent.bus.stats()


def test_destroy_one_collector_leaves_other_ticking(agent):
    tap = agent.bus.subscribe("tap", ["*"], 100000)
    a = agent.collectors.instantiate("synthetic-sampler", collector_cfg())
    b = agent.collectors.instantiate("synthetic-sampler", collector_cfg(topics="sys.b"))
    agent.clock.advance_ms(300)
    agent.collectors.destroy(a)
    agent.clock.advance_ms(300)
    stamps = [o.timestamp for o in tap.drain(100000) if o.source_instance == b]
    diffs = [b_ - a_ for a_, b_ in zip(stamps, stamps[1:])]
    assert len(stamps) == 6
    assert max(diffs) <= 3 * 100_000_000  # no gap > 3 ticks around the destroy


# --- reconfigure -----------------------------------------------------------------------

def test_reconfigure_updates_period(agent):
    iid = agent.collectors.instantiate("synthetic-sampler", collector_cfg())
    effective = agent.collectors.reconfigure(iid, {"samplingPeriod": "500ms"})
    assert effective.sampling_period_ms == 500
    record, runtime = agent.collectors.get(iid)
    assert record.state == RUNNING
    assert runtime.config().sampling_period_ms == 500


def test_reconfigure_invalid_patch_keeps_old_config(agent):
    iid = agent.collectors.instantiate("synthetic-sampler", collector_cfg())
    with pytest.raises(InvalidConfig):
        agent.collectors.reconfigure(iid, {"activeSampler": "nonexistent"})
    _, runtime = agent.collectors.get(iid)
    assert runtime.config().active_sampler == "synthetic"
    assert agent.collectors.get(iid)[0].state == RUNNING


def test_reconfigure_terminal_instance_is_illegal(agent):
    iid = agent.collectors.instantiate("synthetic-sampler", collector_cfg())
    agent.collectors.destroy(iid)
    with pytest.raises(IllegalState):
        agent.collectors.reconfigure(iid, {"samplingPeriod": "500ms"})


def test_new_indicator_appears_within_two_ticks(agent):
    tap = agent.bus.subscribe("tap", ["*"], 100000)
    iid = agent.collectors.instantiate(
        "synthetic-sampler", collector_cfg(indicators=["sig.a"])
    )
    agent.clock.advance_ms(300)
    agent.collectors.reconfigure(iid, {"indicators": ["sig.a", "net.io_bytes"]})
    agent.clock.advance_ms(200)  # two ticks
    indicators = {o.indicator for o in tap.drain(100000)}
    assert "net.io_bytes" in indicators


def test_reconfigure_cannot_rebind_plugin(agent):
    iid = agent.collectors.instantiate("synthetic-sampler", collector_cfg())
    with pytest.raises(InvalidConfig):
        agent.collectors.reconfigure(iid, {"pluginId": "system-metrics"})


# --- state machine fuzz ----------------------------------------------------------------

def run_lifecycle_fuzz(agent, ops: int, seed: int) -> int:
    """Random lifecycle calls; returns the number of operations executed.

    Every state change lands in InstanceRecord.transitions, which
    InstanceRecord.transition() already guards; here we re-verify the whole
    history against the legal table after the fact.
    """
    rng = random.Random(seed)
    manager = agent.collectors
    executed = 0
    for _ in range(ops):
        executed += 1
        roll = rng.random()
        instances = manager.list_instances()
        live = [r["instanceId"] for r in instances if r["state"] == RUNNING]
        if roll < 0.35 and len(live) < 6:
            cfg = collector_cfg(
                samplingPeriod=rng.choice(["50ms", "100ms", "250ms"]),
                topics=rng.choice(["sys.a", "sys.b"]),
                activeAnalyzer=rng.choice(["passthrough", "aggregate", "adaptive-rate", "bogus"]),
            )
            try:
                manager.instantiate("synthetic-sampler", cfg)
            except InvalidConfig:
                pass
        elif roll < 0.55 and live:
            target = rng.choice(live)
            patch = rng.choice(
                [
                    {"samplingPeriod": "75ms"},
                    {"indicators": ["sig.value", "sig.extra"]},
                    {"activeAnalyzer": "aggregate"},
                    {"activeSampler": "bogus"},
                ]
            )
            try:
                manager.reconfigure(target, patch)
            except (InvalidConfig, IllegalState):
                pass
        elif roll < 0.75 and instances:
            target = rng.choice(instances)["instanceId"]
            try:
                manager.destroy(target)
            except (AlreadyTerminal, UnknownInstance):
                pass
        elif roll < 0.85:
            agent.clock.advance_ms(rng.choice([30, 60, 110]))
        else:
            try:
                manager.reconfigure(f"ghost-{rng.randrange(5)}", {"samplingPeriod": "99ms"})
            except (UnknownInstance, IllegalState, InvalidConfig):
                pass
    for record, _ in list(manager._instances.values()):
        state = "Created"
        for src, dst in record.transitions:
            assert src == state
            assert (src, dst) in LEGAL_TRANSITIONS
            state = dst
    return executed


def test_lifecycle_fuzz_short(agent):
    assert run_lifecycle_fuzz(agent, 300, seed=1234) == 300
