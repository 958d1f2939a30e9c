"""Built-in metric samplers: the deterministic synthetic signal and
best-effort host readings via psutil."""

from __future__ import annotations

import json
import math

import psutil

from ..errors import SamplerFailure, UnsupportedIndicator
from ..model import InstanceConfig
from .base import Reading, Sampler, TickContext
from .signal import SyntheticSignal, SyntheticSignalSpec

DEFAULT_SIGNAL_JSON = (
    '{"segments":[{"durationTicks":1,"waveform":"constant","base":1.0}],"seed":0}'
)

SYSTEM_INDICATORS = (
    "cpu.idle_pct",
    "cpu.iowait_pct",
    "cpu.user_pct",
    "cpu.system_pct",
    "cpu.total_pct",
    "mem.used_bytes",
    "net.io_rx_packets",
    "net.io_dropped_packets",
    "net.io_bytes",
)

_UNITS = {
    "cpu.idle_pct": "%",
    "cpu.iowait_pct": "%",
    "cpu.user_pct": "%",
    "cpu.system_pct": "%",
    "cpu.total_pct": "%",
    "mem.used_bytes": "bytes",
    "net.io_rx_packets": "packets",
    "net.io_dropped_packets": "packets",
    "net.io_bytes": "bytes",
}


class SyntheticSampler(Sampler):
    """Emits the synthetic signal value for every configured indicator.

    With the ``fingerprint`` param on, each reading carries the period and
    indicator set of the config snapshot it was sampled under; the
    reconfiguration-atomicity checks key off those labels.
    """

    def __init__(self, cfg: InstanceConfig):
        raw = cfg.params.get("signal", DEFAULT_SIGNAL_JSON)
        try:
            spec = SyntheticSignalSpec.from_json(str(raw))
        except (ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
            raise ValueError(f"bad signal spec: {exc}") from exc
        self._signal = SyntheticSignal(spec)

    def sample(self, ctx: TickContext) -> list[Reading]:
        value = self._signal.value_at(ctx.tick_index)
        labels = {}
        if ctx.config.params.get("fingerprint", False):
            labels = {
                "cfg.period_ms": str(ctx.config.sampling_period_ms),
                "cfg.indicators": ",".join(ctx.config.indicators),
            }
        return [
            Reading(indicator=name, value=value, labels=labels)
            for name in ctx.config.indicators
        ]


def system_sample(indicators) -> list[Reading]:
    """Read the requested host indicators; raises UnsupportedIndicator for
    names outside the documented set."""
    indicators = sorted(set(indicators))
    unknown = [name for name in indicators if name not in SYSTEM_INDICATORS]
    if unknown:
        raise UnsupportedIndicator(f"unsupported indicators: {unknown}")
    values: dict[str, float] = {}
    wanted = set(indicators)
    if wanted & {n for n in SYSTEM_INDICATORS if n.startswith("cpu.")}:
        cpu = psutil.cpu_times_percent(interval=None)
        idle = float(cpu.idle)
        values["cpu.idle_pct"] = idle
        values["cpu.iowait_pct"] = float(getattr(cpu, "iowait", 0.0))
        values["cpu.user_pct"] = float(cpu.user)
        values["cpu.system_pct"] = float(cpu.system)
        values["cpu.total_pct"] = max(0.0, min(100.0, 100.0 - idle))
    if "mem.used_bytes" in wanted:
        values["mem.used_bytes"] = float(psutil.virtual_memory().used)
    if wanted & {"net.io_rx_packets", "net.io_dropped_packets", "net.io_bytes"}:
        net = psutil.net_io_counters()
        values["net.io_rx_packets"] = float(net.packets_recv)
        values["net.io_dropped_packets"] = float(net.dropin + net.dropout)
        values["net.io_bytes"] = float(net.bytes_sent + net.bytes_recv)
    out = []
    for name in indicators:
        value = values[name]
        if not math.isfinite(value):
            raise SamplerFailure(f"non-finite host reading for {name}")
        out.append(Reading(indicator=name, value=value, unit=_UNITS[name]))
    return out


class SystemSampler(Sampler):
    def __init__(self, cfg: InstanceConfig):
        unknown = [n for n in cfg.indicators if n not in SYSTEM_INDICATORS]
        if unknown:
            raise ValueError(f"unsupported indicators: {unknown}")

    def sample(self, ctx: TickContext) -> list[Reading]:
        return system_sample(ctx.config.indicators)
