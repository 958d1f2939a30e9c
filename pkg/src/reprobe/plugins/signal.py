"""Deterministic synthetic signal generator.

Stands in for a monitored resource in tests and scenarios: the value at any
tick is a pure function of (spec, seed, tick index), so equal seeds replay
bit-identical sequences across runs and processes.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from typing import Any

WAVEFORMS = ("constant", "sine", "randomWalk")

# Fixed sine cycle length in ticks; the spec of a segment has no frequency
# knob, one cycle per 16 ticks keeps short windows interesting.
SINE_CYCLE_TICKS = 16


@dataclass(frozen=True)
class SignalSegment:
    duration_ticks: int
    waveform: str
    base: float
    amplitude: float = 0.0
    noise_sigma: float = 0.0

    def __post_init__(self) -> None:
        if self.waveform not in WAVEFORMS:
            raise ValueError(f"unknown waveform: {self.waveform!r}")
        if self.duration_ticks < 1:
            raise ValueError("segment duration must be >= 1 tick")
        if self.noise_sigma < 0:
            raise ValueError("noiseSigma must be >= 0")


@dataclass(frozen=True)
class SyntheticSignalSpec:
    segments: tuple[SignalSegment, ...]
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.segments:
            raise ValueError("signal needs at least one segment")

    @classmethod
    def from_payload(cls, payload: dict[str, Any]) -> "SyntheticSignalSpec":
        segments = tuple(
            SignalSegment(
                duration_ticks=int(seg["durationTicks"]),
                waveform=str(seg["waveform"]),
                base=float(seg["base"]),
                amplitude=float(seg.get("amplitude", 0.0)),
                noise_sigma=float(seg.get("noiseSigma", 0.0)),
            )
            for seg in payload["segments"]
        )
        return cls(segments=segments, seed=int(payload.get("seed", 0)))

    @classmethod
    def from_json(cls, text: str) -> "SyntheticSignalSpec":
        return cls.from_payload(json.loads(text))

    def to_payload(self) -> dict[str, Any]:
        return {
            "segments": [
                {
                    "durationTicks": seg.duration_ticks,
                    "waveform": seg.waveform,
                    "base": seg.base,
                    "amplitude": seg.amplitude,
                    "noiseSigma": seg.noise_sigma,
                }
                for seg in self.segments
            ],
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_payload(), separators=(",", ":"))


def _tick_rng(seed: int, segment_index: int, local_tick: int) -> random.Random:
    # String seeding hashes through SHA-512, stable across processes.
    return random.Random(f"{seed}:{segment_index}:{local_tick}")


class SyntheticSignal:
    """Evaluates a spec; random-walk partial sums are cached per segment."""

    def __init__(self, spec: SyntheticSignalSpec):
        self.spec = spec
        self._walk_cache: dict[int, list[float]] = {}

    def _locate(self, tick: int) -> tuple[int, int]:
        """Map a global tick to (segment index, local tick). Ticks past the
        last segment stay in it with a still-increasing local tick."""
        if tick < 0:
            raise ValueError("tick must be >= 0")
        offset = tick
        for i, seg in enumerate(self.spec.segments[:-1]):
            if offset < seg.duration_ticks:
                return i, offset
            offset -= seg.duration_ticks
        return len(self.spec.segments) - 1, offset

    def _walk_value(self, segment_index: int, local_tick: int) -> float:
        sums = self._walk_cache.setdefault(segment_index, [])
        seg = self.spec.segments[segment_index]
        while len(sums) <= local_tick:
            i = len(sums)
            step = _tick_rng(self.spec.seed, segment_index, i).gauss(0.0, seg.noise_sigma)
            sums.append((sums[-1] if sums else 0.0) + step)
        return sums[local_tick]

    def value_at(self, tick: int) -> float:
        seg_index, local = self._locate(tick)
        seg = self.spec.segments[seg_index]
        if seg.waveform == "constant":
            value = seg.base
        elif seg.waveform == "sine":
            value = seg.base + seg.amplitude * math.sin(
                2.0 * math.pi * local / SINE_CYCLE_TICKS
            )
        else:  # randomWalk: base plus cumulative gaussian steps
            return seg.base + self._walk_value(seg_index, local)
        if seg.noise_sigma > 0:
            value += _tick_rng(self.spec.seed, seg_index, local).gauss(0.0, seg.noise_sigma)
        return value
