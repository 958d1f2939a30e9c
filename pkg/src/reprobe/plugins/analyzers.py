"""Built-in data analyzers.

``passthrough`` forwards readings untouched, ``aggregate`` folds every N
samples per indicator into one record, and ``adaptive-rate`` watches recent
values and asks the controller to stretch the sampling period while an
indicator is stable and shrink it when it turns noisy.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass
from typing import Mapping

from ..errors import NonFiniteValue, WindowTooShort
from ..model import AdaptationCommand, Scalar
from .base import Analyzer, Reading, TickContext

ADAPTIVE_ANALYZER_ID = "adaptive-rate"


def stability_score(window: list[float], epsilon: float = 1e-9) -> float:
    """Coefficient-of-variation-style score: population std over mean
    magnitude, with ``epsilon`` flooring near-zero means. 0.0 means flat."""
    if len(window) < 2:
        raise WindowTooShort(f"need >= 2 values, got {len(window)}")
    for v in window:
        if not math.isfinite(v):
            raise NonFiniteValue(f"non-finite value in window: {v!r}")
    sigma = statistics.pstdev(window)
    if sigma == 0.0:
        return 0.0
    return sigma / max(abs(statistics.fmean(window)), epsilon)


@dataclass(frozen=True)
class AdaptiveRateParams:
    """Tuning for the adaptive-rate analyzer."""

    window_size: int = 8
    low_threshold: float = 0.05
    high_threshold: float = 0.25
    factor: float = 2.0
    min_period_ms: int = 50
    max_period_ms: int = 1600
    epsilon: float = 1e-9

    def __post_init__(self) -> None:
        if self.window_size < 2:
            raise ValueError("windowSize must be >= 2")
        if self.low_threshold <= 0:
            raise ValueError("lowThreshold must be > 0")
        if self.high_threshold <= self.low_threshold:
            raise ValueError("highThreshold must exceed lowThreshold")
        if self.factor <= 1:
            raise ValueError("factor must be > 1")
        if self.min_period_ms >= self.max_period_ms:
            raise ValueError("minPeriod must be below maxPeriod")

    @classmethod
    def from_params(cls, params: Mapping[str, Scalar]) -> "AdaptiveRateParams":
        return cls(
            window_size=int(params.get("windowSize", 8)),
            low_threshold=float(params.get("lowThreshold", 0.05)),
            high_threshold=float(params.get("highThreshold", 0.25)),
            factor=float(params.get("factor", 2.0)),
            min_period_ms=int(params.get("minPeriod", 50)),
            max_period_ms=int(params.get("maxPeriod", 1600)),
            epsilon=float(params.get("epsilon", 1e-9)),
        )

    def clamp(self, period_ms: float) -> int:
        return int(min(self.max_period_ms, max(self.min_period_ms, round(period_ms))))


def adaptive_decision(
    windows: Mapping[str, list[float]],
    params: AdaptiveRateParams,
    current_period_ms: int,
) -> AdaptationCommand | None:
    """Decide on a period change from complete per-indicator windows.

    The maximum score across indicators wins: a collector has one period, so
    its most unstable indicator governs. Inside the dead band no command is
    issued; outside it one is issued even if clamping leaves the period
    unchanged (the decision is still auditable).
    """
    score = max(stability_score(w, params.epsilon) for w in windows.values())
    if score < params.low_threshold:
        new_period = params.clamp(current_period_ms * params.factor)
        direction = "stable, stretching period"
    elif score > params.high_threshold:
        new_period = params.clamp(current_period_ms / params.factor)
        direction = "unstable, shrinking period"
    else:
        return None
    reason = (
        f"{direction}: max stability score {score:.6g} vs "
        f"[{params.low_threshold:g}, {params.high_threshold:g}]"
    )
    return AdaptationCommand.set_period(new_period, issued_by=ADAPTIVE_ANALYZER_ID, reason=reason)


class PassthroughAnalyzer(Analyzer):
    def process(self, readings, ctx):
        return readings, []


class AggregateAnalyzer(Analyzer):
    """Emits one record per ``windowSize`` inputs per indicator: the window
    mean, with agg.min/agg.max/agg.count labels. Partial windows are dropped
    on reset."""

    def __init__(self) -> None:
        self._windows: dict[str, list[Reading]] = {}

    def process(self, readings, ctx):
        window_size = max(1, int(ctx.config.params.get("windowSize", 8)))
        out: list[Reading] = []
        for reading in readings:
            window = self._windows.setdefault(reading.indicator, [])
            window.append(reading)
            if len(window) < window_size:
                continue
            values = [r.value for r in window]
            labels = dict(window[-1].labels)
            labels.update(
                {
                    "agg.min": repr(min(values)),
                    "agg.max": repr(max(values)),
                    "agg.count": str(len(values)),
                }
            )
            out.append(
                Reading(
                    indicator=reading.indicator,
                    value=sum(values) / len(values),
                    unit=reading.unit,
                    labels=labels,
                )
            )
            window.clear()
        return out, []

    def reset(self) -> None:
        self._windows.clear()


class AdaptiveRateAnalyzer(Analyzer):
    """Passthrough plus the stability-driven sampling-period loop."""

    def __init__(self) -> None:
        self._windows: dict[str, list[float]] = {}

    def process(self, readings, ctx):
        params = AdaptiveRateParams.from_params(ctx.config.params)
        for reading in readings:
            self._windows.setdefault(reading.indicator, []).append(reading.value)
        # Indicators dropped from the config must not stall or skew decisions.
        for indicator in list(self._windows):
            if indicator not in ctx.config.indicators:
                del self._windows[indicator]
        commands: list[AdaptationCommand] = []
        if self._windows and all(
            len(w) >= params.window_size for w in self._windows.values()
        ):
            period = ctx.config.sampling_period_ms or params.min_period_ms
            command = adaptive_decision(self._windows, params, period)
            if command is not None:
                commands.append(command)
            self._windows.clear()
        return readings, commands

    def reset(self) -> None:
        self._windows.clear()
