"""Behavior interfaces consumed by the collector runtime.

A sampler turns a tick into raw readings for the configured indicators; an
analyzer transforms those readings before they leave the collector and may
emit adaptation commands back to the controller.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Mapping

from ..model import AdaptationCommand, InstanceConfig


@dataclass(frozen=True)
class Reading:
    """One raw sampled value before routing metadata is stamped on."""

    indicator: str
    value: float
    unit: str = ""
    labels: Mapping[str, str] = field(default_factory=dict)
    timestamp_ns: int | None = None  # None: the runtime stamps tick time
    target: str | None = None


@dataclass(frozen=True)
class TickContext:
    """Immutable view of one tick: the config snapshot the whole tick sees."""

    config: InstanceConfig
    tick_index: int
    now_ns: int


class Sampler(ABC):
    @abstractmethod
    def sample(self, ctx: TickContext) -> list[Reading]:
        """Produce readings for exactly ``ctx.config.indicators``."""

    def close(self) -> None:
        pass


class Analyzer(ABC):
    @abstractmethod
    def process(
        self, readings: list[Reading], ctx: TickContext
    ) -> tuple[list[Reading], list[AdaptationCommand]]:
        """Transform one tick's readings; may emit adaptation commands."""

    def reset(self) -> None:
        """Drop any windowed state (called when the active behavior switches)."""


class Sink(ABC):
    @abstractmethod
    def publish(self, batch) -> "SinkResult":
        """Deliver a batch of observations; raises SinkUnavailable on failure."""

    def close(self) -> None:
        pass


@dataclass(frozen=True)
class SinkResult:
    delivered: int
    retries: int = 0
