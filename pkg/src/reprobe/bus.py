"""In-process fan-out bus between collectors and publishers.

Collector output is published here and every subscription whose topic filter
matches enqueues a reference to the observation. Queues are bounded and drop
the oldest entry when full, so a slow or stalled publisher can never block a
collector; drops stay observable through per-subscription counters.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import DuplicateSubscriber, InvalidCapacity, UnknownSubscription
from .model import Observation, filter_matches


@dataclass
class PublishReport:
    """Per-subscriber outcome of one publish call."""

    deliveries: dict[str, int] = field(default_factory=dict)
    drops: dict[str, int] = field(default_factory=dict)

    def delivered_to(self, subscriber_id: str) -> int:
        return self.deliveries.get(subscriber_id, 0)


@dataclass(frozen=True)
class SubscriptionStats:
    subscriber_id: str
    topic_filter: tuple[str, ...]
    capacity: int
    depth: int
    enqueued: int
    drained: int
    dropped: int

    def to_payload(self) -> dict:
        return {
            "subscriberId": self.subscriber_id,
            "topicFilter": list(self.topic_filter),
            "capacity": self.capacity,
            "depth": self.depth,
            "enqueued": self.enqueued,
            "drained": self.drained,
            "dropped": self.dropped,
        }


class Subscription:
    """A publisher's bounded, drop-oldest view onto the bus."""

    def __init__(self, subscriber_id: str, topic_filter: Sequence[str], capacity: int):
        self.subscriber_id = subscriber_id
        self.topic_filter = tuple(topic_filter)
        self.capacity = capacity
        self._lock = threading.Lock()
        self._queue: deque[Observation] = deque()
        self._enqueued = 0
        self._drained = 0
        self._dropped = 0
        self._closed = False

    def _offer(self, obs: Observation) -> tuple[int, int]:
        """Enqueue if the filter matches; returns (delivered, dropped)."""
        if not filter_matches(self.topic_filter, obs.topic):
            return 0, 0
        with self._lock:
            if self._closed:
                return 0, 0
            dropped = 0
            if len(self._queue) >= self.capacity:
                self._queue.popleft()
                self._dropped += 1
                dropped = 1
            self._queue.append(obs)
            self._enqueued += 1
            return 1, dropped

    def drain(self, max_items: int) -> list[Observation]:
        if max_items < 1:
            raise ValueError("max_items must be >= 1")
        with self._lock:
            if self._closed:
                raise UnknownSubscription(f"subscription {self.subscriber_id!r} is closed")
            out = []
            while self._queue and len(out) < max_items:
                out.append(self._queue.popleft())
            self._drained += len(out)
            return out

    def depth(self) -> int:
        with self._lock:
            return len(self._queue)

    def stats(self) -> SubscriptionStats:
        with self._lock:
            return SubscriptionStats(
                subscriber_id=self.subscriber_id,
                topic_filter=self.topic_filter,
                capacity=self.capacity,
                depth=len(self._queue),
                enqueued=self._enqueued,
                drained=self._drained,
                dropped=self._dropped,
            )

    def _close(self) -> None:
        with self._lock:
            self._closed = True


class DataBus:
    """Topic-filtered fan-out with bounded, drop-oldest subscriptions."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._subscriptions: dict[str, Subscription] = {}

    def subscribe(
        self, subscriber_id: str, topic_filter: Sequence[str], capacity: int
    ) -> Subscription:
        if capacity < 1:
            raise InvalidCapacity(f"capacity must be >= 1, got {capacity}")
        with self._lock:
            if subscriber_id in self._subscriptions:
                raise DuplicateSubscriber(f"subscriber {subscriber_id!r} already subscribed")
            sub = Subscription(subscriber_id, topic_filter, capacity)
            self._subscriptions[subscriber_id] = sub
            return sub

    def unsubscribe(self, subscriber_id: str) -> None:
        with self._lock:
            sub = self._subscriptions.pop(subscriber_id, None)
        if sub is None:
            raise UnknownSubscription(f"no subscription for {subscriber_id!r}")
        sub._close()

    def publish(self, batch: Iterable[Observation]) -> PublishReport:
        with self._lock:
            subs = list(self._subscriptions.values())
        report = PublishReport()
        for obs in batch:
            for sub in subs:
                delivered, dropped = sub._offer(obs)
                if delivered:
                    report.deliveries[sub.subscriber_id] = (
                        report.deliveries.get(sub.subscriber_id, 0) + delivered
                    )
                if dropped:
                    report.drops[sub.subscriber_id] = (
                        report.drops.get(sub.subscriber_id, 0) + dropped
                    )
        return report

    def drain(self, sub: Subscription, max_items: int) -> list[Observation]:
        return sub.drain(max_items)

    def subscription(self, subscriber_id: str) -> Subscription:
        with self._lock:
            sub = self._subscriptions.get(subscriber_id)
        if sub is None:
            raise UnknownSubscription(f"no subscription for {subscriber_id!r}")
        return sub

    def stats(self) -> dict[str, SubscriptionStats]:
        with self._lock:
            subs = list(self._subscriptions.values())
        return {sub.subscriber_id: sub.stats() for sub in subs}
