"""Built-in publisher sinks: append-only NDJSON file, batched HTTP POST with
retry, and an in-memory capture sink for tests."""

from __future__ import annotations

import os
import threading
import time
from typing import Iterable

import requests

from ..errors import SinkUnavailable
from ..model import Observation, canonical_encode_batch
from .base import Sink, SinkResult

DEFAULT_HTTP_RETRIES = 2
DEFAULT_HTTP_BACKOFF_S = 0.25
DEFAULT_HTTP_TIMEOUT_S = 5.0

NDJSON_CONTENT_TYPE = "application/x-ndjson"


def file_sink_publish(batch: Iterable[Observation], path: str) -> SinkResult:
    """Append canonical NDJSON lines to ``path``."""
    batch = list(batch)
    data = canonical_encode_batch(batch)
    try:
        with open(path, "ab") as fh:
            fh.write(data)
            fh.flush()
    except OSError as exc:
        raise SinkUnavailable(f"file sink {path}: {exc}") from exc
    return SinkResult(delivered=len(batch))


def http_sink_publish(
    batch: Iterable[Observation],
    url: str,
    retries: int = DEFAULT_HTTP_RETRIES,
    backoff_s: float = DEFAULT_HTTP_BACKOFF_S,
    timeout_s: float = DEFAULT_HTTP_TIMEOUT_S,
    session: requests.Session | None = None,
) -> SinkResult:
    """POST the batch as one NDJSON body; retries on 5xx/connection errors."""
    batch = list(batch)
    body = canonical_encode_batch(batch)
    post = (session or requests).post
    attempts = retries + 1
    last_error = ""
    for attempt in range(attempts):
        if attempt:
            time.sleep(backoff_s)
        try:
            response = post(
                url,
                data=body,
                headers={"Content-Type": NDJSON_CONTENT_TYPE},
                timeout=timeout_s,
            )
        except requests.RequestException as exc:
            last_error = str(exc)
            continue
        if 200 <= response.status_code < 300:
            return SinkResult(delivered=len(batch), retries=attempt)
        if 500 <= response.status_code < 600:
            last_error = f"HTTP {response.status_code}"
            continue
        # 4xx: retrying cannot help
        raise SinkUnavailable(f"http sink {url}: HTTP {response.status_code}")
    raise SinkUnavailable(f"http sink {url}: {last_error} after {retries} retries")


class FileSink(Sink):
    """Append-only NDJSON file; fsynced when the owning instance stops."""

    def __init__(self, path: str):
        self._path = path
        self._fh = open(path, "ab")

    def publish(self, batch) -> SinkResult:
        batch = list(batch)
        try:
            self._fh.write(canonical_encode_batch(batch))
            self._fh.flush()
        except (OSError, ValueError) as exc:
            raise SinkUnavailable(f"file sink {self._path}: {exc}") from exc
        return SinkResult(delivered=len(batch))

    def close(self) -> None:
        try:
            self._fh.flush()
            os.fsync(self._fh.fileno())
        except OSError:
            pass
        self._fh.close()


class HttpSink(Sink):
    def __init__(
        self,
        url: str,
        retries: int = DEFAULT_HTTP_RETRIES,
        backoff_s: float = DEFAULT_HTTP_BACKOFF_S,
        timeout_s: float = DEFAULT_HTTP_TIMEOUT_S,
    ):
        self._url = url
        self._retries = retries
        self._backoff_s = backoff_s
        self._timeout_s = timeout_s
        self._session = requests.Session()

    def publish(self, batch) -> SinkResult:
        return http_sink_publish(
            batch,
            self._url,
            retries=self._retries,
            backoff_s=self._backoff_s,
            timeout_s=self._timeout_s,
            session=self._session,
        )

    def close(self) -> None:
        self._session.close()


class CaptureSink(Sink):
    """Keeps delivered observations in memory; the test-facing sink."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._records: list[Observation] = []

    def publish(self, batch) -> SinkResult:
        batch = list(batch)
        with self._lock:
            self._records.extend(batch)
        return SinkResult(delivered=len(batch))

    def records(self) -> list[Observation]:
        with self._lock:
            return list(self._records)
