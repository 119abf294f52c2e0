"""Chat-completions client with capped exponential backoff and an in-flight cap."""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import replace
from typing import Callable, Optional

import httpx

from .base import (
    AuthError,
    BackendError,
    CompletionRequest,
    CompletionResponse,
    MalformedResponseError,
    RateLimitError,
    TransientError,
    response_texts,
    to_body,
)

log = logging.getLogger(__name__)

API_KEY_ENV = "PROMPTLAB_API_KEY"
RETRYABLE_STATUS = frozenset({408, 429, 500, 502, 503, 504})


class HttpBackend:
    def __init__(
        self,
        base_url: str,
        api_key: Optional[str] = None,
        *,
        timeout: float = 60.0,
        max_retries: int = 5,
        backoff_initial: float = 1.0,
        backoff_factor: float = 2.0,
        backoff_cap: float = 60.0,
        max_in_flight: int = 8,
        max_n_per_request: int = 128,
        sleep: Callable[[float], None] = time.sleep,
        transport: Optional[httpx.BaseTransport] = None,
    ):
        self.url = base_url.rstrip("/") + "/v1/chat/completions"
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.max_retries = max_retries
        self.backoff_initial = backoff_initial
        self.backoff_factor = backoff_factor
        self.backoff_cap = backoff_cap
        self.max_n_per_request = max_n_per_request
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max_in_flight)
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def close(self):
        self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def backoff(self, attempt: int) -> float:
        return min(self.backoff_cap, self.backoff_initial * self.backoff_factor ** attempt)

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        texts, retries, latency = [], 0, 0.0
        usage_total = {}
        remaining = request.n_draws
        while remaining:
            chunk = min(remaining, self.max_n_per_request)
            got, meta = self._post(replace(request, n_draws=chunk))
            texts.extend(got)
            retries += meta["retries"]
            latency += meta["latency_s"]
            for k, v in meta["usage"].items():
                if isinstance(v, (int, float)):
                    usage_total[k] = usage_total.get(k, 0) + v
            remaining -= chunk
        return CompletionResponse(
            texts, {"backend": "http", "retries": retries, "latency_s": latency, "usage": usage_total}
        )

    def _post(self, request: CompletionRequest):
        body = to_body(request)
        last_status = None
        with self._slots:
            for attempt in range(self.max_retries + 1):
                if attempt:
                    delay = self.backoff(attempt - 1)
                    log.info("retry %d for %s after %.1fs (last status %s)", attempt, request.model_id, delay, last_status)
                    self._sleep(delay)
                started = time.monotonic()
                try:
                    resp = self._client.post(self.url, json=body)
                except httpx.TransportError as exc:
                    last_status = type(exc).__name__
                    continue
                if resp.status_code in (401, 403):
                    raise AuthError(f"authentication failed ({resp.status_code}) at {self.url}")
                if resp.status_code in RETRYABLE_STATUS:
                    last_status = resp.status_code
                    continue
                if resp.status_code >= 400:
                    raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                try:
                    payload = resp.json()
                except (json.JSONDecodeError, ValueError):
                    raise MalformedResponseError(f"response is not JSON: {resp.text[:200]!r}") from None
                texts, usage = response_texts(payload, request.n_draws)
                return texts, {"retries": attempt, "latency_s": time.monotonic() - started, "usage": usage}
        if last_status == 429:
            raise RateLimitError(f"rate limited after {self.max_retries} retries")
        raise TransientError(f"gave up after {self.max_retries} retries (last: {last_status})")
