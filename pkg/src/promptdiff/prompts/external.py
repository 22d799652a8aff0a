"""HTTP client for an external embedding service.

Wire protocol: ``POST <url>`` with JSON body ``{"input": <text>}``; the
service answers ``{"embedding": [<d_raw numbers>]}``. Responses are cached
by the SHA-256 of the input text.
"""

from __future__ import annotations

import hashlib
import logging
import os
import threading
import time
from dataclasses import dataclass

import httpx
import numpy as np

from promptdiff.errors import ConfigError, EncoderUnavailableError, ProtocolError

log = logging.getLogger(__name__)

ENDPOINT_ENV = "PROMPTDIFF_EMBEDDING_URL"
RETRY_STATUS = {408, 429, 500, 502, 503, 504}


@dataclass(frozen=True)
class ClientConfig:
    url: str
    d_raw: int
    timeout: float = 10.0
    max_retries: int = 3
    backoff: float = 0.5

    @classmethod
    def from_env(cls, d_raw: int, **kwargs) -> "ClientConfig":
        url = os.environ.get(ENDPOINT_ENV)
        if not url:
            raise ConfigError(f"set {ENDPOINT_ENV} to the embedding service URL")
        return cls(url=url, d_raw=d_raw, **kwargs)


class ExternalTextEncoder:
    def __init__(self, config: ClientConfig, transport: httpx.BaseTransport | None = None,
                 sleep=time.sleep):
        if not config.url:
            raise ConfigError("embedding endpoint URL is empty")
        self.config = config
        self.d_raw = config.d_raw
        self._client = httpx.Client(timeout=config.timeout, transport=transport)
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()
        self._sleep = sleep
        self.requests_sent = 0

    def close(self) -> None:
        self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def encode(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("cannot embed empty text")
        key = hashlib.sha256(text.encode("utf-8")).hexdigest()
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit.copy()
        vec = self._fetch(text)
        with self._lock:
            self._cache.setdefault(key, vec)
        return vec.copy()

    def _fetch(self, text: str) -> np.ndarray:
        attempts = self.config.max_retries + 1
        last_error: Exception | None = None
        for attempt in range(attempts):
            if attempt:
                self._sleep(self.config.backoff * 2 ** (attempt - 1))
            with self._lock:
                self.requests_sent += 1
            try:
                resp = self._client.post(self.config.url, json={"input": text})
            except httpx.TransportError as exc:
                last_error = exc
                log.warning("embedding request failed (attempt %d/%d): %s", attempt + 1, attempts, exc)
                continue
            if resp.status_code in RETRY_STATUS:
                last_error = EncoderUnavailableError(f"service returned HTTP {resp.status_code}")
                log.warning("embedding service returned %d (attempt %d/%d)",
                            resp.status_code, attempt + 1, attempts)
                continue
            if resp.status_code != 200:
                raise EncoderUnavailableError(f"embedding service returned HTTP {resp.status_code}")
            return self._parse(resp)
        raise EncoderUnavailableError(
            f"embedding service unreachable after {attempts} attempts: {last_error}")

    def _parse(self, resp: httpx.Response) -> np.ndarray:
        try:
            payload = resp.json()
        except ValueError as exc:
            raise ProtocolError(f"response is not JSON: {exc}") from exc
        emb = payload.get("embedding") if isinstance(payload, dict) else None
        if not isinstance(emb, list) or not all(
                isinstance(x, (int, float)) and not isinstance(x, bool) for x in emb):
            raise ProtocolError("response lacks a numeric 'embedding' list")
        if len(emb) != self.d_raw:
            raise ProtocolError(f"expected embedding width {self.d_raw}, got {len(emb)}")
        vec = np.asarray(emb, dtype=np.float64)
        if not np.all(np.isfinite(vec)):
            raise ProtocolError("embedding contains non-finite values")
        return vec


def external_encode(config: ClientConfig, text: str) -> np.ndarray:
    """One-shot call; prefer a long-lived :class:`ExternalTextEncoder` for caching."""
    with ExternalTextEncoder(config) as enc:
        return enc.encode(text)
