"""Sampling client for OpenAI-compatible chat-completions endpoints.

Collects ``m`` independent single-completion samples per item at a fixed
temperature and persists every record in an append-only JSONL cache keyed by
a hash of (model, item, sampling parameters, prompt).  A rerun over an intact
cache issues zero requests and returns byte-identical records.

Transient failures (connection errors, timeouts, 408/429/5xx) are retried
with backoff; once retries are exhausted the item is marked failed and the
run continues.  Any other 4xx means the request itself is wrong (bad model
name, auth) and aborts the run with a diagnostic.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path

import requests

from .mcqa import McqaItem, SampleRecord, option_letter

log = logging.getLogger(__name__)

PROMPT_VERSION = "v1"
API_KEY_ENV = "FREQCP_API_KEY"

_RETRYABLE_STATUS = {408, 429, 500, 502, 503, 504}
_BACKOFF_BASE = 0.2
_BACKOFF_CAP = 2.0


class SamplingError(RuntimeError):
    """Base class for sampling failures."""


class TransportError(SamplingError):
    """Connection/timeout/5xx failure that survived all retries."""


class EndpointRejectionError(SamplingError):
    """The endpoint rejected the request (4xx): a configuration problem."""


@dataclass(frozen=True)
class SamplerConfig:
    endpoint_url: str
    model_name: str
    m: int = 20
    temperature: float = 1.0
    max_tokens: int = 1
    concurrency: int = 4
    timeout: float = 30.0
    retries: int = 2
    api_key: str | None = None  # falls back to $FREQCP_API_KEY

    def __post_init__(self) -> None:
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.concurrency < 1:
            raise ValueError("concurrency must be >= 1")
        if self.retries < 0:
            raise ValueError("retries must be >= 0")
        if not self.timeout > 0:
            raise ValueError("timeout must be > 0")

    def resolved_api_key(self) -> str | None:
        return self.api_key or os.environ.get(API_KEY_ENV)


def build_prompt(item: McqaItem) -> str:
    """Deterministic prompt: question, lettered options, single-letter instruction."""
    lines = ["Answer the following multiple-choice question.", "", item.question, ""]
    lines += [f"{option_letter(j)}) {text}" for j, text in enumerate(item.options)]
    lines += ["", "Respond with only the letter of the correct option."]
    return "\n".join(lines)


@dataclass(frozen=True)
class CacheKey:
    model_name: str
    item_id: str
    m: int
    temperature: float
    max_tokens: int
    prompt_hash: str

    def digest(self) -> str:
        payload = json.dumps(
            {
                "model_name": self.model_name,
                "item_id": self.item_id,
                "m": self.m,
                "temperature": self.temperature,
                "max_tokens": self.max_tokens,
                "prompt_hash": self.prompt_hash,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()


def cache_key_for(cfg: SamplerConfig, item: McqaItem) -> CacheKey:
    prompt_hash = hashlib.sha256(
        (PROMPT_VERSION + "\n" + build_prompt(item)).encode()
    ).hexdigest()
    return CacheKey(
        model_name=cfg.model_name,
        item_id=item.id,
        m=cfg.m,
        temperature=cfg.temperature,
        max_tokens=cfg.max_tokens,
        prompt_hash=prompt_hash,
    )


class SampleCache:
    """Append-only JSONL sample cache; one corrupt line loses only that entry."""

    def __init__(self, path) -> None:
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: dict[str, dict] = {}
        if self.path.exists():
            self._load()

    def _load(self) -> None:
        with open(self.path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                    key = obj["key"]
                    if not isinstance(obj["raw"], list):
                        raise ValueError("raw must be a list")
                    obj["item_id"]
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    log.warning("%s:%d: skipping corrupt cache line: %s", self.path, lineno, exc)
                    continue
                self._entries[key] = obj

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, digest: str) -> dict | None:
        return self._entries.get(digest)

    def put(self, digest: str, payload: dict) -> None:
        line = json.dumps(payload, sort_keys=True)
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a") as fh:
                fh.write(line + "\n")
            self._entries[digest] = payload


_thread_local = threading.local()


def _session() -> requests.Session:
    session = getattr(_thread_local, "session", None)
    if session is None:
        session = requests.Session()
        _thread_local.session = session
    return session


def _complete(cfg: SamplerConfig, prompt: str) -> str:
    """One chat completion; retries transient failures, raises on rejection."""
    body = {
        "model": cfg.model_name,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_tokens,
    }
    headers = {}
    api_key = cfg.resolved_api_key()
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"

    last_error: Exception | None = None
    for attempt in range(cfg.retries + 1):
        if attempt:
            time.sleep(min(_BACKOFF_BASE * 2 ** (attempt - 1), _BACKOFF_CAP))
        try:
            response = _session().post(
                cfg.endpoint_url, json=body, headers=headers, timeout=cfg.timeout
            )
        except requests.RequestException as exc:
            last_error = exc
            continue
        if response.status_code == 200:
            try:
                return response.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                last_error = TransportError(f"malformed completion response: {exc}")
                continue
        if response.status_code in _RETRYABLE_STATUS:
            last_error = TransportError(f"HTTP {response.status_code}")
            continue
        if 400 <= response.status_code < 500:
            raise EndpointRejectionError(
                f"endpoint rejected request (HTTP {response.status_code}): "
                f"{response.text[:200]}"
            )
        last_error = TransportError(f"HTTP {response.status_code}")
    raise TransportError(
        f"request failed after {cfg.retries + 1} attempt(s): {last_error}"
    )


def sample_item(
    cfg: SamplerConfig, item: McqaItem, cache: SampleCache | None = None
) -> SampleRecord:
    """Collect exactly ``cfg.m`` completions for one item.

    A cache hit returns the stored record without touching the network; a
    fresh record is persisted to the cache before it is returned.
    """
    digest = cache_key_for(cfg, item).digest()
    if cache is not None:
        hit = cache.get(digest)
        if hit is not None:
            return SampleRecord.from_raw(item.id, hit["raw"], item.num_options)

    prompt = build_prompt(item)
    raw = [_complete(cfg, prompt) for _ in range(cfg.m)]
    record = SampleRecord.from_raw(item.id, raw, item.num_options)
    if cache is not None:
        cache.put(
            digest,
            {
                "key": digest,
                "item_id": item.id,
                "model": cfg.model_name,
                "m": cfg.m,
                "temperature": cfg.temperature,
                "max_tokens": cfg.max_tokens,
                "raw": list(record.raw),
            },
        )
    return record


@dataclass
class SamplingRunResult:
    records: dict[str, SampleRecord]
    failed: dict[str, str]  # item id -> reason


def sample_dataset(
    cfg: SamplerConfig, items: list[McqaItem], cache: SampleCache | None = None
) -> SamplingRunResult:
    """Sample every item with up to ``cfg.concurrency`` in-flight requests.

    Items that exhaust their retries are reported in ``failed`` and the run
    continues; an :class:`EndpointRejectionError` aborts the whole run.
    """
    records: dict[str, SampleRecord] = {}
    failed: dict[str, str] = {}
    with ThreadPoolExecutor(max_workers=cfg.concurrency) as pool:
        futures = {pool.submit(sample_item, cfg, item, cache): item for item in items}
        try:
            for future in as_completed(futures):
                item = futures[future]
                try:
                    records[item.id] = future.result()
                except TransportError as exc:
                    log.error("item %s failed: %s", item.id, exc)
                    failed[item.id] = str(exc)
        except EndpointRejectionError:
            for future in futures:
                future.cancel()
            raise
    return SamplingRunResult(records=records, failed=failed)
