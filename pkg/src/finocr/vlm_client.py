"""Client for the external vision-language generation service, plus an in-process stub.

Wire protocol (envelope schema ``finocr.generation/v1``): one HTTP POST whose
JSON body is::

    {"schema": "finocr.generation/v1",
     "instruction": str,
     "text_lines": [str, ...],
     "images": [{"media_type": str, "sha256": hex, "data": base64}, ...],
     "decode": {"max_tokens": int, "temperature": float}}

serialized with sorted keys and no insignificant whitespace. The reply is JSON
with ``text`` (or an OpenAI-style ``choices[0].message.content``) and optional
``usage`` counts.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from typing import Mapping, Optional

import requests

from finocr.errors import AuthFailure, RetriesExhausted, ServiceError, Timeout

log = logging.getLogger(__name__)

SCHEMA = "finocr.generation/v1"
ENV_URL = "FINOCR_VLM_URL"
ENV_TOKEN = "FINOCR_VLM_TOKEN"
TRANSIENT_STATUS = frozenset({429, 502, 503, 504})


@dataclass(frozen=True)
class GenerationRequest:
    instruction: str
    text_lines: tuple = ()
    images: tuple = ()  # ((media_type, bytes), ...)
    max_tokens: int = 4096
    temperature: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "text_lines", tuple(self.text_lines))
        object.__setattr__(self, "images", tuple(tuple(im) for im in self.images))
        if not self.text_lines and not self.images:
            raise ValueError("a request needs text lines or images")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    def to_wire(self) -> bytes:
        envelope = {
            "schema": SCHEMA,
            "instruction": self.instruction,
            "text_lines": list(self.text_lines),
            "images": [
                {
                    "media_type": media_type,
                    "sha256": hashlib.sha256(data).hexdigest(),
                    "data": base64.b64encode(data).decode("ascii"),
                }
                for media_type, data in self.images
            ],
            "decode": {"max_tokens": self.max_tokens, "temperature": self.temperature},
        }
        return json.dumps(envelope, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


@dataclass(frozen=True)
class GenerationResponse:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency_ms: int = 0


@dataclass
class VlmConfig:
    url: Optional[str] = None
    token: Optional[str] = None
    timeout: float = 120.0
    max_retries: int = 3
    backoff: float = 0.5
    max_in_flight: int = 4

    @classmethod
    def load(cls, path: Optional[str] = None, env: Optional[Mapping] = None) -> "VlmConfig":
        """Read the ``vlm`` section of a JSON config file, then apply environment overrides."""
        env = os.environ if env is None else env
        values = {}
        if path:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
            values = dict(data.get("vlm", data))
        cfg = cls(**{k: v for k, v in values.items() if k in cls.__dataclass_fields__})
        if env.get(ENV_URL):
            cfg.url = env[ENV_URL]
        if env.get(ENV_TOKEN):
            cfg.token = env[ENV_TOKEN]
        return cfg


class HttpVlmClient:
    """Posts requests to the configured endpoint, retrying transient failures."""

    def __init__(self, config: VlmConfig, session: Optional[requests.Session] = None, sleep=time.sleep):
        if not config.url:
            raise ValueError(f"no endpoint configured (set {ENV_URL} or the config file)")
        self.config = config
        self._session = session or requests.Session()
        self._slots = threading.BoundedSemaphore(max(1, config.max_in_flight))
        self._sleep = sleep

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.config.token:
            headers["Authorization"] = f"Bearer {self.config.token}"
        return headers

    def generate(self, req: GenerationRequest) -> GenerationResponse:
        payload = req.to_wire()
        attempts = max(1, self.config.max_retries)
        last_error = None
        timeouts = 0
        with self._slots:
            for attempt in range(1, attempts + 1):
                started = time.monotonic()
                try:
                    resp = self._session.post(
                        self.config.url, data=payload, headers=self._headers(), timeout=self.config.timeout
                    )
                except requests.Timeout as exc:
                    last_error, timeouts = exc, timeouts + 1
                except requests.ConnectionError as exc:
                    last_error = exc
                else:
                    if resp.status_code in (401, 403):
                        raise AuthFailure(resp.status_code, resp.text[:200])
                    if resp.status_code in TRANSIENT_STATUS:
                        last_error = ServiceError(resp.status_code, resp.text[:200])
                    elif resp.status_code >= 400:
                        raise ServiceError(resp.status_code, resp.text[:200])
                    else:
                        latency = int((time.monotonic() - started) * 1000)
                        return _parse_reply(resp, latency)
                log.warning("generation attempt %d/%d failed: %s", attempt, attempts, last_error)
                if attempt < attempts:
                    self._sleep(self.config.backoff * 2 ** (attempt - 1))
        if timeouts == attempts:
            raise Timeout(attempts, last_error)
        raise RetriesExhausted(attempts, last_error)


def _parse_reply(resp, latency_ms: int) -> GenerationResponse:
    try:
        body = resp.json()
    except ValueError:
        raise ServiceError(resp.status_code, "reply is not JSON: " + resp.text[:200])
    if "text" in body:
        text = body["text"]
    else:
        try:
            text = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise ServiceError(resp.status_code, "reply carries no text: " + resp.text[:200])
    usage = body.get("usage") or {}
    return GenerationResponse(
        text, int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0)), latency_ms
    )


class StubClient:
    """Returns a canned completion and records every request it receives."""

    def __init__(self, text: str):
        self.text = text
        self.requests: list = []

    def generate(self, req: GenerationRequest) -> GenerationResponse:
        self.requests.append(req)
        return GenerationResponse(self.text, 0, 0, 0)


def stub_from_gold(assignment) -> StubClient:
    """Stub that answers with the given label -> level assignment as JSONL."""
    from finocr.dhr import LevelAssignment, encode_level_assignment

    levels = assignment.levels if isinstance(assignment, LevelAssignment) else dict(assignment)
    return StubClient(encode_level_assignment(levels))
