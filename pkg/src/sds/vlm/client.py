"""Chat-completion client for any OpenAI-compatible endpoint, plus transcript logging."""
import json
import os
import threading
import time
from pathlib import Path

import httpx

from ..errors import AuthError, ProtocolError, TransportError
from .messages import request_body, request_key, role_tag

DEFAULT_BASE_URL = "https://api.openai.com"
DEFAULT_MODEL = "gpt-4o"
TRANSIENT_STATUS = {408, 409, 425, 429, 500, 502, 503, 504}


class TranscriptLog:
    """Append-only directory of request/response records with unique sequential names."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self._lock = threading.Lock()
        self._count = None

    def _next(self):
        if self._count is None:
            self.directory.mkdir(parents=True, exist_ok=True)
            self._count = len(list(self.directory.glob("*.json")))
        self._count += 1
        return self._count

    def record(self, tag, messages, response=None, error=None, meta=None):
        with self._lock:
            seq = self._next()
            path = self.directory / f"{seq:04d}_{tag or 'chat'}.json"
            doc = {"tag": tag, "request": [msg.to_record() for msg in messages], "response": response,
                   "error": error, "meta": meta or {}}
            path.write_text(json.dumps(doc, indent=2, sort_keys=True))
            return path


class BaseClient:
    """Shared front end: concurrency cap, transcript persistence, default sampling."""

    mode = "base"

    def __init__(self, model=DEFAULT_MODEL, max_concurrency=4):
        self.model = model
        self._slots = threading.BoundedSemaphore(max_concurrency)
        self.calls = 0

    def chat(self, messages, temperature=1.0, seed=None, model=None, log=None, tag=None):
        """Send one request; return the first choice's text."""
        messages = list(messages)
        tag = tag or role_tag(messages) or "chat"
        with self._slots:
            self.calls += 1
            try:
                text = self._complete(messages, model or self.model, temperature, seed)
            except Exception as exc:
                if log is not None:
                    log.record(tag, messages, error=f"{type(exc).__name__}: {exc}",
                               meta={"mode": self.mode, "temperature": temperature, "seed": seed})
                raise
        if log is not None:
            log.record(tag, messages, response=text,
                       meta={"mode": self.mode, "temperature": temperature, "seed": seed,
                             "key": request_key(messages, None, temperature, seed)})
        return text

    def _complete(self, messages, model, temperature, seed):
        raise NotImplementedError


class ChatClient(BaseClient):
    """HTTP client: POST {base_url}/v1/chat/completions."""

    mode = "live"

    def __init__(self, base_url=DEFAULT_BASE_URL, api_key=None, model=DEFAULT_MODEL, *, timeout=120.0,
                 max_attempts=3, backoff=1.0, max_concurrency=4, transport=None, sleep=time.sleep):
        super().__init__(model, max_concurrency)
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.max_attempts = max_attempts
        self.backoff = backoff
        self._sleep = sleep
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._http = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    @classmethod
    def from_env(cls, **kwargs):
        return cls(os.environ.get("SDS_BASE_URL", DEFAULT_BASE_URL), os.environ.get("SDS_API_KEY"),
                   os.environ.get("SDS_MODEL", DEFAULT_MODEL), **kwargs)

    @property
    def url(self):
        return f"{self.base_url}/v1/chat/completions"

    def _complete(self, messages, model, temperature, seed):
        body = request_body(messages, model, temperature, seed)
        last = None
        for attempt in range(self.max_attempts):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._http.post(self.url, json=body)
            except httpx.TransportError as exc:
                last = f"{type(exc).__name__}: {exc}"
                continue
            if resp.status_code in (401, 403):
                raise AuthError(f"endpoint rejected credentials (HTTP {resp.status_code})")
            if resp.status_code in TRANSIENT_STATUS:
                last = f"HTTP {resp.status_code}"
                continue
            if resp.status_code >= 400:
                raise ProtocolError(f"endpoint returned HTTP {resp.status_code}: {resp.text[:200]}")
            return _first_choice(resp)
        raise TransportError(f"giving up after {self.max_attempts} attempts ({last})")


def _first_choice(resp):
    try:
        doc = resp.json()
        content = doc["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise ProtocolError(f"malformed completion body: {exc!r}") from None
    if isinstance(content, list):  # some servers echo content parts
        content = "".join(part.get("text", "") for part in content if isinstance(part, dict))
    if not isinstance(content, str):
        raise ProtocolError("completion content is not text")
    return content
