"""Language-model invocation boundary.

Two interchangeable backends sit behind one ``complete()`` contract: an HTTP
client for chat-completions endpoints and a scripted backend that replays
canned completions for tests and offline runs. Both maintain a thread-safe
cost ledger counting calls and tokens per purpose.

Token counts from the scripted backend are whitespace word counts, so fixture
authors can verify ledger totals by hand.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import requests

from .errors import (
    LmBackendError,
    MalformedReplyError,
    ScriptMissError,
    TransportError,
    ValidationError,
)

PURPOSES = ("action_gen", "query_gen", "rating", "consistency")

# The endpoint's temperature drives sampling diversity; rating is greedy.
DEFAULT_TEMPERATURES = {
    "action_gen": 0.8,
    "query_gen": 0.0,
    "rating": 0.0,
    "consistency": 0.8,
}


def count_tokens(text: str) -> int:
    return len(text.split())


def prompt_key(prompt: str) -> str:
    """Stable hash used by script entries keyed on an exact prompt."""
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class LmRequest:
    prompt: str
    n_samples: int = 1
    temperature: float = 0.0
    max_tokens: int = 1024
    stop_sequences: tuple[str, ...] = ()
    purpose_tag: str = "action_gen"

    def validate(self) -> None:
        if self.n_samples < 1:
            raise ValidationError("invalid request: n_samples must be >= 1")
        if self.temperature < 0:
            raise ValidationError("invalid request: temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValidationError("invalid request: max_tokens must be >= 1")
        if self.purpose_tag not in PURPOSES:
            raise ValidationError(f"invalid request: unknown purpose {self.purpose_tag!r}")


@dataclass(frozen=True)
class LmResponse:
    completions: tuple[str, ...]
    prompt_tokens: int
    completion_tokens: int


@dataclass(frozen=True)
class CostLedger:
    """Point-in-time cost snapshot; ``per_purpose`` partitions the totals."""

    total_calls: int = 0
    total_prompt_tokens: int = 0
    total_completion_tokens: int = 0
    per_purpose: dict[str, tuple[int, int]] = field(default_factory=dict)


@dataclass(frozen=True)
class CallRecord:
    """One logged interaction, for fixture-side cost verification."""

    purpose: str
    prompt: str
    n_samples: int
    completions: tuple[str, ...]


class LmBackend:
    """Base class providing ledger accounting around ``_complete``."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._calls = 0
        self._prompt_tokens = 0
        self._completion_tokens = 0
        self._per_purpose: dict[str, list[int]] = {}

    def complete(self, req: LmRequest) -> LmResponse:
        req.validate()
        resp = self._complete(req)
        if len(resp.completions) != req.n_samples:
            raise MalformedReplyError(
                f"backend returned {len(resp.completions)} completions for n={req.n_samples}"
            )
        with self._lock:
            self._calls += 1
            self._prompt_tokens += resp.prompt_tokens
            self._completion_tokens += resp.completion_tokens
            bucket = self._per_purpose.setdefault(req.purpose_tag, [0, 0])
            bucket[0] += 1
            bucket[1] += resp.completion_tokens
        return resp

    def snapshot_costs(self) -> CostLedger:
        with self._lock:
            return CostLedger(
                total_calls=self._calls,
                total_prompt_tokens=self._prompt_tokens,
                total_completion_tokens=self._completion_tokens,
                per_purpose={k: (v[0], v[1]) for k, v in self._per_purpose.items()},
            )

    def _complete(self, req: LmRequest) -> LmResponse:
        raise NotImplementedError


@dataclass(frozen=True)
class ScriptEntry:
    """One scripted reply. Entries are scanned in order; the first whose
    purpose and match constraints hold wins. An entry without constraints is
    a catch-all for its purpose."""

    purpose: str
    completions: tuple[str, ...]
    exact_hash: str | None = None
    substrings: tuple[str, ...] = ()

    def matches(self, req: LmRequest) -> bool:
        if self.purpose != req.purpose_tag:
            return False
        if self.exact_hash is not None and self.exact_hash != prompt_key(req.prompt):
            return False
        return all(s in req.prompt for s in self.substrings)


class ScriptedBackend(LmBackend):
    """Deterministic backend: a pure function of (script, prompt, n, temperature).

    With temperature 0 every sample equals the entry's first completion;
    otherwise samples cycle through the entry's completion list.
    """

    def __init__(self, entries: Iterable[ScriptEntry]):
        super().__init__()
        self.entries = tuple(entries)
        self._log: list[CallRecord] = []

    def _complete(self, req: LmRequest) -> LmResponse:
        entry = next((e for e in self.entries if e.matches(req)), None)
        if entry is None:
            head = req.prompt[:80].replace("\n", " ")
            raise ScriptMissError(
                f"no script entry for purpose={req.purpose_tag!r} prompt={head!r}..."
            )
        if not entry.completions:
            raise ScriptMissError("matched script entry has no completions")
        if req.temperature == 0:
            samples = (entry.completions[0],) * req.n_samples
        else:
            samples = tuple(
                entry.completions[i % len(entry.completions)]
                for i in range(req.n_samples)
            )
        resp = LmResponse(
            completions=samples,
            prompt_tokens=count_tokens(req.prompt),
            completion_tokens=sum(count_tokens(s) for s in samples),
        )
        with self._lock:
            self._log.append(
                CallRecord(req.purpose_tag, req.prompt, req.n_samples, samples)
            )
        return resp

    def call_log(self) -> tuple[CallRecord, ...]:
        with self._lock:
            return tuple(self._log)


def load_script(path: str) -> ScriptedBackend:
    """Read a script file: one JSON object per line with keys
    ``purpose``, optional ``match`` ({"exact_hash": h} or {"substring": s-or-list}),
    and ``completions``."""
    entries: list[ScriptEntry] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"script line {line_no}: {exc}") from None
            entries.append(script_entry_from_record(record, line_no))
    return ScriptedBackend(entries)


def script_entry_from_record(record: dict[str, Any], line_no: int = 0) -> ScriptEntry:
    purpose = record.get("purpose")
    if purpose not in PURPOSES:
        raise ValidationError(f"script line {line_no}: bad purpose {purpose!r}")
    completions = record.get("completions")
    if not isinstance(completions, list) or not completions:
        raise ValidationError(f"script line {line_no}: completions must be a nonempty list")
    match = record.get("match") or {}
    exact_hash = match.get("exact_hash")
    substring = match.get("substring")
    if substring is None:
        substrings: tuple[str, ...] = ()
    elif isinstance(substring, str):
        substrings = (substring,)
    else:
        substrings = tuple(str(s) for s in substring)
    return ScriptEntry(
        purpose=purpose,
        completions=tuple(str(c) for c in completions),
        exact_hash=exact_hash,
        substrings=substrings,
    )


class HttpBackend(LmBackend):
    """Client for a chat-completions endpoint.

    POSTs ``{base_url}/v1/chat/completions`` and reads
    ``choices[*].message.content`` plus usage token counts. Transport
    failures are retried with exponential backoff; other failures surface
    immediately. If the endpoint returns fewer choices than requested the
    client tops up with follow-up posts, still recorded as one logical call.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        timeout: float = 120.0,
        max_attempts: int = 3,
        backoff_base: float = 0.25,
        session: requests.Session | None = None,
    ):
        super().__init__()
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self._session = session or requests.Session()

    @classmethod
    def from_env(cls, environ: dict[str, str]) -> "HttpBackend":
        base_url = environ.get("RARE_LM_BASE_URL")
        model = environ.get("RARE_LM_MODEL")
        if not base_url or not model:
            raise ValidationError(
                "http backend requires RARE_LM_BASE_URL and RARE_LM_MODEL"
            )
        return cls(base_url, model, api_key=environ.get("RARE_LM_API_KEY"))

    def _complete(self, req: LmRequest) -> LmResponse:
        completions: list[str] = []
        prompt_tokens = 0
        completion_tokens = 0
        want = req.n_samples
        while len(completions) < req.n_samples:
            body = self._post_once(req, n=want)
            texts, ptok, ctok = _parse_chat_body(body)
            completions.extend(texts)
            prompt_tokens = max(prompt_tokens, ptok if ptok else count_tokens(req.prompt))
            completion_tokens += ctok if ctok else sum(count_tokens(t) for t in texts)
            want = req.n_samples - len(completions)
        return LmResponse(
            completions=tuple(completions[: req.n_samples]),
            prompt_tokens=prompt_tokens,
            completion_tokens=completion_tokens,
        )

    def _post_once(self, req: LmRequest, n: int) -> dict[str, Any]:
        payload: dict[str, Any] = {
            "model": self.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "n": n,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        if req.stop_sequences:
            payload["stop"] = list(req.stop_sequences)
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        url = f"{self.base_url}/v1/chat/completions"

        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(self.backoff_base * (2 ** (attempt - 1)))
            try:
                resp = self._session.post(
                    url, json=payload, headers=headers, timeout=self.timeout
                )
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_error = exc
                continue
            if resp.status_code in (429,) or resp.status_code >= 500:
                last_error = LmBackendError(f"HTTP {resp.status_code}")
                continue
            if resp.status_code != 200:
                raise MalformedReplyError(
                    f"HTTP {resp.status_code}: {resp.text[:200]}"
                )
            try:
                return resp.json()
            except ValueError:
                raise MalformedReplyError(
                    f"non-JSON reply: {resp.text[:200]}"
                ) from None
        raise TransportError(
            f"endpoint unreachable after {self.max_attempts} attempts: {last_error}"
        )


def _parse_chat_body(body: dict[str, Any]) -> tuple[list[str], int, int]:
    try:
        choices = body["choices"]
        texts = [str(choice["message"]["content"]) for choice in choices]
    except (KeyError, TypeError) as exc:
        raise MalformedReplyError(f"missing chat fields: {exc}") from None
    if not texts:
        raise MalformedReplyError("endpoint returned zero choices")
    usage = body.get("usage") or {}
    prompt_tokens = int(usage.get("prompt_tokens", 0) or 0)
    completion_tokens = int(usage.get("completion_tokens", 0) or 0)
    return texts, prompt_tokens, completion_tokens


class ScopedBackend(LmBackend):
    """Forwards to a shared backend while keeping its own ledger, so callers
    can attribute costs to one unit of work regardless of concurrency."""

    def __init__(self, inner: LmBackend):
        super().__init__()
        self.inner = inner

    def _complete(self, req: LmRequest) -> LmResponse:
        return self.inner.complete(req)


def request_for(purpose: str, prompt: str, n_samples: int = 1,
                stop_sequences: Sequence[str] = (), max_tokens: int = 1024) -> LmRequest:
    """Build a request with the purpose's default temperature."""
    return LmRequest(
        prompt=prompt,
        n_samples=n_samples,
        temperature=DEFAULT_TEMPERATURES[purpose],
        max_tokens=max_tokens,
        stop_sequences=tuple(stop_sequences),
        purpose_tag=purpose,
    )
