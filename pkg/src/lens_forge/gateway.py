"""Chat-completion client for OpenAI-compatible servers, plus a deterministic mock."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping

import httpx
import jsonschema

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ChatPrompt:
    system: str
    user: str
    few_shot: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if not self.user:
            raise ValueError("user message must be non-empty")

    def to_messages(self) -> list[dict]:
        messages = []
        if self.system:
            messages.append({"role": "system", "content": self.system})
        for u, a in self.few_shot:
            messages.append({"role": "user", "content": u})
            messages.append({"role": "assistant", "content": a})
        messages.append({"role": "user", "content": self.user})
        return messages

    def digest(self) -> str:
        blob = json.dumps(self.to_messages(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class GenParams:
    temperature: float = 0.0
    top_p: float = 1.0
    top_k: int | None = None
    max_tokens: int = 1024
    seed: int | None = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.top_k is not None and self.top_k < 1:
            raise ValueError("top_k must be a positive integer")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")

    def with_seed(self, seed: int | None) -> "GenParams":
        return GenParams(self.temperature, self.top_p, self.top_k, self.max_tokens, seed)


BASELINE_PARAMS = GenParams(temperature=0.7, top_p=0.8, top_k=20)
JUDGE_PARAMS = GenParams(temperature=0.0)


@dataclass(frozen=True)
class BackendConfig:
    base_url: str
    model_name: str
    api_key_env: str | None = None
    timeout_s: float = 120.0
    max_retries: int = 3
    parallelism_limit: int = 4
    backoff_base_s: float = 1.0

    def __post_init__(self):
        if self.parallelism_limit < 1:
            raise ValueError("parallelism_limit must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


class GatewayError(RuntimeError):
    pass


class TransportError(GatewayError):
    def __init__(self, message: str, attempts: int):
        super().__init__(f"{message} (after {attempts} attempts)")
        self.attempts = attempts


class StructuredOutputError(GatewayError):
    def __init__(self, message: str, raw_payloads: list[str]):
        super().__init__(message)
        self.raw_payloads = raw_payloads


class AuditLog:
    """Append-only JSONL log of requests; ``redact`` drops all message text."""

    def __init__(self, path, redact: bool = True):
        self.path = path
        self.redact = redact
        self._lock = threading.Lock()

    def record(self, prompt: ChatPrompt, reply: str | None, latency_s: float, usage: dict | None):
        entry = {
            "prompt_hash": prompt.digest(),
            "latency_s": round(latency_s, 6),
            "usage": usage or {},
        }
        if not self.redact:
            entry["messages"] = prompt.to_messages()
            entry["reply"] = reply
        with self._lock, open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")


class _Limiter:
    """Semaphore that also tracks the peak number of concurrent holders."""

    def __init__(self, limit: int):
        self._sem = threading.BoundedSemaphore(limit)
        self._lock = threading.Lock()
        self.in_flight = 0
        self.peak = 0

    def __enter__(self):
        self._sem.acquire()
        with self._lock:
            self.in_flight += 1
            self.peak = max(self.peak, self.in_flight)
        return self

    def __exit__(self, *exc):
        with self._lock:
            self.in_flight -= 1
        self._sem.release()


class HttpBackend:
    """Talks to ``POST {base_url}/v1/chat/completions``."""

    def __init__(
        self,
        config: BackendConfig,
        audit: AuditLog | None = None,
        sleep: Callable[[float], None] = time.sleep,
        client: httpx.Client | None = None,
    ):
        self.config = config
        self.audit = audit
        self._sleep = sleep
        self._client = client or httpx.Client(timeout=config.timeout_s)
        self._limiter = _Limiter(config.parallelism_limit)

    @property
    def peak_in_flight(self) -> int:
        return self._limiter.peak

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.config.api_key_env:
            key = os.environ.get(self.config.api_key_env)
            if key:
                headers["Authorization"] = f"Bearer {key}"
        return headers

    def _payload(self, prompt: ChatPrompt, params: GenParams) -> dict:
        payload = {
            "model": self.config.model_name,
            "messages": prompt.to_messages(),
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_tokens,
        }
        if params.top_k is not None:
            payload["top_k"] = params.top_k
        if params.seed is not None:
            payload["seed"] = params.seed
        return payload

    def complete(self, prompt: ChatPrompt, params: GenParams) -> str:
        url = self.config.base_url.rstrip("/") + "/v1/chat/completions"
        payload = self._payload(prompt, params)
        attempts = 0
        last_error = "no attempt made"
        while True:
            attempts += 1
            t0 = time.perf_counter()
            try:
                with self._limiter:
                    resp = self._client.post(url, json=payload, headers=self._headers())
                if resp.status_code // 100 == 2:
                    body = resp.json()
                    text = body["choices"][0]["message"]["content"] or ""
                    if self.audit:
                        self.audit.record(prompt, text, time.perf_counter() - t0, body.get("usage"))
                    if not text.strip():
                        raise GatewayError("empty completion")
                    return text
                last_error = f"HTTP {resp.status_code}"
            except httpx.HTTPError as exc:
                last_error = f"{type(exc).__name__}: {exc}"
            except (KeyError, IndexError, ValueError) as exc:
                last_error = f"malformed response: {exc}"
            if attempts > self.config.max_retries:
                raise TransportError(last_error, attempts)
            delay = self.config.backoff_base_s * 2 ** (attempts - 1)
            logger.warning("request failed (%s); retry %d in %.1fs", last_error, attempts, delay)
            self._sleep(delay)


Responder = Callable[[ChatPrompt, GenParams, int], str]


class MockBackend:
    """Deterministic stand-in for a chat server.

    Replies come from, in order: the canned map (exact user text), the
    ``responder`` callable, or a digest of ``(seed, prompt, params.seed)``.
    Calls and peak concurrency are recorded for assertions.
    """

    def __init__(
        self,
        seed: int = 0,
        canned: Mapping[str, str] | None = None,
        responder: Responder | None = None,
        parallelism_limit: int = 4,
        latency_s: float = 0.0,
        audit: AuditLog | None = None,
    ):
        self.seed = seed
        self.canned = dict(canned or {})
        self.responder = responder
        self.latency_s = latency_s
        self.audit = audit
        self.calls: list[tuple[ChatPrompt, GenParams]] = []
        self._lock = threading.Lock()
        self._limiter = _Limiter(parallelism_limit)

    @property
    def call_count(self) -> int:
        return len(self.calls)

    @property
    def peak_in_flight(self) -> int:
        return self._limiter.peak

    def complete(self, prompt: ChatPrompt, params: GenParams) -> str:
        with self._limiter:
            with self._lock:
                self.calls.append((prompt, params))
            if self.latency_s:
                time.sleep(self.latency_s)
            if prompt.user in self.canned:
                reply = self.canned[prompt.user]
            elif self.responder is not None:
                reply = self.responder(prompt, params, self.seed)
            else:
                h = hashlib.sha256(
                    f"{self.seed}|{params.seed}|{prompt.digest()}".encode("utf-8")
                ).hexdigest()
                reply = f"mock reply {h[:16]}"
        if self.audit:
            self.audit.record(prompt, reply, self.latency_s, None)
        return reply


def mock_backend(seed: int = 0, canned: Mapping[str, str] | None = None, **kwargs) -> MockBackend:
    return MockBackend(seed=seed, canned=canned, **kwargs)


def complete(prompt: ChatPrompt, params: GenParams, backend) -> str:
    return backend.complete(prompt, params)


_SEVERITY = {"type": "integer", "minimum": 0, "maximum": 3}
_PRESENCE = {"type": "integer", "minimum": 0, "maximum": 1}

SCHEMAS: dict[str, dict] = {
    "judge_verdict": {
        "type": "object",
        "required": ["scores", "confidence"],
        "properties": {
            "scores": {
                "type": "array",
                "items": {"type": "integer", "minimum": 1, "maximum": 5},
                "minItems": 5,
                "maxItems": 5,
            },
            "confidence": {
                "type": "array",
                "items": {"type": "number", "minimum": 0, "maximum": 1},
                "minItems": 5,
                "maxItems": 5,
            },
            "critique": {"type": ["object", "string"]},
        },
    },
    "severity_pair": {
        "type": "object",
        "required": ["ref_severity", "pred_severity"],
        "properties": {"ref_severity": _SEVERITY, "pred_severity": _SEVERITY},
    },
}


def _symptom_schema() -> dict:
    from .prompts import SYMPTOM_CATEGORIES

    field_schema = {
        "type": "object",
        "required": ["ref_presence", "pred_presence", "ref_severity", "pred_severity"],
        "properties": {
            "ref_presence": _PRESENCE,
            "pred_presence": _PRESENCE,
            "ref_severity": _SEVERITY,
            "pred_severity": _SEVERITY,
        },
    }
    return {
        "type": "object",
        "required": list(SYMPTOM_CATEGORIES),
        "properties": {name: field_schema for name in SYMPTOM_CATEGORIES},
    }


SCHEMAS["symptom_evaluation"] = _symptom_schema()

CORRECTIVE_INSTRUCTION = (
    "Your previous reply could not be used: {problem}. "
    "Respond again with only a valid JSON object matching the requested format, "
    "with no text before or after it."
)


def extract_json_object(text: str) -> str | None:
    """Return the outermost balanced ``{...}`` span of ``text``, if any.

    Braces inside JSON string literals are ignored.
    """
    start = text.find("{")
    while start != -1:
        depth = 0
        in_str = False
        escape = False
        for i in range(start, len(text)):
            ch = text[i]
            if in_str:
                if escape:
                    escape = False
                elif ch == "\\":
                    escape = True
                elif ch == '"':
                    in_str = False
            elif ch == '"':
                in_str = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    return text[start : i + 1]
        start = text.find("{", start + 1)
    return None


def _parse_and_validate(text: str, schema: dict):
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        span = extract_json_object(text)
        if span is None:
            raise ValueError("no JSON object found in reply")
        try:
            value = json.loads(span)
        except json.JSONDecodeError as exc:
            raise ValueError(f"invalid JSON: {exc.msg}") from exc
    try:
        jsonschema.validate(value, schema)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ValueError(f"schema violation at {path}: {exc.message}") from exc
    return value


def complete_structured(prompt: ChatPrompt, schema_name: str, params: GenParams, backend):
    """Request a JSON reply validated against ``SCHEMAS[schema_name]``.

    One corrective re-prompt is issued on a parse or validation failure.
    """
    if schema_name not in SCHEMAS:
        raise ValueError(f"unknown schema {schema_name!r}")
    schema = SCHEMAS[schema_name]
    raws = []
    current = prompt
    for attempt in range(2):
        raw = backend.complete(current, params)
        raws.append(raw)
        try:
            return _parse_and_validate(raw, schema)
        except ValueError as exc:
            problem = str(exc)
            logger.info("structured reply rejected (%s): %s", schema_name, problem)
            current = ChatPrompt(
                current.system,
                prompt.user + "\n\n" + CORRECTIVE_INSTRUCTION.format(problem=problem),
                current.few_shot,
            )
    raise StructuredOutputError(
        f"{schema_name}: invalid reply after retry ({problem})", raws
    )
