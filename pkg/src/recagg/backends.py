"""Inference-backend abstraction: deterministic test backends plus a
production HTTP client for OpenAI-compatible completion endpoints.

All mock backends are bitwise deterministic under fixed seeds, which the
orchestrator's reproducibility contract depends on.
"""

import hashlib
import json
import re
import threading
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import requests

from .core import whitespace_count
from .errors import (
    BackendError,
    ConfigError,
    HttpStatusError,
    MalformedResponse,
    ReplayMiss,
    TimeoutError_,
    TransportError,
)


@dataclass(frozen=True)
class GenerationRequest:
    """One completion request."""

    prompt: str
    decode_budget: int
    temperature: float = 1.0
    top_p: float = 1.0
    stop: Tuple[str, ...] = ()
    seed: Optional[int] = None

    def __post_init__(self):
        if self.decode_budget < 1:
            raise ConfigError("decode_budget must be >= 1")


@dataclass(frozen=True)
class GenerationResult:
    """One completion result.

    minp_kept/minp_omitted are the optional replay hook: when the serving
    side applies min-p filtering it may expose the kept and omitted token-id
    sets for parity checks against the local filter.
    """

    text: str
    generated_tokens: int
    finish_reason: str  # "stop" | "budget" | "error"
    token_ids: Optional[Tuple[int, ...]] = None
    logprobs: Optional[Tuple[float, ...]] = None
    top_alternatives: Optional[Tuple[Tuple[Tuple[int, float], ...], ...]] = None
    minp_kept: Optional[Tuple[int, ...]] = None
    minp_omitted: Optional[Tuple[int, ...]] = None


class Backend:
    """Backend contract: generate() returns a result or raises a typed error."""

    def generate(self, request: GenerationRequest) -> GenerationResult:
        raise NotImplementedError


def digest_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary parts, via sha256."""
    material = "|".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(material).digest()[:8], "little") & (2**63 - 1)


class EchoBackend(Backend):
    """Deterministic pseudo-text backend for structural tests.

    The emitted tokens are a seeded hash of (seed hint, prompt); length is
    min(script_length, decode_budget). The text has no think structure, so
    the whole output is reasoning.
    """

    def __init__(self, script_length: int = 64):
        if script_length < 1:
            raise ConfigError("script_length must be >= 1")
        self.script_length = script_length

    def generate(self, request: GenerationRequest) -> GenerationResult:
        rng = np.random.default_rng(digest_seed("echo", request.seed, request.prompt))
        n = min(self.script_length, request.decode_budget)
        words = [f"w{int(rng.integers(0, 100000))}" for _ in range(n)]
        finish = "budget" if self.script_length >= request.decode_budget else "stop"
        return GenerationResult(
            text=" ".join(words),
            generated_tokens=n,
            finish_reason=finish,
        )


ANSWER_KEY_MARKER = "ANSWER-KEY:"
_ROUND_RE = re.compile(r"Aggregation round (\d+)\.")


class OracleBackend(Backend):
    """Synthetic-correctness backend with per-round accuracy uplift.

    Correctness of each candidate is Bernoulli(p_t) where t is the
    aggregation round parsed from the prompt (0 when absent) and p_t comes
    from the configured uplift schedule (clamped to its last entry). A
    correct draw answers with the problem's answer key embedded in the
    prompt; an incorrect draw gives a deterministic wrong answer. Output is
    think-structured, so aggregation carries compact answers forward.
    """

    def __init__(self, uplift: Sequence[float] = (0.3, 0.6), think_words: int = 24):
        if not uplift:
            raise ConfigError("uplift schedule must be non-empty")
        if any(not 0.0 <= p <= 1.0 for p in uplift):
            raise ConfigError("uplift probabilities must lie in [0, 1]")
        self.uplift = tuple(float(p) for p in uplift)
        self.think_words = think_words

    @staticmethod
    def _gold_from_prompt(prompt: str) -> Optional[str]:
        for line in prompt.splitlines():
            if line.startswith(ANSWER_KEY_MARKER):
                return line[len(ANSWER_KEY_MARKER):].strip()
        return None

    def generate(self, request: GenerationRequest) -> GenerationResult:
        match = _ROUND_RE.search(request.prompt)
        round_index = int(match.group(1)) if match else 0
        p = self.uplift[min(round_index, len(self.uplift) - 1)]
        rng = np.random.default_rng(digest_seed("oracle", request.seed, request.prompt))
        correct = bool(rng.random() < p)
        gold = self._gold_from_prompt(request.prompt)
        if gold is None:
            answer = "unknown"
        elif correct:
            answer = gold
        else:
            try:
                answer = str(int(gold) + 1 + int(rng.integers(0, 7)))
            except ValueError:
                answer = gold + "-wrong"
        think = " ".join(f"s{int(rng.integers(0, 100000))}" for _ in range(self.think_words))
        words = f"<think> {think} </think> {answer}".split()
        truncated = words[: request.decode_budget]
        finish = "stop" if len(truncated) == len(words) else "budget"
        return GenerationResult(
            text=" ".join(truncated),
            generated_tokens=len(truncated),
            finish_reason=finish,
        )


def request_key(request: GenerationRequest) -> Tuple[str, int, Optional[int]]:
    """Replay key: (sha256 of prompt, decode budget, seed hint)."""
    digest = hashlib.sha256(request.prompt.encode("utf-8")).hexdigest()
    return (digest, request.decode_budget, request.seed)


class ReplayBackend(Backend):
    """Replays recorded results; a missing record raises ReplayMiss."""

    def __init__(self, records: Dict[Tuple[str, int, Optional[int]], GenerationResult]):
        self.records = dict(records)

    @classmethod
    def from_jsonl(cls, path: str) -> "ReplayBackend":
        records = {}
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                key = (
                    obj["prompt_sha256"],
                    int(obj["decode_budget"]),
                    obj["seed"] if obj["seed"] is None else int(obj["seed"]),
                )
                res = obj["result"]
                records[key] = GenerationResult(
                    text=res["text"],
                    generated_tokens=int(res["generated_tokens"]),
                    finish_reason=res["finish_reason"],
                    token_ids=tuple(res["token_ids"]) if res.get("token_ids") else None,
                    logprobs=tuple(res["logprobs"]) if res.get("logprobs") else None,
                )
        return cls(records)

    def generate(self, request: GenerationRequest) -> GenerationResult:
        key = request_key(request)
        if key not in self.records:
            raise ReplayMiss(f"no recorded result for prompt sha {key[0][:12]}..., budget {key[1]}, seed {key[2]}")
        return self.records[key]


class RecordingBackend(Backend):
    """Wraps a backend and records request/result pairs for later replay."""

    def __init__(self, inner: Backend):
        self.inner = inner
        self.records: List[Tuple[GenerationRequest, GenerationResult]] = []
        self._lock = threading.Lock()

    def generate(self, request: GenerationRequest) -> GenerationResult:
        result = self.inner.generate(request)
        with self._lock:
            self.records.append((request, result))
        return result

    def dump_jsonl(self, path: str) -> None:
        rows = []
        for request, result in self.records:
            digest, budget, seed = request_key(request)
            rows.append(
                {
                    "prompt_sha256": digest,
                    "decode_budget": budget,
                    "seed": seed,
                    "result": {
                        "text": result.text,
                        "generated_tokens": result.generated_tokens,
                        "finish_reason": result.finish_reason,
                        "token_ids": list(result.token_ids) if result.token_ids else None,
                        "logprobs": list(result.logprobs) if result.logprobs else None,
                    },
                }
            )
        rows.sort(key=lambda r: (r["prompt_sha256"], r["decode_budget"], str(r["seed"])))
        with open(path, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")


class InstrumentedBackend(Backend):
    """Wrapper counting in-flight requests; used to check the concurrency cap."""

    def __init__(self, inner: Backend):
        self.inner = inner
        self.in_flight = 0
        self.peak_in_flight = 0
        self.total = 0
        self._lock = threading.Lock()

    def generate(self, request: GenerationRequest) -> GenerationResult:
        with self._lock:
            self.in_flight += 1
            self.total += 1
            self.peak_in_flight = max(self.peak_in_flight, self.in_flight)
        try:
            return self.inner.generate(request)
        finally:
            with self._lock:
                self.in_flight -= 1


@dataclass
class EndpointConfig:
    """HTTP endpoint settings for the production client."""

    url: str
    model: str
    api_token: Optional[str] = None
    timeout: float = 120.0
    max_retries: int = 3
    backoff: float = 0.5
    request_logprobs: bool = False


class HttpBackend(Backend):
    """OpenAI-compatible completions client with bounded retries.

    Retries transport errors, timeouts, 429 and 5xx responses with
    exponential backoff plus seeded jitter; other statuses and malformed
    bodies are permanent failures. The session and sleep function are
    injectable so tests run offline and instantly.
    """

    def __init__(
        self,
        endpoint: EndpointConfig,
        session: Optional[requests.Session] = None,
        sleep: Callable[[float], None] = time.sleep,
        jitter_seed: int = 0,
        counter: Callable[[str], int] = whitespace_count,
    ):
        self.endpoint = endpoint
        self.session = session or requests.Session()
        self.sleep = sleep
        self.counter = counter
        self._rng = np.random.default_rng(jitter_seed)
        self._rng_lock = threading.Lock()

    def _headers(self) -> Dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.endpoint.api_token:
            headers["Authorization"] = f"Bearer {self.endpoint.api_token}"
        return headers

    def _payload(self, request: GenerationRequest) -> Dict:
        payload = {
            "model": self.endpoint.model,
            "prompt": request.prompt,
            "max_tokens": request.decode_budget,
            "temperature": request.temperature,
            "top_p": request.top_p,
        }
        if request.stop:
            payload["stop"] = list(request.stop)
        if request.seed is not None:
            payload["seed"] = request.seed
        if self.endpoint.request_logprobs:
            payload["logprobs"] = 1
        return payload

    def _attempt(self, request: GenerationRequest) -> GenerationResult:
        try:
            response = self.session.post(
                self.endpoint.url,
                headers=self._headers(),
                json=self._payload(request),
                timeout=self.endpoint.timeout,
            )
        except requests.exceptions.Timeout as exc:
            raise TimeoutError_(f"request timed out after {self.endpoint.timeout}s") from exc
        except requests.exceptions.RequestException as exc:
            raise TransportError(str(exc)) from exc
        if response.status_code != 200:
            raise HttpStatusError(response.status_code, response.text)
        try:
            body = response.json()
            choice = body["choices"][0]
            text = choice["text"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"cannot parse completion body: {exc}") from exc
        token_ids = choice.get("token_ids")
        logprobs = None
        lp = choice.get("logprobs")
        if isinstance(lp, dict) and lp.get("token_logprobs"):
            logprobs = tuple(float(x) for x in lp["token_logprobs"] if x is not None)
        usage = body.get("usage") or {}
        if "completion_tokens" in usage:
            generated = int(usage["completion_tokens"])
        elif token_ids is not None:
            generated = len(token_ids)
        else:
            generated = self.counter(text)
        finish_raw = choice.get("finish_reason", "stop")
        finish = "budget" if finish_raw == "length" else ("stop" if finish_raw == "stop" else "error")
        return GenerationResult(
            text=text,
            generated_tokens=generated,
            finish_reason=finish,
            token_ids=tuple(token_ids) if token_ids else None,
            logprobs=logprobs,
            minp_kept=tuple(choice["minp_kept"]) if choice.get("minp_kept") else None,
            minp_omitted=tuple(choice["minp_omitted"]) if choice.get("minp_omitted") else None,
        )

    def generate(self, request: GenerationRequest) -> GenerationResult:
        last: Optional[BackendError] = None
        for attempt in range(self.endpoint.max_retries + 1):
            try:
                return self._attempt(request)
            except BackendError as exc:
                last = exc
                if not exc.retryable or attempt == self.endpoint.max_retries:
                    raise
                with self._rng_lock:
                    jitter = float(self._rng.random())
                self.sleep(self.endpoint.backoff * (2**attempt) + self.endpoint.backoff * jitter)
        raise last  # unreachable; loop either returns or raises
