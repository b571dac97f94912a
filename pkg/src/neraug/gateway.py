"""Chat-completion backends: HTTP client, disk cache, deterministic mock.

All generation goes through one interface — ``backend.generate(prompt) ->
CompletionResponse`` — with three implementations:

* :class:`OpenAIChatClient` — a real client for any OpenAI-compatible
  ``/chat/completions`` endpoint, with bounded retries on transient failures
  and an optional content-addressed disk cache.
* :class:`MockBackend` — a pure function of (scenario, seed, prompt); used by
  ``--mock`` runs and tests.

Reproducibility comes from the cache: identical (model, temperature,
max_tokens, prompt) tuples hash to the same cache file, so a warm cache
replays a previous run without touching the network.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import requests

from .selection import SplitMix64

logger = logging.getLogger(__name__)

API_KEY_ENV = "LLM_API_KEY"


class BackendError(RuntimeError):
    """Base class for completion-backend failures."""

    def __init__(self, message: str, prompt: str | None = None):
        super().__init__(message)
        self.prompt = prompt


class PermanentBackendError(BackendError):
    """The request failed for good: retries exhausted or a non-retryable status."""

    def __init__(
        self,
        message: str,
        status: int | None = None,
        body_excerpt: str = "",
        attempts: int = 0,
        prompt: str | None = None,
    ):
        detail = message
        if status is not None:
            detail += f" (HTTP {status})"
        if body_excerpt:
            detail += f": {body_excerpt}"
        super().__init__(detail, prompt=prompt)
        self.status = status
        self.body_excerpt = body_excerpt
        self.attempts = attempts


class MalformedResponseError(BackendError):
    """The server answered 200 but the body is not a chat completion."""


@dataclass(frozen=True)
class LlmConfig:
    endpoint: str = "http://localhost:8080/v1"
    model: str = "gpt-3.5-turbo"
    temperature: float = 1.0
    max_tokens: int = 256
    max_retries: int = 3
    retry_backoff: float = 0.5
    request_timeout: float = 30.0
    cache_dir: str | None = None
    concurrency_limit: int = 4

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if self.max_retries < 0:
            raise ValueError(f"max_retries must be >= 0, got {self.max_retries}")
        if self.retry_backoff < 0:
            raise ValueError(f"retry_backoff must be >= 0, got {self.retry_backoff}")
        if self.concurrency_limit < 1:
            raise ValueError(f"concurrency_limit must be >= 1, got {self.concurrency_limit}")


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    model: str
    temperature: float
    max_tokens: int

    def __post_init__(self):
        if not self.prompt:
            raise ValueError("prompt must be non-empty")


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    finish_reason: str = "stop"
    usage: dict = field(default_factory=dict)
    from_cache: bool = False


def cache_key(request: CompletionRequest) -> str:
    """Stable hex key over (model, temperature, max_tokens, prompt)."""
    payload = json.dumps(
        {
            "model": request.model,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "prompt": request.prompt,
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class DiskCache:
    """One file per request under ``root``; atomic writes, safe for re-runs.

    The body is canonical JSON of request + response, so cache directories
    are diff-able and can be committed as test fixtures.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, request: CompletionRequest) -> Path:
        return self.root / f"{cache_key(request)}.json"

    def get(self, request: CompletionRequest) -> CompletionResponse | None:
        path = self._path(request)
        if not path.exists():
            return None
        try:
            body = json.loads(path.read_text(encoding="utf-8"))
            resp = body["response"]
            return CompletionResponse(
                text=resp["text"],
                finish_reason=resp.get("finish_reason", "stop"),
                usage=resp.get("usage", {}),
                from_cache=True,
            )
        except (json.JSONDecodeError, KeyError, TypeError) as err:
            logger.warning("ignoring unreadable cache entry %s: %s", path.name, err)
            return None

    def put(self, request: CompletionRequest, response: CompletionResponse) -> None:
        body = json.dumps(
            {
                "request": asdict(request),
                "response": {
                    "text": response.text,
                    "finish_reason": response.finish_reason,
                    "usage": dict(response.usage),
                },
            },
            sort_keys=True,
            ensure_ascii=False,
            indent=2,
        )
        path = self._path(request)
        tmp = path.with_suffix(f".tmp.{os.getpid()}.{threading.get_ident()}")
        tmp.write_text(body + "\n", encoding="utf-8")
        os.replace(tmp, path)


_RETRYABLE = {429, 500, 502, 503, 504}


class OpenAIChatClient:
    """Client for OpenAI-style ``POST <endpoint>/chat/completions``.

    Transient failures (HTTP 429/5xx, timeouts, connection errors) are
    retried up to ``max_retries`` times with non-decreasing backoff; anything
    else, or exhaustion, raises :class:`PermanentBackendError` carrying the
    last status and a body excerpt. At most ``concurrency_limit`` requests
    are in flight at once.
    """

    def __init__(
        self,
        config: LlmConfig,
        api_key: str | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.config = config
        self._api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self._sleep = sleep
        self._semaphore = threading.BoundedSemaphore(config.concurrency_limit)
        self._session = requests.Session()
        self.cache = DiskCache(config.cache_dir) if config.cache_dir else None

    # -- public API ---------------------------------------------------------

    def generate(self, prompt: str) -> CompletionResponse:
        return self.complete(self.request_for(prompt))

    def request_for(self, prompt: str) -> CompletionRequest:
        return CompletionRequest(
            prompt=prompt,
            model=self.config.model,
            temperature=self.config.temperature,
            max_tokens=self.config.max_tokens,
        )

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        if self.cache is not None:
            cached = self.cache.get(request)
            if cached is not None:
                return cached
        response = self._round_trip(request)
        if self.cache is not None:
            self.cache.put(request, response)
        return response

    # -- internals ----------------------------------------------------------

    def _round_trip(self, request: CompletionRequest) -> CompletionResponse:
        url = self.config.endpoint.rstrip("/") + "/chat/completions"
        body = {
            "model": request.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"

        attempts = 1 + self.config.max_retries
        last_status: int | None = None
        last_excerpt = ""
        for attempt in range(1, attempts + 1):
            try:
                with self._semaphore:
                    http = self._session.post(
                        url, json=body, headers=headers, timeout=self.config.request_timeout
                    )
            except requests.RequestException as err:
                last_status, last_excerpt = None, str(err)[:200]
                logger.warning("attempt %d/%d failed: %s", attempt, attempts, err)
            else:
                if http.status_code == 200:
                    return self._parse(http, request)
                last_status = http.status_code
                last_excerpt = http.text[:200]
                if http.status_code not in _RETRYABLE:
                    raise PermanentBackendError(
                        "backend rejected request",
                        status=last_status,
                        body_excerpt=last_excerpt,
                        attempts=attempt,
                        prompt=request.prompt,
                    )
                logger.warning(
                    "attempt %d/%d got HTTP %d", attempt, attempts, http.status_code
                )
            if attempt < attempts:
                # Linear ramp: backoff, 2*backoff, 3*backoff, ... (non-decreasing).
                self._sleep(self.config.retry_backoff * attempt)

        raise PermanentBackendError(
            f"giving up after {attempts} attempts",
            status=last_status,
            body_excerpt=last_excerpt,
            attempts=attempts,
            prompt=request.prompt,
        )

    def _parse(self, http: requests.Response, request: CompletionRequest) -> CompletionResponse:
        try:
            payload = http.json()
            choice = payload["choices"][0]
            text = choice["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as err:
            raise MalformedResponseError(
                f"unparseable completion body: {err} (body starts {http.text[:120]!r})",
                prompt=request.prompt,
            ) from err
        return CompletionResponse(
            text=text,
            finish_reason=choice.get("finish_reason", "stop"),
            usage=payload.get("usage", {}),
        )


# ---------------------------------------------------------------------------
# Deterministic mock


class MockScenarioError(BackendError):
    """No scenario rule matched and the scenario has no default response."""


@dataclass(frozen=True)
class MockRule:
    """One prompt-pattern -> response rule.

    ``kind`` selects the response builder:

    * ``template`` — ``template.format(**match.groupdict())``, literal text.
    * ``entity_list`` — a numbered list of synthetic entity names; uses the
      ``type`` and ``n`` capture groups when present.
    * ``instance_sentence`` — a filler sentence embedding the ``entity``
      capture group verbatim, subject to the scenario's misbehavior rates.
    * ``verify`` — the scenario's fixed verification answer.
    """

    pattern: str
    kind: str = "template"
    template: str = ""

    def __post_init__(self):
        if self.kind not in ("template", "entity_list", "instance_sentence", "verify"):
            raise ValueError(f"unknown mock rule kind: {self.kind!r}")
        re.compile(self.pattern)  # fail fast on bad regexes


_FILLER_WORDS = (
    "just", "got", "my", "update", "today", "really", "hoping", "things",
    "improve", "soon", "stay", "safe", "everyone", "feeling", "better",
    "after", "last", "week", "honestly", "grateful",
)


@dataclass(frozen=True)
class MockScenario:
    """Rule set plus misbehavior knobs for :class:`MockBackend`.

    ``miss_rate`` / ``foreign_rate`` apply to ``instance_sentence`` rules:
    with the given probabilities the generated sentence omits the requested
    entity, or additionally embeds a surface drawn from
    ``foreign_surfaces`` — exactly the failure modes the downstream filters
    must catch. ``default_response`` of None makes unmatched prompts an error.
    """

    rules: tuple[MockRule, ...] = ()
    default_response: str | None = None
    miss_rate: float = 0.0
    foreign_rate: float = 0.0
    foreign_surfaces: tuple[str, ...] = ()
    verify_response: str = "yes\nno"
    filler_words: tuple[str, ...] = _FILLER_WORDS

    def __post_init__(self):
        if not 0 <= self.miss_rate <= 1 or not 0 <= self.foreign_rate <= 1:
            raise ValueError("miss_rate and foreign_rate must be in [0, 1]")
        if self.foreign_rate > 0 and not self.foreign_surfaces:
            raise ValueError("foreign_rate > 0 requires foreign_surfaces")
        if not self.filler_words:
            raise ValueError("filler_words must be non-empty")


# Patterns mirror the prompt templates in entity_aug / instance_aug.
_ENTITY_PROMPT_RE = (
    r"There are some entities about .+? (?P<type>\S+) such as .*\. "
    r"Please generate (?P<n>\d+) new entities of the same type\."
)
_INSTANCE_PROMPT_RE = (
    r"Take the sentence as an example .*, please generate a new .+? "
    r"which only has the (?P<entity>.+?), without introducing any other named entity\."
)
_VERIFY_PROMPT_RE = r'Answer the following questions with "yes" or "no"'


def default_scenario(**overrides) -> MockScenario:
    """The scenario used by ``--mock``: answers all three built-in prompt shapes."""
    base = dict(
        rules=(
            MockRule(_ENTITY_PROMPT_RE, kind="entity_list"),
            MockRule(_VERIFY_PROMPT_RE, kind="verify"),
            MockRule(_INSTANCE_PROMPT_RE, kind="instance_sentence"),
        ),
        default_response=None,
    )
    base.update(overrides)
    return MockScenario(**base)


class MockBackend:
    """Deterministic completion backend: a pure function of (scenario, seed, prompt).

    Each call derives a fresh PRNG from a hash of the seed and the prompt, so
    responses are stable across runs and independent of call order.
    """

    def __init__(self, scenario: MockScenario | None = None, seed: int = 0):
        self.scenario = scenario or default_scenario()
        self.seed = seed
        self.calls = 0

    def generate(self, prompt: str) -> CompletionResponse:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        self.calls += 1
        text = mock_complete(prompt, self.scenario, self.seed)
        words = len(text.split())
        return CompletionResponse(
            text=text,
            usage={"prompt_tokens": len(prompt.split()), "completion_tokens": words},
        )


def mock_complete(prompt: str, scenario: MockScenario, seed: int) -> str:
    """Render the scenario's response for ``prompt``; pure and seed-stable."""
    rng = _prompt_rng(seed, prompt)
    for rule in scenario.rules:
        match = re.search(rule.pattern, prompt, re.DOTALL)
        if not match:
            continue
        if rule.kind == "template":
            return rule.template.format(**match.groupdict())
        if rule.kind == "verify":
            return scenario.verify_response
        if rule.kind == "entity_list":
            return _render_entity_list(match, rng)
        if rule.kind == "instance_sentence":
            return _render_instance_sentence(match, rng, scenario)
    if scenario.default_response is not None:
        return scenario.default_response
    raise MockScenarioError(f"no mock rule matches prompt: {prompt[:80]!r}", prompt=prompt)


def _prompt_rng(seed: int, prompt: str) -> SplitMix64:
    digest = hashlib.sha256(f"{seed}\x00{prompt}".encode("utf-8")).digest()
    return SplitMix64(int.from_bytes(digest[:8], "big"))


def _render_entity_list(match: re.Match, rng: SplitMix64) -> str:
    groups = match.groupdict()
    type_name = groups.get("type") or "entity"
    n = int(groups.get("n") or 5)
    lines = []
    for i in range(n):
        lines.append(f"{i + 1}. {type_name.lower()}{rng.randbelow(100000):05d}")
    return "\n".join(lines)


def _render_instance_sentence(
    match: re.Match, rng: SplitMix64, scenario: MockScenario
) -> str:
    entity = (match.groupdict().get("entity") or "").strip()
    words = [
        scenario.filler_words[rng.randbelow(len(scenario.filler_words))]
        for _ in range(4 + rng.randbelow(5))
    ]
    drop_entity = rng.randbelow(1_000_000) < scenario.miss_rate * 1_000_000
    inject_foreign = rng.randbelow(1_000_000) < scenario.foreign_rate * 1_000_000
    if not drop_entity and entity:
        words.insert(rng.randbelow(len(words) + 1), entity)
    if inject_foreign and scenario.foreign_surfaces:
        foreign = scenario.foreign_surfaces[rng.randbelow(len(scenario.foreign_surfaces))]
        words.insert(rng.randbelow(len(words) + 1), foreign)
    return " ".join(words)
