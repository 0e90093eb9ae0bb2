"""Answer providers: keyword oracle, fixture replay and an OpenAI-compatible HTTP client.

Every backend implements ``complete(prompt, max_decode_tokens, run) -> str``.
``prompt`` is a :class:`~dichotomic.prompt.Prompt`; remote backends only use
its ``rendered`` text, the oracle also reads its parts.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Protocol, Sequence

import httpx
import yaml

from .domain import Document, Taxonomy, ValidationError
from .prompt import AnswerLexicon, Prompt, Strategy, render_json_answer

log = logging.getLogger(__name__)


class BackendError(RuntimeError):
    """Unrecoverable backend failure; aborts a run."""


class ReplayMiss(BackendError):
    def __init__(self, prompt_hash: str, run: int):
        super().__init__(f"no recorded completion for prompt {prompt_hash} (run {run})")
        self.prompt_hash = prompt_hash
        self.run = run


class HttpError(BackendError):
    def __init__(self, status: int, body: str):
        super().__init__(f"HTTP {status}: {body[:200]}")
        self.status = status
        self.body = body[:200]


class Timeout(BackendError):
    pass


class Backend(Protocol):
    kind: str

    def complete(self, prompt: Prompt, max_decode_tokens: int, run: int = 0) -> str: ...


def _check_decode(max_decode_tokens: int) -> None:
    if max_decode_tokens < 1:
        raise ValueError("max_decode_tokens must be >= 1")


# -- oracle -------------------------------------------------------------------


def load_rules(path) -> dict[str, list[str]]:
    """Keyword rule table: YAML/JSON mapping of label name to keyword list."""
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: rule table must map label names to keyword lists")
    rules = {}
    for label, words in data.items():
        if isinstance(words, str):
            words = [words]
        if not isinstance(words, list) or not all(isinstance(w, str) and w for w in words):
            raise ValidationError(f"{path}: keywords for {label!r} must be a list of strings")
        rules[str(label)] = list(words)
    return rules


def judge(text: str, keywords: Sequence[str]) -> bool:
    lowered = text.lower()
    return any(w.lower() in lowered for w in keywords)


def gold_labels(docs: Sequence[Document], taxonomy: Taxonomy, rules: Mapping[str, Sequence[str]]) -> dict:
    """Ground truth implied by a rule table: ``{doc id: LabelVector}``."""
    return {
        d.id: tuple(judge(d.text, rules.get(name, ())) for name in taxonomy.names) for d in docs
    }


def _unit_interval(*parts) -> float:
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") / 2.0**64


@dataclass
class OracleBackend:
    """Deterministic keyword judge.

    A label is true iff one of its keywords occurs (case-insensitively) in the
    document text. With ``fault_json = p`` each JSON answer is truncated with
    probability ``p``; the draw is a hash of (prompt, run, seed) so it does not
    depend on call order.
    """

    taxonomy: Taxonomy
    rules: Mapping[str, Sequence[str]]
    lexicon: AnswerLexicon = field(default_factory=AnswerLexicon)
    fault_json: float = 0.0
    seed: int = 0
    kind: str = "oracle"

    def __post_init__(self):
        if not 0.0 <= self.fault_json <= 1.0:
            raise ValueError("fault_json must lie in [0, 1]")
        unknown = set(self.rules) - set(self.taxonomy.names)
        if unknown:
            raise ValidationError(f"rule table names unknown labels: {sorted(unknown)}")

    def truth(self, text: str, label: str) -> bool:
        return judge(text, self.rules.get(label, ()))

    def complete(self, prompt: Prompt, max_decode_tokens: int, run: int = 0) -> str:
        _check_decode(max_decode_tokens)
        text = prompt.part("text")
        if text is None:
            raise BackendError("oracle needs a prompt with a text part")
        if prompt.strategy is Strategy.DICHOTOMIC:
            yes = self.truth(text, prompt.target)
            return self.lexicon.canonical_yes if yes else self.lexicon.canonical_no
        answer = render_json_answer(self.taxonomy, [self.truth(text, n) for n in self.taxonomy.names])
        if self.fault_json > 0 and _unit_interval(prompt.sha256, run, self.seed) < self.fault_json:
            cut = 1 + int(_unit_interval("cut", prompt.sha256, run, self.seed) * (len(answer) - 2))
            return answer[:cut]
        return answer


# -- replay -------------------------------------------------------------------


@dataclass
class ReplayBackend:
    """Serves completions recorded as JSONL ``{prompt_sha256, run, completion}``."""

    fixture: Path
    kind: str = "replay"

    def __post_init__(self):
        self.fixture = Path(self.fixture)
        self._table: dict[tuple[str, int], str] = {}
        with self.fixture.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                    self._table[(row["prompt_sha256"], int(row["run"]))] = row["completion"]
                except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                    raise ValidationError(f"{self.fixture}:{lineno}: malformed fixture row") from None

    def complete(self, prompt: Prompt, max_decode_tokens: int, run: int = 0) -> str:
        _check_decode(max_decode_tokens)
        try:
            return self._table[(prompt.sha256, run)]
        except KeyError:
            raise ReplayMiss(prompt.sha256, run) from None


class RecordingBackend:
    """Wraps another backend and keeps every completion for a replay fixture."""

    def __init__(self, inner):
        self.inner = inner
        self.kind = inner.kind
        self._lock = threading.Lock()
        self.records: dict[tuple[str, int], str] = {}

    def complete(self, prompt: Prompt, max_decode_tokens: int, run: int = 0) -> str:
        out = self.inner.complete(prompt, max_decode_tokens, run)
        with self._lock:
            self.records[(prompt.sha256, run)] = out
        return out

    def write_fixture(self, path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
            for (sha, run), completion in sorted(self.records.items()):
                row = {"prompt_sha256": sha, "run": run, "completion": completion}
                fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


# -- http ---------------------------------------------------------------------


@dataclass
class HttpConfig:
    base_url: str
    model: str
    api_key_env: str = "OPENAI_API_KEY"
    timeout: float = 60.0
    max_retries: int = 3
    temperature: float = 0.7
    seed: int = 0
    max_in_flight: int = 8
    backoff_base: float = 0.5
    backoff_max: float = 20.0

    def __post_init__(self):
        if not self.base_url:
            raise ValidationError("base_url must be non-empty")
        if self.max_retries < 0:
            raise ValidationError("max_retries must be >= 0")
        if self.max_in_flight < 1:
            raise ValidationError("max_in_flight must be >= 1")


_RETRY_STATUS = {408, 409, 425, 429, 500, 502, 503, 504}


class HttpBackend:
    """OpenAI-compatible ``/chat/completions`` client with bounded concurrency.

    Retries use exponential backoff with full jitter; completions are
    stateless, so a retried request is safe.
    """

    kind = "http"

    def __init__(self, config: HttpConfig, transport: Optional[httpx.BaseTransport] = None,
                 sleep=time.sleep):
        self.config = config
        self._permits = threading.BoundedSemaphore(config.max_in_flight)
        self._sleep = sleep
        self._rng = random.Random(config.seed)
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(config.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._client = httpx.Client(
            base_url=config.base_url.rstrip("/"),
            headers=headers,
            timeout=config.timeout,
            transport=transport,
        )

    def payload(self, prompt: Prompt, max_decode_tokens: int, run: int) -> dict:
        return {
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt.rendered}],
            "max_tokens": max_decode_tokens,
            "temperature": self.config.temperature,
            "seed": self.config.seed + run,
        }

    def complete(self, prompt: Prompt, max_decode_tokens: int, run: int = 0) -> str:
        _check_decode(max_decode_tokens)
        body = self.payload(prompt, max_decode_tokens, run)
        with self._permits:
            return self._post_with_retries(body)

    def _post_with_retries(self, body: dict) -> str:
        attempts = self.config.max_retries + 1
        last: Exception = BackendError("no attempt made")
        for attempt in range(attempts):
            try:
                resp = self._client.post("/chat/completions", json=body)
            except httpx.TimeoutException as exc:
                last = Timeout(f"request timed out after {self.config.timeout}s: {exc}")
            except httpx.TransportError as exc:
                last = BackendError(f"transport error: {exc}")
            else:
                if resp.status_code == 200:
                    return self._extract(resp)
                last = HttpError(resp.status_code, resp.text)
                if resp.status_code not in _RETRY_STATUS:
                    raise last
            if attempt + 1 < attempts:
                delay = min(self.config.backoff_max, self.config.backoff_base * 2**attempt)
                delay = self._rng.uniform(0, delay)
                log.warning("completion attempt %d failed (%s); retrying in %.2fs", attempt + 1, last, delay)
                self._sleep(delay)
        raise last

    @staticmethod
    def _extract(resp: httpx.Response) -> str:
        try:
            data = resp.json()
            content = data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError):
            raise HttpError(resp.status_code, f"unexpected response shape: {resp.text}") from None
        return content or ""

    def close(self) -> None:
        self._client.close()
