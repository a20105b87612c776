"""
Scoring backends: turn a prompt into ranked (answer, log-score) candidates

Three backends share one async interface. `file` replays pre-computed
scores, `mock` derives reproducible pseudo-scores from a hash, and `remote`
talks to a JSON-over-HTTP sequence-scoring service. An optional append-only
cache sits in front of any of them.
"""
import asyncio
import hashlib
import json
import logging
import os
import threading
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal

import httpx
from tenacity import (
    AsyncRetrying,
    before_sleep_log,
    retry_if_exception_type,
    stop_after_attempt,
    wait_exponential,
)

from ..config import BackendSpec
from ..errors import (
    ArtifactIOError,
    InputValidationError,
    RemoteBackendError,
    ScorerProtocolError,
    ScorerTimeoutError,
)
from ..models import ScoredCandidate, rank_candidates
from .ingest import load_records
from .prompts import prompt_id

log = logging.getLogger(__name__)

MOCK_MIN_SCORE = -10.0
MOCK_MAX_NGRAM = 4

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class ScoreRequest:
    """What to ask a backend about one prompt"""
    prompt: str
    mode: Literal["generate", "choices"] = "generate"
    n: int = 20
    choices: tuple[str, ...] = ()

    def __post_init__(self):
        if self.mode == "choices" and not self.choices:
            raise InputValidationError("Choice scoring needs at least one choice")
        if self.mode == "generate" and self.n < 1:
            raise InputValidationError(f"top-n must be positive, got {self.n}")

    @property
    def mode_key(self) -> str:
        if self.mode == "choices":
            return "choices:" + "|".join(self.choices)
        return f"top-n:{self.n}"

    @property
    def prompt_id(self) -> str:
        return prompt_id(self.prompt)


class ScoringBackend:
    """Base class; subclasses return raw (text, score) pairs in any order"""

    backend_id = "base"

    async def score(self, request: ScoreRequest) -> list[tuple[str, float]]:
        raise NotImplementedError

    async def aclose(self) -> None:
        return None


# Mock

def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def mock_score(seed: int, prompt: str, candidate: str) -> float:
    """Deterministic pseudo log-score in [-10, 0]"""
    digest = hashlib.blake2b(
        f"{seed}\x00{prompt}\x00{candidate}".encode("utf-8"), digest_size=8
    ).digest()
    unit = _splitmix64(int.from_bytes(digest, "big")) / float(_MASK64)
    return MOCK_MIN_SCORE * unit


class MockBackend(ScoringBackend):
    """Hash-seeded scores; generation proposes the prompt's own word n-grams"""

    def __init__(self, seed: int = 2121):
        self.seed = seed
        self.backend_id = f"mock:{seed}"

    def _proposals(self, prompt: str) -> list[str]:
        words = prompt.split()
        seen: dict[str, None] = {}
        for width in range(1, MOCK_MAX_NGRAM + 1):
            for start in range(len(words) - width + 1):
                seen.setdefault(" ".join(words[start:start + width]), None)
        return list(seen)

    async def score(self, request: ScoreRequest) -> list[tuple[str, float]]:
        texts = list(request.choices) if request.mode == "choices" else self._proposals(request.prompt)
        return [(t, mock_score(self.seed, request.prompt, t)) for t in texts]


# File

class FileBackend(ScoringBackend):
    """
    Pre-computed scores, one `score_table` record per prompt:
    {"schema_version": 1, "kind": "score_table", "prompt": ..., "candidates": [{"text", "score"}]}
    """

    def __init__(self, path: Path):
        self.path = Path(path)
        self.backend_id = f"file:{self.path}"
        records, _ = load_records(self.path, self._parse, ("score_table",))
        self.table: dict[str, list[tuple[str, float]]] = dict(records)

    @staticmethod
    def _parse(record: dict) -> tuple[str, list[tuple[str, float]]]:
        return str(record["prompt"]), [
            (str(c["text"]), float(c["score"])) for c in record["candidates"]
        ]

    async def score(self, request: ScoreRequest) -> list[tuple[str, float]]:
        stored = self.table.get(request.prompt)
        if stored is None:
            raise InputValidationError(
                f"No stored scores for prompt {request.prompt_id} in {self.path}"
            )
        if request.mode == "generate":
            return stored
        by_text = dict(stored)
        missing = [c for c in request.choices if c not in by_text]
        if missing:
            raise InputValidationError(
                f"Prompt {request.prompt_id}: no stored score for choice(s) {missing}"
            )
        return [(c, by_text[c]) for c in request.choices]


# Remote

class _Retryable(Exception):
    def __init__(self, message: str, retry_after: float | None = None, timed_out: bool = False):
        super().__init__(message)
        self.retry_after = retry_after
        self.timed_out = timed_out


def _parse_retry_after(value: str | None) -> float | None:
    if value is None:
        return None
    try:
        return max(0.0, float(value))
    except ValueError:
        return None


def adapt_native(payload: Any) -> list[tuple[str, float]]:
    """{"candidates": [{"text": ..., "log_score": ...}]}"""
    return [(str(c["text"]), float(c["log_score"])) for c in payload["candidates"]]


def adapt_sequences_scores(payload: Any) -> list[tuple[str, float]]:
    """{"sequences": [...], "sequences_scores": [...]} as produced by beam search"""
    sequences, scores = payload["sequences"], payload["sequences_scores"]
    if len(sequences) != len(scores):
        raise ValueError(f"{len(sequences)} sequences but {len(scores)} scores")
    return [(str(s), float(v)) for s, v in zip(sequences, scores)]


ADAPTERS = {
    "native": adapt_native,
    "sequences_scores": adapt_sequences_scores,
}


class RemoteBackend(ScoringBackend):
    """JSON-over-HTTP scoring with bounded concurrency and retries"""

    def __init__(self, spec: BackendSpec, transport: httpx.AsyncBaseTransport | None = None):
        self.spec = spec
        self.backend_id = spec.backend_id
        self.adapter = ADAPTERS[spec.adapter]
        self.max_in_flight = spec.max_in_flight
        self.in_flight = 0
        self.peak_in_flight = 0
        self._semaphore: asyncio.Semaphore | None = None

        headers = {"Content-Type": "application/json"}
        token = os.environ.get(spec.token_env_var)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        else:
            log.debug(f"No token in ${spec.token_env_var}; calling {spec.endpoint} unauthenticated")
        self.client = httpx.AsyncClient(timeout=spec.timeout, headers=headers, transport=transport)

    @property
    def semaphore(self) -> asyncio.Semaphore:
        # created lazily so it binds to the running event loop
        if self._semaphore is None:
            self._semaphore = asyncio.Semaphore(self.max_in_flight)
        return self._semaphore

    def _wait(self, retry_state) -> float:
        exc = retry_state.outcome.exception()
        if isinstance(exc, _Retryable) and exc.retry_after is not None:
            return exc.retry_after
        return wait_exponential(multiplier=self.spec.backoff_base, max=60)(retry_state)

    def _body(self, request: ScoreRequest) -> dict:
        body: dict[str, Any] = {"prompt": request.prompt, "mode": request.mode}
        if request.mode == "choices":
            body["choices"] = list(request.choices)
        else:
            body["n"] = request.n
        return body

    async def _attempt(self, request: ScoreRequest) -> list[tuple[str, float]]:
        async with self.semaphore:
            self.in_flight += 1
            self.peak_in_flight = max(self.peak_in_flight, self.in_flight)
            try:
                response = await self.client.post(self.spec.endpoint, json=self._body(request))
            except httpx.TimeoutException as e:
                raise _Retryable(f"timeout after {self.spec.timeout}s", timed_out=True) from e
            except httpx.TransportError as e:
                raise _Retryable(f"transport error: {e}") from e
            finally:
                self.in_flight -= 1

        status = response.status_code
        log.debug(f"POST {self.spec.endpoint} -> {status}")
        if status == 429:
            raise _Retryable("rate limited (429)", _parse_retry_after(response.headers.get("Retry-After")))
        if status >= 500:
            raise _Retryable(f"server error ({status})")
        if not 200 <= status < 300:
            raise ScorerProtocolError(f"Unexpected status {status}", request.prompt_id)
        try:
            return self.adapter(response.json())
        except (ValueError, KeyError, TypeError) as e:
            raise ScorerProtocolError(f"Malformed response body: {e}", request.prompt_id) from e

    async def score(self, request: ScoreRequest) -> list[tuple[str, float]]:
        try:
            async for attempt in AsyncRetrying(
                retry=retry_if_exception_type(_Retryable),
                stop=stop_after_attempt(self.spec.max_retries + 1),
                wait=self._wait,
                before_sleep=before_sleep_log(log, logging.WARNING),
                reraise=True,
            ):
                with attempt:
                    return await self._attempt(request)
        except _Retryable as e:
            if e.timed_out:
                raise ScorerTimeoutError(
                    f"{self.spec.endpoint}: {e} (after {self.spec.max_retries} retries)", request.prompt_id
                ) from e
            raise RemoteBackendError(
                f"{self.spec.endpoint}: {e} (after {self.spec.max_retries} retries)", request.prompt_id
            ) from e
        raise RemoteBackendError("retry loop ended without a result", request.prompt_id)

    async def aclose(self) -> None:
        await self.client.aclose()


# Cache

class ScoreCache:
    """
    Append-only JSONL of {key, candidates}; the last line for a key wins

    Keys hash (backend id, template family, prompt, request mode), so a hit
    returns exactly what that backend answered for that prompt.
    """

    def __init__(self, path: Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self.entries: dict[str, list[tuple[str, float]]] = {}
        self.hits = 0
        self.misses = 0
        if self.path.exists():
            self._load()

    def _load(self) -> None:
        skipped = 0
        try:
            lines = self.path.read_text(encoding="utf-8").splitlines()
        except OSError as e:
            raise ArtifactIOError(f"Cannot read score cache {self.path}: {e}") from e
        for line in lines:
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                self.entries[record["key"]] = [
                    (str(c["text"]), float(c["score"])) for c in record["candidates"]
                ]
            except (ValueError, KeyError, TypeError):
                # a torn final line from an interrupted run
                skipped += 1
        if skipped:
            log.warning(f"Score cache {self.path}: skipped {skipped} unreadable line(s)")
        log.info(f"Score cache {self.path}: {len(self.entries)} entr(ies)")

    @staticmethod
    def make_key(backend_id: str, family: str | None, request: ScoreRequest) -> str:
        raw = json.dumps([backend_id, family or "", request.prompt, request.mode_key], ensure_ascii=False)
        return hashlib.sha256(raw.encode("utf-8")).hexdigest()

    def get(self, key: str) -> list[tuple[str, float]] | None:
        value = self.entries.get(key)
        if value is None:
            self.misses += 1
        else:
            self.hits += 1
        return value

    def put(self, key: str, candidates: list[tuple[str, float]]) -> None:
        line = json.dumps(
            {"key": key, "candidates": [{"text": t, "score": s} for t, s in candidates]},
            ensure_ascii=False,
        )
        with self._lock:
            try:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as handle:
                    handle.write(line + "\n")
            except OSError as e:
                raise ArtifactIOError(f"Cannot append to score cache {self.path}: {e}") from e
            self.entries[key] = list(candidates)


# Facade

def _dedupe(raw: Sequence[tuple[str, float]]) -> list[tuple[str, float]]:
    """One entry per text, keeping its best score"""
    best: dict[str, float] = {}
    for text, score in raw:
        if text not in best or score > best[text]:
            best[text] = score
    return list(best.items())


@dataclass
class Scorer:
    """Backend plus optional cache; returns ranked candidates"""
    backend: ScoringBackend
    cache: ScoreCache | None = None
    family: str | None = None
    requests: int = field(default=0, init=False)

    async def score_candidates(
        self,
        prompt: str,
        mode: Literal["generate", "choices"] = "generate",
        n: int = 20,
        choices: Sequence[str] = (),
    ) -> tuple[ScoredCandidate, ...]:
        return await self.score(ScoreRequest(prompt=prompt, mode=mode, n=n, choices=tuple(choices)))

    async def score(self, request: ScoreRequest) -> tuple[ScoredCandidate, ...]:
        raw: list[tuple[str, float]] | None = None
        key = None
        if self.cache is not None:
            key = ScoreCache.make_key(self.backend.backend_id, self.family, request)
            raw = self.cache.get(key)
        if raw is None:
            self.requests += 1
            raw = _dedupe(await self.backend.score(request))
            if self.cache is not None:
                self.cache.put(key, raw)

        ranked = rank_candidates(raw)
        if request.mode == "choices":
            missing = set(request.choices) - {c.text for c in ranked}
            if missing:
                raise ScorerProtocolError(
                    f"Response lacks choice(s) {sorted(missing)}", request.prompt_id
                )
            return tuple(c for c in ranked if c.text in set(request.choices))
        return ranked[:request.n]

    async def score_many(self, requests: Sequence[ScoreRequest]) -> list[tuple[ScoredCandidate, ...]]:
        """Score in parallel; results keep the request order"""
        return list(await asyncio.gather(*(self.score(r) for r in requests)))

    async def aclose(self) -> None:
        await self.backend.aclose()


def link_score(yes_score: float, no_score: float) -> float:
    """Score of the Yes answer minus score of the No answer"""
    return yes_score - no_score


def choice_link_score(candidates: Sequence[ScoredCandidate], yes: str, no: str) -> float:
    """link_score over a choice-mode answer holding both choices"""
    by_text = {c.text: c.score for c in candidates}
    return link_score(by_text[yes], by_text[no])


def build_backend(
    spec: BackendSpec,
    seed: int = 2121,
    transport: httpx.AsyncBaseTransport | None = None,
) -> ScoringBackend:
    if spec.kind == "file":
        return FileBackend(spec.path)
    if spec.kind == "remote":
        return RemoteBackend(spec, transport=transport)
    return MockBackend(seed)


def build_scorer(
    spec: BackendSpec,
    seed: int = 2121,
    family: str | None = None,
    transport: httpx.AsyncBaseTransport | None = None,
) -> Scorer:
    cache = ScoreCache(spec.cache) if spec.cache is not None else None
    return Scorer(backend=build_backend(spec, seed, transport), cache=cache, family=family)
