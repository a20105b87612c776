"""
Tests for scoring backends, the remote retry policy and the score cache
"""
import asyncio
import json
import logging

import httpx
import pytest

from constrained_inference.components import ingest
from constrained_inference.components.scorer import (
    FileBackend,
    MockBackend,
    RemoteBackend,
    ScoreCache,
    Scorer,
    ScoreRequest,
    adapt_sequences_scores,
    build_scorer,
    choice_link_score,
    link_score,
    mock_score,
)
from constrained_inference.config import BackendSpec
from constrained_inference.errors import (
    InputValidationError,
    RemoteBackendError,
    ScorerProtocolError,
    ScorerTimeoutError,
)
from constrained_inference.models import rank_candidates

ENDPOINT = "http://scorer.test/score"


def remote_spec(**overrides) -> BackendSpec:
    values = {"kind": "remote", "endpoint": ENDPOINT, "backoff_base": 0, "max_retries": 2}
    values.update(overrides)
    return BackendSpec(**values)


def native_body(*pairs) -> dict:
    return {"candidates": [{"text": t, "log_score": s} for t, s in pairs]}


class TestMockBackend:
    """Reproducible pseudo-scores"""

    def test_deterministic_and_bounded(self):
        first = mock_score(7, "prompt", "answer")
        assert first == mock_score(7, "prompt", "answer")
        assert first != mock_score(8, "prompt", "answer")
        assert -10.0 <= first <= 0.0

    async def test_generate_proposes_prompt_ngrams(self):
        scorer = Scorer(MockBackend(seed=1))
        ranked = await scorer.score_candidates("Elrond gave Aragorn the sword", n=50)
        texts = {c.text for c in ranked}
        assert {"Elrond", "the sword", "gave Aragorn the sword"} <= texts
        assert [c.rank for c in ranked] == list(range(1, len(ranked) + 1))

    async def test_top_n_trims(self):
        scorer = Scorer(MockBackend())
        assert len(await scorer.score_candidates("a b c d e f", n=3)) == 3

    async def test_choices_return_exactly_the_choices(self):
        scorer = Scorer(MockBackend())
        ranked = await scorer.score_candidates("Does Al refer to him?", mode="choices", choices=("Yes", "No"))
        assert sorted(c.text for c in ranked) == ["No", "Yes"]

    def test_choice_mode_needs_choices(self):
        with pytest.raises(InputValidationError):
            ScoreRequest(prompt="p", mode="choices")


class TestFileBackend:
    """Replaying stored score tables"""

    @pytest.fixture
    def table(self, temp_dir):
        path = temp_dir / "scores.jsonl"
        ingest.write_jsonl(path, [{
            "schema_version": 1,
            "kind": "score_table",
            "prompt": "Q?",
            "candidates": [{"text": "Yes", "score": -0.5}, {"text": "No", "score": -1.5}],
        }])
        return path

    async def test_stored_scores(self, table):
        scorer = Scorer(FileBackend(table))
        ranked = await scorer.score_candidates("Q?")
        assert [(c.text, c.score, c.rank) for c in ranked] == [("Yes", -0.5, 1), ("No", -1.5, 2)]

    async def test_unknown_prompt(self, table):
        with pytest.raises(InputValidationError):
            await Scorer(FileBackend(table)).score_candidates("other?")

    async def test_missing_choice(self, table):
        with pytest.raises(InputValidationError):
            await Scorer(FileBackend(table)).score_candidates("Q?", mode="choices", choices=("Maybe",))


class TestRemoteBackend:
    """HTTP scoring with retries and bounded concurrency"""

    async def test_native_adapter_and_request_body(self):
        seen = []

        async def handler(request: httpx.Request) -> httpx.Response:
            seen.append(json.loads(request.content))
            return httpx.Response(200, json=native_body(("Elrond", -0.1), ("Aragorn", -2.0)))

        backend = RemoteBackend(remote_spec(), transport=httpx.MockTransport(handler))
        ranked = await Scorer(backend).score_candidates("Who gave?", n=5)
        await backend.aclose()
        assert [c.text for c in ranked] == ["Elrond", "Aragorn"]
        assert seen == [{"prompt": "Who gave?", "mode": "generate", "n": 5}]

    async def test_retries_after_rate_limit(self):
        calls = []

        async def handler(request: httpx.Request) -> httpx.Response:
            calls.append(request)
            if len(calls) == 1:
                return httpx.Response(429, headers={"Retry-After": "0"})
            return httpx.Response(200, json=native_body(("x", -1.0)))

        backend = RemoteBackend(remote_spec(), transport=httpx.MockTransport(handler))
        ranked = await Scorer(backend).score_candidates("p")
        assert len(calls) == 2
        assert ranked[0].text == "x"

    async def test_server_errors_exhaust_retries(self):
        calls = []

        async def handler(request: httpx.Request) -> httpx.Response:
            calls.append(request)
            return httpx.Response(503)

        backend = RemoteBackend(remote_spec(max_retries=2), transport=httpx.MockTransport(handler))
        with pytest.raises(RemoteBackendError) as exc:
            await backend.score(ScoreRequest(prompt="p"))
        assert len(calls) == 3
        assert exc.value.prompt_id == ScoreRequest(prompt="p").prompt_id
        assert exc.value.exit_code == 5

    async def test_timeouts(self):
        async def handler(request: httpx.Request) -> httpx.Response:
            raise httpx.ReadTimeout("too slow", request=request)

        backend = RemoteBackend(remote_spec(max_retries=1), transport=httpx.MockTransport(handler))
        with pytest.raises(ScorerTimeoutError):
            await backend.score(ScoreRequest(prompt="p"))

    async def test_client_error_is_not_retried(self):
        calls = []

        async def handler(request: httpx.Request) -> httpx.Response:
            calls.append(request)
            return httpx.Response(400, json={"error": "bad"})

        backend = RemoteBackend(remote_spec(), transport=httpx.MockTransport(handler))
        with pytest.raises(ScorerProtocolError):
            await backend.score(ScoreRequest(prompt="p"))
        assert len(calls) == 1

    async def test_malformed_body(self):
        async def handler(request: httpx.Request) -> httpx.Response:
            return httpx.Response(200, json={"unexpected": []})

        backend = RemoteBackend(remote_spec(), transport=httpx.MockTransport(handler))
        with pytest.raises(ScorerProtocolError):
            await backend.score(ScoreRequest(prompt="p"))

    async def test_missing_choice_in_response(self):
        async def handler(request: httpx.Request) -> httpx.Response:
            return httpx.Response(200, json=native_body(("Yes", -0.2)))

        backend = RemoteBackend(remote_spec(), transport=httpx.MockTransport(handler))
        with pytest.raises(ScorerProtocolError):
            await Scorer(backend).score_candidates("p", mode="choices", choices=("Yes", "No"))

    async def test_max_in_flight(self):
        active = 0
        peak = 0

        async def handler(request: httpx.Request) -> httpx.Response:
            nonlocal active, peak
            active += 1
            peak = max(peak, active)
            await asyncio.sleep(0.01)
            active -= 1
            return httpx.Response(200, json=native_body(("x", -1.0)))

        backend = RemoteBackend(remote_spec(max_in_flight=3), transport=httpx.MockTransport(handler))
        scorer = Scorer(backend)
        results = await scorer.score_many([ScoreRequest(prompt=f"p{i}") for i in range(12)])
        assert len(results) == 12
        assert peak <= 3
        assert backend.peak_in_flight <= 3
        assert scorer.requests == 12

    async def test_bearer_token_from_environment(self, monkeypatch, caplog):
        monkeypatch.setenv("SCORER_API_TOKEN", "sekret-token")
        headers = []

        async def handler(request: httpx.Request) -> httpx.Response:
            headers.append(request.headers.get("Authorization"))
            return httpx.Response(200, json=native_body(("x", -1.0)))

        caplog.set_level(logging.DEBUG)
        backend = RemoteBackend(remote_spec(), transport=httpx.MockTransport(handler))
        await backend.score(ScoreRequest(prompt="p"))
        assert headers == ["Bearer sekret-token"]
        assert "sekret-token" not in caplog.text

    async def test_no_token(self, monkeypatch):
        monkeypatch.delenv("SCORER_API_TOKEN", raising=False)
        headers = []

        async def handler(request: httpx.Request) -> httpx.Response:
            headers.append(request.headers.get("Authorization"))
            return httpx.Response(200, json=native_body(("x", -1.0)))

        backend = RemoteBackend(remote_spec(), transport=httpx.MockTransport(handler))
        await backend.score(ScoreRequest(prompt="p"))
        assert headers == [None]


class TestAdapters:
    """Response payload shapes"""

    def test_sequences_scores(self):
        payload = {"sequences": ["a", "b"], "sequences_scores": [-0.5, -0.25]}
        assert adapt_sequences_scores(payload) == [("a", -0.5), ("b", -0.25)]

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            adapt_sequences_scores({"sequences": ["a"], "sequences_scores": []})

    async def test_remote_with_sequences_adapter(self):
        async def handler(request: httpx.Request) -> httpx.Response:
            return httpx.Response(200, json={"sequences": ["a", "b"], "sequences_scores": [-2.0, -1.0]})

        backend = RemoteBackend(
            remote_spec(adapter="sequences_scores"), transport=httpx.MockTransport(handler)
        )
        ranked = await Scorer(backend).score_candidates("p")
        assert [c.text for c in ranked] == ["b", "a"]


class TestScoreCache:
    """Append-only JSONL cache"""

    async def test_cache_does_not_change_results(self, temp_dir):
        cached = Scorer(MockBackend(3), ScoreCache(temp_dir / "cache.jsonl"), family="t5-qa")
        plain = Scorer(MockBackend(3), family="t5-qa")
        prompts = ["one two three", "four five", "one two three"]
        for prompt in prompts:
            assert await cached.score_candidates(prompt) == await plain.score_candidates(prompt)
        assert cached.cache.hits == 1
        assert cached.cache.misses == 2
        assert cached.requests == 2

    async def test_cache_survives_reload(self, temp_dir):
        path = temp_dir / "cache.jsonl"
        first = Scorer(MockBackend(3), ScoreCache(path))
        expected = await first.score_candidates("a b c")
        second = Scorer(MockBackend(3), ScoreCache(path))
        assert await second.score_candidates("a b c") == expected
        assert second.requests == 0

    def test_last_line_wins(self, temp_dir):
        path = temp_dir / "cache.jsonl"
        lines = [
            {"key": "k", "candidates": [{"text": "old", "score": -1.0}]},
            {"key": "k", "candidates": [{"text": "new", "score": -2.0}]},
        ]
        path.write_text("".join(json.dumps(line) + "\n" for line in lines) + '{"key": "torn', encoding="utf-8")
        assert ScoreCache(path).get("k") == [("new", -2.0)]

    def test_key_depends_on_mode_and_backend(self):
        generate = ScoreRequest(prompt="p", n=5)
        choices = ScoreRequest(prompt="p", mode="choices", choices=("Yes", "No"))
        assert ScoreCache.make_key("mock:1", "t5-qa", generate) != ScoreCache.make_key("mock:1", "t5-qa", choices)
        assert ScoreCache.make_key("mock:1", "t5-qa", generate) != ScoreCache.make_key("mock:2", "t5-qa", generate)
        assert ScoreCache.make_key("mock:1", "t5-qa", generate) == ScoreCache.make_key("mock:1", "t5-qa", generate)

    async def test_build_scorer_with_cache(self, temp_dir):
        scorer = build_scorer(BackendSpec(cache=temp_dir / "c.jsonl"), seed=4)
        await scorer.score_candidates("x y")
        assert (temp_dir / "c.jsonl").exists()
        await scorer.aclose()


class TestLinkScore:
    """Yes minus No"""

    def test_difference(self):
        assert link_score(-0.5, -2.0) == 1.5
        assert link_score(-2.0, -0.5) == -1.5
        assert link_score(-1.0, -3.0) == 2.0
        assert link_score(-0.7, -0.7) == 0.0

    def test_choice_answer(self):
        candidates = rank_candidates([("Yes", -0.5), ("No", -2.0)])
        assert choice_link_score(candidates, "Yes", "No") == 1.5

    def test_choice_answer_order_does_not_matter(self):
        candidates = rank_candidates([("No", -0.25), ("Yes", -1.0)])
        assert choice_link_score(candidates, "Yes", "No") == -0.75
