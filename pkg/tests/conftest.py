"""
Pytest configuration and fixtures for constrained-inference tests
"""
import random
import tempfile
from collections.abc import Callable, Generator
from pathlib import Path

import pytest

from constrained_inference.config import InferenceServerConfig
from constrained_inference.models import (
    Clustering,
    CorefInstance,
    Mention,
    SrlInstance,
    SrlRole,
    rank_candidates,
)

VOCAB = ["w0", "w1", "w2", "w3", "w4", "w5"]


@pytest.fixture
def temp_dir() -> Generator[Path, None, None]:
    """Create a temporary directory for test files"""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


@pytest.fixture
def test_config(temp_dir: Path) -> InferenceServerConfig:
    """Create a test configuration with a temporary cache directory"""
    config = InferenceServerConfig(cache_dir=temp_dir / "cache")
    config.ensure_directories()
    return config


@pytest.fixture
def toy_srl_instance() -> SrlInstance:
    """Three roles whose best answers overlap; the cheapest consistent structure costs 1"""
    return SrlInstance(
        instance_id="toy",
        tokens=("Elrond", "gave", "Aragorn", "the", "sword"),
        predicate_index=1,
        roles=(
            SrlRole("a", "Who gave something?", rank_candidates([("Elrond", 2.0), ("Elrond gave", 1.0)])),
            SrlRole("b", "Who was given something?", rank_candidates([("Aragorn", 5.0), ("Elrond", 3.0)])),
            SrlRole("c", "What was given?", rank_candidates([("Aragorn the sword", 5.0), ("the sword", 4.0)])),
        ),
    )


def make_mentions(ids: list[str], sentence_indices: list[int] | None = None) -> list[Mention]:
    sentence_indices = sentence_indices or [0] * len(ids)
    return [Mention(id=i, text=f"m{i}", sentence_index=s) for i, s in zip(ids, sentence_indices)]


@pytest.fixture
def three_mention_doc() -> CorefInstance:
    """Two positive links and one strongly negative one"""
    return CorefInstance.build(
        "doc3",
        make_mentions(["1", "2", "3"]),
        {("1", "2"): 2.0, ("1", "3"): -3.0, ("2", "3"): 1.5},
    )


@pytest.fixture
def metric_clusterings() -> tuple[Clustering, Clustering]:
    """(prediction, gold): gold {a,b,c},{d} against prediction {a,b},{c,d}"""
    gold = Clustering((("a", "b", "c"), ("d",)))
    pred = Clustering((("a", "b"), ("c", "d")))
    return pred, gold


def random_srl_instance(
    rng: random.Random,
    instance_id: str = "r",
    max_tokens: int = 9,
    max_roles: int = 3,
    max_candidates: int = 4,
) -> SrlInstance:
    """Small sentence over a tiny vocabulary, so candidate spans repeat and overlap"""
    tokens = tuple(rng.choice(VOCAB) for _ in range(rng.randint(3, max_tokens)))
    roles = []
    for r in range(rng.randint(1, max_roles)):
        texts: dict[str, float] = {}
        for _ in range(rng.randint(1, max_candidates)):
            if rng.random() < 0.15:
                text = "absent"
            else:
                start = rng.randrange(len(tokens))
                end = rng.randint(start + 1, min(len(tokens), start + 3))
                text = " ".join(tokens[start:end])
            # quarter steps keep every sum exact
            texts.setdefault(text, -rng.randint(0, 40) / 4)
        roles.append(SrlRole(f"r{r}", f"question {r}?", rank_candidates(texts.items())))
    return SrlInstance(instance_id, tokens, 0, tuple(roles))


def random_coref_instance(
    rng: random.Random,
    n_mentions: int,
    document_id: str = "d",
    density: float = 1.0,
) -> CorefInstance:
    """Random link scores in quarter steps over a prefix of the pairs"""
    mentions = make_mentions([f"m{i}" for i in range(n_mentions)])
    scores = {}
    for i in range(n_mentions):
        for j in range(i + 1, n_mentions):
            if rng.random() < density:
                scores[(f"m{i}", f"m{j}")] = rng.randint(-12, 12) / 4
    return CorefInstance.build(document_id, mentions, scores)


@pytest.fixture
def srl_instance_factory() -> Callable[..., SrlInstance]:
    return random_srl_instance


@pytest.fixture
def coref_instance_factory() -> Callable[..., CorefInstance]:
    return random_coref_instance
