"""
Domain values shared by both tasks

Everything here is a frozen dataclass. Mappings are stored as sorted tuples
and exposed through cached lookup tables, so values stay hashable-free but
picklable for worker processes.
"""
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from typing import Literal

MentionPair = tuple[str, str]


@dataclass(frozen=True, order=True)
class TokenSpan:
    """Half-open token interval [start, end)"""
    start: int
    end: int

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError(f"Invalid span [{self.start}, {self.end})")

    def __len__(self) -> int:
        return self.end - self.start

    def overlaps(self, other: "TokenSpan") -> bool:
        return self.start < other.end and other.start < self.end

    def __str__(self) -> str:
        return f"[{self.start},{self.end})"


def spans_overlap(a: TokenSpan, b: TokenSpan) -> bool:
    """True iff the two half-open intervals share at least one token"""
    return a.overlaps(b)


@dataclass(frozen=True)
class ScoredCandidate:
    """One generated answer with its model log-score and rank (1 = best)"""
    text: str
    score: float
    rank: int

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError(f"Candidate rank must be >= 1, got {self.rank}")


def rank_candidates(scored: Iterable[tuple[str, float]]) -> tuple[ScoredCandidate, ...]:
    """Assign ranks 1..n by score descending; equal scores keep input order"""
    ordered = sorted(enumerate(scored), key=lambda item: (-item[1][1], item[0]))
    return tuple(
        ScoredCandidate(text=text, score=score, rank=rank)
        for rank, (_, (text, score)) in enumerate(ordered, start=1)
    )


@dataclass(frozen=True)
class SrlRole:
    """One question (semantic role) of a predicate with its candidate answers"""
    role_id: str
    question: str
    candidates: tuple[ScoredCandidate, ...] = ()


@dataclass(frozen=True)
class SrlInstance:
    """A predicate in a pre-tokenized sentence plus one scored question per role"""
    instance_id: str
    tokens: tuple[str, ...]
    predicate_index: int
    roles: tuple[SrlRole, ...]

    @property
    def role_ids(self) -> tuple[str, ...]:
        return tuple(role.role_id for role in self.roles)

    @property
    def sentence(self) -> str:
        return " ".join(self.tokens)

    def validate(self, require_candidates: bool = True) -> None:
        """Check the instance invariants, raising ValueError on the first violation"""
        if not self.tokens:
            raise ValueError(f"Instance '{self.instance_id}' has no tokens")
        if not 0 <= self.predicate_index < len(self.tokens):
            raise ValueError(
                f"Instance '{self.instance_id}': predicate index {self.predicate_index} "
                f"outside sentence of {len(self.tokens)} tokens"
            )
        seen: set[str] = set()
        for role in self.roles:
            if role.role_id in seen:
                raise ValueError(f"Instance '{self.instance_id}': duplicate role '{role.role_id}'")
            seen.add(role.role_id)
            if not role.candidates:
                if require_candidates:
                    raise ValueError(
                        f"Instance '{self.instance_id}': role '{role.role_id}' has no candidates"
                    )
                continue
            ranks = [c.rank for c in role.candidates]
            if ranks != list(range(1, len(ranks) + 1)):
                raise ValueError(
                    f"Instance '{self.instance_id}': role '{role.role_id}' ranks {ranks} "
                    "are not 1..n in order"
                )
            scores = [c.score for c in role.candidates]
            if any(later > earlier for earlier, later in zip(scores, scores[1:])):
                raise ValueError(
                    f"Instance '{self.instance_id}': role '{role.role_id}' scores increase with rank"
                )


@dataclass(frozen=True)
class ArgumentAssignment:
    """The answer chosen for one role; text and span are None when unassigned"""
    role_id: str
    text: str | None = None
    span: TokenSpan | None = None

    @property
    def assigned(self) -> bool:
        return self.text is not None


@dataclass(frozen=True)
class SrlStructure:
    """Role -> span assignment for one predicate, possibly partial"""
    instance_id: str
    assignments: tuple[ArgumentAssignment, ...]
    total_cost: float = 0.0

    @property
    def complete(self) -> bool:
        return all(a.assigned for a in self.assignments)

    def get(self, role_id: str) -> ArgumentAssignment | None:
        for assignment in self.assignments:
            if assignment.role_id == role_id:
                return assignment
        return None

    def assigned_spans(self) -> list[TokenSpan]:
        return [a.span for a in self.assignments if a.span is not None]


@dataclass(frozen=True)
class Mention:
    """A gold mention; start/end are token offsets inside its sentence"""
    id: str
    text: str
    sentence_index: int
    start: int = 0
    end: int = 0


def _canonical_pair(a: str, b: str, position: Mapping[str, int]) -> MentionPair:
    return (a, b) if position[a] <= position[b] else (b, a)


@dataclass(frozen=True)
class CorefInstance:
    """Mentions of one document in document order plus scored mention pairs"""
    document_id: str
    mentions: tuple[Mention, ...]
    pair_scores: tuple[tuple[MentionPair, float], ...] = ()
    sentences: tuple[tuple[str, ...], ...] = ()

    @classmethod
    def build(
        cls,
        document_id: str,
        mentions: Sequence[Mention],
        scores: Mapping[MentionPair, float] | None = None,
        sentences: Sequence[Sequence[str]] = (),
    ) -> "CorefInstance":
        """Create an instance, storing every pair once with the earlier mention first"""
        position = {m.id: i for i, m in enumerate(mentions)}
        if len(position) != len(mentions):
            raise ValueError(f"Document '{document_id}' has duplicate mention ids")
        canonical: dict[MentionPair, float] = {}
        for (a, b), score in (scores or {}).items():
            if a not in position or b not in position:
                raise ValueError(f"Document '{document_id}': pair ({a}, {b}) names an unknown mention")
            if a == b:
                raise ValueError(f"Document '{document_id}': self pair ({a}, {b})")
            canonical[_canonical_pair(a, b, position)] = float(score)
        ordered = tuple(
            sorted(canonical.items(), key=lambda item: (position[item[0][0]], position[item[0][1]]))
        )
        return cls(
            document_id=document_id,
            mentions=tuple(mentions),
            pair_scores=ordered,
            sentences=tuple(tuple(s) for s in sentences),
        )

    @cached_property
    def mention_ids(self) -> tuple[str, ...]:
        return tuple(m.id for m in self.mentions)

    @cached_property
    def position(self) -> dict[str, int]:
        return {m.id: i for i, m in enumerate(self.mentions)}

    @cached_property
    def scores(self) -> dict[MentionPair, float]:
        return dict(self.pair_scores)

    @property
    def pairs(self) -> list[MentionPair]:
        return [pair for pair, _ in self.pair_scores]

    def score(self, a: str, b: str) -> float | None:
        """Score of an unordered pair, None when the pair was never scored"""
        return self.scores.get(_canonical_pair(a, b, self.position))


@dataclass(frozen=True)
class LinkDecisionSet:
    """Binary link decisions y over unordered mention pairs"""
    decisions: tuple[tuple[MentionPair, int], ...]

    @classmethod
    def from_mapping(cls, decisions: Mapping[MentionPair, int]) -> "LinkDecisionSet":
        return cls(tuple((pair, int(y)) for pair, y in decisions.items()))

    @cached_property
    def lookup(self) -> dict[frozenset[str], int]:
        return {frozenset(pair): y for pair, y in self.decisions}

    @property
    def pairs(self) -> list[MentionPair]:
        return [pair for pair, _ in self.decisions]

    def get(self, a: str, b: str) -> int | None:
        return self.lookup.get(frozenset((a, b)))

    def positive_pairs(self) -> list[MentionPair]:
        return [pair for pair, y in self.decisions if y == 1]

    def __len__(self) -> int:
        return len(self.decisions)


@dataclass(frozen=True)
class Clustering:
    """A partition of mention ids into disjoint non-empty clusters"""
    clusters: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        seen: set[str] = set()
        for cluster in self.clusters:
            if not cluster:
                raise ValueError("Clusters must be non-empty")
            for mention_id in cluster:
                if mention_id in seen:
                    raise ValueError(f"Mention '{mention_id}' appears in more than one cluster")
                seen.add(mention_id)

    @classmethod
    def from_groups(cls, groups: Iterable[Iterable[str]], order: Sequence[str] | None = None) -> "Clustering":
        """Build a clustering; with `order`, members and clusters follow document order"""
        clusters = [tuple(group) for group in groups]
        if order is not None:
            position = {m: i for i, m in enumerate(order)}
            clusters = [tuple(sorted(c, key=position.__getitem__)) for c in clusters if c]
            clusters.sort(key=lambda c: position[c[0]])
        return cls(tuple(clusters))

    @cached_property
    def cluster_of(self) -> dict[str, int]:
        return {m: i for i, cluster in enumerate(self.clusters) for m in cluster}

    @property
    def mention_ids(self) -> set[str]:
        return set(self.cluster_of)

    def as_sets(self) -> list[frozenset[str]]:
        return [frozenset(c) for c in self.clusters]

    def same_cluster(self, a: str, b: str) -> bool:
        return self.cluster_of[a] == self.cluster_of[b]

    def induced_decisions(self, pairs: Iterable[MentionPair]) -> LinkDecisionSet:
        """Decisions y = 1 iff both mentions share a cluster, for the given pairs"""
        return LinkDecisionSet(tuple((pair, int(self.same_cluster(*pair))) for pair in pairs))

    def all_pairs_decisions(self, order: Sequence[str]) -> LinkDecisionSet:
        return self.induced_decisions(combinations(order, 2))

    def __len__(self) -> int:
        return len(self.clusters)


@dataclass(frozen=True)
class SrlGold:
    """Acceptable answer strings per role for one predicate"""
    instance_id: str
    answers: tuple[tuple[str, tuple[str, ...]], ...]
    task: Literal["srl"] = field(default="srl", init=False)

    @cached_property
    def by_role(self) -> dict[str, tuple[str, ...]]:
        return dict(self.answers)


@dataclass(frozen=True)
class CorefGold:
    """Gold clustering for one document"""
    document_id: str
    clustering: Clustering
    task: Literal["coref"] = field(default="coref", init=False)


GoldAnnotation = SrlGold | CorefGold


@dataclass(frozen=True)
class CorefPrediction:
    """One solver's output for a document: decisions always, clusters when consistent"""
    document_id: str
    solver: str
    decisions: LinkDecisionSet
    clustering: Clustering | None = None
    objective: float | None = None
    optimal: bool | None = None
