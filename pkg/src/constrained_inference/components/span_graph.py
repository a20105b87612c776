"""
SRL argument selection over a boundary-vertex span graph

Vertices sit between tokens (vertex j precedes token j). Every consecutive
vertex pair is joined by a zero-weight null edge, and every located candidate
span adds an edge from span.start to span.end weighted by how far its score
falls below the role's best located candidate. Overlapping spans can never
share a path, so any path is a consistent (possibly partial) structure.
"""
import heapq
import logging
import math
from collections import defaultdict
from collections.abc import Sequence
from dataclasses import dataclass, field
from functools import cached_property

from ..errors import UnassignableRoleError
from ..models import ArgumentAssignment, SrlInstance, SrlStructure, TokenSpan

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SpanLabel:
    """What a span edge stands for"""
    role_id: str
    rank: int
    text: str
    span: TokenSpan


@dataclass(frozen=True)
class Edge:
    edge_id: int
    from_vertex: int
    to_vertex: int
    weight: float
    label: SpanLabel | None = None

    @property
    def is_null(self) -> bool:
        return self.label is None


@dataclass(frozen=True)
class SpanGraph:
    """Directed acyclic multigraph over token boundaries"""
    vertex_count: int
    edges: tuple[Edge, ...]
    unassignable_roles: tuple[str, ...] = ()
    dropped_candidates: int = 0

    @property
    def source(self) -> int:
        return 0

    @property
    def target(self) -> int:
        return self.vertex_count - 1

    @cached_property
    def out_edges(self) -> dict[int, tuple[Edge, ...]]:
        grouped: dict[int, list[Edge]] = defaultdict(list)
        for edge in self.edges:
            grouped[edge.from_vertex].append(edge)
        return {v: tuple(sorted(es, key=lambda e: e.edge_id)) for v, es in grouped.items()}

    def span_edges(self) -> list[Edge]:
        return [e for e in self.edges if not e.is_null]


@dataclass(frozen=True)
class GraphPath:
    """Contiguous edge sequence from the first to the last vertex"""
    edges: tuple[Edge, ...]
    weight: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "weight", math.fsum(e.weight for e in self.edges))

    @property
    def edge_ids(self) -> tuple[int, ...]:
        return tuple(e.edge_id for e in self.edges)

    @property
    def span_edges(self) -> list[Edge]:
        return [e for e in self.edges if not e.is_null]

    @property
    def roles(self) -> list[str]:
        return [e.label.role_id for e in self.span_edges]

    def sort_key(self) -> tuple:
        labels = tuple((e.label.role_id, e.label.rank, e.label.span.start) for e in self.span_edges)
        return (self.weight, -len(labels), labels, self.edge_ids)


def locate_span_occurrences(
    sentence_tokens: Sequence[str],
    span_text: str,
    case_insensitive: bool = False,
) -> list[TokenSpan]:
    """All token-aligned occurrences of `span_text` in the sentence"""
    wanted = span_text.strip().split()
    if not wanted:
        return []
    tokens = list(sentence_tokens)
    if case_insensitive:
        wanted = [t.casefold() for t in wanted]
        tokens = [t.casefold() for t in tokens]
    width = len(wanted)
    return [
        TokenSpan(start, start + width)
        for start in range(len(tokens) - width + 1)
        if tokens[start:start + width] == wanted
    ]


def _locate(tokens: Sequence[str], text: str, case_insensitive_fallback: bool) -> list[TokenSpan]:
    spans = locate_span_occurrences(tokens, text)
    if not spans and case_insensitive_fallback:
        spans = locate_span_occurrences(tokens, text, case_insensitive=True)
    return spans


def build_span_graph(
    instance: SrlInstance,
    strict: bool = False,
    case_insensitive_fallback: bool = False,
) -> SpanGraph:
    """Null edges between consecutive vertices plus one edge per (role, candidate, occurrence)"""
    instance.validate()
    tokens = instance.tokens
    edges = [Edge(j, j, j + 1, 0.0) for j in range(len(tokens))]
    unassignable: list[str] = []
    dropped = 0

    for role in instance.roles:
        located = [
            (candidate, _locate(tokens, candidate.text, case_insensitive_fallback))
            for candidate in role.candidates
        ]
        missing = [c for c, spans in located if not spans]
        dropped += len(missing)
        for candidate in missing:
            log.debug(
                f"{instance.instance_id}: dropping candidate '{candidate.text}' "
                f"(role {role.role_id}, rank {candidate.rank}) - not in sentence"
            )

        usable = [(c, spans) for c, spans in located if spans]
        if not usable:
            if strict:
                raise UnassignableRoleError(role.role_id, instance.instance_id)
            log.warning(f"{instance.instance_id}: role '{role.role_id}' has no locatable candidate")
            unassignable.append(role.role_id)
            continue

        reference = usable[0][0].score
        seen: set[TokenSpan] = set()
        for candidate, spans in usable:
            for span in spans:
                # identical (role, span) edges collapse onto the best rank
                if span in seen:
                    continue
                seen.add(span)
                edges.append(Edge(
                    edge_id=len(edges),
                    from_vertex=span.start,
                    to_vertex=span.end,
                    weight=reference - candidate.score,
                    label=SpanLabel(
                        role_id=role.role_id,
                        rank=candidate.rank,
                        text=" ".join(tokens[span.start:span.end]),
                        span=span,
                    ),
                ))

    if dropped:
        log.warning(f"{instance.instance_id}: dropped {dropped} candidate(s) not found in the sentence")

    return SpanGraph(
        vertex_count=len(tokens) + 1,
        edges=tuple(edges),
        unassignable_roles=tuple(unassignable),
        dropped_candidates=dropped,
    )


def _shortest_path(
    graph: SpanGraph,
    source: int,
    blocked_edges: set[int],
    blocked_vertices: set[int],
) -> tuple[Edge, ...] | None:
    """Dijkstra from `source` to the graph target; weights are nonnegative"""
    target = graph.target
    dist = {source: 0.0}
    via: dict[int, Edge] = {}
    heap = [(0.0, source)]
    done: set[int] = set()

    while heap:
        d, vertex = heapq.heappop(heap)
        if vertex in done:
            continue
        done.add(vertex)
        if vertex == target:
            break
        for edge in graph.out_edges.get(vertex, ()):
            nxt = edge.to_vertex
            if edge.edge_id in blocked_edges or nxt in blocked_vertices or nxt in done:
                continue
            candidate = d + edge.weight
            if nxt not in dist or candidate < dist[nxt]:
                dist[nxt] = candidate
                via[nxt] = edge
                heapq.heappush(heap, (candidate, nxt))

    if target not in done:
        return None
    path: list[Edge] = []
    vertex = target
    while vertex != source:
        edge = via[vertex]
        path.append(edge)
        vertex = edge.from_vertex
    return tuple(reversed(path))


def yen_k_shortest(graph: SpanGraph, k: int) -> list[GraphPath]:
    """
    Up to k loopless shortest paths from the first to the last vertex

    Paths are edge sequences, so parallel edges over the same vertices give
    distinct paths. The result is ordered by (weight, more span edges first,
    edge labels).
    """
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    first = _shortest_path(graph, graph.source, set(), set())
    if first is None:
        return []

    accepted = [GraphPath(first)]
    seen = {accepted[0].edge_ids}
    # root edge-id prefix -> next edge ids already used after that root
    next_after_root: dict[tuple[int, ...], set[int]] = defaultdict(set)

    def register(path: GraphPath) -> None:
        ids = path.edge_ids
        for i in range(len(ids)):
            next_after_root[ids[:i]].add(ids[i])

    register(accepted[0])
    candidates: list[tuple[tuple, GraphPath]] = []

    while len(accepted) < k:
        last = accepted[-1]
        for i, spur_edge in enumerate(last.edges):
            root = last.edges[:i]
            root_ids = last.edge_ids[:i]
            blocked_vertices = {e.from_vertex for e in root}
            spur = _shortest_path(
                graph, spur_edge.from_vertex, next_after_root[root_ids], blocked_vertices
            )
            if spur is None:
                continue
            total = GraphPath(root + spur)
            if total.edge_ids in seen:
                continue
            seen.add(total.edge_ids)
            heapq.heappush(candidates, (total.sort_key(), total))

        if not candidates:
            break
        _, best = heapq.heappop(candidates)
        accepted.append(best)
        register(best)

    accepted.sort(key=GraphPath.sort_key)
    log.debug(f"Yen returned {len(accepted)} path(s) for k={k}")
    return accepted


def _structure_from_path(path: GraphPath, role_ids: Sequence[str], instance_id: str) -> SrlStructure:
    by_role = {e.label.role_id: e.label for e in path.span_edges}
    assignments = tuple(
        ArgumentAssignment(role_id=r, text=by_role[r].text, span=by_role[r].span)
        if r in by_role else ArgumentAssignment(role_id=r)
        for r in role_ids
    )
    return SrlStructure(instance_id=instance_id, assignments=assignments, total_cost=path.weight)


def select_structure(
    paths: Sequence[GraphPath],
    role_ids: Sequence[str],
    instance_id: str = "",
) -> SrlStructure:
    """
    First path covering every role exactly once; otherwise the first path
    without a repeated role (a partial structure). Paths repeating a role are
    never chosen.
    """
    wanted = set(role_ids)
    fallback: GraphPath | None = None
    for path in paths:
        roles = path.roles
        if len(roles) != len(set(roles)):
            continue
        if set(roles) == wanted:
            return _structure_from_path(path, role_ids, instance_id)
        if fallback is None:
            fallback = path

    if fallback is None:
        return SrlStructure(
            instance_id=instance_id,
            assignments=tuple(ArgumentAssignment(role_id=r) for r in role_ids),
            total_cost=0.0,
        )
    log.info(f"{instance_id}: no complete structure among {len(paths)} path(s); using a partial one")
    return _structure_from_path(fallback, role_ids, instance_id)


def infer_srl(
    instance: SrlInstance,
    k: int = 20,
    strict: bool = False,
    case_insensitive_fallback: bool = False,
) -> SrlStructure:
    """Constrained prediction: graph, K shortest paths, structure selection"""
    graph = build_span_graph(instance, strict=strict, case_insensitive_fallback=case_insensitive_fallback)
    paths = yen_k_shortest(graph, k)
    return select_structure(paths, instance.role_ids, instance.instance_id)


def unconstrained_srl(instance: SrlInstance, case_insensitive_fallback: bool = False) -> SrlStructure:
    """Each role independently takes its best located candidate at its first occurrence"""
    assignments = []
    for role in instance.roles:
        choice = ArgumentAssignment(role_id=role.role_id)
        for candidate in role.candidates:
            spans = _locate(instance.tokens, candidate.text, case_insensitive_fallback)
            if spans:
                span = spans[0]
                choice = ArgumentAssignment(
                    role_id=role.role_id,
                    text=" ".join(instance.tokens[span.start:span.end]),
                    span=span,
                )
                break
        else:
            if role.candidates:
                choice = ArgumentAssignment(role_id=role.role_id, text=role.candidates[0].text.strip())
        assignments.append(choice)
    return SrlStructure(instance_id=instance.instance_id, assignments=tuple(assignments), total_cost=0.0)
