"""
Transitivity-consistent coreference clustering from pairwise link scores

The integer points of the transitivity polytope are exactly set partitions,
so All-Link inference is solved as exact correlation clustering: maximise the
sum of within-cluster link scores. Unscored pairs count as 0.
"""
import logging
import math
from dataclasses import dataclass

from ..errors import InputValidationError
from ..models import Clustering, CorefInstance, LinkDecisionSet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverReport:
    """Outcome of one All-Link solve"""
    objective: float
    nodes: int
    optimal: bool
    components: int = 0

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "nodes": self.nodes,
            "optimal": self.optimal,
            "components": self.components,
        }


def link_decision(score: float) -> int:
    """A positive score means the model prefers "Yes"; exact ties mean no link"""
    return 1 if score > 0 else 0


def unconstrained_decisions(instance: CorefInstance) -> LinkDecisionSet:
    """Independent per-pair decisions from the sign of each link score"""
    return LinkDecisionSet(tuple((pair, link_decision(s)) for pair, s in instance.pair_scores))


def clustering_objective(instance: CorefInstance, clustering: Clustering) -> float:
    """Sum of scores over scored pairs that end up in the same cluster"""
    return math.fsum(
        s for (a, b), s in instance.pair_scores if clustering.same_cluster(a, b)
    )


def _positive_components(instance: CorefInstance) -> list[list[int]]:
    """Connected components of the positive-score graph, in document order"""
    n = len(instance.mentions)
    parent = list(range(n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    position = instance.position
    for (a, b), s in instance.pair_scores:
        if s > 0:
            ra, rb = find(position[a]), find(position[b])
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)

    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return sorted(groups.values(), key=lambda g: g[0])


class _ComponentSearch:
    """Depth-first branch and bound over sequential cluster assignment"""

    def __init__(self, weights: list[list[float]], node_budget: int):
        self.w = weights
        self.n = len(weights)
        self.node_budget = node_budget
        self.nodes = 0
        self.exhausted = False

        # positive mass among mentions u < v with u >= i
        self.pos_suffix = [0.0] * (self.n + 1)
        for i in range(self.n - 1, -1, -1):
            self.pos_suffix[i] = self.pos_suffix[i + 1] + sum(
                max(0.0, self.w[i][v]) for v in range(i + 1, self.n)
            )

        self.clusters: list[list[int]] = []
        # gain[c][u]: summed weight between unassigned u and members of cluster c
        self.gain: list[list[float]] = []
        self.best_objective = 0.0
        self.best: list[list[int]] = [[i] for i in range(self.n)]
        self._seed_incumbent()

    def _seed_incumbent(self) -> None:
        """Greedy pass: each mention joins the cluster it gains most from, if positive"""
        clusters: list[list[int]] = []
        total = 0.0
        for i in range(self.n):
            gains = [sum(self.w[i][m] for m in c) for c in clusters]
            if gains and max(gains) > 0:
                best = gains.index(max(gains))
                clusters[best].append(i)
                total += gains[best]
            else:
                clusters.append([i])
        if total > self.best_objective:
            self.best_objective = total
            self.best = [list(c) for c in clusters]

    def _join(self, i: int, c: int) -> None:
        if c == len(self.clusters):
            self.clusters.append([])
            self.gain.append([0.0] * self.n)
        self.clusters[c].append(i)
        row = self.gain[c]
        for u in range(i + 1, self.n):
            row[u] += self.w[u][i]

    def _leave(self, i: int, c: int) -> None:
        self.clusters[c].pop()
        row = self.gain[c]
        for u in range(i + 1, self.n):
            row[u] -= self.w[u][i]
        if not self.clusters[c]:
            self.clusters.pop()
            self.gain.pop()

    def _bound(self, objective: float, next_index: int) -> float:
        bound = objective + self.pos_suffix[next_index]
        for u in range(next_index, self.n):
            best = 0.0
            for row in self.gain:
                if row[u] > best:
                    best = row[u]
            bound += best
        return bound

    def _tolerance(self) -> float:
        return 1e-9 * (1.0 + abs(self.best_objective))

    def run(self) -> None:
        if self.n:
            self._visit(0, 0.0)

    def _visit(self, i: int, objective: float) -> None:
        if self.nodes >= self.node_budget:
            self.exhausted = True
            return
        self.nodes += 1

        if i == self.n:
            if objective > self.best_objective:
                self.best_objective = objective
                self.best = [list(c) for c in self.clusters]
            return

        children = []
        for c in range(len(self.clusters) + 1):
            gain = self.gain[c][i] if c < len(self.clusters) else 0.0
            self._join(i, c)
            children.append((self._bound(objective + gain, i + 1), c, gain))
            self._leave(i, c)
        children.sort(key=lambda child: (-child[0], child[1]))

        for bound, c, gain in children:
            if bound <= self.best_objective - self._tolerance():
                break
            self._join(i, c)
            self._visit(i + 1, objective + gain)
            self._leave(i, c)
            if self.exhausted:
                return


def all_link_solve(instance: CorefInstance, node_limit: int = 10_000_000) -> tuple[Clustering, SolverReport]:
    """
    Exact maximiser of the summed within-cluster link scores

    Components of the positive-score graph are solved independently: a
    cluster spanning two of them can be split without losing score.
    """
    components = _positive_components(instance)
    ids = instance.mention_ids
    position = instance.position
    groups: list[list[str]] = []
    nodes = 0
    optimal = True

    for component in components:
        if len(component) == 1:
            groups.append([ids[component[0]]])
            continue
        local = {g: k for k, g in enumerate(component)}
        weights = [[0.0] * len(component) for _ in component]
        for (a, b), s in instance.pair_scores:
            ia, ib = position[a], position[b]
            if ia in local and ib in local:
                weights[local[ia]][local[ib]] = s
                weights[local[ib]][local[ia]] = s

        search = _ComponentSearch(weights, max(node_limit - nodes, 0))
        search.run()
        nodes += search.nodes
        if search.exhausted:
            optimal = False
        groups.extend([ids[component[k]] for k in cluster] for cluster in search.best)

    clustering = Clustering.from_groups(groups, order=ids)
    report = SolverReport(
        objective=clustering_objective(instance, clustering),
        nodes=nodes,
        optimal=optimal,
        components=len(components),
    )
    if not optimal:
        log.warning(
            f"{instance.document_id}: node limit {node_limit} reached; "
            f"returning best incumbent (objective {report.objective:.4f})"
        )
    else:
        log.debug(f"{instance.document_id}: All-Link optimum {report.objective:.4f} in {nodes} nodes")
    return clustering, report


def _set_partitions(n: int):
    """Restricted growth strings: labels[i] <= max(labels[:i]) + 1"""
    if n == 0:
        yield []
        return
    labels = [0] * n

    def extend(i: int, top: int):
        if i == n:
            yield list(labels)
            return
        for label in range(top + 2):
            labels[i] = label
            yield from extend(i + 1, max(top, label))

    labels[0] = 0
    yield from extend(1, 0)


def brute_force_clustering(instance: CorefInstance, max_mentions: int = 10) -> Clustering:
    """Bell-number enumeration of every partition; the test oracle for All-Link"""
    n = len(instance.mentions)
    if n > max_mentions:
        raise InputValidationError(
            f"Brute-force clustering accepts at most {max_mentions} mentions, got {n}"
        )
    ids = instance.mention_ids
    position = instance.position
    scored = [(position[a], position[b], s) for (a, b), s in instance.pair_scores]

    best_key = None
    best_labels: list[int] = []
    for labels in _set_partitions(n):
        objective = math.fsum(s for a, b, s in scored if labels[a] == labels[b])
        count = max(labels) + 1 if labels else 0
        signature = tuple(
            tuple(i for i in range(n) if labels[i] == c) for c in range(count)
        )
        # maximise objective, then prefer more clusters, then the smaller signature
        key = (-objective, -count, signature)
        if best_key is None or key < best_key:
            best_key = key
            best_labels = labels

    groups: dict[int, list[str]] = {}
    for i, label in enumerate(best_labels):
        groups.setdefault(label, []).append(ids[i])
    return Clustering.from_groups(groups.values(), order=ids)


def r2l_assign(instance: CorefInstance, decisions: LinkDecisionSet) -> Clustering:
    """Scan left to right; join the cluster of the closest earlier mention linked by a Yes"""
    ids = instance.mention_ids
    cluster_of: dict[str, int] = {}
    clusters: list[list[str]] = []
    for i, mention_id in enumerate(ids):
        for j in range(i - 1, -1, -1):
            if decisions.get(ids[j], mention_id) == 1:
                c = cluster_of[ids[j]]
                break
        else:
            c = len(clusters)
            clusters.append([])
        clusters[c].append(mention_id)
        cluster_of[mention_id] = c
    return Clustering.from_groups(clusters, order=ids)


def baseline_all_yes(instance: CorefInstance) -> Clustering:
    ids = instance.mention_ids
    return Clustering((tuple(ids),) if ids else ())


def baseline_all_no(instance: CorefInstance) -> Clustering:
    return Clustering(tuple((m,) for m in instance.mention_ids))
