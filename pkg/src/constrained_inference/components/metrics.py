"""
Evaluation for both tasks

SRL: exact/head accuracy at question and structure level plus the overlap
inconsistency percent. Coreference: pairwise F1, MUC, B-cubed, CEAF_e, the
CoNLL average and the conditional transitivity violation percent.

Cluster metrics keep their numerators and denominators so that several
documents can be summed before precision/recall are taken.
"""
import logging
import math
import unicodedata
from collections import Counter, defaultdict
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.optimize import linear_sum_assignment

from ..errors import AlignmentError
from ..models import (
    Clustering,
    CorefGold,
    CorefPrediction,
    LinkDecisionSet,
    SrlGold,
    SrlStructure,
)

log = logging.getLogger(__name__)

DETERMINERS = frozenset({"a", "an", "the"})

HeadFinder = Callable[[str], str]


def _f1(a: float, b: float) -> float:
    if a + b:
        return 2 * a * b / (a + b)
    return 0.0


@dataclass(frozen=True)
class PRF:
    """Precision/recall/F1 with the counts they came from"""
    p_num: float
    p_den: float
    r_num: float
    r_den: float

    @property
    def precision(self) -> float:
        return self.p_num / self.p_den if self.p_den > 0 else 0.0

    @property
    def recall(self) -> float:
        return self.r_num / self.r_den if self.r_den > 0 else 0.0

    @property
    def f1(self) -> float:
        return _f1(self.precision, self.recall)

    @property
    def degenerate(self) -> bool:
        """A zero denominator forced precision or recall to 0"""
        return self.p_den <= 0 or self.r_den <= 0

    def __add__(self, other: "PRF") -> "PRF":
        return PRF(
            self.p_num + other.p_num,
            self.p_den + other.p_den,
            self.r_num + other.r_num,
            self.r_den + other.r_den,
        )

    @classmethod
    def zero(cls) -> "PRF":
        return cls(0.0, 0.0, 0.0, 0.0)

    def to_dict(self, prefix: str) -> dict[str, float]:
        return {
            f"{prefix}_precision": self.precision,
            f"{prefix}_recall": self.recall,
            f"{prefix}_f1": self.f1,
        }


def percent(num: float, den: float) -> float:
    return 100.0 * num / den if den > 0 else 0.0


def _is_punctuation(token: str) -> bool:
    return all(unicodedata.category(ch).startswith("P") for ch in token)


def head_of(span_text: str) -> str:
    """
    Surface head: drop trailing punctuation tokens and leading determiners,
    then take the last remaining token, case-folded
    """
    tokens = span_text.split()
    if not tokens:
        return ""
    kept = list(tokens)
    while kept and _is_punctuation(kept[-1]):
        kept.pop()
    while kept and kept[0].casefold() in DETERMINERS:
        kept.pop(0)
    if not kept:
        return tokens[-1].casefold()
    return kept[-1].casefold()


def _normalize(text: str) -> str:
    return " ".join(text.split())


# SRL

@dataclass(frozen=True)
class OverlapCounts:
    violating_pairs: int = 0
    comparable_pairs: int = 0
    violating_structures: int = 0
    structures: int = 0

    @property
    def rho_pair(self) -> float:
        return percent(self.violating_pairs, self.comparable_pairs)

    @property
    def rho_structure(self) -> float:
        return percent(self.violating_structures, self.structures)


def srl_overlap_counts(pred: Iterable[SrlStructure]) -> OverlapCounts:
    violating = comparable = bad_structures = structures = 0
    for structure in pred:
        structures += 1
        spans = structure.assigned_spans()
        clashes = sum(1 for a, b in combinations(spans, 2) if a.overlaps(b))
        comparable += len(spans) * (len(spans) - 1) // 2
        violating += clashes
        if clashes:
            bad_structures += 1
    return OverlapCounts(violating, comparable, bad_structures, structures)


def rho_srl(pred: Iterable[SrlStructure]) -> tuple[float, float]:
    """(pair-level, structure-level) percent of overlapping argument spans"""
    counts = srl_overlap_counts(pred)
    return counts.rho_pair, counts.rho_structure


@dataclass
class SrlEvalReport:
    exact_q: float
    exact_s: float
    head_q: float
    head_s: float
    rho_pair: float
    rho_structure: float
    questions: int
    structures: int
    violating_pairs: int
    comparable_pairs: int
    violating_structures: int
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "exact_q": self.exact_q,
            "exact_s": self.exact_s,
            "head_q": self.head_q,
            "head_s": self.head_s,
            "rho": self.rho_pair,
            "rho_pair": self.rho_pair,
            "rho_structure": self.rho_structure,
            "questions": self.questions,
            "structures": self.structures,
            "violating_pairs": self.violating_pairs,
            "comparable_pairs": self.comparable_pairs,
            "violating_structures": self.violating_structures,
            "flags": list(self.flags),
        }

    def format_table(self) -> str:
        rows = [
            ("Exact_q", self.exact_q), ("Exact_s", self.exact_s),
            ("Head_q", self.head_q), ("Head_s", self.head_s),
            ("rho (pairs)", self.rho_pair), ("rho (structures)", self.rho_structure),
        ]
        output = f"SRL evaluation: {self.structures} structure(s), {self.questions} question(s)\n\n"
        output += f"{'Metric':<18}{'%':>8}\n"
        output += "-" * 26 + "\n"
        for name, value in rows:
            output += f"{name:<18}{value:>8.2f}\n"
        if self.flags:
            output += "\nFlags: " + ", ".join(self.flags) + "\n"
        return output


def _align(pred_ids: Sequence[str], gold_ids: Sequence[str], what: str) -> None:
    for ids, side in ((pred_ids, "prediction"), (gold_ids, "gold")):
        duplicates = [i for i, n in Counter(ids).items() if n > 1]
        if duplicates:
            raise AlignmentError(f"Duplicate {what} ids in {side}", list(duplicates))
    mismatch = set(pred_ids) ^ set(gold_ids)
    if mismatch:
        raise AlignmentError(f"Predictions and gold disagree on {what} ids", list(mismatch))


def srl_eval(
    pred: Sequence[SrlStructure],
    gold: Sequence[SrlGold],
    head_finder: HeadFinder = head_of,
) -> SrlEvalReport:
    """Question- and structure-level exact/head accuracy; unassigned roles count as wrong"""
    _align([p.instance_id for p in pred], [g.instance_id for g in gold], "instance")
    gold_by_id = {g.instance_id: g for g in gold}

    questions = exact_q = head_q = exact_s = head_s = 0
    role_mismatch: list[str] = []
    for structure in sorted(pred, key=lambda s: s.instance_id):
        answers = gold_by_id[structure.instance_id].by_role
        predicted_roles = {a.role_id for a in structure.assignments}
        if predicted_roles != set(answers):
            role_mismatch.extend(
                f"{structure.instance_id}:{r}" for r in predicted_roles ^ set(answers)
            )
            continue
        all_exact = all_head = True
        for role_id, acceptable in answers.items():
            questions += 1
            assignment = structure.get(role_id)
            exact = head = False
            if assignment is not None and assignment.assigned:
                text = _normalize(assignment.text)
                exact = any(text == _normalize(g) for g in acceptable)
                head = any(head_finder(text) == head_finder(g) for g in acceptable if g.strip())
            exact_q += exact
            head_q += head
            all_exact &= exact
            all_head &= head
        exact_s += all_exact
        head_s += all_head

    if role_mismatch:
        raise AlignmentError("Predicted and gold roles differ", role_mismatch)

    overlap = srl_overlap_counts(pred)
    flags = []
    if overlap.comparable_pairs == 0:
        flags.append("rho_pair_zero_denominator")
    if questions == 0:
        flags.append("no_questions")
    structures = len(pred)
    return SrlEvalReport(
        exact_q=percent(exact_q, questions),
        exact_s=percent(exact_s, structures),
        head_q=percent(head_q, questions),
        head_s=percent(head_s, structures),
        rho_pair=overlap.rho_pair,
        rho_structure=overlap.rho_structure,
        questions=questions,
        structures=structures,
        violating_pairs=overlap.violating_pairs,
        comparable_pairs=overlap.comparable_pairs,
        violating_structures=overlap.violating_structures,
        flags=flags,
    )


# Coreference

def pairwise_f1(pred_decisions: LinkDecisionSet, gold: Clustering) -> PRF:
    """Positive-class P/R/F1 of the link decisions, over the scored pairs only"""
    tp = fp = fn = 0
    for (a, b), y in pred_decisions.decisions:
        if a not in gold.cluster_of or b not in gold.cluster_of:
            raise AlignmentError("Decision names a mention missing from gold", [a if a not in gold.cluster_of else b])
        same = gold.same_cluster(a, b)
        if y == 1 and same:
            tp += 1
        elif y == 1:
            fp += 1
        elif same:
            fn += 1
    return PRF(tp, tp + fp, tp, tp + fn)


def conditional_violations(decisions: LinkDecisionSet) -> tuple[int, int]:
    """
    (violations, antecedents) over triples whose three pairs are all decided

    Each triple yields three antecedents, one per choice of shared mention j:
    y_ij = y_jk = 1 is an antecedent, and it is violated when y_ik = 0.
    """
    neighbours: dict[str, set[str]] = defaultdict(set)
    order: dict[str, int] = {}
    for a, b in decisions.pairs:
        neighbours[a].add(b)
        neighbours[b].add(a)
        order.setdefault(a, len(order))
        order.setdefault(b, len(order))

    violations = antecedents = 0
    for a in sorted(neighbours, key=order.__getitem__):
        for b in neighbours[a]:
            if order[b] <= order[a]:
                continue
            for c in neighbours[a] & neighbours[b]:
                if order[c] <= order[b]:
                    continue
                ab, bc, ac = decisions.get(a, b), decisions.get(b, c), decisions.get(a, c)
                for left, right, closing in ((ab, bc, ac), (ab, ac, bc), (ac, bc, ab)):
                    if left == 1 and right == 1:
                        antecedents += 1
                        if closing == 0:
                            violations += 1
    return violations, antecedents


def rho_coref(pred_decisions: LinkDecisionSet) -> float:
    """Percent of activated transitivity antecedents whose closing link is missing"""
    violations, antecedents = conditional_violations(pred_decisions)
    return percent(violations, antecedents)


def _check_universe(pred: Clustering, gold: Clustering) -> None:
    mismatch = pred.mention_ids ^ gold.mention_ids
    if mismatch:
        raise AlignmentError("Predicted and gold clusterings cover different mentions", list(mismatch))


def _muc_side(keys: list[frozenset[str]], responses: Clustering) -> tuple[float, float]:
    num = den = 0
    for key in keys:
        parts = {responses.cluster_of[m] for m in key}
        num += len(key) - len(parts)
        den += len(key) - 1
    return num, den


def muc(pred: Clustering, gold: Clustering) -> PRF:
    """Link-based MUC score"""
    _check_universe(pred, gold)
    r_num, r_den = _muc_side(gold.as_sets(), pred)
    p_num, p_den = _muc_side(pred.as_sets(), gold)
    return PRF(p_num, p_den, r_num, r_den)


def b_cubed(pred: Clustering, gold: Clustering) -> PRF:
    """Mention-averaged B-cubed score"""
    _check_universe(pred, gold)
    pred_sets = pred.as_sets()
    gold_sets = gold.as_sets()
    p_num = r_num = 0.0
    for mention in sorted(gold.mention_ids):
        response = pred_sets[pred.cluster_of[mention]]
        key = gold_sets[gold.cluster_of[mention]]
        overlap = len(response & key)
        p_num += overlap / len(response)
        r_num += overlap / len(key)
    n = len(gold.mention_ids)
    return PRF(p_num, n, r_num, n)


def phi4(key: frozenset[str], response: frozenset[str]) -> float:
    """Entity similarity 2|K & R| / (|K| + |R|)"""
    if key and response:
        return 2 * len(key & response) / (len(key) + len(response))
    return 0.0


def ceaf_e(pred: Clustering, gold: Clustering) -> PRF:
    """Entity-based CEAF with an optimal one-to-one cluster alignment"""
    _check_universe(pred, gold)
    gold_sets = gold.as_sets()
    pred_sets = pred.as_sets()
    if not gold_sets or not pred_sets:
        return PRF(0.0, len(pred_sets), 0.0, len(gold_sets))
    similarity = np.array([[phi4(k, r) for r in pred_sets] for k in gold_sets])
    rows, cols = linear_sum_assignment(similarity, maximize=True)
    total = math.fsum(similarity[rows, cols].tolist())
    return PRF(total, len(pred_sets), total, len(gold_sets))


def conll_avg(muc_f1: float, b3_f1: float, ceafe_f1: float) -> float:
    """CoNLL score: mean of the three cluster F1 values, as a percentage"""
    return 100.0 * (muc_f1 + b3_f1 + ceafe_f1) / 3


@dataclass
class CorefEvalReport:
    pairwise: PRF
    muc: PRF | None
    b_cubed: PRF | None
    ceaf_e: PRF | None
    rho: float
    antecedents: int
    violations: int
    documents: int
    flags: list[str] = field(default_factory=list)

    @property
    def conll(self) -> float | None:
        if self.muc is None or self.b_cubed is None or self.ceaf_e is None:
            return None
        return conll_avg(self.muc.f1, self.b_cubed.f1, self.ceaf_e.f1)

    def to_dict(self) -> dict:
        report: dict = {}
        report.update(self.pairwise.to_dict("pairwise"))
        for name, prf in (("muc", self.muc), ("b_cubed", self.b_cubed), ("ceaf_e", self.ceaf_e)):
            if prf is None:
                report.update({f"{name}_precision": None, f"{name}_recall": None, f"{name}_f1": None})
            else:
                report.update(prf.to_dict(name))
        report.update({
            "conll": self.conll,
            "rho": self.rho,
            "antecedents": self.antecedents,
            "violations": self.violations,
            "documents": self.documents,
            "flags": list(self.flags),
        })
        return report

    def format_table(self) -> str:
        def pct(value: float | None) -> str:
            return "N/A" if value is None else f"{100 * value:.2f}"

        output = f"Coreference evaluation: {self.documents} document(s)\n\n"
        output += f"{'Metric':<12}{'P':>8}{'R':>8}{'F1':>8}\n"
        output += "-" * 36 + "\n"
        for name, prf in (
            ("Pairwise", self.pairwise), ("MUC", self.muc),
            ("B3", self.b_cubed), ("CEAF_e", self.ceaf_e),
        ):
            if prf is None:
                output += f"{name:<12}{'N/A':>8}{'N/A':>8}{'N/A':>8}\n"
            else:
                output += f"{name:<12}{pct(prf.precision):>8}{pct(prf.recall):>8}{pct(prf.f1):>8}\n"
        conll = "N/A" if self.conll is None else f"{self.conll:.2f}"
        output += f"\nCoNLL: {conll}\n"
        output += f"rho: {self.rho:.2f} ({self.violations}/{self.antecedents} antecedents)\n"
        if self.flags:
            output += "Flags: " + ", ".join(self.flags) + "\n"
        return output


def coref_eval(pred: Sequence[CorefPrediction], gold: Sequence[CorefGold]) -> CorefEvalReport:
    """Sum per-document counts, then compute every coreference metric"""
    _align([p.document_id for p in pred], [g.document_id for g in gold], "document")
    gold_by_id = {g.document_id: g.clustering for g in gold}

    pairwise = PRF.zero()
    cluster_scores: dict[str, PRF] | None = {"muc": PRF.zero(), "b_cubed": PRF.zero(), "ceaf_e": PRF.zero()}
    violations = antecedents = 0

    for prediction in sorted(pred, key=lambda p: p.document_id):
        key = gold_by_id[prediction.document_id]
        pairwise = pairwise + pairwise_f1(prediction.decisions, key)
        v, a = conditional_violations(prediction.decisions)
        violations += v
        antecedents += a
        if prediction.clustering is None:
            cluster_scores = None
        elif cluster_scores is not None:
            cluster_scores["muc"] += muc(prediction.clustering, key)
            cluster_scores["b_cubed"] += b_cubed(prediction.clustering, key)
            cluster_scores["ceaf_e"] += ceaf_e(prediction.clustering, key)

    flags = []
    if pairwise.degenerate:
        flags.append("pairwise_zero_denominator")
    if antecedents == 0:
        flags.append("rho_zero_denominator")
    if cluster_scores is not None:
        for name, prf in cluster_scores.items():
            if prf.degenerate:
                flags.append(f"{name}_zero_denominator")
    for flag in flags:
        log.warning(f"Degenerate metric: {flag} (reported as 0)")

    return CorefEvalReport(
        pairwise=pairwise,
        muc=cluster_scores["muc"] if cluster_scores else None,
        b_cubed=cluster_scores["b_cubed"] if cluster_scores else None,
        ceaf_e=cluster_scores["ceaf_e"] if cluster_scores else None,
        rho=percent(violations, antecedents),
        antecedents=antecedents,
        violations=violations,
        documents=len(pred),
        flags=flags,
    )
