"""
JSONL reading and writing for every record kind, plus mention-pair generation

Each line is one JSON object with `schema_version` and `kind`. Output files
start with a header line describing the run; loaders skip it.
"""
import json
import logging
from collections.abc import Callable, Iterable, Iterator, Sequence
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Any, TypeVar

from ..errors import ArtifactIOError, DataFormatError
from ..models import (
    ArgumentAssignment,
    Clustering,
    CorefGold,
    CorefInstance,
    CorefPrediction,
    LinkDecisionSet,
    Mention,
    MentionPair,
    SrlGold,
    SrlInstance,
    SrlRole,
    SrlStructure,
    ScoredCandidate,
    TokenSpan,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

T = TypeVar("T")


@dataclass(frozen=True)
class Diagnostic:
    """A line skipped while loading in partial mode"""
    line_number: int
    message: str

    def to_dict(self) -> dict:
        return {"line_number": self.line_number, "message": self.message}


def _lines(path: Path) -> Iterator[tuple[int, str]]:
    try:
        handle = path.open(encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(f"Cannot read {path}: {e}") from e
    with handle:
        for line_number, line in enumerate(handle, start=1):
            if line.strip():
                yield line_number, line


def _decode(path: Path, line_number: int, line: str) -> Any:
    try:
        return json.loads(line)
    except json.JSONDecodeError as e:
        raise DataFormatError(f"Invalid JSON ({e.msg})", line_number, path) from e


def _is_header(value: Any) -> bool:
    return isinstance(value, dict) and value.get("kind") == "header"


def iter_jsonl(path: Path) -> Iterator[tuple[int, Any]]:
    """(line number, decoded value) for every non-blank, non-header line"""
    path = Path(path)
    for line_number, line in _lines(path):
        value = _decode(path, line_number, line)
        if not _is_header(value):
            yield line_number, value


def load_records(
    path: Path,
    parse: Callable[[dict], T],
    kinds: Sequence[str],
    partial: bool = False,
) -> tuple[list[T], list[Diagnostic]]:
    """
    Parse every record of a file

    Strict mode raises DataFormatError naming the first bad line; partial mode
    skips bad lines and reports one diagnostic each.
    """
    path = Path(path)
    values: list[T] = []
    diagnostics: list[Diagnostic] = []
    for line_number, line in _lines(path):
        try:
            record = _decode(path, line_number, line)
        except DataFormatError as e:
            if not partial:
                raise
            diagnostics.append(Diagnostic(line_number, str(e)))
            continue
        if _is_header(record):
            continue
        try:
            if not isinstance(record, dict):
                raise ValueError("record is not a JSON object")
            version = record.get("schema_version")
            if version != SCHEMA_VERSION:
                raise ValueError(f"unsupported schema_version {version!r}")
            if record.get("kind") not in kinds:
                raise ValueError(f"expected kind {' or '.join(kinds)}, got {record.get('kind')!r}")
            values.append(parse(record))
        except (KeyError, TypeError, ValueError) as e:
            message = f"missing field {e}" if isinstance(e, KeyError) else str(e)
            if not partial:
                raise DataFormatError(message, line_number, path) from e
            diagnostics.append(Diagnostic(line_number, message))

    for diagnostic in diagnostics:
        log.warning(f"{path}:{diagnostic.line_number}: skipped ({diagnostic.message})")
    log.info(f"Loaded {len(values)} record(s) from {path}")
    return values, diagnostics


def write_jsonl(path: Path, records: Iterable[dict], header: dict | None = None) -> int:
    """Write records one per line, header first; returns the record count"""
    path = Path(path)
    count = 0
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as handle:
            if header is not None:
                handle.write(json.dumps(header, ensure_ascii=False) + "\n")
            for record in records:
                handle.write(json.dumps(record, ensure_ascii=False) + "\n")
                count += 1
    except OSError as e:
        raise ArtifactIOError(f"Cannot write {path}: {e}") from e
    log.info(f"Wrote {count} record(s) to {path}")
    return count


def _record(kind: str, **fields) -> dict:
    return {"schema_version": SCHEMA_VERSION, "kind": kind, **fields}


# SRL

def parse_srl_instance(record: dict, require_candidates: bool = True) -> SrlInstance:
    roles = []
    for role in record["roles"]:
        candidates = tuple(
            ScoredCandidate(text=str(c["text"]), score=float(c["score"]), rank=int(c["rank"]))
            for c in role.get("candidates", [])
        )
        roles.append(SrlRole(role_id=str(role["role_id"]), question=str(role["question"]), candidates=candidates))
    instance = SrlInstance(
        instance_id=str(record["instance_id"]),
        tokens=tuple(str(t) for t in record["tokens"]),
        predicate_index=int(record["predicate_index"]),
        roles=tuple(roles),
    )
    instance.validate(require_candidates=require_candidates)
    return instance


def srl_instance_record(instance: SrlInstance) -> dict:
    return _record(
        "srl_instance",
        instance_id=instance.instance_id,
        tokens=list(instance.tokens),
        predicate_index=instance.predicate_index,
        roles=[
            {
                "role_id": role.role_id,
                "question": role.question,
                "candidates": [
                    {"text": c.text, "score": c.score, "rank": c.rank} for c in role.candidates
                ],
            }
            for role in instance.roles
        ],
    )


def parse_srl_structure(record: dict) -> SrlStructure:
    assignments = []
    for a in record["assignments"]:
        span = None
        if a.get("start") is not None and a.get("end") is not None:
            span = TokenSpan(int(a["start"]), int(a["end"]))
        assignments.append(ArgumentAssignment(role_id=str(a["role_id"]), text=a.get("text"), span=span))
    return SrlStructure(
        instance_id=str(record["instance_id"]),
        assignments=tuple(assignments),
        total_cost=float(record.get("total_cost", 0.0)),
    )


def srl_structure_record(structure: SrlStructure) -> dict:
    return _record(
        "srl_structure",
        instance_id=structure.instance_id,
        assignments=[
            {
                "role_id": a.role_id,
                "text": a.text,
                "start": a.span.start if a.span else None,
                "end": a.span.end if a.span else None,
            }
            for a in structure.assignments
        ],
        total_cost=structure.total_cost,
        complete=structure.complete,
    )


def parse_srl_gold(record: dict) -> SrlGold:
    answers = record["answers"]
    if not isinstance(answers, dict):
        raise ValueError("answers must map role ids to answer lists")
    return SrlGold(
        instance_id=str(record["instance_id"]),
        answers=tuple((str(role), tuple(str(t) for t in texts)) for role, texts in answers.items()),
    )


def srl_gold_record(gold: SrlGold) -> dict:
    return _record(
        "srl_gold",
        instance_id=gold.instance_id,
        answers={role: list(texts) for role, texts in gold.answers},
    )


# Coreference

def parse_coref_instance(record: dict) -> CorefInstance:
    sentences = [[str(t) for t in s] for s in record.get("sentences", [])]
    mentions = []
    for m in record["mentions"]:
        mention = Mention(
            id=str(m["id"]),
            text=str(m["text"]),
            sentence_index=int(m.get("sentence_index", 0)),
            start=int(m.get("start", 0)),
            end=int(m.get("end", 0)),
        )
        if sentences and not 0 <= mention.sentence_index < len(sentences):
            raise ValueError(f"mention '{mention.id}' points at missing sentence {mention.sentence_index}")
        mentions.append(mention)
    scores = {}
    for p in record.get("pair_scores", []):
        pair = (str(p["m1"]), str(p["m2"]))
        if pair in scores or pair[::-1] in scores:
            raise ValueError(f"pair ({pair[0]}, {pair[1]}) scored twice")
        scores[pair] = float(p["score"])
    return CorefInstance.build(str(record["document_id"]), mentions, scores, sentences)


def coref_instance_record(instance: CorefInstance) -> dict:
    return _record(
        "coref_instance",
        document_id=instance.document_id,
        sentences=[list(s) for s in instance.sentences],
        mentions=[
            {"id": m.id, "text": m.text, "sentence_index": m.sentence_index, "start": m.start, "end": m.end}
            for m in instance.mentions
        ],
        pair_scores=[{"m1": a, "m2": b, "score": s} for (a, b), s in instance.pair_scores],
    )


def _parse_clusters(clusters: Any) -> Clustering:
    if not isinstance(clusters, list):
        raise ValueError("clusters must be a list of mention id lists")
    return Clustering(tuple(tuple(str(m) for m in c) for c in clusters))


def parse_coref_gold(record: dict) -> CorefGold:
    return CorefGold(document_id=str(record["document_id"]), clustering=_parse_clusters(record["clusters"]))


def coref_gold_record(gold: CorefGold) -> dict:
    return _record(
        "coref_gold",
        document_id=gold.document_id,
        clusters=[list(c) for c in gold.clustering.clusters],
    )


def parse_coref_prediction(record: dict) -> CorefPrediction:
    decisions = []
    for d in record["decisions"]:
        y = int(d["y"])
        if y not in (0, 1):
            raise ValueError(f"decision y must be 0 or 1, got {y}")
        decisions.append(((str(d["m1"]), str(d["m2"])), y))
    clusters = record.get("clusters")
    return CorefPrediction(
        document_id=str(record["document_id"]),
        solver=str(record.get("solver", "unknown")),
        decisions=LinkDecisionSet(tuple(decisions)),
        clustering=_parse_clusters(clusters) if clusters is not None else None,
        objective=record.get("objective"),
        optimal=record.get("optimal"),
    )


def coref_prediction_record(prediction: CorefPrediction) -> dict:
    clustering = prediction.clustering
    return _record(
        "coref_prediction",
        document_id=prediction.document_id,
        solver=prediction.solver,
        clusters=[list(c) for c in clustering.clusters] if clustering is not None else None,
        decisions=[{"m1": a, "m2": b, "y": y} for (a, b), y in prediction.decisions.decisions],
        objective=prediction.objective,
        optimal=prediction.optimal,
    )


def prompt_record(
    family: str,
    instance_id: str,
    key: str,
    text: str,
    prompt_id: str,
    staged: bool = False,
) -> dict:
    return _record(
        "prompt",
        prompt_id=prompt_id,
        family=family,
        instance_id=instance_id,
        key=key,
        text=text,
        staged=staged,
    )


# Public loaders

def load_srl_instances(path: Path, partial: bool = False, require_candidates: bool = True):
    return load_records(
        path, lambda r: parse_srl_instance(r, require_candidates), ("srl_instance",), partial
    )


def load_coref_instances(path: Path, partial: bool = False):
    return load_records(path, parse_coref_instance, ("coref_instance",), partial)


def load_srl_structures(path: Path, partial: bool = False):
    return load_records(path, parse_srl_structure, ("srl_structure",), partial)


def load_coref_predictions(path: Path, partial: bool = False):
    return load_records(path, parse_coref_prediction, ("coref_prediction",), partial)


def load_gold(path: Path, task: str, partial: bool = False):
    if task == "srl":
        return load_records(path, parse_srl_gold, ("srl_gold",), partial)
    return load_records(path, parse_coref_gold, ("coref_gold",), partial)


def generate_mention_pairs(mentions: Sequence[Mention], window: int | None = None) -> list[MentionPair]:
    """
    Unordered mention pairs, earlier mention first

    With a window, only mentions whose sentences are fewer than `window`
    sentences apart are paired.
    """
    if window is not None and window < 1:
        raise ValueError(f"Window must be positive, got {window}")
    return [
        (a.id, b.id)
        for a, b in combinations(mentions, 2)
        if window is None or abs(a.sentence_index - b.sentence_index) < window
    ]
