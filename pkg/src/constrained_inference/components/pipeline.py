"""
Command drivers shared by the CLI and the tool server

Each driver takes a validated RunConfig, reads its input, runs the chosen
solver or scorer and writes JSONL output. Outputs are a pure function of the
input and the configuration, so two identical runs produce identical files.
"""
import asyncio
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import httpx

from ..config import RunConfig
from ..errors import ArtifactIOError, InputValidationError, SolverBudgetError, TemplateError
from ..models import (
    CorefInstance,
    CorefPrediction,
    Mention,
    SrlInstance,
    SrlRole,
    SrlStructure,
)
from . import ingest
from .coref_solver import (
    SolverReport,
    all_link_solve,
    baseline_all_no,
    baseline_all_yes,
    clustering_objective,
    r2l_assign,
    unconstrained_decisions,
)
from .metrics import (
    CorefEvalReport,
    SrlEvalReport,
    conditional_violations,
    coref_eval,
    percent,
    srl_eval,
    srl_overlap_counts,
)
from .prompts import (
    CHOICES,
    PriorAnswer,
    PromptRequest,
    link_request,
    prompt_id,
    render_iterative_prompt,
    render_prompt,
    staged_iterative_prompts,
)
from .scorer import Scorer, ScoreRequest, build_scorer, choice_link_score
from .span_graph import build_span_graph, select_structure, unconstrained_srl, yen_k_shortest

log = logging.getLogger(__name__)

DEFAULT_FAMILY = {"srl": "t5-qa", "coref": "coref-flan"}

EXIT_OK = 0
EXIT_BUDGET = SolverBudgetError.exit_code


@dataclass
class RunOutcome:
    """What a command produced; exit_code is non-zero only for a kept budget incumbent"""
    output_path: Path | None
    records: int
    exit_code: int = EXIT_OK
    manifest: dict[str, Any] = field(default_factory=dict)


def _require(path: Path | None, what: str) -> Path:
    if path is None:
        raise InputValidationError(f"Missing {what} path")
    return Path(path)


def manifest_path(output_path: Path) -> Path:
    return output_path.with_name(output_path.name + ".manifest.json")


def write_json(path: Path, payload: dict) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(f"Cannot write {path}: {e}") from e


def _map(function, items: list, jobs: int) -> list:
    """Order-preserving map, in worker processes when jobs > 1"""
    if jobs <= 1 or len(items) <= 1:
        return [function(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(function, items, chunksize=max(1, len(items) // (4 * jobs))))


# infer

def solve_srl_instance(args: tuple[SrlInstance, str, int, bool, bool]) -> tuple[SrlStructure, dict]:
    instance, solver, k, strict, case_insensitive = args
    if solver == "unconstrained":
        structure = unconstrained_srl(instance, case_insensitive_fallback=case_insensitive)
        return structure, {"instance_id": instance.instance_id, "complete": structure.complete}

    graph = build_span_graph(instance, strict=strict, case_insensitive_fallback=case_insensitive)
    paths = yen_k_shortest(graph, k)
    structure = select_structure(paths, instance.role_ids, instance.instance_id)
    log.debug(
        f"{instance.instance_id}: {len(graph.edges)} edge(s), {len(paths)} path(s), "
        f"cost {structure.total_cost:.4f}"
    )
    return structure, {
        "instance_id": instance.instance_id,
        "complete": structure.complete,
        "paths": len(paths),
        "dropped_candidates": graph.dropped_candidates,
        "unassignable_roles": list(graph.unassignable_roles),
    }


def solve_coref_instance(args: tuple[CorefInstance, str, int]) -> tuple[CorefPrediction, dict]:
    instance, solver, node_limit = args
    doc = instance.document_id
    if solver == "unconstrained":
        prediction = CorefPrediction(doc, solver, unconstrained_decisions(instance))
        return prediction, {"document_id": doc}

    report: SolverReport | None = None
    if solver == "constrained":
        clustering, report = all_link_solve(instance, node_limit=node_limit)
    elif solver == "r2l":
        clustering = r2l_assign(instance, unconstrained_decisions(instance))
    elif solver == "all-yes":
        clustering = baseline_all_yes(instance)
    else:
        clustering = baseline_all_no(instance)

    prediction = CorefPrediction(
        document_id=doc,
        solver=solver,
        decisions=clustering.induced_decisions(instance.pairs),
        clustering=clustering,
        objective=clustering_objective(instance, clustering),
        optimal=report.optimal if report is not None else None,
    )
    details = {"document_id": doc, "objective": prediction.objective, "clusters": len(clustering)}
    if report is not None:
        details.update(report.to_dict())
    return prediction, details


def _srl_manifest(structures: list[SrlStructure], details: list[dict]) -> dict[str, Any]:
    complete = sum(1 for d in details if d["complete"])
    overlaps = srl_overlap_counts(structures)
    return {
        "instances": len(details),
        "complete": complete,
        "partial": len(details) - complete,
        "dropped_candidates": sum(d.get("dropped_candidates", 0) for d in details),
        "unassignable_roles": {
            d["instance_id"]: d["unassignable_roles"] for d in details if d.get("unassignable_roles")
        },
        "rho": overlaps.rho_pair,
        "rho_pair": overlaps.rho_pair,
        "rho_structure": overlaps.rho_structure,
        "violating_pairs": overlaps.violating_pairs,
        "comparable_pairs": overlaps.comparable_pairs,
        "violating_structures": overlaps.violating_structures,
    }


def _coref_manifest(predictions: list[CorefPrediction], details: list[dict]) -> dict[str, Any]:
    violations = antecedents = 0
    for prediction in predictions:
        v, a = conditional_violations(prediction.decisions)
        violations += v
        antecedents += a
    return {
        "documents": details,
        "non_optimal": [d["document_id"] for d in details if d.get("optimal") is False],
        "rho": percent(violations, antecedents),
        "violations": violations,
        "antecedents": antecedents,
    }


def run_infer(config: RunConfig) -> RunOutcome:
    """Predict structures for every instance of the input file"""
    input_path = _require(config.input_path, "input")
    output_path = _require(config.output_path, "output")
    manifest: dict[str, Any] = {
        "schema_version": ingest.SCHEMA_VERSION,
        "kind": "manifest",
        "run_config": config.model_dump(mode="json"),
    }
    exit_code = EXIT_OK

    if config.task == "srl":
        instances, diagnostics = ingest.load_srl_instances(input_path, partial=config.partial)
        results = _map(
            solve_srl_instance,
            [
                (i, config.solver, config.k, config.strict, config.case_insensitive_fallback)
                for i in instances
            ],
            config.jobs,
        )
        structures = [s for s, _ in results]
        records = [ingest.srl_structure_record(s) for s in structures]
        manifest["srl"] = _srl_manifest(structures, [d for _, d in results])
    else:
        instances, diagnostics = ingest.load_coref_instances(input_path, partial=config.partial)
        results = _map(
            solve_coref_instance,
            [(i, config.solver, config.node_limit) for i in instances],
            config.jobs,
        )
        predictions = [p for p, _ in results]
        records = [ingest.coref_prediction_record(p) for p in predictions]
        manifest["coref"] = _coref_manifest(predictions, [d for _, d in results])
        non_optimal = manifest["coref"]["non_optimal"]
        if non_optimal:
            if config.fail_on_budget:
                raise SolverBudgetError(non_optimal, config.node_limit)
            log.warning(f"{len(non_optimal)} document(s) kept a non-optimal incumbent")
            exit_code = EXIT_BUDGET

    manifest["diagnostics"] = [d.to_dict() for d in diagnostics]
    manifest["exit_code"] = exit_code
    count = ingest.write_jsonl(output_path, records, header=config.header())
    write_json(manifest_path(output_path), manifest)
    log.info(f"infer: {count} {config.task} prediction(s) with solver '{config.solver}'")
    return RunOutcome(output_path, count, exit_code, manifest)


# eval

def run_eval(
    task: str,
    pred_path: Path,
    gold_path: Path,
    report_path: Path | None = None,
) -> SrlEvalReport | CorefEvalReport:
    """Score predictions against gold and write the machine-readable report"""
    pred_path = Path(pred_path)
    gold, _ = ingest.load_gold(gold_path, task)
    if task == "srl":
        pred, _ = ingest.load_srl_structures(pred_path)
        report = srl_eval(pred, gold)
    else:
        pred, _ = ingest.load_coref_predictions(pred_path)
        report = coref_eval(pred, gold)

    report_path = Path(report_path) if report_path else pred_path.with_name(pred_path.name + ".report.json")
    write_json(report_path, {"task": task, **report.to_dict()})
    log.info(f"eval: report written to {report_path}")
    return report


# prompts

def _family(config: RunConfig) -> str:
    return config.template_family or DEFAULT_FAMILY[config.task]


def _srl_prompt_records(instance: SrlInstance, family: str) -> list[dict]:
    context = instance.sentence
    if family == "flan-iterative":
        staged = staged_iterative_prompts(context, [(r.role_id, r.question) for r in instance.roles])
        return [
            ingest.prompt_record(family, instance.instance_id, role_id, text, prompt_id(text), staged=n > 0)
            for n, (role_id, text) in enumerate(staged)
        ]
    records = []
    for role in instance.roles:
        text = render_prompt(PromptRequest(family=family, question=role.question, context=context))
        records.append(ingest.prompt_record(family, instance.instance_id, role.role_id, text, prompt_id(text)))
    return records


def _mention_pairs(instance: CorefInstance, window: int | None) -> list[tuple[Mention, Mention]]:
    by_id = {m.id: m for m in instance.mentions}
    return [(by_id[a], by_id[b]) for a, b in ingest.generate_mention_pairs(instance.mentions, window)]


def run_prompts(config: RunConfig) -> RunOutcome:
    """Render one prompt per question (SRL) or per windowed mention pair (coreference)"""
    input_path = _require(config.input_path, "input")
    output_path = _require(config.output_path, "output")
    family = _family(config)
    records: list[dict] = []

    if config.task == "srl":
        instances, _ = ingest.load_srl_instances(input_path, require_candidates=False)
        for instance in instances:
            try:
                records.extend(_srl_prompt_records(instance, family))
            except TemplateError as e:
                raise TemplateError(f"{instance.instance_id}: {e}") from e
    else:
        documents, _ = ingest.load_coref_instances(input_path)
        for doc in documents:
            for m1, m2 in _mention_pairs(doc, config.window):
                try:
                    req = link_request(family, doc, m1, m2, config.context_style, config.highlight_mentions)
                    text = render_prompt(req)
                except TemplateError as e:
                    raise TemplateError(f"{doc.document_id}/{m1.id}|{m2.id}: {e}") from e
                records.append(
                    ingest.prompt_record(family, doc.document_id, f"{m1.id}|{m2.id}", text, prompt_id(text))
                )

    count = ingest.write_jsonl(output_path, records, header=config.header())
    return RunOutcome(output_path, count)


# score

async def _score_srl_instance(scorer: Scorer, instance: SrlInstance, family: str, top_n: int) -> SrlInstance:
    context = instance.sentence
    roles = []
    if family == "flan-iterative":
        # stateless scorer: each question is re-rendered with the answers so far
        prior: list[PriorAnswer] = []
        order = list(instance.role_ids)
        for role in instance.roles:
            text = render_iterative_prompt(PromptRequest(
                family=family, question=role.question, context=context,
                prior=list(prior), role_id=role.role_id, question_order=order,
            ))
            candidates = await scorer.score(ScoreRequest(prompt=text, n=top_n))
            roles.append(SrlRole(role.role_id, role.question, candidates))
            answer = candidates[0].text if candidates else ""
            prior.append(PriorAnswer(question=role.question, answer=answer, role_id=role.role_id))
    else:
        requests = [
            ScoreRequest(
                prompt=render_prompt(PromptRequest(family=family, question=r.question, context=context)),
                n=top_n,
            )
            for r in instance.roles
        ]
        results = await scorer.score_many(requests)
        roles = [SrlRole(r.role_id, r.question, c) for r, c in zip(instance.roles, results)]
    return SrlInstance(instance.instance_id, instance.tokens, instance.predicate_index, tuple(roles))


async def _score_coref_document(scorer: Scorer, doc: CorefInstance, config: RunConfig, family: str) -> CorefInstance:
    yes, no = CHOICES[family]
    pairs = _mention_pairs(doc, config.window)
    requests = [
        ScoreRequest(
            prompt=render_prompt(
                link_request(family, doc, m1, m2, config.context_style, config.highlight_mentions)
            ),
            mode="choices",
            choices=(yes, no),
        )
        for m1, m2 in pairs
    ]
    results = await scorer.score_many(requests)
    scores = {(m1.id, m2.id): choice_link_score(c, yes, no) for (m1, m2), c in zip(pairs, results)}
    return CorefInstance.build(doc.document_id, doc.mentions, scores, doc.sentences)


async def score_async(config: RunConfig, transport: httpx.AsyncBaseTransport | None = None) -> RunOutcome:
    input_path = _require(config.input_path, "input")
    output_path = _require(config.output_path, "output")
    family = _family(config)
    scorer = build_scorer(config.backend, seed=config.seed, family=family, transport=transport)
    try:
        if config.task == "srl":
            instances, _ = ingest.load_srl_instances(input_path, require_candidates=False)
            scored = await asyncio.gather(
                *(_score_srl_instance(scorer, i, family, config.top_n) for i in instances)
            )
            records = [ingest.srl_instance_record(i) for i in scored]
        else:
            documents, _ = ingest.load_coref_instances(input_path)
            scored = await asyncio.gather(
                *(_score_coref_document(scorer, d, config, family) for d in documents)
            )
            records = [ingest.coref_instance_record(d) for d in scored]
    finally:
        await scorer.aclose()

    count = ingest.write_jsonl(output_path, records, header=config.header())
    manifest = {"backend_requests": scorer.requests}
    if scorer.cache is not None:
        manifest.update({"cache_hits": scorer.cache.hits, "cache_misses": scorer.cache.misses})
    log.info(f"score: {count} record(s), {scorer.requests} backend request(s)")
    return RunOutcome(output_path, count, manifest=manifest)


def run_score(config: RunConfig) -> RunOutcome:
    """Render, score and write candidate files ready for `infer`"""
    return asyncio.run(score_async(config))
