"""Inference engine exposed as MCP tools"""
import json
import logging
from typing import Any

from fastmcp import Context
from fastmcp.contrib.mcp_mixin import MCPMixin, mcp_resource, mcp_tool
from mcp.types import ToolAnnotations
from pydantic import BaseModel, Field, field_validator

from ..config import COREF_ONLY_SOLVERS
from . import ingest
from .metrics import coref_eval, srl_eval
from .pipeline import solve_coref_instance, solve_srl_instance
from .prompts import CHOICES, TEMPLATES, PriorAnswer, PromptRequest, prompt_id
from .prompts import render_prompt as render_template

log = logging.getLogger(__name__)


class SolverRequest(BaseModel):
    """Request model for inference tools"""
    task: str = Field(..., description="srl or coref")
    solver: str = Field(default="constrained", description="Inference solver")

    @field_validator("solver")
    @classmethod
    def validate_solver(cls, v, info):
        """Reject solvers that do not exist for the task"""
        allowed = {"constrained", "unconstrained"}
        if info.data.get("task") == "coref":
            allowed |= COREF_ONLY_SOLVERS
        if v not in allowed:
            raise ValueError(f"Unknown solver '{v}' (choose from {sorted(allowed)})")
        return v


class InferenceTools(MCPMixin):
    """Structured inference, evaluation and prompt rendering"""

    def __init__(self, config):
        self.config = config

    @mcp_resource(uri="inference://templates")
    async def list_templates(self) -> str:
        """Prompt templates and answer choices per family"""
        return json.dumps({"templates": TEMPLATES, "choices": CHOICES}, indent=2)

    @mcp_tool(
        name="srl_infer",
        description="Pick a non-overlapping argument span per role from scored answer candidates",
        annotations=ToolAnnotations(
            title="SRL Inference",
            destructiveHint=False,
            idempotentHint=True,
        )
    )
    async def srl_infer(
        self,
        ctx: Context | None,
        instance: dict[str, Any],
        solver: str = "constrained",
        k: int | None = None,
        strict: bool | None = None,
    ) -> dict[str, Any]:
        """Run span selection on one srl_instance record"""
        try:
            request = SolverRequest(task="srl", solver=solver)
            parsed = ingest.parse_srl_instance(instance)
            structure, details = solve_srl_instance((
                parsed,
                request.solver,
                k or self.config.default_k,
                self.config.strict if strict is None else strict,
                self.config.case_insensitive_fallback,
            ))
            return {"structure": ingest.srl_structure_record(structure), "details": details}
        except Exception as e:
            log.exception(f"SRL inference failed: {e}")
            return {"error": str(e)}

    @mcp_tool(
        name="coref_infer",
        description="Cluster mentions from pairwise link scores so that links are transitive",
        annotations=ToolAnnotations(
            title="Coreference Inference",
            destructiveHint=False,
            idempotentHint=True,
        )
    )
    async def coref_infer(
        self,
        ctx: Context | None,
        document: dict[str, Any],
        solver: str = "constrained",
        node_limit: int | None = None,
    ) -> dict[str, Any]:
        """Run a clustering solver on one coref_instance record"""
        try:
            request = SolverRequest(task="coref", solver=solver)
            parsed = ingest.parse_coref_instance(document)
            prediction, details = solve_coref_instance(
                (parsed, request.solver, node_limit or self.config.node_limit)
            )
            return {"prediction": ingest.coref_prediction_record(prediction), "details": details}
        except Exception as e:
            log.exception(f"Coreference inference failed: {e}")
            return {"error": str(e)}

    @mcp_tool(
        name="srl_evaluate",
        description="Exact/head accuracy and overlap rate of SRL structures against gold answers",
        annotations=ToolAnnotations(
            title="Evaluate SRL",
            destructiveHint=False,
            idempotentHint=True,
        )
    )
    async def srl_evaluate(
        self,
        ctx: Context | None,
        predictions: list[dict[str, Any]],
        gold: list[dict[str, Any]],
    ) -> dict[str, Any]:
        try:
            report = srl_eval(
                [ingest.parse_srl_structure(p) for p in predictions],
                [ingest.parse_srl_gold(g) for g in gold],
            )
            return report.to_dict()
        except Exception as e:
            log.exception(f"SRL evaluation failed: {e}")
            return {"error": str(e)}

    @mcp_tool(
        name="coref_evaluate",
        description="Pairwise F1, MUC, B-cubed, CEAF_e, CoNLL and transitivity violation rate",
        annotations=ToolAnnotations(
            title="Evaluate Coreference",
            destructiveHint=False,
            idempotentHint=True,
        )
    )
    async def coref_evaluate(
        self,
        ctx: Context | None,
        predictions: list[dict[str, Any]],
        gold: list[dict[str, Any]],
    ) -> dict[str, Any]:
        try:
            report = coref_eval(
                [ingest.parse_coref_prediction(p) for p in predictions],
                [ingest.parse_coref_gold(g) for g in gold],
            )
            return report.to_dict()
        except Exception as e:
            log.exception(f"Coreference evaluation failed: {e}")
            return {"error": str(e)}

    @mcp_tool(
        name="render_prompt",
        description="Render a question-answering or mention-link prompt for a template family",
        annotations=ToolAnnotations(
            title="Render Prompt",
            destructiveHint=False,
            idempotentHint=True,
        )
    )
    async def render_prompt(
        self,
        ctx: Context | None,
        family: str,
        context: str,
        question: str | None = None,
        mention1: str | None = None,
        mention2: str | None = None,
        prior: list[dict[str, str]] | None = None,
    ) -> dict[str, Any]:
        """Prior answers are {question, answer} objects, in asking order"""
        try:
            request = PromptRequest(
                family=family,
                context=context,
                question=question,
                mention1=mention1,
                mention2=mention2,
                prior=[PriorAnswer(**p) for p in prior or []],
            )
            text = render_template(request)
            result: dict[str, Any] = {"prompt": text, "prompt_id": prompt_id(text)}
            if family in CHOICES:
                result["choices"] = list(CHOICES[family])
            return result
        except Exception as e:
            log.exception(f"Prompt rendering failed: {e}")
            return {"error": str(e)}
