"""Configuration module for the constrained inference engine"""
import json
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, Field, model_validator

Task = Literal["srl", "coref"]
Solver = Literal["constrained", "unconstrained", "r2l", "all-yes", "all-no"]
TemplateFamily = Literal[
    "t5-qa", "flan-qa", "macaw-mc", "flan-iterative", "coref-macaw", "coref-flan"
]

SRL_FAMILIES = frozenset({"t5-qa", "flan-qa", "macaw-mc", "flan-iterative"})
COREF_FAMILIES = frozenset({"coref-macaw", "coref-flan"})
COREF_ONLY_SOLVERS = frozenset({"r2l", "all-yes", "all-no"})


class InferenceServerConfig(BaseModel):
    """Central configuration for the inference engine, CLI and tool server"""

    cache_dir: Path = Field(
        default_factory=lambda: Path.home() / ".cache" / "constrained-inference",
        description="Directory holding persistent score caches"
    )

    log_level: str = Field(
        default="INFO",
        description="Logging level"
    )

    # Inference defaults
    default_k: int = Field(
        default=20,
        ge=1,
        description="Number of shortest paths requested from Yen's algorithm"
    )

    default_top_n: int = Field(
        default=20,
        ge=1,
        description="Candidates requested per question"
    )

    node_limit: int = Field(
        default=10_000_000,
        ge=1,
        description="Branch-and-bound node budget per document for All-Link inference"
    )

    strict: bool = Field(
        default=False,
        description="Fail when a role has no candidate occurring in the sentence"
    )

    case_insensitive_fallback: bool = Field(
        default=False,
        description="Retry candidate location with case folding when exact matching finds nothing"
    )

    # Remote scoring
    token_env_var: str = Field(
        default="SCORER_API_TOKEN",
        description="Environment variable holding the remote scorer auth token"
    )

    remote_timeout: float = Field(
        default=30.0,
        gt=0,
        description="Remote scoring request timeout in seconds"
    )

    remote_max_retries: int = Field(
        default=4,
        ge=0,
        description="Retries after 429/5xx/timeouts before giving up"
    )

    remote_backoff_base: float = Field(
        default=0.5,
        ge=0,
        description="Base delay in seconds for exponential backoff"
    )

    remote_max_in_flight: int = Field(
        default=8,
        ge=1,
        description="Maximum simultaneous remote requests"
    )

    def run_defaults(self) -> dict:
        """Server-wide inference defaults, the lowest-precedence layer of a RunConfig"""
        return {
            "k": self.default_k,
            "top_n": self.default_top_n,
            "node_limit": self.node_limit,
            "strict": self.strict,
            "case_insensitive_fallback": self.case_insensitive_fallback,
        }

    def ensure_directories(self) -> None:
        """Create necessary directories if they don't exist"""
        self.cache_dir.mkdir(parents=True, exist_ok=True)


class BackendSpec(BaseModel):
    """Which scorer to use and how to reach it"""

    kind: Literal["file", "mock", "remote"] = "mock"
    path: Path | None = Field(default=None, description="Score file for the file backend")
    endpoint: str | None = Field(default=None, description="URL of the remote scoring service")
    token_env_var: str = "SCORER_API_TOKEN"
    timeout: float = Field(default=30.0, gt=0)
    max_retries: int = Field(default=4, ge=0)
    backoff_base: float = Field(default=0.5, ge=0)
    max_in_flight: int = Field(default=8, ge=1)
    adapter: Literal["native", "sequences_scores"] = "native"
    cache: Path | None = Field(default=None, description="Append-only score cache file")

    @model_validator(mode="after")
    def check_kind(self) -> "BackendSpec":
        if self.kind == "file" and self.path is None:
            raise ValueError("File backend requires a path")
        if self.kind == "remote" and not self.endpoint:
            raise ValueError("Remote backend requires an endpoint")
        return self

    @property
    def backend_id(self) -> str:
        if self.kind == "file":
            return f"file:{self.path}"
        if self.kind == "remote":
            return f"remote:{self.endpoint}:{self.adapter}"
        return "mock"


class RunConfig(BaseModel):
    """Everything needed to reproduce one CLI run; written into every output header"""

    task: Task
    solver: Solver = "constrained"
    k: int = Field(default=20, ge=1)
    top_n: int = Field(default=20, ge=1)
    window: int | None = Field(default=None, ge=1)
    template_family: TemplateFamily | None = None
    context_style: Literal["relevant", "full"] = "relevant"
    highlight_mentions: bool = False
    backend: BackendSpec = Field(default_factory=BackendSpec)
    seed: int = 2121
    strict: bool = False
    case_insensitive_fallback: bool = False
    node_limit: int = Field(default=10_000_000, ge=1)
    fail_on_budget: bool = False
    partial: bool = False
    jobs: int = Field(default=1, ge=1)
    input_path: Path | None = None
    output_path: Path | None = None

    @model_validator(mode="after")
    def check_combinations(self) -> "RunConfig":
        if self.task == "srl" and self.solver in COREF_ONLY_SOLVERS:
            raise ValueError(f"Solver '{self.solver}' is only available for coreference")
        if self.template_family is not None:
            families = SRL_FAMILIES if self.task == "srl" else COREF_FAMILIES
            if self.template_family not in families:
                raise ValueError(
                    f"Template family '{self.template_family}' does not apply to task '{self.task}'"
                )
        return self

    @classmethod
    def from_sources(
        cls,
        config_file: Path | None = None,
        defaults: dict | None = None,
        **overrides,
    ) -> "RunConfig":
        """
        Merge server defaults, a JSON config file and explicit flag values

        Later layers win; a flag value of None means unset.
        """
        data: dict = dict(defaults or {})
        if config_file is not None:
            data.update(json.loads(Path(config_file).read_text(encoding="utf-8")))
        for key, value in overrides.items():
            if value is None:
                continue
            if key == "backend" and isinstance(value, dict):
                data["backend"] = {**data.get("backend", {}), **value}
            else:
                data[key] = value
        return cls.model_validate(data)

    def header(self) -> dict:
        return {"kind": "header", "schema_version": 1, "run_config": self.model_dump(mode="json")}
