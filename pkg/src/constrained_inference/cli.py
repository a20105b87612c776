"""
Command line interface

    constrained-inference [--config FILE] [--log-level L] {infer,eval,prompts,score} ...

Exit codes: 0 success, 2 invalid input, 3 file errors, 4 All-Link node
budget reached, 5 remote scoring failure.
"""
import argparse
import json
import logging
import os
import sys
from pathlib import Path

from pydantic import ValidationError

from . import __version__
from .components import pipeline
from .config import InferenceServerConfig, RunConfig
from .errors import ArtifactIOError, DataFormatError, InferenceError

log = logging.getLogger(__name__)

EXIT_INVALID = 2

SCORE_CACHE_FILE = "score_cache.jsonl"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="constrained-inference",
        description="Constrained structured inference over language-model scores",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", type=Path, help="JSON file with run settings (flags win)")
    parser.add_argument("--log-level", default=None, help="Logging level (default INFO)")
    commands = parser.add_subparsers(dest="command", required=True)

    infer = commands.add_parser("infer", help="Predict structures from scored candidates")
    infer.add_argument("--task", choices=["srl", "coref"])
    infer.add_argument(
        "--solver", choices=["constrained", "unconstrained", "r2l", "all-yes", "all-no"]
    )
    infer.add_argument("--input", type=Path, dest="input_path")
    infer.add_argument("--output", type=Path, dest="output_path")
    infer.add_argument("--k", type=int, help="Paths requested from Yen's algorithm (default 20)")
    infer.add_argument("--strict", action="store_true", default=None,
                       help="Fail on roles with no candidate in the sentence")
    infer.add_argument("--case-insensitive", action="store_true", default=None,
                       dest="case_insensitive_fallback",
                       help="Retry candidate location with case folding")
    infer.add_argument("--node-limit", type=int, help="All-Link node budget per document")
    infer.add_argument("--fail-on-budget", action="store_true", default=None,
                       help="Treat a reached node budget as an error, writing nothing")
    infer.add_argument("--partial", action="store_true", default=None,
                       help="Skip bad input lines, listing them in the manifest")
    infer.add_argument("--jobs", type=int, help="Worker processes")

    evaluate = commands.add_parser("eval", help="Score predictions against gold")
    evaluate.add_argument("--task", choices=["srl", "coref"], required=True)
    evaluate.add_argument("--pred", type=Path, required=True)
    evaluate.add_argument("--gold", type=Path, required=True)
    evaluate.add_argument("--report", type=Path, help="Report path (default <pred>.report.json)")

    for name, text in (("prompts", "Render prompts"), ("score", "Score prompts with a backend")):
        sub = commands.add_parser(name, help=text)
        sub.add_argument("--task", choices=["srl", "coref"])
        sub.add_argument("--family", dest="template_family")
        sub.add_argument("--input", type=Path, dest="input_path")
        sub.add_argument("--output", type=Path, dest="output_path")
        sub.add_argument("--window", type=int, help="Pair mentions fewer than W sentences apart")
        sub.add_argument("--context-style", choices=["relevant", "full"])
        sub.add_argument("--highlight", action="store_true", default=None, dest="highlight_mentions",
                         help="Wrap mentions in asterisks")

    score = commands.choices["score"]
    score.add_argument("--backend", choices=["file", "mock", "remote"])
    score.add_argument("--backend-path", type=Path)
    score.add_argument("--endpoint")
    score.add_argument("--adapter", choices=["native", "sequences_scores"])
    score.add_argument("--top-n", type=int)
    score.add_argument("--seed", type=int)
    score.add_argument("--cache", action="store_true", help="Use the persistent score cache")
    score.add_argument("--cache-file", type=Path, help="Score cache location")
    return parser


def _server_config(args: argparse.Namespace) -> InferenceServerConfig:
    config = InferenceServerConfig()
    if env_cache_dir := os.getenv("CONSTRAINED_INFERENCE_CACHE_DIR"):
        config.cache_dir = Path(env_cache_dir).expanduser()
    if env_log_level := os.getenv("CONSTRAINED_INFERENCE_LOG_LEVEL"):
        config.log_level = env_log_level.upper()
    if args.log_level:
        config.log_level = args.log_level.upper()
    return config


def _run_config(args: argparse.Namespace, server: InferenceServerConfig) -> RunConfig:
    fields = (
        "task", "solver", "k", "top_n", "window", "template_family", "context_style",
        "highlight_mentions", "seed", "strict", "case_insensitive_fallback", "node_limit",
        "fail_on_budget", "partial", "jobs", "input_path", "output_path",
    )
    overrides = {name: getattr(args, name, None) for name in fields}

    backend: dict = {}
    if getattr(args, "backend", None):
        backend["kind"] = args.backend
    if getattr(args, "backend_path", None):
        backend["path"] = args.backend_path
    if getattr(args, "endpoint", None):
        backend["endpoint"] = args.endpoint
    if getattr(args, "adapter", None):
        backend["adapter"] = args.adapter
    if getattr(args, "cache", False) or getattr(args, "cache_file", None):
        backend["cache"] = args.cache_file or server.cache_dir / SCORE_CACHE_FILE
    if getattr(args, "backend", None) == "remote":
        backend.setdefault("token_env_var", server.token_env_var)
        backend.setdefault("timeout", server.remote_timeout)
        backend.setdefault("max_retries", server.remote_max_retries)
        backend.setdefault("backoff_base", server.remote_backoff_base)
        backend.setdefault("max_in_flight", server.remote_max_in_flight)
    overrides["backend"] = backend or None

    try:
        return RunConfig.from_sources(args.config, defaults=server.run_defaults(), **overrides)
    except json.JSONDecodeError as e:
        raise DataFormatError(f"Invalid JSON config ({e.msg})", e.lineno, args.config) from e
    except OSError as e:
        raise ArtifactIOError(f"Cannot read config {args.config}: {e}") from e


def _dispatch(args: argparse.Namespace, server: InferenceServerConfig) -> int:
    if args.command == "eval":
        report = pipeline.run_eval(args.task, args.pred, args.gold, args.report)
        sys.stdout.write(report.format_table())
        return 0

    config = _run_config(args, server)
    if args.command == "infer":
        outcome = pipeline.run_infer(config)
    elif args.command == "prompts":
        outcome = pipeline.run_prompts(config)
    else:
        outcome = pipeline.run_score(config)
    print(f"Wrote {outcome.records} record(s) to {outcome.output_path}")
    return outcome.exit_code


def main(argv: list[str] | None = None) -> int:
    """Main entry point for the CLI"""
    args = build_parser().parse_args(argv)
    server = _server_config(args)
    logging.basicConfig(
        level=server.log_level,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )

    try:
        return _dispatch(args, server)
    except ValidationError as e:
        log.error(f"Invalid configuration: {e}")
        return EXIT_INVALID
    except InferenceError as e:
        log.error(str(e))
        return e.exit_code
    except KeyboardInterrupt:
        log.info("Interrupted by user")
        return 130


if __name__ == "__main__":
    sys.exit(main())
