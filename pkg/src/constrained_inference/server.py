"""
Constrained inference MCP server

Composes the inference component into a FastMCP server.
"""
import logging
import os
import sys
from pathlib import Path

from fastmcp import FastMCP

from . import __version__
from .components import InferenceTools
from .components.prompts import TEMPLATES
from .config import InferenceServerConfig

log = logging.getLogger(__name__)


def _package_version() -> str:
    try:
        from importlib.metadata import version
        return version("mcp-constrained-inference")
    except Exception:
        return __version__


def create_server(config: InferenceServerConfig | None = None) -> FastMCP:
    """Factory function to create a configured inference MCP server"""
    if config is None:
        config = InferenceServerConfig()
    config.ensure_directories()
    package_version = _package_version()

    mcp = FastMCP(name="Constrained Inference Server")

    tools = InferenceTools(config)
    tools.register_all(mcp)

    @mcp.resource(uri="server://info")
    async def get_server_info() -> str:
        """Get information about the server configuration"""
        families = "\n".join(f"- {name}" for name in TEMPLATES)
        return f"""
# Constrained Inference Server v{package_version}

## Configuration:
- Cache directory: {config.cache_dir}
- K shortest paths: {config.default_k}
- All-Link node limit: {config.node_limit}
- Strict role location: {config.strict}

## Tools:
- srl_infer: non-overlapping argument spans from scored candidates
- coref_infer: transitive mention clustering from link scores
- srl_evaluate: Exact/Head accuracy and overlap rate
- coref_evaluate: pairwise F1, MUC, B-cubed, CEAF_e, CoNLL, violation rate
- render_prompt: prompt text for a template family

## Template families:
{families}

## Resources:
- inference://templates: template strings and answer choices
- server://info: This information
"""

    log.info(f"Constrained Inference Server v{package_version} initialized")
    log.info(f"Cache directory: {config.cache_dir}")
    return mcp


def main():
    """Main entry point for the server"""
    if len(sys.argv) > 1 and sys.argv[1] in ("--version", "-V"):
        print(f"mcp-constrained-inference {_package_version()}")
        sys.exit(0)

    config = InferenceServerConfig()

    # Override from environment if set
    if env_cache_dir := os.getenv("CONSTRAINED_INFERENCE_CACHE_DIR"):
        config.cache_dir = Path(env_cache_dir).expanduser()
    if env_log_level := os.getenv("CONSTRAINED_INFERENCE_LOG_LEVEL"):
        config.log_level = env_log_level.upper()

    logging.basicConfig(level=config.log_level, stream=sys.stderr)
    log.info(f"Using cache directory: {config.cache_dir}")

    mcp = create_server(config)

    try:
        # stdio transport
        mcp.run(transport="stdio")
    except KeyboardInterrupt:
        log.info("Server stopped by user")
    except Exception as e:
        log.exception(f"Server error: {e}")
        raise


if __name__ == "__main__":
    main()
