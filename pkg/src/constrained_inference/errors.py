"""Exception hierarchy shared by the engine, the CLI and the tool server"""
from pathlib import Path


class InferenceError(Exception):
    """Base class for every error the engine raises on purpose"""

    exit_code = 1


class InputValidationError(InferenceError):
    """Input is well-formed but violates a domain rule"""

    exit_code = 2


class TemplateError(InputValidationError):
    """A prompt request is missing a slot or breaks an ordering rule"""


class AlignmentError(InputValidationError):
    """Predictions and gold annotations do not line up"""

    def __init__(self, message: str, offending_ids: list[str] | None = None):
        self.offending_ids = sorted(offending_ids or [])
        if self.offending_ids:
            message = f"{message}: {', '.join(self.offending_ids)}"
        super().__init__(message)


class UnassignableRoleError(InputValidationError):
    """Strict mode: a role has no candidate that occurs in the sentence"""

    def __init__(self, role_id: str, instance_id: str | None = None):
        self.role_id = role_id
        self.instance_id = instance_id
        where = f" in instance '{instance_id}'" if instance_id else ""
        super().__init__(f"Role '{role_id}'{where} has no locatable candidate")


class DataFormatError(InferenceError):
    """A JSONL line could not be parsed into a domain value"""

    exit_code = 2

    def __init__(self, message: str, line_number: int | None = None, path: Path | str | None = None):
        self.line_number = line_number
        self.path = str(path) if path is not None else None
        location = ""
        if path is not None:
            location += f"{path}"
        if line_number is not None:
            location += f":{line_number}" if location else f"line {line_number}"
        super().__init__(f"{location}: {message}" if location else message)


class ArtifactIOError(InferenceError):
    """Missing, unreadable or unwritable file"""

    exit_code = 3


class SolverBudgetError(InferenceError):
    """All-Link search stopped at the node limit before proving optimality"""

    exit_code = 4

    def __init__(self, document_ids: list[str], node_limit: int):
        self.document_ids = document_ids
        self.node_limit = node_limit
        super().__init__(
            f"Node limit {node_limit} reached before optimality for: {', '.join(document_ids)}"
        )


class RemoteBackendError(InferenceError):
    """The remote scoring service failed after all retries"""

    exit_code = 5

    def __init__(self, message: str, prompt_id: str | None = None):
        self.prompt_id = prompt_id
        if prompt_id:
            message = f"[prompt {prompt_id}] {message}"
        super().__init__(message)


class ScorerTimeoutError(RemoteBackendError):
    """The remote scoring service did not answer in time"""


class ScorerProtocolError(RemoteBackendError):
    """The remote scoring service answered with something we cannot use"""
