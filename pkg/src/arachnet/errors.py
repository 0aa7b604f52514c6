"""Exception hierarchy shared across the engine."""

from __future__ import annotations


class ArachnetError(Exception):
    """Base class for all engine errors."""


# --- registry ---------------------------------------------------------------


class RegistryError(ArachnetError):
    pass


class DuplicateIdError(RegistryError):
    def __init__(self, capability_id: str, files: list[str]):
        self.capability_id = capability_id
        self.files = files
        super().__init__(f"duplicate capability id {capability_id!r} declared in {', '.join(files)}")


class UnknownKindError(RegistryError):
    def __init__(self, kind: str, where: str = ""):
        self.kind = kind
        suffix = f" ({where})" if where else ""
        super().__init__(f"unknown data kind {kind!r}{suffix}")


class SchemaViolationError(RegistryError):
    def __init__(self, file: str, field: str, message: str):
        self.file = file
        self.field = field
        super().__init__(f"{file}: field {field!r}: {message}")


# --- backend / query analysis ------------------------------------------------


class BackendError(ArachnetError):
    pass


class TransportError(BackendError):
    """Network-level failure talking to a model endpoint."""


class IntentError(BackendError):
    """The backend could not produce a valid intent within the repair budget."""

    def __init__(self, message: str, attempts: list[str] | None = None):
        self.attempts = attempts or []
        super().__init__(message)


class UnknownGoalKindError(ArachnetError):
    def __init__(self, kind: str):
        self.kind = kind
        super().__init__(f"intent goal kind {kind!r} is not in the registry vocabulary")


# --- planning ----------------------------------------------------------------


class NoPlanError(ArachnetError):
    def __init__(self, blocking_kinds: list[str], sub_problem_id: str | None = None):
        self.blocking_kinds = sorted(blocking_kinds)
        self.sub_problem_id = sub_problem_id
        where = f" for sub-problem {sub_problem_id!r}" if sub_problem_id else ""
        super().__init__(f"no plan reaches kinds {self.blocking_kinds}{where}")


class CompileError(ArachnetError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__(f"design failed validation: {self.violations}")


# --- execution ---------------------------------------------------------------


class ExecutionError(ArachnetError):
    pass


class MissingAdapterError(ExecutionError):
    def __init__(self, capability_id: str):
        self.capability_id = capability_id
        super().__init__(f"no tool adapter supports capability {capability_id!r}")


class MissingRunInputError(ExecutionError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"required run input {name!r} was not provided")


class AdapterMismatchError(ExecutionError):
    def __init__(self, expected: str, got: str):
        super().__init__(f"adapter produced kind {got!r}, expected {expected!r}")


class ToolError(ExecutionError):
    """A simulated tool rejected its inputs; recorded as a step failure."""


class UnknownCableError(ToolError):
    pass


class UncoveredIpError(ToolError):
    pass


class BadProbabilityError(ToolError):
    pass


class InsufficientBaselineError(ToolError):
    pass


class NoAnomalyError(ToolError):
    pass


# --- curator -----------------------------------------------------------------


class CuratorError(ArachnetError):
    pass


class ReplayError(CuratorError):
    pass


class IdCollisionError(CuratorError):
    def __init__(self, capability_id: str):
        self.capability_id = capability_id
        super().__init__(f"registry already contains an entry with id {capability_id!r}")


# --- orchestrator ------------------------------------------------------------


class OrchestratorError(ArachnetError):
    pass


class ConfigError(OrchestratorError):
    pass


class UnknownRunError(OrchestratorError):
    def __init__(self, run_id: str):
        self.run_id = run_id
        super().__init__(f"unknown run {run_id!r}")


class WrongStateError(OrchestratorError):
    pass


class InvalidEditError(OrchestratorError):
    def __init__(self, messages: list[str]):
        self.messages = messages
        super().__init__("; ".join(messages))
