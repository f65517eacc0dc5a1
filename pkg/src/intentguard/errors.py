"""Exception hierarchy. Every error raised by the library derives from IntentGuardError."""

from __future__ import annotations


class IntentGuardError(Exception):
    """Base class; ``to_dict`` gives the machine-readable form used by the CLI."""

    def to_dict(self) -> dict:
        return {"error": type(self).__name__, "message": str(self)}


class SchemaError(IntentGuardError):
    pass


class EmptyDatasetError(IntentGuardError):
    pass


class InvalidIntentError(IntentGuardError):
    pass


class DegenerateIntentError(IntentGuardError):
    """The weight mass inside an intent is zero, so a normalized ratio is undefined."""


class ConfigError(IntentGuardError):
    pass


class InvalidOperationError(IntentGuardError):
    pass


class InfeasibleError(IntentGuardError):
    """No published intent can bring the attacker bound under the threshold."""

    def __init__(self, message: str, floor: float):
        super().__init__(message)
        self.floor = floor

    def to_dict(self) -> dict:
        d = super().to_dict()
        d["floor"] = self.floor
        return d


class IterationLimitError(IntentGuardError):
    pass


class NoFeasibleAllocationError(IntentGuardError):
    pass
