"""Exception types raised across the package.

Library code raises these; only the command-line front end turns them into
exit codes.
"""

from __future__ import annotations

from typing import Any, TypeVar

from pydantic import BaseModel, ValidationError

M = TypeVar("M", bound=BaseModel)


class TripletAAError(ValueError):
    """Base class for every error the package raises on purpose."""


class InputError(TripletAAError):
    """An argument is outside the domain of the operation."""


class ConfigurationError(TripletAAError):
    """Run parameters are inconsistent or out of range."""


class NumericError(TripletAAError):
    """A computation produced or received a non-finite value."""


class UsageError(TripletAAError):
    """Command-line flags do not form a valid invocation."""


class DataError(TripletAAError):
    """Cohort data violates the schema or a domain invariant."""

    def __init__(
        self,
        message: str,
        *,
        triplet_id: str | None = None,
        line: int | None = None,
        path: str | None = None,
    ):
        self.message = message
        self.triplet_id = triplet_id
        self.line = line
        self.path = path
        context = []
        if path:
            context.append(str(path))
        if triplet_id:
            context.append(f"triplet {triplet_id}")
        if line is not None:
            context.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(context)})" if context else message)

    def with_context(self, **context: Any) -> DataError:
        """A copy of this error with extra context filled in."""
        fields = {"triplet_id": self.triplet_id, "line": self.line, "path": self.path}
        fields.update({k: v for k, v in context.items() if v is not None})
        return DataError(self.message, **fields)


def validated(model: type[M], **fields: Any) -> M:
    """Build a pydantic model, reporting failures as ConfigurationError."""
    try:
        return model(**fields)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or model.__name__}: {err['msg']}"
            for err in e.errors()
        )
        raise ConfigurationError(f"Invalid {model.__name__}: {problems}") from e
