"""Exception hierarchy for memlab."""

from typing import Optional, Sequence


class MemlabError(Exception):
    """Base exception for memlab operations."""
    pass


class ShapeError(MemlabError):
    """Raised when operand dimensions do not agree."""
    pass


class CapacityError(MemlabError):
    """Raised when a request exceeds a desk-scale guard."""
    pass


class RuleError(MemlabError):
    """Raised when a memory rule's preconditions are not met."""
    pass


class ConfigError(MemlabError):
    """Raised for malformed experiment configuration."""

    def __init__(
        self,
        message: str,
        field: Optional[str] = None,
        choices: Optional[Sequence[str]] = None,
    ):
        self.field = field
        self.choices = list(choices) if choices else []
        if self.choices:
            message = f"{message} (valid: {', '.join(self.choices)})"
        super().__init__(message)
