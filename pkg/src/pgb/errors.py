"""Exception hierarchy shared across the toolkit."""


class PgbError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(PgbError):
    """Operands have incompatible dimensions."""


class ValidationError(PgbError):
    """An input violates a structural invariant (e.g. a non-bijective permutation)."""


class ArchiveError(PgbError):
    """A ``.pgbt`` file is malformed, truncated, or uses an unknown dtype."""


class BudgetError(PgbError):
    """The parameter budget cannot be met; carries the overshoot in parameters."""

    def __init__(self, overshoot: int, message: str | None = None):
        self.overshoot = int(overshoot)
        super().__init__(
            message
            or f"parameter budget exceeded by {self.overshoot} parameters "
            "before any feed-forward matrix was pruned"
        )
