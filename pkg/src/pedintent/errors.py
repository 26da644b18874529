"""Exception types shared across the package.

The CLI maps these onto process exit codes (see ``pedintent.cli``).
"""


class ConfigError(ValueError):
    """A configuration value violates its contract. ``field`` names the culprit."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class AssignmentError(ValueError):
    """A box cannot be placed on the grid (center outside the image)."""


class NumericError(ArithmeticError):
    """Non-finite values reached a numeric routine."""


class BenchmarkError(RuntimeError):
    """Timing measurements are not trustworthy at the current settings."""


class TrainingDiverged(NumericError):
    def __init__(self, message: str, last_good_checkpoint=None):
        self.last_good_checkpoint = last_good_checkpoint
        super().__init__(message)


class InvariantViolation(RuntimeError):
    """Internal consistency broken; indicates a bug, not bad input."""


class UndefinedMetricsError(ValueError):
    """Nothing to score (empty test set or everything filtered out)."""
