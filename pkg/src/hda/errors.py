"""Exception taxonomy shared across the package."""


class HdaError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(HdaError):
    """A config value or a combination of model/data shapes is invalid."""


class InputError(HdaError):
    """A runtime argument (array contents, counts, ranges) is invalid."""


class UsageError(HdaError):
    """An API was called out of protocol (stale cache, mismatched buffers)."""


class FormatError(HdaError):
    """A binary file does not conform to its documented layout."""


class ConfigValidationError(HdaError):
    """Aggregate of every violation found while validating an experiment config."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__(
            "invalid experiment config:\n" + "\n".join(f"  - {v}" for v in self.violations)
        )
