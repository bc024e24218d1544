"""Shared exception types."""


class KgAlignError(Exception):
    """Base class for all toolkit errors."""


class DataFormatError(KgAlignError):
    """A data file is missing, malformed, or internally inconsistent."""


class ConfigError(KgAlignError):
    """Configuration validation failed; carries every collected problem."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class ScorerProcessError(KgAlignError):
    """The external scorer worker failed or returned an error response."""
