"""Shared exception types."""


class ConfigurationError(ValueError):
    """A parameter combination that the library refuses to run."""


class DegenerateChannelError(ValueError):
    """A channel realization on which the requested receiver is undefined."""
