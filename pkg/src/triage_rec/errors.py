"""Exception types mapped to CLI exit codes."""


class TriageError(Exception):
    """Base class; `exit_code` drives the CLI status."""

    exit_code = 1
    kind = "usage"


class UsageError(TriageError):
    exit_code = 1
    kind = "usage"


class DataError(TriageError):
    exit_code = 2
    kind = "data"


class TrainingError(TriageError):
    exit_code = 3
    kind = "training"
