"""Exception types shared across the package.

Each error carries a short machine-parseable ``category`` used by the CLI
to build its one-line error output and pick an exit code.
"""


class RecnmtError(Exception):
    category = "runtime"


class ConfigError(RecnmtError):
    """Invalid configuration value or inconsistent sizes."""

    category = "config"


class DataError(RecnmtError):
    """Invalid runtime data (bad indices, mismatched lengths, empty corpus)."""

    category = "data"


class ParseError(RecnmtError):
    """Malformed file content. Carries the offending 0-based line number."""

    category = "parse"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CheckpointError(RecnmtError):
    category = "checkpoint"


class TransferError(RecnmtError):
    category = "transfer"


class TrainError(RecnmtError):
    """Training aborted. May carry a diagnostic checkpoint of the state."""

    category = "train"

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint
