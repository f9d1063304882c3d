"""Exception taxonomy shared across the workbench."""


class AddaError(Exception):
    """Base class for all workbench errors."""


class DimensionError(AddaError, ValueError):
    """Tensor shapes do not satisfy an operation's contract."""


class ValidationError(AddaError, ValueError):
    """Inputs are structurally sound but violate a value constraint."""


class NumericsError(AddaError, ArithmeticError):
    """A computation produced non-finite values or diverged."""


class TapeError(AddaError, RuntimeError):
    """The autodiff tape was used out of protocol (e.g. double backward)."""


class FormatError(AddaError, ValueError):
    """A binary artifact (IDX file, checkpoint) is malformed.

    ``reason`` is a short machine-parsable code such as ``bad-magic`` or
    ``bad-fingerprint``; it is what the CLI prints to stderr.
    """

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        super().__init__(f"{reason}: {detail}" if detail else reason)
