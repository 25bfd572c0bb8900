"""Exception types shared across the package."""


class CascadeCitError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(CascadeCitError):
    """Operand shapes are incompatible. The message names both shapes."""


class ConfigError(CascadeCitError):
    """A configuration value or combination of values is invalid."""


class ContractError(CascadeCitError):
    """An API contract was violated (e.g. frozen-only call on unfrozen params)."""


class NumericError(CascadeCitError):
    """A non-finite value appeared where finite math is required."""


class InputError(CascadeCitError):
    """Caller-supplied data is malformed (bad label, bad feature vector)."""


class DataError(CascadeCitError):
    """A dataset record is inconsistent or a file is malformed.

    Carries enough context (line number or request id) to find the record.
    """

    def __init__(self, message, line=None, request_id=None):
        ctx = []
        if line is not None:
            ctx.append(f"line {line}")
        if request_id is not None:
            ctx.append(f"request {request_id}")
        if ctx:
            message = f"{message} ({', '.join(ctx)})"
        super().__init__(message)
        self.line = line
        self.request_id = request_id
