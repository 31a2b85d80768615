"""Error kinds raised by ntg, grouped by the CLI exit code they map to."""

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class NtgError(Exception):
    exit_code = EXIT_DATA


class UsageError(NtgError):
    exit_code = EXIT_USAGE


class ConfigError(UsageError):
    pass


class DataError(NtgError):
    exit_code = EXIT_DATA


class ShapeMismatchError(DataError, ValueError):
    def __init__(self, what: str, left, right):
        super().__init__(f"{what}: shape {tuple(left)} does not match {tuple(right)}")
        self.left = tuple(left)
        self.right = tuple(right)


class FormatError(DataError):
    pass


class PgmFormatError(FormatError):
    pass


class BadMagicError(FormatError):
    pass


class BadVersionError(FormatError):
    pass


class DimsOverflowError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class TrailingBytesError(FormatError):
    pass


class NumericError(NtgError):
    """A loss or gradient went non-finite; `term` names the culprit."""

    exit_code = EXIT_NUMERIC

    def __init__(self, term: str, detail: str = ""):
        message = f"non-finite value in {term}"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)
        self.term = term


class StaleTapeError(NtgError, RuntimeError):
    exit_code = EXIT_NUMERIC
