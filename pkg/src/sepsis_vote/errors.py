"""Exception hierarchy shared by every module."""


class SepsisVoteError(Exception):
    """Base class; the CLI maps it to exit code 1."""


class FormatError(SepsisVoteError, ValueError):
    """Malformed input file or text."""

    def __init__(self, message, line=None, offset=None):
        self.line = line
        self.offset = offset
        if line is not None:
            message = f"line {line}: {message}"
        elif offset is not None:
            message = f"offset {offset}: {message}"
        super().__init__(message)


class CoverageError(SepsisVoteError, ValueError):
    """Some (algorithm, patient) pairs are missing or have mismatched lengths."""

    def __init__(self, missing, message=None):
        self.missing = sorted(missing)
        if message is None:
            shown = ", ".join(f"({a}, {p})" for a, p in self.missing[:10])
            more = "" if len(self.missing) <= 10 else f" and {len(self.missing) - 10} more"
            message = f"missing (algorithm, patient) pairs: {shown}{more}"
        super().__init__(message)


class ConfigError(SepsisVoteError, ValueError):
    """Invalid or infeasible configuration."""


class UndefinedScoreError(SepsisVoteError, ArithmeticError):
    """Normalized utility is 0/0 for a degenerate cohort."""
