"""Exception types shared across the solvers and the scenario runner."""


class NLKSError(Exception):
    """Base class for every error raised by this package."""


class DomainError(NLKSError, ValueError):
    """An argument lies outside the domain of a closed-form expression."""


class StepRejected(NLKSError):
    """A time step produced an inadmissible state; retry with a smaller dt."""


class NonFinite(NLKSError, FloatingPointError):
    """A solver produced NaN or infinite values."""


class ParseError(NLKSError, ValueError):
    """A scenario document could not be parsed."""

    def __init__(self, message, line=None, key=None):
        self.line = line
        self.key = key
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class ValidationError(NLKSError, ValueError):
    """A parsed scenario violates an invariant or a theorem hypothesis."""


class CheckpointError(NLKSError):
    """A snapshot file is unreadable."""


class ChecksumError(CheckpointError):
    """The snapshot payload does not match its stored checksum."""


class VersionError(CheckpointError):
    """The snapshot was written with an unsupported format version."""

    def __init__(self, found, expected):
        self.found = found
        self.expected = expected
        super().__init__(
            f"snapshot format version {found} is not supported (this build reads version {expected})"
        )
