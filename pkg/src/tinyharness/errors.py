"""Exception hierarchy shared by every harness module."""

from __future__ import annotations


class HarnessError(Exception):
    """Base class for all harness failures."""


# -- protocol ----------------------------------------------------------------


class ProtocolError(HarnessError):
    """The byte stream between host and DUT is out of sync or invalid."""


class MalformedLine(ProtocolError, ValueError):
    """A line could not be parsed into a command or response."""

    def __init__(self, line: bytes | str, reason: str):
        self.line = line
        self.reason = reason
        super().__init__(f"{reason}: {line!r}")


class EmptyInput(HarnessError, ValueError):
    pass


# -- DUT / transport ---------------------------------------------------------


class StreamClosed(ProtocolError):
    """End of stream arrived in the middle of a command."""


class NoResponse(ProtocolError):
    """The DUT did not answer within the response timeout."""


class DutError(ProtocolError):
    """The DUT answered a command with an error response."""

    def __init__(self, code: str, detail: str = ""):
        self.code = code
        self.detail = detail
        super().__init__(f"DUT error {code}" + (f": {detail}" if detail else ""))


class FixtureError(HarnessError, ValueError):
    """A stimulus file does not follow the fixture format."""


# -- energy monitor ----------------------------------------------------------


class InvalidProfile(HarnessError, ValueError):
    pass


class InsufficientTriggers(HarnessError):
    """Fewer than two trigger edges were captured for a timing window."""


class EmptyWindow(HarnessError, ValueError):
    pass


class NoSamplesInWindow(HarnessError, ValueError):
    pass


# -- scoring -----------------------------------------------------------------


class WrongArity(HarnessError, ValueError):
    pass


class LengthMismatch(HarnessError, ValueError):
    pass


class EmptyOutput(HarnessError, ValueError):
    pass


class SingleClass(HarnessError, ValueError):
    pass


class ZeroInferences(HarnessError, ValueError):
    pass


class EmptyRange(HarnessError, ValueError):
    pass


class MetricMismatch(HarnessError, ValueError):
    pass


# -- runner ------------------------------------------------------------------


class EmptyStimuliDir(HarnessError):
    pass


class EmptyDataset(HarnessError):
    pass


class ResultArityMismatch(HarnessError):
    pass


# -- rules -------------------------------------------------------------------


class UnknownComponent(HarnessError, ValueError):
    pass


# -- results store -----------------------------------------------------------


class StoreIOError(HarnessError, OSError):
    pass


class MissingManifest(HarnessError):
    pass


class SchemaMismatch(HarnessError):
    pass


class CorruptTrace(HarnessError):
    pass
