"""Line-oriented command/response codec between the host runner and the DUT.

Every message is one ASCII line terminated by ``\\n``.  Host commands::

    name
    timestamp
    db <offset> <hex>
    db-done <len>
    set-tensor
    infer <iterations> <warmup>
    results
    mode <perf|energy>

DUT responses::

    m-ready
    m-name-<id>
    m-lap-us-<t>
    m-ack
    m-results-[v0,v1,...]
    m-err-<code>[ <detail>]

Example:
    >>> encode(Infer(10, 3))
    b'infer 10 3\\n'
    >>> parse(b'db 0 abcd\\n')
    LoadChunk(offset=0, payload=b'\\xab\\xcd')
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass
from typing import Union

from .errors import EmptyInput, MalformedLine

MAX_CHUNK = 512


class Mode(str, enum.Enum):
    PERFORMANCE = "performance"
    ENERGY = "energy"

    @property
    def wire(self) -> str:
        return "perf" if self is Mode.PERFORMANCE else "energy"

    @classmethod
    def from_wire(cls, token: str) -> "Mode":
        if token == "perf":
            return cls.PERFORMANCE
        if token == "energy":
            return cls.ENERGY
        raise ValueError(token)

    @classmethod
    def coerce(cls, value: "Mode | str") -> "Mode":
        if isinstance(value, Mode):
            return value
        if value in ("perf", "performance"):
            return cls.PERFORMANCE
        if value == "energy":
            return cls.ENERGY
        raise ValueError(f"unknown mode {value!r}")


class ErrorCode(str, enum.Enum):
    MALFORMED = "malformed"
    UNKNOWN_COMMAND = "unknown-command"
    NOT_READY = "not-ready"
    LENGTH_MISMATCH = "length-mismatch"
    OVERFLOW = "overflow"
    BAD_FIXTURE = "bad-fixture"


# -- commands (host -> DUT) --------------------------------------------------


@dataclass(frozen=True)
class Name:
    pass


@dataclass(frozen=True)
class Timestamp:
    pass


@dataclass(frozen=True)
class LoadChunk:
    offset: int
    payload: bytes


@dataclass(frozen=True)
class LoadDone:
    total_len: int


@dataclass(frozen=True)
class SetTensor:
    pass


@dataclass(frozen=True)
class Infer:
    iterations: int
    warmup: int = 0


@dataclass(frozen=True)
class GetResults:
    pass


@dataclass(frozen=True)
class SetMode:
    mode: Mode


# -- responses (DUT -> host) -------------------------------------------------


@dataclass(frozen=True)
class Ready:
    pass


@dataclass(frozen=True)
class NameIs:
    id: str


@dataclass(frozen=True)
class TimestampIs:
    t: int  # microseconds


@dataclass(frozen=True)
class Ack:
    pass


@dataclass(frozen=True)
class ResultTensor:
    values: tuple[float, ...]


@dataclass(frozen=True)
class Error:
    code: ErrorCode
    detail: str = ""


Command = Union[Name, Timestamp, LoadChunk, LoadDone, SetTensor, Infer, GetResults, SetMode]
Response = Union[Ready, NameIs, TimestampIs, Ack, ResultTensor, Error]
Message = Union[Command, Response]

COMMAND_TYPES = (Name, Timestamp, LoadChunk, LoadDone, SetTensor, Infer, GetResults, SetMode)
RESPONSE_TYPES = (Ready, NameIs, TimestampIs, Ack, ResultTensor, Error)


# -- encoding ----------------------------------------------------------------


def encode(msg: Message) -> bytes:
    """Serialize one message to its newline-terminated wire form."""
    if isinstance(msg, Name):
        text = "name"
    elif isinstance(msg, Timestamp):
        text = "timestamp"
    elif isinstance(msg, LoadChunk):
        text = f"db {msg.offset} {msg.payload.hex()}"
    elif isinstance(msg, LoadDone):
        text = f"db-done {msg.total_len}"
    elif isinstance(msg, SetTensor):
        text = "set-tensor"
    elif isinstance(msg, Infer):
        text = f"infer {msg.iterations} {msg.warmup}"
    elif isinstance(msg, GetResults):
        text = "results"
    elif isinstance(msg, SetMode):
        text = f"mode {Mode.coerce(msg.mode).wire}"
    elif isinstance(msg, Ready):
        text = "m-ready"
    elif isinstance(msg, NameIs):
        text = f"m-name-{msg.id}"
    elif isinstance(msg, TimestampIs):
        text = f"m-lap-us-{msg.t}"
    elif isinstance(msg, Ack):
        text = "m-ack"
    elif isinstance(msg, ResultTensor):
        text = "m-results-[" + ",".join(repr(float(v)) for v in msg.values) + "]"
    elif isinstance(msg, Error):
        code = ErrorCode(msg.code).value
        text = f"m-err-{code} {msg.detail}" if msg.detail else f"m-err-{code}"
    else:
        raise TypeError(f"not a protocol message: {msg!r}")
    return text.encode("ascii") + b"\n"


# -- parsing -----------------------------------------------------------------

_UINT = re.compile(r"[0-9]+", re.ASCII)
_HEX = re.compile(r"(?:[0-9a-f]{2})+", re.ASCII)
_FLOAT = re.compile(r"-?(?:[0-9]+\.?[0-9]*|\.[0-9]+)(?:[eE][-+]?[0-9]+)?", re.ASCII)
_NAME_ID = re.compile(r"[!-~]+", re.ASCII)
_DETAIL = re.compile(r"[ -~]*", re.ASCII)

_NULLARY_COMMANDS = {
    "name": Name(),
    "timestamp": Timestamp(),
    "set-tensor": SetTensor(),
    "results": GetResults(),
}


def _uint(token: str, raw: bytes, what: str) -> int:
    if not _UINT.fullmatch(token):
        raise MalformedLine(raw, f"{what} is not a non-negative integer")
    return int(token)


def _parse_response(text: str, raw: bytes) -> Response:
    if text == "m-ready":
        return Ready()
    if text == "m-ack":
        return Ack()
    if text.startswith("m-name-"):
        ident = text[len("m-name-"):]
        if not _NAME_ID.fullmatch(ident):
            raise MalformedLine(raw, "bad DUT name")
        return NameIs(ident)
    if text.startswith("m-lap-us-"):
        return TimestampIs(_uint(text[len("m-lap-us-"):], raw, "timestamp"))
    if text.startswith("m-results-[") and text.endswith("]"):
        body = text[len("m-results-["):-1]
        if not body:
            return ResultTensor(())
        values = []
        for token in body.split(","):
            if not _FLOAT.fullmatch(token):
                raise MalformedLine(raw, f"bad result value {token!r}")
            value = float(token)
            if not math.isfinite(value):
                raise MalformedLine(raw, "non-finite result value")
            values.append(value)
        return ResultTensor(tuple(values))
    if text.startswith("m-err-"):
        code, _, detail = text[len("m-err-"):].partition(" ")
        try:
            error_code = ErrorCode(code)
        except ValueError:
            raise MalformedLine(raw, f"unknown error code {code!r}") from None
        if not _DETAIL.fullmatch(detail):
            raise MalformedLine(raw, "bad error detail")
        return Error(error_code, detail)
    raise MalformedLine(raw, "unknown response")


def _parse_command(text: str, raw: bytes, max_chunk: int) -> Command:
    if text in _NULLARY_COMMANDS:
        return _NULLARY_COMMANDS[text]
    keyword, *args = text.split(" ")
    if keyword == "db":
        if len(args) != 2:
            raise MalformedLine(raw, "db takes <offset> <hex>")
        offset = _uint(args[0], raw, "offset")
        if not _HEX.fullmatch(args[1]):
            raise MalformedLine(raw, "payload is not lowercase hex")
        payload = bytes.fromhex(args[1])
        if len(payload) > max_chunk:
            raise MalformedLine(raw, f"chunk exceeds {max_chunk} bytes")
        return LoadChunk(offset, payload)
    if keyword == "db-done":
        if len(args) != 1:
            raise MalformedLine(raw, "db-done takes <len>")
        return LoadDone(_uint(args[0], raw, "length"))
    if keyword == "infer":
        if len(args) != 2:
            raise MalformedLine(raw, "infer takes <iterations> <warmup>")
        iterations = _uint(args[0], raw, "iterations")
        warmup = _uint(args[1], raw, "warmup")
        if iterations < 1:
            raise MalformedLine(raw, "iterations must be >= 1")
        return Infer(iterations, warmup)
    if keyword == "mode":
        if len(args) != 1:
            raise MalformedLine(raw, "mode takes perf|energy")
        try:
            return SetMode(Mode.from_wire(args[0]))
        except ValueError:
            raise MalformedLine(raw, "mode must be perf or energy") from None
    raise MalformedLine(raw, "unknown command")


def parse(line: bytes | str, *, max_chunk: int = MAX_CHUNK) -> Message:
    """Parse one line (trailing ``\\n`` / ``\\r\\n`` optional) into a message.

    Raises:
        MalformedLine: for anything that is not a valid message.  No other
            exception escapes, whatever the input bytes.
    """
    raw = line.encode("latin-1", "replace") if isinstance(line, str) else bytes(line)
    body = raw[:-1] if raw.endswith(b"\n") else raw
    if body.endswith(b"\r"):
        body = body[:-1]
    try:
        text = body.decode("ascii")
    except UnicodeDecodeError:
        raise MalformedLine(raw, "non-ASCII bytes") from None
    if not text or "\n" in text or "\r" in text:
        raise MalformedLine(raw, "empty or multi-line input")
    if text.startswith("m-"):
        return _parse_response(text, raw)
    return _parse_command(text, raw, max_chunk)


def is_command(msg: Message) -> bool:
    return isinstance(msg, COMMAND_TYPES)


# -- stimulus download -------------------------------------------------------


def chunk_input(data: bytes, max_chunk: int = MAX_CHUNK) -> list[Command]:
    """Split a stimulus into ``db`` chunks followed by one ``db-done``."""
    if max_chunk < 1:
        raise ValueError("max_chunk must be >= 1")
    if not data:
        raise EmptyInput("cannot download an empty stimulus")
    data = bytes(data)
    commands: list[Command] = [
        LoadChunk(offset, data[offset:offset + max_chunk])
        for offset in range(0, len(data), max_chunk)
    ]
    commands.append(LoadDone(len(data)))
    return commands


# -- framing -----------------------------------------------------------------


class LineFramer:
    """Reassemble newline-terminated lines from arbitrarily split byte chunks."""

    def __init__(self) -> None:
        self._pending = bytearray()

    def feed(self, data: bytes) -> list[bytes]:
        self._pending += data
        lines = []
        while True:
            end = self._pending.find(b"\n")
            if end < 0:
                break
            lines.append(bytes(self._pending[:end + 1]))
            del self._pending[:end + 1]
        return lines

    @property
    def pending(self) -> bytes:
        """Bytes received after the last complete line."""
        return bytes(self._pending)
