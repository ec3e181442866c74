"""Software device under test speaking the host protocol on a virtual clock.

The simulated firmware exposes the same five entry points a ported DUT
provides: a timestamp (timer readback in performance mode, a falling GPIO
edge in energy mode), serial rx/tx, tensor loading, single inference and
result printing.  Time only advances on modeled work, so a ten-second
measurement loop costs microseconds of host time.

The "physical" signals an energy monitor would observe (supply power state
and GPIO edges) are exposed through :meth:`SimDut.snapshot`, or written to a
probe file when the DUT runs as a separate process.
"""

from __future__ import annotations

import argparse
import os
import socket
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Callable, Iterable, Sequence

from . import protocol as p
from .errors import DutError, FixtureError, LengthMismatch, MalformedLine
from .fixtures import Stimulus, decode_fixture
from .scoring import get_profile

DEFAULT_BUFFER_LIMIT = 1 << 20
# Idle time inserted before a GPIO edge that would coincide with the previous one.
EDGE_GUARD_US = 1


@dataclass(frozen=True)
class PowerModel:
    active_mw: float
    idle_mw: float

    def __post_init__(self) -> None:
        if self.active_mw < 0 or self.idle_mw < 0:
            raise ValueError("power levels must be non-negative")


def stub_output(stim: Stimulus) -> list[float]:
    """Reference stand-in for a model: uses tensor shape metadata, never the label.

    Classifiers normalize the first ``n_classes`` tensor values into a
    probability vector.  The anomaly autoencoder reconstructs zeros, so each
    window's MSE is the mean square of its inputs.
    """
    if stim.window_len:
        w = stim.window_len
        return [
            sum(x * x for x in stim.tensor[i:i + w]) / w
            for i in range(0, len(stim.tensor), w)
        ]
    n_classes = get_profile(stim.benchmark).n_classes
    head = [max(0.0, x) for x in stim.tensor[:n_classes]]
    total = sum(head)
    if total == 0.0:
        return [1.0 / n_classes] * n_classes
    return [x / total for x in head]


@dataclass
class InferenceKernel:
    latency_us: int | Callable[[Stimulus], int]
    power: PowerModel
    output_fn: Callable[[Stimulus], Sequence[float]] = stub_output

    def latency_for(self, stim: Stimulus) -> int:
        latency = self.latency_us(stim) if callable(self.latency_us) else self.latency_us
        if int(latency) != latency or latency <= 0:
            raise ValueError(f"kernel latency must be a positive integer of microseconds, got {latency}")
        return int(latency)


@dataclass(frozen=True)
class DutConfig:
    """Everything needed to build an identical DUT in-process or in a subprocess."""

    name: str = "ref-dut"
    latency_us: int = 100_000
    active_mw: float = 30.0
    idle_mw: float = 3.0
    timer_resolution_us: int = 1
    max_chunk: int = p.MAX_CHUNK
    buffer_limit: int = DEFAULT_BUFFER_LIMIT

    def __post_init__(self) -> None:
        if not self.name or any(not "!" <= c <= "~" for c in self.name):
            raise ValueError("DUT name must be non-empty printable ASCII without spaces")
        if self.timer_resolution_us < 1 or self.timer_resolution_us > 1000:
            raise ValueError("timer resolution must be between 1 us and 1 ms")

    def kernel(self) -> InferenceKernel:
        return InferenceKernel(self.latency_us, PowerModel(self.active_mw, self.idle_mw))

    def to_argv(self) -> list[str]:
        return [
            "--name", self.name,
            "--latency-us", str(self.latency_us),
            "--active-mw", repr(float(self.active_mw)),
            "--idle-mw", repr(float(self.idle_mw)),
            "--timer-resolution-us", str(self.timer_resolution_us),
            "--max-chunk", str(self.max_chunk),
            "--buffer-limit", str(self.buffer_limit),
        ]

    @classmethod
    def add_arguments(cls, parser: argparse.ArgumentParser) -> None:
        d = cls()
        parser.add_argument("--name", default=d.name, help="DUT identifier answered to 'name'")
        parser.add_argument("--latency-us", type=int, default=d.latency_us,
                            help="virtual duration of one inference")
        parser.add_argument("--active-mw", type=float, default=d.active_mw)
        parser.add_argument("--idle-mw", type=float, default=d.idle_mw)
        parser.add_argument("--timer-resolution-us", type=int, default=d.timer_resolution_us)
        parser.add_argument("--max-chunk", type=int, default=d.max_chunk)
        parser.add_argument("--buffer-limit", type=int, default=d.buffer_limit)

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "DutConfig":
        return cls(
            name=args.name,
            latency_us=args.latency_us,
            active_mw=args.active_mw,
            idle_mw=args.idle_mw,
            timer_resolution_us=args.timer_resolution_us,
            max_chunk=args.max_chunk,
            buffer_limit=args.buffer_limit,
        )


@dataclass
class DutState:
    mode: p.Mode = p.Mode.PERFORMANCE
    rx_buffer: bytearray = field(default_factory=bytearray)
    rx_mask: bytearray = field(default_factory=bytearray)
    loaded: bytes | None = None
    stimulus: Stimulus | None = None
    clock_us: int = 0
    trigger_log: list[int] = field(default_factory=list)
    busy_log: list[tuple[int, int]] = field(default_factory=list)
    results: tuple[float, ...] | None = None

    @property
    def input_tensor(self) -> tuple[float, ...] | None:
        return self.stimulus.tensor if self.stimulus else None


@dataclass(frozen=True)
class ProbeSnapshot:
    """Power-rail and GPIO activity of a DUT up to ``now_us``."""

    idle_mw: float
    active_mw: float
    busy: tuple[tuple[int, int], ...]
    edges: tuple[int, ...]
    now_us: int


class ProbeFileWriter:
    """Append-only record of DUT signals for an energy monitor in another process."""

    def __init__(self, path: str | Path, power: PowerModel):
        self._fh = open(path, "w", encoding="ascii")
        self._fh.write(f"levels {power.idle_mw!r} {power.active_mw!r}\n")
        self._fh.flush()
        self._last_now = -1

    def busy(self, start: int, end: int) -> None:
        self._fh.write(f"busy {start} {end}\n")

    def edge(self, t: int) -> None:
        self._fh.write(f"edge {t}\n")

    def now(self, t: int) -> None:
        """Mark the DUT's current time; flushes so a reader sees every prior event."""
        if t != self._last_now:
            self._fh.write(f"now {t}\n")
            self._last_now = t
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


class ProbeFile:
    """Reader side of :class:`ProbeFileWriter`."""

    def __init__(self, path: str | Path):
        self.path = Path(path)

    def snapshot(self) -> ProbeSnapshot:
        idle = active = 0.0
        busy: list[tuple[int, int]] = []
        edges: list[int] = []
        now = 0
        for line in self.path.read_text(encoding="ascii").splitlines():
            kind, *vals = line.split()
            if kind == "levels":
                idle, active = float(vals[0]), float(vals[1])
            elif kind == "busy":
                busy.append((int(vals[0]), int(vals[1])))
            elif kind == "edge":
                edges.append(int(vals[0]))
            elif kind == "now":
                now = int(vals[0])
        return ProbeSnapshot(idle, active, tuple(busy), tuple(edges), now)


def _printable(text: str) -> str:
    return "".join(c for c in text if " " <= c <= "~")


class SimDut:
    """A deterministic DUT.  ``handle`` works on parsed commands, ``feed`` on raw bytes."""

    def __init__(
        self,
        config: DutConfig | None = None,
        kernel: InferenceKernel | None = None,
        probe: ProbeFileWriter | None = None,
    ):
        self.config = config or DutConfig()
        self.kernel = kernel or self.config.kernel()
        self.state = DutState()
        self._probe = probe
        self._framer = p.LineFramer()

    # -- firmware API ---------------------------------------------------------

    def handle(self, cmd: p.Command) -> p.Response:
        st = self.state
        if isinstance(cmd, p.Name):
            return p.NameIs(self.config.name)
        if isinstance(cmd, p.SetMode):
            st.mode = p.Mode.coerce(cmd.mode)
            return p.Ack()
        if isinstance(cmd, p.Timestamp):
            return self._timestamp()
        if isinstance(cmd, p.LoadChunk):
            return self._load_chunk(cmd)
        if isinstance(cmd, p.LoadDone):
            return self._load_done(cmd)
        if isinstance(cmd, p.SetTensor):
            return self._set_tensor()
        if isinstance(cmd, p.Infer):
            return self._infer(cmd.iterations, cmd.warmup)
        if isinstance(cmd, p.GetResults):
            if st.results is None:
                return p.Error(p.ErrorCode.NOT_READY, "no inference has run")
            return p.ResultTensor(st.results)
        return p.Error(p.ErrorCode.UNKNOWN_COMMAND, type(cmd).__name__)

    def _timestamp(self) -> p.Response:
        st = self.state
        if st.mode is p.Mode.PERFORMANCE:
            res = self.config.timer_resolution_us
            return p.TimestampIs(st.clock_us - st.clock_us % res)
        if st.trigger_log and st.trigger_log[-1] >= st.clock_us:
            st.clock_us = st.trigger_log[-1] + EDGE_GUARD_US
        st.trigger_log.append(st.clock_us)
        if self._probe:
            self._probe.edge(st.clock_us)
        return p.Ack()

    def _load_chunk(self, cmd: p.LoadChunk) -> p.Response:
        st = self.state
        end = cmd.offset + len(cmd.payload)
        if len(cmd.payload) > self.config.max_chunk:
            return p.Error(p.ErrorCode.OVERFLOW, f"chunk exceeds {self.config.max_chunk} bytes")
        if end > self.config.buffer_limit:
            return p.Error(p.ErrorCode.OVERFLOW, f"buffer limit {self.config.buffer_limit} bytes")
        if end > len(st.rx_buffer):
            grow = end - len(st.rx_buffer)
            st.rx_buffer.extend(bytes(grow))
            st.rx_mask.extend(bytes(grow))
        st.rx_buffer[cmd.offset:end] = cmd.payload
        st.rx_mask[cmd.offset:end] = b"\x01" * len(cmd.payload)
        st.loaded = None
        return p.Ack()

    def _clear_rx(self) -> None:
        self.state.rx_buffer = bytearray()
        self.state.rx_mask = bytearray()

    def _load_done(self, cmd: p.LoadDone) -> p.Response:
        st = self.state
        received = len(st.rx_mask) - st.rx_mask.count(0)
        if len(st.rx_buffer) != cmd.total_len or received != cmd.total_len:
            self._clear_rx()
            return p.Error(
                p.ErrorCode.LENGTH_MISMATCH,
                f"declared {cmd.total_len} bytes, received {received}",
            )
        st.loaded = bytes(st.rx_buffer)
        return p.Ack()

    def _set_tensor(self) -> p.Response:
        st = self.state
        if st.loaded is None:
            return p.Error(p.ErrorCode.NOT_READY, "no completed download")
        blob = st.loaded
        st.loaded = None
        self._clear_rx()
        try:
            st.stimulus = decode_fixture(blob)
        except FixtureError as exc:
            return p.Error(p.ErrorCode.BAD_FIXTURE, _printable(str(exc)))
        st.results = None
        return p.Ack()

    def _infer(self, iterations: int, warmup: int) -> p.Response:
        st = self.state
        if st.stimulus is None:
            return p.Error(p.ErrorCode.NOT_READY, "no tensor set")
        latency = self.kernel.latency_for(st.stimulus)
        start = st.clock_us
        st.clock_us += (iterations + warmup) * latency
        st.busy_log.append((start, st.clock_us))
        # Only the last iteration's output is kept; the kernel is deterministic.
        st.results = tuple(float(v) for v in self.kernel.output_fn(st.stimulus))
        if self._probe:
            self._probe.busy(start, st.clock_us)
        return p.Ack()

    # -- convenience wrappers over handle() -----------------------------------

    def load_and_set_tensor(self, chunks: Iterable[p.Command]) -> DutState:
        for cmd in chunks:
            self._expect_ack(self.handle(cmd))
        self._expect_ack(self.handle(p.SetTensor()))
        return self.state

    def infer(self, iterations: int, warmup: int = 0) -> DutState:
        self._expect_ack(self.handle(p.Infer(iterations, warmup)))
        return self.state

    @staticmethod
    def _expect_ack(resp: p.Response) -> None:
        if isinstance(resp, p.Error):
            if resp.code is p.ErrorCode.LENGTH_MISMATCH:
                raise LengthMismatch(resp.detail)
            raise DutError(resp.code.value, resp.detail)

    # -- byte level -----------------------------------------------------------

    def greeting(self) -> bytes:
        return p.encode(p.Ready())

    def handle_line(self, line: bytes) -> bytes:
        try:
            msg = p.parse(line, max_chunk=self.config.max_chunk)
        except MalformedLine as exc:
            resp: p.Response = p.Error(p.ErrorCode.MALFORMED, _printable(exc.reason))
        else:
            if p.is_command(msg):
                resp = self.handle(msg)
            else:
                resp = p.Error(p.ErrorCode.UNKNOWN_COMMAND, "responses are not commands")
        if self._probe:
            self._probe.now(self.state.clock_us)
        return p.encode(resp)

    def feed(self, data: bytes) -> bytes:
        """Consume raw serial bytes; return the bytes the DUT transmits back."""
        return b"".join(self.handle_line(line) for line in self._framer.feed(data))

    @property
    def mid_command(self) -> bool:
        return bool(self._framer.pending)

    def snapshot(self) -> ProbeSnapshot:
        st = self.state
        pw = self.kernel.power
        return ProbeSnapshot(pw.idle_mw, pw.active_mw, tuple(st.busy_log),
                             tuple(st.trigger_log), st.clock_us)


# -- serving -------------------------------------------------------------------


def serve_stream(dut: SimDut, read: Callable[[int], bytes], write: Callable[[bytes], None]) -> int:
    """Serve the protocol until end-of-stream.  Returns the process exit status."""
    write(dut.greeting())
    while True:
        data = read(65536)
        if not data:
            # Partial line at EOF means the host vanished mid-command.
            return 1 if dut.mid_command else 0
        out = dut.feed(data)
        if out:
            write(out)


def run_as_subprocess(
    config: DutConfig,
    stdin: BinaryIO | None = None,
    stdout: BinaryIO | None = None,
    probe_path: str | Path | None = None,
) -> int:
    stdin = stdin or sys.stdin.buffer
    stdout = stdout or sys.stdout.buffer
    probe = ProbeFileWriter(probe_path, config.kernel().power) if probe_path else None
    dut = SimDut(config, probe=probe)
    fd = stdin.fileno() if hasattr(stdin, "fileno") else None

    def read(n: int) -> bytes:
        return os.read(fd, n) if fd is not None else stdin.read1(n)

    def write(data: bytes) -> None:
        stdout.write(data)
        stdout.flush()

    try:
        return serve_stream(dut, read, write)
    except (BrokenPipeError, ConnectionResetError):
        return 1
    finally:
        if probe:
            probe.close()


def serve_socket(
    config: DutConfig,
    host: str,
    port: int,
    probe_path: str | Path | None = None,
    on_listen: Callable[[str, int], None] | None = None,
) -> int:
    """Accept one TCP connection and serve it."""
    probe = ProbeFileWriter(probe_path, config.kernel().power) if probe_path else None
    dut = SimDut(config, probe=probe)
    with socket.create_server((host, port)) as server:
        bound_host, bound_port = server.getsockname()[:2]
        if on_listen:
            on_listen(bound_host, bound_port)
        conn, _ = server.accept()
        with conn:
            try:
                return serve_stream(dut, conn.recv, conn.sendall)
            except (BrokenPipeError, ConnectionResetError):
                return 1
            finally:
                if probe:
                    probe.close()
