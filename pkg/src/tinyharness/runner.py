"""Host-side benchmark runner.

Drives a DUT through the latency, accuracy and energy procedures.  Every
score is derived from raw measurements by :func:`compute_scores`, the same
function the results store uses to re-score a saved folder.
"""

from __future__ import annotations

import logging
import math
import os
import select
import socket
import subprocess
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import __version__
from . import protocol as p
from .dut_sim import ProbeFile, SimDut
from .emon import EmonConfig, EnergyTrace, SimulatedEmon, find_window, integrate
from .errors import (
    DutError,
    EmptyDataset,
    EmptyStimuliDir,
    NoResponse,
    ProtocolError,
    ResultArityMismatch,
)
from .fixtures import Stimulus, decode_fixture, list_dataset
from .rules import SubmissionMeta
from .scoring import (
    AccuracyScore,
    BenchmarkProfile,
    EnergyRun,
    EnergyScore,
    LatencyScore,
    MetricKind,
    anomaly_file_score,
    auc_roc,
    energy_per_inference,
    get_profile,
    run_median,
    top1,
)

log = logging.getLogger(__name__)

LIVE_TIMEOUT_S = 5.0
MAX_LOOP_ATTEMPTS = 3


# -- links -----------------------------------------------------------------------


class Link:
    """One request/response serial session with a DUT; records a byte transcript."""

    def __init__(self) -> None:
        self.transcript: list[tuple[bytes, bytes]] = []
        self._ready = False

    def wait_ready(self) -> None:
        if self._ready:
            return
        line = self._recv_line()
        self.transcript.append((b"", line))
        if not isinstance(self._parse(line), p.Ready):
            raise ProtocolError(f"expected m-ready, got {line!r}")
        self._ready = True

    def request(self, cmd: p.Command) -> p.Response:
        raw = p.encode(cmd)
        self._send(raw)
        line = self._recv_line()
        self.transcript.append((raw, line))
        return self._parse(line)

    @staticmethod
    def _parse(line: bytes) -> p.Response:
        msg = p.parse(line)
        if p.is_command(msg):
            raise ProtocolError(f"DUT sent a command: {line!r}")
        return msg

    def _send(self, data: bytes) -> None:
        raise NotImplementedError

    def _recv_line(self) -> bytes:
        raise NotImplementedError

    def probe(self):
        """Signal source an energy monitor can attach to, if the link exposes one."""
        return None

    def close(self) -> int | None:
        return None

    def __enter__(self) -> "Link":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class InProcessLink(Link):
    """Feeds encoded bytes straight into a :class:`SimDut`; no timeout applies."""

    def __init__(self, dut: SimDut):
        super().__init__()
        self.dut = dut
        self._framer = p.LineFramer()
        self._lines = self._framer.feed(dut.greeting())

    def _send(self, data: bytes) -> None:
        self._lines += self._framer.feed(self.dut.feed(data))

    def _recv_line(self) -> bytes:
        if not self._lines:
            raise NoResponse("DUT produced no response")
        return self._lines.pop(0)

    def probe(self):
        return self.dut


class StreamLink(Link):
    """Link over a raw file descriptor pair or socket with a per-response timeout."""

    def __init__(self, timeout: float = LIVE_TIMEOUT_S):
        super().__init__()
        self.timeout = timeout
        self._framer = p.LineFramer()
        self._lines: list[bytes] = []
        self._eof = False

    def _read_some(self, timeout: float) -> bytes | None:
        """Bytes available within ``timeout``; b"" at EOF, None on timeout."""
        raise NotImplementedError

    def _recv_line(self) -> bytes:
        deadline = time.monotonic() + self.timeout
        while not self._lines:
            if self._eof:
                raise NoResponse("stream closed by DUT")
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise NoResponse(f"no response within {self.timeout} s")
            data = self._read_some(remaining)
            if data is None:
                continue
            if data == b"":
                self._eof = True
                continue
            self._lines += self._framer.feed(data)
        return self._lines.pop(0)


class SubprocessLink(StreamLink):
    """Runs a DUT process and talks to it over its stdin/stdout pipes."""

    def __init__(self, argv: Sequence[str], timeout: float = LIVE_TIMEOUT_S,
                 probe_path: str | Path | None = None):
        super().__init__(timeout)
        self.proc = subprocess.Popen(list(argv), stdin=subprocess.PIPE, stdout=subprocess.PIPE, bufsize=0)
        self._probe_path = probe_path

    def _send(self, data: bytes) -> None:
        try:
            self.proc.stdin.write(data)
            self.proc.stdin.flush()
        except (BrokenPipeError, ValueError):
            raise NoResponse("DUT process closed its input") from None

    def _read_some(self, timeout: float) -> bytes | None:
        fd = self.proc.stdout.fileno()
        ready, _, _ = select.select([fd], [], [], timeout)
        if not ready:
            return None
        return os.read(fd, 65536)

    def probe(self):
        return ProbeFile(self._probe_path) if self._probe_path else None

    def close(self) -> int | None:
        if self.proc.stdin and not self.proc.stdin.closed:
            try:
                self.proc.stdin.close()
            except BrokenPipeError:
                pass
        try:
            status = self.proc.wait(timeout=self.timeout)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            status = self.proc.wait()
        if self.proc.stdout:
            self.proc.stdout.close()
        return status


class SocketLink(StreamLink):
    def __init__(self, host: str, port: int, timeout: float = LIVE_TIMEOUT_S,
                 probe_path: str | Path | None = None):
        super().__init__(timeout)
        try:
            self.sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise NoResponse(f"cannot connect to DUT at {host}:{port}: {exc}") from None
        self._probe_path = probe_path

    def _send(self, data: bytes) -> None:
        try:
            self.sock.sendall(data)
        except OSError:
            raise NoResponse("DUT socket closed") from None

    def _read_some(self, timeout: float) -> bytes | None:
        self.sock.settimeout(timeout)
        try:
            return self.sock.recv(65536)
        except socket.timeout:
            return None
        except OSError:
            return b""

    def probe(self):
        return ProbeFile(self._probe_path) if self._probe_path else None

    def close(self) -> int | None:
        self.sock.close()
        return None


def sim_dut_argv(config, probe_path: str | Path | None = None) -> list[str]:
    argv = [sys.executable, "-m", "tinyharness", "sim-dut", *config.to_argv()]
    if probe_path:
        argv += ["--probe", str(probe_path)]
    return argv


# -- measurement records ----------------------------------------------------------


@dataclass(frozen=True)
class LatencyRun:
    """Raw timing of one measured loop.

    ``unit`` is ``"us"`` for DUT timer readings, ``"s"`` for EMON trigger edges.
    """

    stimulus: str
    iterations: int
    start: float
    end: float
    unit: str = "us"

    @property
    def elapsed_s(self) -> float:
        if self.unit == "us":
            return (self.end - self.start) / 1e6
        return self.end - self.start

    @property
    def ips(self) -> float:
        return self.iterations / self.elapsed_s


@dataclass(frozen=True)
class AccuracyOutput:
    stimulus: str
    label: int
    outputs: tuple[float, ...]
    central_start: int = 0
    central_stop: int = 0


@dataclass
class RawData:
    latency_runs: list[LatencyRun] = field(default_factory=list)
    traces: list[EnergyTrace] = field(default_factory=list)
    accuracy_outputs: list[AccuracyOutput] = field(default_factory=list)


@dataclass(frozen=True)
class RunSummary:
    stimulus: str
    iterations: int
    elapsed_s: float


@dataclass(frozen=True)
class RunReport:
    benchmark: str
    mode: p.Mode
    dut_name: str
    latency: LatencyScore | None = None
    accuracy: AccuracyScore | None = None
    energy: EnergyScore | None = None
    runs: tuple[RunSummary, ...] = ()
    meta: SubmissionMeta = field(default_factory=SubmissionMeta)
    emon: EmonConfig | None = None
    tool_version: str = __version__

    def scores(self) -> dict:
        return {"latency": self.latency, "accuracy": self.accuracy, "energy": self.energy}


def compute_scores(profile: BenchmarkProfile, raw: RawData) -> tuple[
        LatencyScore | None, AccuracyScore | None, EnergyScore | None]:
    """Derive every score from raw measurements."""
    latency = None
    if raw.latency_runs:
        ips = tuple(run.ips for run in raw.latency_runs)
        latency = LatencyScore(ips, run_median(ips))

    energy = None
    if raw.traces:
        runs = []
        for trace, lat in zip(raw.traces, raw.latency_runs):
            joules = integrate(trace, find_window(trace))
            runs.append(EnergyRun(joules, lat.iterations, energy_per_inference(joules, lat.iterations)))
        energy = EnergyScore(tuple(runs), run_median([r.uj_per_inference for r in runs]))

    accuracy = None
    if raw.accuracy_outputs:
        outs = raw.accuracy_outputs
        if profile.metric_kind is MetricKind.TOP1:
            value = top1([o.outputs for o in outs], [o.label for o in outs])
        else:
            file_scores = [anomaly_file_score(o.outputs, (o.central_start, o.central_stop)) for o in outs]
            value = auc_roc(file_scores, [bool(o.label) for o in outs])
        accuracy = AccuracyScore(profile.metric_kind, value, len(outs))
    return latency, accuracy, energy


def summarize_runs(raw: RawData) -> tuple[RunSummary, ...]:
    return tuple(RunSummary(r.stimulus, r.iterations, r.elapsed_s) for r in raw.latency_runs)


# -- session ----------------------------------------------------------------------


@dataclass
class SessionConfig:
    mode: p.Mode
    stimuli_dir: Path
    benchmark: BenchmarkProfile
    emon_config: EmonConfig | None = None
    min_run_seconds: float = 10.0
    min_iterations: int = 10
    n_runs: int = 5
    max_chunk: int = p.MAX_CHUNK

    def __post_init__(self) -> None:
        self.mode = p.Mode.coerce(self.mode)
        self.stimuli_dir = Path(self.stimuli_dir)
        if isinstance(self.benchmark, str):
            self.benchmark = get_profile(self.benchmark)
        if self.min_run_seconds <= 0:
            raise ValueError("min_run_seconds must be positive")
        if self.min_iterations < 1:
            raise ValueError("min_iterations must be >= 1")
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")
        if self.mode is p.Mode.ENERGY and self.emon_config is None:
            self.emon_config = EmonConfig()


class Session:
    """Command flow of one benchmark session over a :class:`Link`."""

    def __init__(self, link: Link, config: SessionConfig, emon: SimulatedEmon | None = None):
        self.link = link
        self.config = config
        self.emon = emon
        self.dut_name: str | None = None
        self.raw = RawData()

    # -- protocol helpers -----------------------------------------------------

    def _call(self, cmd: p.Command, expect: type) -> p.Response:
        resp = self.link.request(cmd)
        if isinstance(resp, p.Error):
            raise DutError(resp.code.value, resp.detail)
        if not isinstance(resp, expect):
            raise ProtocolError(f"{type(cmd).__name__}: expected {expect.__name__}, got {resp!r}")
        return resp

    def _timestamp_us(self) -> int:
        return self._call(p.Timestamp(), p.TimestampIs).t

    def download(self, blob: bytes) -> None:
        for cmd in p.chunk_input(blob, self.config.max_chunk):
            self._call(cmd, p.Ack)
        self._call(p.SetTensor(), p.Ack)

    def handshake(self) -> str:
        self.link.wait_ready()
        name = self._call(p.Name(), p.NameIs).id
        self._call(p.SetMode(self.config.mode), p.Ack)
        self.dut_name = name
        return name

    # -- timed loops ----------------------------------------------------------

    def _timed_loop(self, iterations: int) -> tuple[float, float, str, EnergyTrace | None]:
        """Run ``iterations`` inferences bracketed by two timestamps."""
        if self.config.mode is p.Mode.PERFORMANCE:
            t0 = self._timestamp_us()
            self._call(p.Infer(iterations, 0), p.Ack)
            t1 = self._timestamp_us()
            return t0, t1, "us", None
        self.emon.arm()
        self._call(p.Timestamp(), p.Ack)
        self._call(p.Infer(iterations, 0), p.Ack)
        self._call(p.Timestamp(), p.Ack)
        trace = self.emon.disarm()
        t0, t1 = find_window(trace)
        return t0, t1, "s", trace

    @staticmethod
    def _elapsed_us(t0: float, t1: float, unit: str) -> int:
        return int(t1 - t0) if unit == "us" else round((t1 - t0) * 1e6)

    def _measure_run(self, stimulus: Path) -> tuple[LatencyRun, EnergyTrace | None]:
        self.download(stimulus.read_bytes())
        min_run_us = round(self.config.min_run_seconds * 1e6)

        # Sizing probe, excluded from the measured window.
        probe_n = 1
        while True:
            t0, t1, unit, _ = self._timed_loop(probe_n)
            probe_us = self._elapsed_us(t0, t1, unit)
            if probe_us > 0:
                break
            probe_n *= 10
        iterations = max(self.config.min_iterations, math.ceil(min_run_us * probe_n / probe_us))

        for _ in range(MAX_LOOP_ATTEMPTS):
            t0, t1, unit, trace = self._timed_loop(iterations)
            elapsed_us = self._elapsed_us(t0, t1, unit)
            if elapsed_us >= min_run_us:
                break
            log.info("loop of %d iterations ran %d us, below minimum; resizing", iterations, elapsed_us)
            iterations = math.ceil(iterations * min_run_us / max(elapsed_us, 1))
        return LatencyRun(stimulus.name, iterations, t0, t1, unit), trace

    def _stimuli(self) -> list[Path]:
        files = list_dataset(self.config.stimuli_dir)
        if not files:
            raise EmptyStimuliDir(f"no stimuli in {self.config.stimuli_dir}")
        return files

    def run_latency(self) -> LatencyScore:
        files = self._stimuli()
        for k in range(self.config.n_runs):
            run, trace = self._measure_run(files[k % len(files)])
            self.raw.latency_runs.append(run)
            if trace is not None:
                self.raw.traces.append(trace)
        latency, _, _ = compute_scores(self.config.benchmark, self.raw)
        return latency

    def run_energy(self) -> tuple[LatencyScore, EnergyScore]:
        if self.config.mode is not p.Mode.ENERGY:
            raise ValueError("energy runs need a session in energy mode")
        if self.emon is None:
            raise ValueError("energy runs need an attached energy monitor")
        latency = self.run_latency()
        _, _, energy = compute_scores(self.config.benchmark, self.raw)
        return latency, energy

    def run_accuracy(self, dataset_dir: str | Path | None = None) -> AccuracyScore:
        dataset_dir = Path(dataset_dir) if dataset_dir is not None else self.config.stimuli_dir
        files = list_dataset(dataset_dir)
        if not files:
            raise EmptyDataset(f"no fixtures in {dataset_dir}")
        profile = self.config.benchmark
        self.raw.accuracy_outputs = []
        for path in files:
            blob = path.read_bytes()
            stim = decode_fixture(blob)
            self.download(blob)
            self._call(p.Infer(1, 0), p.Ack)
            values = self._call(p.GetResults(), p.ResultTensor).values
            expected = _expected_arity(profile, stim)
            if len(values) != expected:
                raise ResultArityMismatch(f"{path.name}: {len(values)} outputs, expected {expected}")
            self.raw.accuracy_outputs.append(
                AccuracyOutput(path.name, stim.label, values, stim.central_start, stim.central_stop)
            )
        _, accuracy, _ = compute_scores(profile, self.raw)
        return accuracy

    def report(self, meta: SubmissionMeta | None = None) -> RunReport:
        latency, accuracy, energy = compute_scores(self.config.benchmark, self.raw)
        return RunReport(
            benchmark=self.config.benchmark.use_case,
            mode=self.config.mode,
            dut_name=self.dut_name or "",
            latency=latency,
            accuracy=accuracy,
            energy=energy,
            runs=summarize_runs(self.raw),
            meta=meta or SubmissionMeta(),
            emon=self.config.emon_config if self.config.mode is p.Mode.ENERGY else None,
        )


def _expected_arity(profile: BenchmarkProfile, stim: Stimulus) -> int:
    if profile.metric_kind is MetricKind.TOP1:
        return profile.n_classes
    return stim.n_windows


def run_session(
    link: Link,
    config: SessionConfig,
    dataset_dir: str | Path | None = None,
    meta: SubmissionMeta | None = None,
    accuracy: bool = True,
) -> tuple[RunReport, RawData]:
    """Full session: handshake, latency (or energy) runs, then the accuracy pass."""
    emon = None
    if config.mode is p.Mode.ENERGY:
        source = link.probe()
        if source is None:
            raise ValueError("energy mode needs a link that exposes the DUT's probe signals")
        emon = SimulatedEmon(config.emon_config)
        emon.attach(source)
    session = Session(link, config, emon)
    session.handshake()
    if config.mode is p.Mode.ENERGY:
        session.run_energy()
    else:
        session.run_latency()
    if accuracy:
        session.run_accuracy(dataset_dir)
    return session.report(meta), session.raw
