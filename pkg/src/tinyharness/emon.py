"""Energy monitor: simulated two-channel supply traces, trigger windows, integration.

The monitor supplies two channels, one for the DUT core and one for the
level shifters of the isolation proxy.  Only the DUT channel counts towards
the energy score.

Returned samples model a monitor that decimates a much faster internal ADC:
each sample is the mean power over its sample period, centred on the sample
time.  That keeps trapezoidal integration exact for piecewise-constant and
piecewise-linear profiles, whatever the reporting rate.
"""

from __future__ import annotations

import bisect
import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Mapping, Sequence, Union

import numpy as np

from .errors import (
    CorruptTrace,
    EmptyWindow,
    InsufficientTriggers,
    InvalidProfile,
    NoSamplesInWindow,
)


class Channel(str, enum.Enum):
    DUT = "dut"
    LEVEL_SHIFTER = "level_shifter"


CHANNEL_ORDER = (Channel.DUT, Channel.LEVEL_SHIFTER)


@dataclass(frozen=True)
class EnergySample:
    t: float
    voltage: float
    current: float
    channel: Channel


# -- power profiles ------------------------------------------------------------


class PiecewiseLinear:
    """Power in mW, linear between knots, constant outside them.

    Repeated knot times encode jumps; the function is right-continuous.
    """

    def __init__(self, times: Sequence[float], values: Sequence[float]):
        if len(times) != len(values) or not times:
            raise InvalidProfile("profile needs matching, non-empty knot lists")
        t = np.asarray(times, dtype=float)
        v = np.asarray(values, dtype=float)
        if np.any(np.diff(t) < 0):
            raise InvalidProfile("knot times must be non-decreasing")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise InvalidProfile("power must be finite and non-negative")
        self.times = t
        self.values = v
        seg = np.diff(t) * (v[1:] + v[:-1]) / 2
        self._cum = np.concatenate(([0.0], np.cumsum(seg)))

    def antiderivative(self, t: np.ndarray | float) -> np.ndarray:
        """Integral from the first knot to ``t`` (negative before it), in mW*s."""
        t = np.asarray(t, dtype=float)
        kt, kv, cum = self.times, self.values, self._cum
        idx = np.clip(np.searchsorted(kt, t, side="right") - 1, 0, len(kt) - 1)
        t0 = kt[idx]
        v0 = kv[idx]
        nxt = np.minimum(idx + 1, len(kt) - 1)
        t1 = kt[nxt]
        v1 = kv[nxt]
        span = t1 - t0
        inside = (t >= t0) & (nxt > idx) & (span > 0)
        slope = np.where(inside, (v1 - v0) / np.where(span > 0, span, 1.0), 0.0)
        vt = v0 + slope * (t - t0)
        out = cum[idx] + (t - t0) * (v0 + vt) / 2
        # Before the first knot the profile is constant at the first value.
        return np.where(t < kt[0], (t - kt[0]) * kv[0], out)

    def value(self, t: float) -> float:
        i = bisect.bisect_right(self.times.tolist(), t) - 1
        if i < 0:
            return float(self.values[0])
        if i >= len(self.times) - 1:
            return float(self.values[-1])
        t0, t1 = self.times[i], self.times[i + 1]
        v0, v1 = self.values[i], self.values[i + 1]
        return float(v0 + (v1 - v0) * (t - t0) / (t1 - t0))

    def mean(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return (self.antiderivative(b) - self.antiderivative(a)) / (np.asarray(b) - np.asarray(a))


@dataclass
class PowerProfile:
    """DUT and level-shifter power (mW) as functions of time (s)."""

    dut: PiecewiseLinear
    level_shifter: PiecewiseLinear

    @classmethod
    def constant(cls, dut_mw: float, level_shifter_mw: float = 0.0) -> "PowerProfile":
        return cls(PiecewiseLinear([0.0], [dut_mw]), PiecewiseLinear([0.0], [level_shifter_mw]))

    @classmethod
    def steps(cls, breaks: Sequence[float], dut_levels: Sequence[float],
              level_shifter_mw: float = 0.0) -> "PowerProfile":
        """``dut_levels[k]`` holds on ``[breaks[k-1], breaks[k])``; one more level than breaks."""
        if len(dut_levels) != len(breaks) + 1:
            raise InvalidProfile("steps need exactly one more level than breakpoints")
        if not breaks:
            return cls.constant(dut_levels[0], level_shifter_mw)
        times, values = [], []
        for k, b in enumerate(breaks):
            times += [b, b]
            values += [dut_levels[k], dut_levels[k + 1]]
        return cls(PiecewiseLinear(times, values), PiecewiseLinear([0.0], [level_shifter_mw]))

    @classmethod
    def ramp(cls, t0: float, t1: float, p0: float, p1: float,
             level_shifter_mw: float = 0.0) -> "PowerProfile":
        return cls(PiecewiseLinear([t0, t1], [p0, p1]), PiecewiseLinear([0.0], [level_shifter_mw]))

    @classmethod
    def from_busy(cls, busy: Sequence[tuple[float, float]], idle_mw: float, active_mw: float,
                  level_shifter_mw: float = 0.0) -> "PowerProfile":
        """Idle power except during ``[start, end)`` busy intervals (seconds)."""
        if not busy:
            return cls.constant(idle_mw, level_shifter_mw)
        times, values = [], []
        for start, end in busy:
            times += [start, start, end, end]
            values += [idle_mw, active_mw, active_mw, idle_mw]
        return cls(PiecewiseLinear(times, values), PiecewiseLinear([0.0], [level_shifter_mw]))


ProfileLike = Union[PowerProfile, Callable[[float], tuple[float, float]]]


# -- traces ----------------------------------------------------------------------


@dataclass
class ChannelSamples:
    t: np.ndarray
    voltage: np.ndarray
    current: np.ndarray

    @property
    def power_w(self) -> np.ndarray:
        return self.voltage * self.current

    def __len__(self) -> int:
        return len(self.t)


@dataclass(eq=False)
class EnergyTrace:
    channels: dict[Channel, ChannelSamples]
    triggers: tuple[float, ...]
    sample_rate: float
    supply_voltage: float

    def __post_init__(self) -> None:
        self.triggers = tuple(float(x) for x in self.triggers)
        if any(b <= a for a, b in zip(self.triggers, self.triggers[1:])):
            raise ValueError("triggers must be strictly increasing")
        for ch in self.channels.values():
            if np.any(np.diff(ch.t) < 0):
                raise ValueError("samples must be sorted by time")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EnergyTrace):
            return NotImplemented
        if (self.triggers, self.sample_rate, self.supply_voltage) != (
            other.triggers, other.sample_rate, other.supply_voltage
        ) or set(self.channels) != set(other.channels):
            return False
        return all(
            np.array_equal(a.t, b.t) and np.array_equal(a.voltage, b.voltage)
            and np.array_equal(a.current, b.current)
            for a, b in ((self.channels[c], other.channels[c]) for c in self.channels)
        )

    def channel(self, channel: Channel | str) -> ChannelSamples:
        try:
            return self.channels[Channel(channel)]
        except (KeyError, ValueError):
            raise NoSamplesInWindow(f"trace has no {channel} channel") from None

    def samples(self) -> Iterator[EnergySample]:
        """All samples ordered by time, DUT channel first at equal times."""
        rows = []
        for rank, ch in enumerate(CHANNEL_ORDER):
            if ch in self.channels:
                s = self.channels[ch]
                rows += [(t, rank, v, i, ch) for t, v, i in zip(s.t.tolist(), s.voltage.tolist(), s.current.tolist())]
        rows.sort(key=lambda r: (r[0], r[1]))
        for t, _, v, i, ch in rows:
            yield EnergySample(t, v, i, ch)

    def power_mw(self, channel: Channel | str = Channel.DUT) -> tuple[np.ndarray, np.ndarray]:
        s = self.channel(channel)
        return s.t, s.power_w * 1e3

    @property
    def span(self) -> tuple[float, float]:
        ts = [c.t for c in self.channels.values() if len(c)]
        return (min(float(t[0]) for t in ts), max(float(t[-1]) for t in ts))


def sample_grid(t_start: float, t_end: float, sample_rate: float) -> np.ndarray:
    """Grid points ``k / sample_rate`` covering ``[t_start, t_end]`` with one guard sample per side."""
    k_lo = max(0, math.floor(t_start * sample_rate) - 1)
    k_hi = math.ceil(t_end * sample_rate) + 1
    return np.arange(k_lo, k_hi + 1, dtype=float) / sample_rate


def simulate_trace(
    power_profile: ProfileLike,
    triggers: Sequence[float],
    sample_rate: float,
    supply_voltage: float,
    t_start: float | None = None,
    t_end: float | None = None,
) -> EnergyTrace:
    """Realize a power profile as a two-channel trace at the given supply voltage.

    Without an explicit span the trace covers the trigger range.  A
    :class:`PowerProfile` is sampled as per-period means; a plain callable
    ``t -> (dut_mw, level_shifter_mw)`` is sampled pointwise.
    """
    if sample_rate <= 0:
        raise ValueError("sample_rate must be positive")
    if supply_voltage <= 0:
        raise ValueError("supply_voltage must be positive")
    if t_start is None or t_end is None:
        if not triggers:
            raise ValueError("need triggers or an explicit span")
        t_start = min(triggers) if t_start is None else t_start
        t_end = max(triggers) if t_end is None else t_end
    t = sample_grid(t_start, t_end, sample_rate)
    h = 1.0 / sample_rate

    if isinstance(power_profile, PowerProfile):
        dut_mw = power_profile.dut.mean(t - h / 2, t + h / 2)
        ls_mw = power_profile.level_shifter.mean(t - h / 2, t + h / 2)
        # Mean of a constant can round a hair below zero.
        dut_mw = np.maximum(dut_mw, 0.0)
        ls_mw = np.maximum(ls_mw, 0.0)
    else:
        pairs = [power_profile(float(x)) for x in t]
        dut_mw = np.array([d for d, _ in pairs], dtype=float)
        ls_mw = np.array([l for _, l in pairs], dtype=float)
        if np.any(dut_mw < 0) or np.any(ls_mw < 0):
            raise InvalidProfile("power must be non-negative")

    volts = np.full_like(t, float(supply_voltage))
    channels = {
        Channel.DUT: ChannelSamples(t, volts, dut_mw / 1e3 / supply_voltage),
        Channel.LEVEL_SHIFTER: ChannelSamples(t.copy(), volts.copy(), ls_mw / 1e3 / supply_voltage),
    }
    return EnergyTrace(channels, tuple(triggers), float(sample_rate), float(supply_voltage))


def find_window(trace: EnergyTrace) -> tuple[float, float]:
    """Timing window bracketed by the first and last falling edge."""
    if len(trace.triggers) < 2:
        raise InsufficientTriggers(f"need two trigger edges, trace has {len(trace.triggers)}")
    return trace.triggers[0], trace.triggers[-1]


def integrate(trace: EnergyTrace, window: tuple[float, float],
              channel: Channel | str = Channel.DUT) -> float:
    """Trapezoidal energy (J) of one channel over ``window``.

    Window endpoints that fall between samples are linearly interpolated.
    """
    a, b = window
    if not b > a:
        raise EmptyWindow(f"window [{a}, {b}] is empty")
    s = trace.channel(channel)
    if len(s) == 0 or a < s.t[0] or b > s.t[-1]:
        raise NoSamplesInWindow(f"window [{a}, {b}] not covered by {Channel(channel).value} samples")
    p = s.power_w
    inner = (s.t > a) & (s.t < b)
    xs = np.concatenate(([a], s.t[inner], [b]))
    ys = np.concatenate(([np.interp(a, s.t, p)], p[inner], [np.interp(b, s.t, p)]))
    return float(np.sum((xs[1:] - xs[:-1]) * (ys[1:] + ys[:-1])) / 2)


# -- simulated instrument ------------------------------------------------------------


@dataclass
class EmonConfig:
    sample_rate: float = 1000.0
    supply_voltage: float = 3.0
    level_shifter_mw: float = 5.0

    def __post_init__(self) -> None:
        if self.sample_rate <= 0 or self.supply_voltage <= 0:
            raise ValueError("sample rate and supply voltage must be positive")
        if self.level_shifter_mw < 0:
            raise ValueError("level shifter power must be non-negative")


@dataclass
class SimulatedEmon:
    """Energy monitor wired to a DUT's power rail and timestamp GPIO.

    ``source`` is anything with a ``snapshot()`` returning the DUT's busy
    intervals, edges and current time in microseconds.  Captures are
    delimited by :meth:`arm` / :meth:`disarm`; each yields one trace holding
    the edges that arrived while armed.
    """

    config: EmonConfig = field(default_factory=EmonConfig)
    source: object | None = None
    _armed_at: tuple[int, int] | None = None

    def attach(self, source: object) -> None:
        self.source = source

    def arm(self) -> None:
        snap = self._snapshot()
        self._armed_at = (len(snap.edges), snap.now_us)

    def disarm(self) -> EnergyTrace:
        if self._armed_at is None:
            raise RuntimeError("EMON capture was not armed")
        n_edges, t0_us = self._armed_at
        self._armed_at = None
        snap = self._snapshot()
        edges_us = snap.edges[n_edges:]
        t1_us = snap.now_us
        busy = [(s / 1e6, e / 1e6) for s, e in snap.busy if e >= t0_us and s <= t1_us]
        profile = PowerProfile.from_busy(busy, snap.idle_mw, snap.active_mw, self.config.level_shifter_mw)
        return simulate_trace(
            profile, [e / 1e6 for e in edges_us], self.config.sample_rate,
            self.config.supply_voltage, t_start=t0_us / 1e6, t_end=t1_us / 1e6,
        )

    def _snapshot(self):
        if self.source is None:
            raise RuntimeError("EMON is not attached to a DUT")
        return self.source.snapshot()


# -- CSV interchange -----------------------------------------------------------------

TRACE_HEADER = ["t", "channel", "voltage", "current"]


def write_trace_csv(trace: EnergyTrace, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for s in trace.samples():
            w.writerow([repr(s.t), s.channel.value, repr(s.voltage), repr(s.current)])


def write_triggers_csv(triggers: Sequence[float], path: str | Path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("t\n")
        fh.writelines(f"{float(t)!r}\n" for t in triggers)


def _finite(token: str, path: Path, lineno: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise CorruptTrace(f"{path}:{lineno}: bad number {token!r}") from None
    if not math.isfinite(value):
        raise CorruptTrace(f"{path}:{lineno}: non-finite value")
    return value


def read_triggers_csv(path: str | Path) -> tuple[float, ...]:
    path = Path(path)
    try:
        lines = path.read_text(encoding="ascii").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise CorruptTrace(f"{path}: {exc}") from None
    if not lines or lines[0] != "t":
        raise CorruptTrace(f"{path}: missing header")
    return tuple(_finite(x, path, n) for n, x in enumerate(lines[1:], start=2))


def read_trace_csv(path: str | Path, triggers: Sequence[float], sample_rate: float,
                   supply_voltage: float) -> EnergyTrace:
    path = Path(path)
    cols: Mapping[Channel, tuple[list, list, list]] = {c: ([], [], []) for c in CHANNEL_ORDER}
    try:
        with open(path, newline="", encoding="ascii") as fh:
            text = fh.read()
    except (OSError, UnicodeDecodeError) as exc:
        raise CorruptTrace(f"{path}: {exc}") from None
    if not text.endswith("\n"):
        raise CorruptTrace(f"{path}: truncated final row")
    rows = csv.reader(text.splitlines())
    if next(rows, None) != TRACE_HEADER:
        raise CorruptTrace(f"{path}: missing or wrong header")
    for lineno, row in enumerate(rows, start=2):
        if len(row) != 4:
            raise CorruptTrace(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
        try:
            ch = Channel(row[1])
        except ValueError:
            raise CorruptTrace(f"{path}:{lineno}: unknown channel {row[1]!r}") from None
        t, v, i = cols[ch]
        t.append(_finite(row[0], path, lineno))
        v.append(_finite(row[2], path, lineno))
        i.append(_finite(row[3], path, lineno))
    channels = {
        ch: ChannelSamples(np.array(t, dtype=float), np.array(v, dtype=float), np.array(i, dtype=float))
        for ch, (t, v, i) in cols.items() if t
    }
    try:
        return EnergyTrace(channels, tuple(triggers), sample_rate, supply_voltage)
    except ValueError as exc:
        raise CorruptTrace(f"{path}: {exc}") from None
