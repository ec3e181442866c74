"""Stimulus fixture files and synthetic datasets.

A fixture is a little-endian binary blob::

    offset  size  field
    0       4     magic b"MLTF"
    4       1     format version (1)
    5       1     benchmark code (0 kws, 1 vww, 2 ic, 3 ad)
    6       2     reserved, zero
    8       4     label (int32): class index, or 1 anomalous / 0 normal for ad
    12      4     tensor length in float32 values (uint32)
    16      4     values per window (uint32, ad only, else 0)
    20      4     central window start (uint32, ad only)
    24      4     central window stop, exclusive (uint32, ad only)
    28      4*n   float32 tensor values

A dataset is a directory of ``*.bin`` fixtures, read in sorted filename order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FixtureError
from .scoring import BENCHMARK_IDS, MetricKind, get_profile

MAGIC = b"MLTF"
VERSION = 1
HEADER = struct.Struct("<4sBBHiIIII")
SUFFIX = ".bin"

# Central share of an anomaly clip the file score averages over (6.4 s of 10 s).
AD_CENTRAL_FRACTION = 0.64
AD_DEFAULT_WINDOWS = 25


@dataclass(frozen=True)
class Stimulus:
    benchmark: str
    label: int
    tensor: tuple[float, ...]
    window_len: int = 0
    central_start: int = 0
    central_stop: int = 0

    @property
    def n_windows(self) -> int:
        return len(self.tensor) // self.window_len if self.window_len else 0

    @property
    def central_range(self) -> range:
        return range(self.central_start, self.central_stop)


def encode_fixture(stim: Stimulus) -> bytes:
    code = BENCHMARK_IDS.index(stim.benchmark)
    values = np.asarray(stim.tensor, dtype="<f4")
    header = HEADER.pack(
        MAGIC, VERSION, code, 0, stim.label, values.size,
        stim.window_len, stim.central_start, stim.central_stop,
    )
    return header + values.tobytes()


def decode_fixture(blob: bytes) -> Stimulus:
    if len(blob) < HEADER.size:
        raise FixtureError(f"fixture shorter than its {HEADER.size}-byte header")
    magic, version, code, _, label, n, window_len, c_start, c_stop = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FixtureError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FixtureError(f"unsupported fixture version {version}")
    if code >= len(BENCHMARK_IDS):
        raise FixtureError(f"unknown benchmark code {code}")
    if len(blob) != HEADER.size + 4 * n:
        raise FixtureError(f"header declares {n} values, payload holds {(len(blob) - HEADER.size) / 4}")
    values = np.frombuffer(blob, dtype="<f4", offset=HEADER.size, count=n)
    if not np.all(np.isfinite(values)):
        raise FixtureError("non-finite tensor value")
    benchmark = BENCHMARK_IDS[code]
    if window_len:
        if n % window_len or not (c_start < c_stop <= n // window_len):
            raise FixtureError("inconsistent window layout")
    return Stimulus(benchmark, label, tuple(values.astype(float).tolist()), window_len, c_start, c_stop)


def read_fixture(path: str | Path) -> Stimulus:
    return decode_fixture(Path(path).read_bytes())


def list_dataset(directory: str | Path) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        return []
    return sorted(p for p in directory.iterdir() if p.suffix == SUFFIX and p.is_file())


def central_window_range(n_windows: int, fraction: float = AD_CENTRAL_FRACTION) -> range:
    count = max(1, round(n_windows * fraction))
    start = (n_windows - count) // 2
    return range(start, start + count)


# -- synthetic generation ----------------------------------------------------


def make_classifier_stimulus(benchmark: str, label: int, predicted: int, rng: np.random.Generator) -> Stimulus:
    """Fixture whose argmax-stub output peaks at ``predicted``."""
    profile = get_profile(benchmark)
    tensor = rng.uniform(0.0, 0.5, size=profile.input_size).astype(np.float32)
    tensor[predicted] = 1.0
    return Stimulus(benchmark, label, tuple(tensor.astype(float).tolist()))


def make_anomaly_stimulus(
    anomalous: bool,
    central_mse: float,
    rng: np.random.Generator,
    n_windows: int = AD_DEFAULT_WINDOWS,
    window_len: int | None = None,
) -> Stimulus:
    """Fixture whose zero-decoder reconstruction MSE is ``central_mse`` in the central windows.

    Edge windows carry large, label-independent errors so that only the
    central aggregation separates classes.
    """
    window_len = window_len or get_profile("ad").input_size
    central = central_window_range(n_windows)
    windows = []
    for w in range(n_windows):
        mse = central_mse if w in central else float(rng.uniform(4.0, 6.0))
        signs = rng.choice(np.array([-1.0, 1.0], dtype=np.float32), size=window_len)
        windows.append(signs * np.float32(np.sqrt(mse)))
    tensor = np.concatenate(windows).astype(np.float32)
    return Stimulus("ad", int(anomalous), tuple(tensor.astype(float).tolist()),
                    window_len, central.start, central.stop)


def generate_dataset(
    directory: str | Path,
    benchmark: str,
    n_inputs: int,
    accuracy: float = 1.0,
    seed: int = 0,
    ad_windows: int = AD_DEFAULT_WINDOWS,
    ad_window_len: int | None = None,
) -> list[Path]:
    """Write ``n_inputs`` synthetic fixtures and return their paths.

    For classifiers exactly ``round(accuracy * n_inputs)`` fixtures make the
    argmax stub answer correctly.  For anomaly detection, inputs alternate
    normal/anomalous and ``accuracy`` is the share of anomalous clips whose
    score sits above every normal clip; the rest score like normal clips.
    """
    if n_inputs < 1:
        raise ValueError("n_inputs must be >= 1")
    if not 0.0 <= accuracy <= 1.0:
        raise ValueError("accuracy must be in [0, 1]")
    profile = get_profile(benchmark)
    rng = np.random.default_rng(seed)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    stimuli = []
    if profile.metric_kind is MetricKind.TOP1:
        n_correct = round(accuracy * n_inputs)
        correct = set(rng.permutation(n_inputs)[:n_correct].tolist())
        for i in range(n_inputs):
            label = i % profile.n_classes
            predicted = label if i in correct else (label + 1) % profile.n_classes
            stimuli.append(make_classifier_stimulus(benchmark, label, predicted, rng))
    else:
        anomalous_idx = [i for i in range(n_inputs) if i % 2 == 1]
        n_separable = round(accuracy * len(anomalous_idx))
        separable = set(rng.permutation(anomalous_idx)[:n_separable].tolist()) if anomalous_idx else set()
        for i in range(n_inputs):
            anomalous = i % 2 == 1
            if anomalous and i in separable:
                mse = float(rng.uniform(1.5, 2.0))
            else:
                mse = float(rng.uniform(0.5, 1.0))
            stimuli.append(make_anomaly_stimulus(anomalous, mse, rng, ad_windows, ad_window_len))

    paths = []
    for i, stim in enumerate(stimuli):
        path = directory / f"{benchmark}_{i:05d}{SUFFIX}"
        path.write_bytes(encode_fixture(stim))
        paths.append(path)
    return paths
