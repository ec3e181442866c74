"""Score computation: throughput, accuracy metrics, energy per inference."""

from __future__ import annotations

import enum
import math
import statistics
from dataclasses import dataclass
from typing import Sequence

from .errors import (
    EmptyOutput,
    EmptyRange,
    LengthMismatch,
    MetricMismatch,
    SingleClass,
    WrongArity,
    ZeroInferences,
)


class MetricKind(str, enum.Enum):
    TOP1 = "top1"
    AUC = "auc"


class Quality(str, enum.Enum):
    PASS = "pass"
    FAIL = "fail"


@dataclass(frozen=True)
class BenchmarkProfile:
    use_case: str
    input_shape: tuple[int, ...]
    metric_kind: MetricKind
    quality_threshold: float
    n_classes: int = 0  # classifiers only
    title: str = ""

    @property
    def input_size(self) -> int:
        return math.prod(self.input_shape)


PROFILES: dict[str, BenchmarkProfile] = {
    "kws": BenchmarkProfile("kws", (49, 10), MetricKind.TOP1, 0.90, 12, "Keyword Spotting"),
    "vww": BenchmarkProfile("vww", (96, 96, 3), MetricKind.TOP1, 0.80, 2, "Visual Wake Words"),
    "ic": BenchmarkProfile("ic", (32, 32, 3), MetricKind.TOP1, 0.85, 10, "Image Classification"),
    # One autoencoder window: five spectrogram frames of 128 mel bands.
    "ad": BenchmarkProfile("ad", (5, 128), MetricKind.AUC, 0.85, 0, "Anomaly Detection"),
}

BENCHMARK_IDS = tuple(PROFILES)


def get_profile(use_case: str) -> BenchmarkProfile:
    try:
        return PROFILES[use_case]
    except KeyError:
        raise ValueError(
            f"unknown benchmark {use_case!r}; expected one of {', '.join(PROFILES)}"
        ) from None


@dataclass(frozen=True)
class LatencyScore:
    per_run_ips: tuple[float, ...]
    median_ips: float


@dataclass(frozen=True)
class AccuracyScore:
    metric_kind: MetricKind
    value: float
    n_inputs: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"accuracy value {self.value} outside [0, 1]")


@dataclass(frozen=True)
class EnergyRun:
    window_joules: float
    inferences_in_window: int
    uj_per_inference: float


@dataclass(frozen=True)
class EnergyScore:
    runs: tuple[EnergyRun, ...]
    median_uj_per_inference: float


def median_of_five(values: Sequence[float]) -> float:
    """Return the third order statistic of exactly five finite values."""
    if len(values) != 5:
        raise WrongArity(f"median_of_five needs exactly 5 values, got {len(values)}")
    if not all(math.isfinite(v) for v in values):
        raise ValueError("median_of_five needs finite values")
    return sorted(values)[2]


def run_median(values: Sequence[float]) -> float:
    """Median of the executed runs: the official rule for five, plain median otherwise."""
    if len(values) == 5:
        return median_of_five(values)
    if not values:
        raise WrongArity("no runs to take a median of")
    return statistics.median(values)


def argmax(values: Sequence[float]) -> int:
    # max() keeps the first maximal element, so ties go to the lowest index.
    return max(range(len(values)), key=values.__getitem__)


def top1(outputs: Sequence[Sequence[float]], labels: Sequence[int]) -> float:
    """Fraction of inputs whose highest-probability class equals the label."""
    if len(outputs) != len(labels):
        raise LengthMismatch(f"{len(outputs)} outputs vs {len(labels)} labels")
    if not outputs:
        raise EmptyOutput("no outputs to score")
    correct = 0
    for output, label in zip(outputs, labels):
        if len(output) == 0:
            raise EmptyOutput("empty output vector")
        if argmax(output) == label:
            correct += 1
    return correct / len(outputs)


def auc_roc(scores: Sequence[float], labels: Sequence[bool | int]) -> float:
    """Area under the ROC curve as the Mann-Whitney U statistic.

    ``labels`` are truthy for anomalous (positive) inputs.  Equal scores count
    as half a win, computed through mid-ranks in O(n log n).
    """
    if len(scores) != len(labels):
        raise LengthMismatch(f"{len(scores)} scores vs {len(labels)} labels")
    n_pos = sum(1 for y in labels if y)
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs at least one normal and one anomalous input")

    order = sorted(range(len(scores)), key=scores.__getitem__)
    pos_rank_sum = 0.0
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        mid_rank = (i + j) / 2 + 1  # 1-based rank shared by the tie group
        pos_rank_sum += mid_rank * sum(1 for k in order[i:j + 1] if labels[k])
        i = j + 1
    u = pos_rank_sum - n_pos * (n_pos + 1) / 2
    return u / (n_pos * n_neg)


def energy_per_inference(joules: float, n: int) -> float:
    """Micro-joules per inference for a window holding ``n`` inferences."""
    if n < 1:
        raise ZeroInferences("energy per inference needs at least one inference")
    if joules < 0:
        raise ValueError("window energy cannot be negative")
    return joules * 1e6 / n


def anomaly_file_score(window_mses: Sequence[float], central_range: range | tuple[int, int]) -> float:
    """Mean reconstruction MSE over the central windows of one clip."""
    if isinstance(central_range, tuple):
        central_range = range(*central_range)
    if central_range.step != 1:
        raise ValueError("central range must be contiguous")
    start, stop = central_range.start, central_range.stop
    if stop <= start:
        raise EmptyRange(f"central range [{start}, {stop}) is empty")
    if start < 0 or stop > len(window_mses):
        raise EmptyRange(f"central range [{start}, {stop}) outside {len(window_mses)} windows")
    return statistics.fmean(window_mses[start:stop])


def check_quality(profile: BenchmarkProfile, score: AccuracyScore) -> Quality:
    """Inclusive threshold test of an accuracy score against its benchmark target."""
    if MetricKind(score.metric_kind) is not profile.metric_kind:
        raise MetricMismatch(
            f"{profile.use_case} is scored by {profile.metric_kind.value}, got {score.metric_kind}"
        )
    return Quality.PASS if score.value >= profile.quality_threshold else Quality.FAIL
