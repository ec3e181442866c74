"""Closed/open division semantics and submission validation."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable

from .errors import MetricMismatch, UnknownComponent
from .scoring import BenchmarkProfile, Quality, check_quality, run_median

if TYPE_CHECKING:
    from .runner import RunReport


class Division(str, enum.Enum):
    CLOSED = "closed"
    OPEN = "open"


class Quantization(str, enum.Enum):
    NONE = "none"
    PTQ = "ptq"
    QAT = "qat"


class Severity(str, enum.Enum):
    ERROR = "error"
    WARNING = "warning"


COMPONENTS = frozenset({
    "hardware",
    "inference_framework",
    "optimizer",
    "quantization_ptq",
    "model_architecture",
    "weights_or_training",
    "dataset",
})

# Deployment-stack components a closed submission may swap out.
CLOSED_MODIFIABLE = frozenset({"hardware", "inference_framework", "optimizer", "quantization_ptq"})
CLOSED_QUANTIZATION = frozenset({Quantization.NONE, Quantization.PTQ})

REQUIRED_RUNS = 5
MIN_RUN_SECONDS = 10.0
MIN_ITERATIONS = 10

RULES = {
    "DIV-1": "closed submissions modify only hardware, framework, optimizer or post-training quantization",
    "DIV-2": "open submissions document how they deviate from the reference",
    "BENCH-1": "a report is validated against the profile of its own benchmark",
    "ACC-1": "closed submissions must meet the benchmark quality target",
    "ACC-2": "open submissions report accuracy on the reference test set",
    "RUN-1": "latency and energy are measured in exactly five runs",
    "RUN-2": "each measured loop lasts at least 10 seconds and 10 iterations",
    "RUN-3": "the reported score is the median of the executed runs",
    "EN-1": "energy per inference equals window energy over window inferences",
    "INT-1": "stored scores are reproducible from the stored raw measurements",
}


@dataclass(frozen=True)
class SubmissionMeta:
    division: Division = Division.CLOSED
    modified_components: frozenset[str] = field(default_factory=frozenset)
    quantization_kind: Quantization = Quantization.NONE
    deviations_doc: str = ""
    # Declared PTQ calibration set; recorded with the submission, not audited.
    calibration_dataset: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "division", Division(self.division))
        object.__setattr__(self, "quantization_kind", Quantization(self.quantization_kind))
        object.__setattr__(self, "modified_components", frozenset(self.modified_components))
        _check_vocabulary(self.modified_components)

    def to_dict(self) -> dict:
        return {
            "division": self.division.value,
            "modified_components": sorted(self.modified_components),
            "quantization_kind": self.quantization_kind.value,
            "deviations_doc": self.deviations_doc,
            "calibration_dataset": self.calibration_dataset,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SubmissionMeta":
        return cls(d["division"], frozenset(d["modified_components"]),
                   d["quantization_kind"], d.get("deviations_doc", ""), d.get("calibration_dataset", ""))


@dataclass(frozen=True)
class Finding:
    rule_id: str
    severity: Severity
    message: str

    def __str__(self) -> str:
        return f"{self.severity.value.upper()} [{self.rule_id}] {self.message} ({RULES[self.rule_id]})"


def _check_vocabulary(components: Iterable[str]) -> None:
    unknown = sorted(set(components) - COMPONENTS)
    if unknown:
        raise UnknownComponent(
            f"unknown component(s) {', '.join(unknown)}; expected a subset of {', '.join(sorted(COMPONENTS))}"
        )


def classify_division(modified_components: Iterable[str], quantization_kind: Quantization | str) -> Division:
    """Division a set of modifications qualifies for."""
    components = set(modified_components)
    _check_vocabulary(components)
    if components <= CLOSED_MODIFIABLE and Quantization(quantization_kind) in CLOSED_QUANTIZATION:
        return Division.CLOSED
    return Division.OPEN


def is_valid(findings: Iterable[Finding]) -> bool:
    return not any(f.severity is Severity.ERROR for f in findings)


def validate_submission(report: "RunReport", meta: SubmissionMeta, profile: BenchmarkProfile) -> list[Finding]:
    """Check a run report against the division rules and run rules.

    Findings come back in a fixed rule order so output is stable.
    """
    findings: list[Finding] = []

    def add(rule: str, severity: Severity, message: str) -> None:
        findings.append(Finding(rule, severity, message))

    closed = meta.division is Division.CLOSED

    if report.benchmark != profile.use_case:
        add("BENCH-1", Severity.ERROR, f"report is for {report.benchmark}, profile is {profile.use_case}")

    if closed:
        eligible = classify_division(meta.modified_components, meta.quantization_kind)
        if eligible is not Division.CLOSED:
            changed = sorted(meta.modified_components - CLOSED_MODIFIABLE)
            detail = ", ".join(changed) if changed else f"{meta.quantization_kind.value} quantization"
            add("DIV-1", Severity.ERROR, f"closed division forbids modifying {detail}")
    elif not meta.deviations_doc.strip():
        add("DIV-2", Severity.ERROR, "open submission lacks a deviations document")

    acc = report.accuracy
    if acc is None:
        if closed:
            add("ACC-1", Severity.ERROR, "no accuracy score to check against the quality target")
        else:
            add("ACC-2", Severity.WARNING, "no accuracy score reported")
    else:
        try:
            quality = check_quality(profile, acc)
        except MetricMismatch as exc:
            add("ACC-1" if closed else "ACC-2", Severity.ERROR, str(exc))
        else:
            if quality is Quality.FAIL:
                msg = (f"{acc.metric_kind.value} {acc.value!r} below quality target "
                       f"{profile.quality_threshold!r}")
                if closed:
                    add("ACC-1", Severity.ERROR, msg)
                else:
                    add("ACC-2", Severity.WARNING, msg + " (advisory in the open division)")

    lat = report.latency
    if lat is None:
        add("RUN-1", Severity.ERROR, "no latency runs reported")
    else:
        n = len(lat.per_run_ips)
        if n != REQUIRED_RUNS or len(report.runs) != REQUIRED_RUNS:
            add("RUN-1", Severity.ERROR, f"{n} latency runs reported, {REQUIRED_RUNS} required")
        for k, run in enumerate(report.runs):
            if run.iterations < MIN_ITERATIONS:
                add("RUN-2", Severity.ERROR, f"run {k}: {run.iterations} iterations < {MIN_ITERATIONS}")
            # Compared at the microsecond resolution of the timing source.
            if round(run.elapsed_s * 1e6) < round(MIN_RUN_SECONDS * 1e6):
                add("RUN-2", Severity.ERROR, f"run {k}: {run.elapsed_s!r} s < {MIN_RUN_SECONDS} s")
        if n and run_median(lat.per_run_ips) != lat.median_ips:
            add("RUN-3", Severity.ERROR, f"median IPS {lat.median_ips!r} is not the median of the runs")

    en = report.energy
    if en is not None:
        if len(en.runs) != REQUIRED_RUNS:
            add("RUN-1", Severity.ERROR, f"{len(en.runs)} energy runs reported, {REQUIRED_RUNS} required")
        for k, run in enumerate(en.runs):
            if run.inferences_in_window < 1 or run.uj_per_inference != run.window_joules * 1e6 / run.inferences_in_window:
                add("EN-1", Severity.ERROR, f"energy run {k}: inconsistent micro-joules per inference")
        per_run = [r.uj_per_inference for r in en.runs]
        if per_run and run_median(per_run) != en.median_uj_per_inference:
            add("RUN-3", Severity.ERROR, "median energy is not the median of the runs")

    return findings
