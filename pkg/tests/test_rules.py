from __future__ import annotations

from dataclasses import replace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from tinyharness.errors import UnknownComponent
from tinyharness.rules import (
    COMPONENTS, Division, Quantization, Severity, SubmissionMeta, classify_division, is_valid,
    validate_submission,
)
from tinyharness.runner import RunReport, RunSummary
from tinyharness.scoring import AccuracyScore, EnergyRun, EnergyScore, LatencyScore, MetricKind, get_profile

# Submission patterns of the first public round: four stack swaps with
# post-training INT-8, one co-designed model with quantization-aware training.
ROUND_ONE = [
    ("reference MCU, TFLite Micro", {"quantization_ptq"}, "ptq", Division.CLOSED),
    ("RISC-V MCU, TFLite Micro", {"hardware", "quantization_ptq"}, "ptq", Division.CLOSED),
    ("software toolchain on a single-board computer",
     {"hardware", "inference_framework", "optimizer", "quantization_ptq"}, "ptq", Division.CLOSED),
    ("neural accelerator, vendor stack", {"hardware", "inference_framework", "quantization_ptq"}, "ptq",
     Division.CLOSED),
    ("FPGA high-level synthesis flow",
     {"model_architecture", "weights_or_training", "inference_framework", "hardware"}, "qat", Division.OPEN),
]


@pytest.mark.parametrize("desc,components,quant,division", ROUND_ONE, ids=[r[0] for r in ROUND_ONE])
def test_round_one_submissions(desc, components, quant, division):
    assert classify_division(components, quant) is division


def test_unmodified_reference_is_closed():
    assert classify_division(set(), "none") is Division.CLOSED


@pytest.mark.parametrize("component", ["model_architecture", "weights_or_training", "dataset"])
def test_model_side_changes_force_open(component):
    assert classify_division({component}, "none") is Division.OPEN


def test_qat_forces_open():
    assert classify_division({"quantization_ptq"}, Quantization.QAT) is Division.OPEN


def test_unknown_component():
    with pytest.raises(UnknownComponent):
        classify_division({"firmware"}, "none")
    with pytest.raises(UnknownComponent):
        SubmissionMeta(modified_components={"firmware"})


@given(st.sets(st.sampled_from(sorted(COMPONENTS))), st.sets(st.sampled_from(sorted(COMPONENTS))),
       st.sampled_from(list(Quantization)))
def test_more_modification_never_returns_to_closed(base, extra, quant):
    if classify_division(base, quant) is Division.OPEN:
        assert classify_division(base | extra, quant) is Division.OPEN


def test_ptq_alone_is_closed():
    assert classify_division(set(), "ptq") is Division.CLOSED
    assert classify_division({"inference_framework", "hardware"}, "none") is Division.CLOSED


def test_meta_dict_round_trip():
    meta = SubmissionMeta("open", {"dataset", "hardware"}, "qat", "doc.md", "calib-v1")
    assert SubmissionMeta.from_dict(meta.to_dict()) == meta


# -- validator ------------------------------------------------------------------


def good_report(bench: str = "ic", value: float = 0.9, energy: bool = False) -> RunReport:
    ips = (10.0, 10.0, 10.0, 10.0, 10.0)
    en = None
    if energy:
        runs = tuple(EnergyRun(0.3, 200, 0.3 * 1e6 / 200) for _ in range(5))
        en = EnergyScore(runs, 1500.0)
    return RunReport(
        benchmark=bench, mode="performance", dut_name="d",
        latency=LatencyScore(ips, 10.0),
        accuracy=AccuracyScore(get_profile(bench).metric_kind, value, 100),
        energy=en,
        runs=tuple(RunSummary("s", 100, 10.0) for _ in range(5)),
    )


def ids(findings):
    return [(f.rule_id, f.severity) for f in findings]


def test_clean_closed_submission():
    findings = validate_submission(good_report(energy=True), SubmissionMeta(), get_profile("ic"))
    assert findings == []
    assert is_valid(findings)


@pytest.mark.parametrize("bench", ["kws", "vww", "ic", "ad"])
def test_quality_gate_boundaries(bench):
    profile = get_profile(bench)
    t = profile.quality_threshold
    for value, ok in [(t, True), (t + 1e-6, True), (t - 1e-6, False)]:
        findings = validate_submission(good_report(bench, value), SubmissionMeta(), profile)
        assert is_valid(findings) is ok
        if not ok:
            assert ids(findings) == [("ACC-1", Severity.ERROR)]


def test_open_quality_miss_is_advisory():
    meta = SubmissionMeta("open", {"model_architecture"}, "qat", "deviations.md")
    findings = validate_submission(good_report(value=0.5), meta, get_profile("ic"))
    assert ids(findings) == [("ACC-2", Severity.WARNING)]
    assert is_valid(findings)


def test_open_needs_deviation_doc():
    meta = SubmissionMeta("open", {"model_architecture"}, "qat", " ")
    assert ids(validate_submission(good_report(), meta, get_profile("ic"))) == [("DIV-2", Severity.ERROR)]


def test_closed_with_model_change_rejected():
    meta = SubmissionMeta("closed", {"model_architecture"}, "none")
    findings = validate_submission(good_report(), meta, get_profile("ic"))
    assert ids(findings) == [("DIV-1", Severity.ERROR)]
    assert "model_architecture" in str(findings[0])


def test_closed_with_qat_rejected():
    meta = SubmissionMeta("closed", set(), "qat")
    assert ids(validate_submission(good_report(), meta, get_profile("ic"))) == [("DIV-1", Severity.ERROR)]


def test_closed_without_accuracy():
    report = replace(good_report(), accuracy=None)
    assert ids(validate_submission(report, SubmissionMeta(), get_profile("ic"))) == [("ACC-1", Severity.ERROR)]


def test_wrong_benchmark_profile():
    findings = validate_submission(good_report("ic"), SubmissionMeta(), get_profile("kws"))
    assert ("BENCH-1", Severity.ERROR) in ids(findings)


def test_run_count():
    report = replace(good_report(), latency=LatencyScore((10.0,) * 4, 10.0), runs=good_report().runs[:4])
    assert ids(validate_submission(report, SubmissionMeta(), get_profile("ic"))) == [("RUN-1", Severity.ERROR)]


def test_short_run_and_few_iterations():
    runs = good_report().runs[:4] + (RunSummary("s", 9, 9.5),)
    report = replace(good_report(), runs=runs)
    assert ids(validate_submission(report, SubmissionMeta(), get_profile("ic"))) == [
        ("RUN-2", Severity.ERROR), ("RUN-2", Severity.ERROR),
    ]


def test_run_length_compared_at_microseconds():
    runs = good_report().runs[:4] + (RunSummary("s", 100, 9.999999999999998),)
    assert validate_submission(replace(good_report(), runs=runs), SubmissionMeta(), get_profile("ic")) == []


def test_run_rules_apply_to_open():
    meta = SubmissionMeta("open", {"dataset"}, "none", "doc")
    runs = good_report().runs[:4] + (RunSummary("s", 100, 1.0),)
    findings = validate_submission(replace(good_report(), runs=runs), meta, get_profile("ic"))
    assert ids(findings) == [("RUN-2", Severity.ERROR)]


def test_median_is_checked():
    report = replace(good_report(), latency=LatencyScore((1.0, 2.0, 3.0, 4.0, 5.0), 4.0))
    assert ids(validate_submission(report, SubmissionMeta(), get_profile("ic"))) == [("RUN-3", Severity.ERROR)]


def test_inconsistent_energy_run():
    report = good_report(energy=True)
    runs = report.energy.runs[:4] + (EnergyRun(0.3, 200, 1000.0),)
    report = replace(report, energy=EnergyScore(runs, 1500.0))
    assert ids(validate_submission(report, SubmissionMeta(), get_profile("ic"))) == [("EN-1", Severity.ERROR)]


def test_metric_kind_mismatch_reported():
    report = replace(good_report("ad"), accuracy=AccuracyScore(MetricKind.TOP1, 0.9, 10))
    findings = validate_submission(report, SubmissionMeta(), get_profile("ad"))
    assert ids(findings) == [("ACC-1", Severity.ERROR)]


def test_finding_text_names_rule():
    meta = SubmissionMeta("closed", {"dataset"}, "none")
    text = str(validate_submission(good_report(), meta, get_profile("ic"))[0])
    assert text.startswith("ERROR [DIV-1]")
