"""Results folders: persist a session, reload it, and re-derive its scores.

Layout (names are fixed)::

    manifest.json             report, scores, submission metadata, file index
    latency_run_<k>.csv       raw loop timing of run k
    trace_run_<k>.csv         energy mode: EMON samples of run k
    triggers_run_<k>.csv      energy mode: trigger edges of run k
    accuracy_outputs.csv      per-input output tensors of the accuracy pass

A trace and its trigger file hold one run because consecutive runs can sit
closer together in virtual time than one sample period.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, replace
from pathlib import Path

from . import protocol as p
from .emon import EmonConfig, read_trace_csv, read_triggers_csv, write_trace_csv, write_triggers_csv
from .errors import CorruptTrace, MissingManifest, SchemaMismatch, StoreIOError
from .rules import SubmissionMeta
from .runner import AccuracyOutput, LatencyRun, RawData, RunReport, RunSummary, compute_scores, summarize_runs
from .scoring import AccuracyScore, EnergyRun, EnergyScore, LatencyScore, MetricKind, get_profile

SCHEMA_VERSION = 1
MANIFEST = "manifest.json"
ACCURACY_FILE = "accuracy_outputs.csv"
LATENCY_HEADER = ["stimulus", "iterations", "start", "end", "unit"]
ACCURACY_HEADER = ["input", "label", "central_start", "central_stop", "outputs"]


def latency_file(k: int) -> str:
    return f"latency_run_{k}.csv"


def trace_file(k: int) -> str:
    return f"trace_run_{k}.csv"


def triggers_file(k: int) -> str:
    return f"triggers_run_{k}.csv"


# -- serialization helpers ------------------------------------------------------------


def _scores_to_dict(report: RunReport) -> dict:
    lat, acc, en = report.latency, report.accuracy, report.energy
    return {
        "latency": None if lat is None else {
            "per_run_ips": list(lat.per_run_ips), "median_ips": lat.median_ips,
        },
        "accuracy": None if acc is None else {
            "metric_kind": acc.metric_kind.value, "value": acc.value, "n_inputs": acc.n_inputs,
        },
        "energy": None if en is None else {
            "runs": [asdict(r) for r in en.runs],
            "median_uj_per_inference": en.median_uj_per_inference,
        },
    }


def _scores_from_dict(d: dict) -> tuple:
    lat = acc = en = None
    if d.get("latency"):
        lat = LatencyScore(tuple(d["latency"]["per_run_ips"]), d["latency"]["median_ips"])
    if d.get("accuracy"):
        a = d["accuracy"]
        acc = AccuracyScore(MetricKind(a["metric_kind"]), a["value"], a["n_inputs"])
    if d.get("energy"):
        e = d["energy"]
        en = EnergyScore(tuple(EnergyRun(**r) for r in e["runs"]), e["median_uj_per_inference"])
    return lat, acc, en


def _fmt(x: float | int) -> str:
    return str(x) if isinstance(x, int) else repr(float(x))


def _csv_text(header: list[str], rows: list[list[str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# -- save / load ----------------------------------------------------------------------


def save(report: RunReport, raw: RawData, directory: str | Path) -> None:
    """Write a results folder.  Identical inputs give byte-identical files."""
    directory = Path(directory)
    files: dict = {"latency_runs": [], "traces": [], "accuracy_outputs": None}
    try:
        directory.mkdir(parents=True, exist_ok=True)
        for k, run in enumerate(raw.latency_runs):
            name = latency_file(k)
            row = [run.stimulus, str(run.iterations), _fmt(run.start), _fmt(run.end), run.unit]
            (directory / name).write_text(_csv_text(LATENCY_HEADER, [row]), encoding="ascii")
            files["latency_runs"].append(name)
        for k, trace in enumerate(raw.traces):
            write_trace_csv(trace, directory / trace_file(k))
            write_triggers_csv(trace.triggers, directory / triggers_file(k))
            files["traces"].append({
                "trace": trace_file(k),
                "triggers": triggers_file(k),
                "samples": sum(len(c) for c in trace.channels.values()),
            })
        if raw.accuracy_outputs:
            rows = [
                [o.stimulus, str(o.label), str(o.central_start), str(o.central_stop),
                 " ".join(repr(float(v)) for v in o.outputs)]
                for o in raw.accuracy_outputs
            ]
            (directory / ACCURACY_FILE).write_text(_csv_text(ACCURACY_HEADER, rows), encoding="ascii")
            files["accuracy_outputs"] = ACCURACY_FILE

        manifest = {
            "schema_version": SCHEMA_VERSION,
            "tool": {"name": "tinyharness", "version": report.tool_version},
            "benchmark": report.benchmark,
            "mode": p.Mode.coerce(report.mode).value,
            "dut_name": report.dut_name,
            "meta": report.meta.to_dict(),
            "emon": None if report.emon is None else asdict(report.emon),
            "runs": [asdict(r) for r in report.runs],
            "scores": _scores_to_dict(report),
            "files": files,
        }
        (directory / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                          encoding="ascii")
    except OSError as exc:
        raise StoreIOError(f"cannot write results to {directory}: {exc}") from exc


def _read_manifest(directory: Path) -> dict:
    path = directory / MANIFEST
    if not path.is_file():
        raise MissingManifest(f"{path} not found")
    try:
        manifest = json.loads(path.read_text(encoding="ascii"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise SchemaMismatch(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(manifest, dict) or manifest.get("schema_version") != SCHEMA_VERSION:
        found = manifest.get("schema_version") if isinstance(manifest, dict) else None
        raise SchemaMismatch(f"{path}: schema version {found!r}, expected {SCHEMA_VERSION}")
    return manifest


def _read_latency_run(path: Path) -> LatencyRun:
    try:
        rows = list(csv.reader(path.read_text(encoding="ascii").splitlines()))
    except (OSError, UnicodeDecodeError) as exc:
        raise CorruptTrace(f"{path}: {exc}") from None
    if len(rows) != 2 or rows[0] != LATENCY_HEADER or len(rows[1]) != 5:
        raise CorruptTrace(f"{path}: malformed latency record")
    stimulus, iterations, start, end, unit = rows[1]
    try:
        conv = int if unit == "us" else float
        return LatencyRun(stimulus, int(iterations), conv(start), conv(end), unit)
    except ValueError:
        raise CorruptTrace(f"{path}: malformed latency values") from None


def _read_accuracy(path: Path) -> list[AccuracyOutput]:
    try:
        rows = list(csv.reader(path.read_text(encoding="ascii").splitlines()))
    except (OSError, UnicodeDecodeError) as exc:
        raise CorruptTrace(f"{path}: {exc}") from None
    if not rows or rows[0] != ACCURACY_HEADER:
        raise CorruptTrace(f"{path}: missing header")
    outputs = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 5:
            raise CorruptTrace(f"{path}:{lineno}: expected 5 fields")
        try:
            values = tuple(float(v) for v in row[4].split()) if row[4] else ()
            outputs.append(AccuracyOutput(row[0], int(row[1]), values, int(row[2]), int(row[3])))
        except ValueError:
            raise CorruptTrace(f"{path}:{lineno}: malformed values") from None
    return outputs


def load(directory: str | Path) -> tuple[RunReport, RawData]:
    """Reconstruct the report (scores as stored) and the raw data of a folder."""
    directory = Path(directory)
    m = _read_manifest(directory)
    try:
        latency, accuracy, energy = _scores_from_dict(m["scores"])
        emon = EmonConfig(**m["emon"]) if m["emon"] else None
        report = RunReport(
            benchmark=m["benchmark"],
            mode=p.Mode(m["mode"]),
            dut_name=m["dut_name"],
            latency=latency,
            accuracy=accuracy,
            energy=energy,
            runs=tuple(RunSummary(**r) for r in m["runs"]),
            meta=SubmissionMeta.from_dict(m["meta"]),
            emon=emon,
            tool_version=m["tool"]["version"],
        )
        files = m["files"]
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaMismatch(f"{directory / MANIFEST}: bad field ({exc})") from None

    raw = RawData()
    for name in files["latency_runs"]:
        raw.latency_runs.append(_read_latency_run(directory / name))
    for entry in files["traces"]:
        if emon is None:
            raise SchemaMismatch("trace files listed without an EMON configuration")
        triggers = read_triggers_csv(directory / entry["triggers"])
        trace = read_trace_csv(directory / entry["trace"], triggers, emon.sample_rate, emon.supply_voltage)
        n = sum(len(c) for c in trace.channels.values())
        if n != entry["samples"]:
            raise CorruptTrace(f"{entry['trace']}: {n} samples, manifest records {entry['samples']}")
        raw.traces.append(trace)
    if files["accuracy_outputs"]:
        raw.accuracy_outputs = _read_accuracy(directory / files["accuracy_outputs"])
    return report, raw


def rescore(directory: str | Path) -> RunReport:
    """The folder's report with every score recomputed from its raw files."""
    report, raw = load(directory)
    latency, accuracy, energy = compute_scores(get_profile(report.benchmark), raw)
    return replace(report, latency=latency, accuracy=accuracy, energy=energy, runs=summarize_runs(raw))


def audit(directory: str | Path) -> list[str]:
    """Differences between stored scores and scores re-derived from raw data."""
    stored, _ = load(directory)
    fresh = rescore(directory)
    mismatches = []
    a, b = _scores_to_dict(stored), _scores_to_dict(fresh)
    a["runs"] = [asdict(r) for r in stored.runs]
    b["runs"] = [asdict(r) for r in fresh.runs]
    for key in ("latency", "accuracy", "energy", "runs"):
        if a[key] != b[key]:
            mismatches.append(f"{key}: manifest {json.dumps(a[key], sort_keys=True)} "
                              f"!= rescored {json.dumps(b[key], sort_keys=True)}")
    return mismatches
