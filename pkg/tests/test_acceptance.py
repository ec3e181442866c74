"""Acceptance suite: one test per criterion, each printing a PASS/FAIL verdict.

Run with ``pytest tests/test_acceptance.py -s`` to see the verdicts inline;
they are also repeated in the terminal summary.
"""

from __future__ import annotations

import json
import math
import random
import time
from contextlib import contextmanager

from tinyharness import protocol as p
from tinyharness.cli import main as cli_main
from tinyharness.dut_sim import DutConfig, SimDut
from tinyharness.emon import EmonConfig, PowerProfile, find_window, integrate, simulate_trace
from tinyharness.errors import MalformedLine
from tinyharness.fixtures import generate_dataset
from tinyharness.results_store import load, rescore
from tinyharness.rules import Division, SubmissionMeta, classify_division, is_valid, validate_submission
from tinyharness.runner import InProcessLink, RunReport, RunSummary, SessionConfig, run_session
from tinyharness.scoring import (
    AccuracyScore, LatencyScore, anomaly_file_score, auc_roc, get_profile,
)


class Verdict:
    def __init__(self) -> None:
        self.failures: list[str] = []
        self.notes: list[str] = []

    def check(self, ok: bool, what: str) -> None:
        if not ok:
            self.failures.append(what)

    def note(self, text: str) -> None:
        self.notes.append(text)


@contextmanager
def criterion(log, number: int, title: str, budget_s: float):
    v = Verdict()
    start = time.perf_counter()
    error: BaseException | None = None
    try:
        yield v
    except Exception as exc:  # report, then re-raise below
        error = exc
        v.failures.append(f"raised {type(exc).__name__}: {exc}")
    elapsed = time.perf_counter() - start
    v.check(elapsed < budget_s, f"runtime {elapsed:.2f}s exceeds {budget_s}s")
    status = "PASS" if not v.failures else "FAIL"
    detail = "; ".join(v.failures or v.notes)
    log(f"{status} criterion {number} ({title}) in {elapsed:.2f}s: {detail}")
    if error is not None:
        raise error
    assert not v.failures, detail


def closed_report(bench: str, value: float) -> RunReport:
    return RunReport(
        benchmark=bench, mode="performance", dut_name="sim",
        latency=LatencyScore((10.0,) * 5, 10.0),
        accuracy=AccuracyScore(get_profile(bench).metric_kind, value, 1000),
        runs=tuple(RunSummary("s", 100, 10.0) for _ in range(5)),
    )


def brute_force_auc(scores, labels) -> float:
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in pos for b in neg)
    return wins / (len(pos) * len(neg))


# -- 1 ---------------------------------------------------------------------------


def test_quality_gate_fidelity(acceptance_log):
    with criterion(acceptance_log, 1, "quality gate fidelity", 1.0) as v:
        expected = {"kws": 0.90, "vww": 0.80, "ic": 0.85, "ad": 0.85}
        cases = 0
        for bench, threshold in expected.items():
            v.check(get_profile(bench).quality_threshold == threshold, f"{bench} threshold")
            for value, ok in [(threshold, True), (threshold + 1e-6, True), (threshold - 1e-6, False)]:
                findings = validate_submission(closed_report(bench, value), SubmissionMeta(), get_profile(bench))
                v.check(is_valid(findings) is ok, f"{bench} at {value!r} -> {is_valid(findings)}")
                cases += 1
        v.note(f"{cases} boundary cases across 4 benchmarks")


# -- 2 ---------------------------------------------------------------------------


def test_run_rule_fidelity(acceptance_log, tmp_path):
    generate_dataset(tmp_path, "ic", 5, seed=0)
    with criterion(acceptance_log, 2, "run-rule fidelity", 5.0) as v:
        expected = {1_000: 10_000, 100_000: 100, 999_000: 11, 2_000_000: 10}
        got = {}
        for latency_us, want in expected.items():
            link = InProcessLink(SimDut(DutConfig(latency_us=latency_us)))
            report, raw = run_session(link, SessionConfig("performance", tmp_path, "ic"), accuracy=False)
            iters = {r.iterations for r in raw.latency_runs}
            got[latency_us] = sorted(iters)
            v.check(len(raw.latency_runs) == 5, f"{latency_us} us: {len(raw.latency_runs)} runs")
            v.check(iters == {want}, f"{latency_us} us: iterations {sorted(iters)} != {want}")
            rel = abs(report.latency.median_ips * latency_us / 1e6 - 1)
            v.check(rel <= 1e-9, f"{latency_us} us: median IPS off by {rel:.3g}")
        v.note(f"iterations {got}, 5 runs each, IPS = 1/latency")


# -- 3 ---------------------------------------------------------------------------


def test_energy_scoring(acceptance_log, tmp_path):
    generate_dataset(tmp_path, "ic", 5, seed=0)
    with criterion(acceptance_log, 3, "energy scoring", 5.0) as v:
        # 30 mW at 3.0 V over a 10 s window of 200 inferences.
        scores = {}
        for idle in (30.0, 3.0):
            link = InProcessLink(SimDut(DutConfig(latency_us=50_000, active_mw=30.0, idle_mw=idle)))
            report, raw = run_session(link, SessionConfig("energy", tmp_path, "ic", EmonConfig(1000.0, 3.0)),
                                      accuracy=False)
            window = find_window(raw.traces[0])
            v.check(raw.latency_runs[0].iterations == 200, "200 inferences")
            v.check(abs(window[1] - window[0] - 10.0) < 1e-9, f"window {window}")
            uj = report.energy.median_uj_per_inference
            scores[idle] = uj
            v.check(abs(uj / 1500.0 - 1) <= 5e-3, f"idle {idle} mW: {uj!r} uJ/inf")

        # Random idle/active step profiles against their closed-form integrals.
        rng = random.Random(3)
        worst = 0.0
        for _ in range(50):
            idle, active = rng.uniform(0.5, 10), rng.uniform(10, 100)
            n = rng.randint(1, 6)
            breaks = sorted(rng.uniform(0.05, 1.95) for _ in range(2 * n))
            levels = [idle if k % 2 == 0 else active for k in range(len(breaks) + 1)]
            # Off-grid window ends, so steps and endpoints both cost accuracy.
            a, b = rng.uniform(0.0, 0.5), rng.uniform(1.5, 2.0)
            edges = [-math.inf] + breaks + [math.inf]
            exact = sum(
                lvl * max(0.0, min(hi, b) - max(lo, a))
                for lo, hi, lvl in zip(edges, edges[1:], levels)
            ) / 1e3
            trace = simulate_trace(PowerProfile.steps(breaks, levels), [a, b], 1000.0, 3.0)
            worst = max(worst, abs(integrate(trace, find_window(trace)) / exact - 1))
        v.check(worst <= 5e-3, f"piecewise worst relative error {worst:.3g}")

        base = None
        for ls in (0.0, 5.0, 123.0, 5000.0):
            link = InProcessLink(SimDut(DutConfig(latency_us=50_000)))
            report, _ = run_session(link, SessionConfig("energy", tmp_path, "ic", EmonConfig(1000.0, 3.0, ls)),
                                    accuracy=False)
            uj = report.energy.median_uj_per_inference
            base = uj if base is None else base
            v.check(uj - base == 0, f"level shifter {ls} mW moved score by {uj - base!r}")
        v.note(f"constant {scores[30.0]!r} uJ, idle/active {scores[3.0]!r} uJ, "
               f"piecewise worst {worst:.2g}, level-shifter delta 0")


# -- 4 ---------------------------------------------------------------------------


def test_auc_oracle_equivalence(acceptance_log):
    with criterion(acceptance_log, 4, "AUC oracle equivalence", 5.0) as v:
        rng = random.Random(2021)
        worst = 0.0
        tied = 0
        for _ in range(200):
            n = rng.randint(2, 64)
            pool = rng.choice([2, 5, 16, 10_000])
            scores = [rng.randrange(pool) / 3.0 for _ in range(n)]
            labels = [True, False] + [rng.random() < 0.5 for _ in range(n - 2)]
            rng.shuffle(labels)
            tied += len(set(scores)) < n
            auc = auc_roc(scores, labels)
            worst = max(worst, abs(auc - brute_force_auc(scores, labels)))
            transformed = [math.atan(s) * 7 - 1 for s in scores]
            v.check(abs(auc_roc(transformed, labels) - auc) <= 1e-12, "monotone transform changed AUC")
            flipped = auc_roc(scores, [not y for y in labels])
            v.check(abs(auc + flipped - 1) <= 1e-12, "label flip complement")
        v.check(worst <= 1e-9, f"max oracle deviation {worst:.3g}")
        v.check(tied > 50, f"only {tied} instances had ties")
        v.note(f"200 instances ({tied} with ties), max deviation {worst:.2g}")


# -- 5 ---------------------------------------------------------------------------


def test_anomaly_validator_consistency(acceptance_log):
    with criterion(acceptance_log, 5, "AD validator consistency", 1.0) as v:
        ad = get_profile("ad")
        for value, ok in [(0.88, True), (0.86, True), (0.84, False)]:
            findings = validate_submission(closed_report("ad", value), SubmissionMeta(), ad)
            v.check(is_valid(findings) is ok, f"AUC {value} -> valid={is_valid(findings)}")
        rng = random.Random(44)
        worst = 0.0
        for _ in range(1000):
            n = rng.randint(1, 40)
            mses = [rng.expovariate(1.0) for _ in range(n)]
            lo = rng.randrange(n)
            hi = rng.randint(lo + 1, n)
            acc = 0.0
            for i in range(lo, hi):
                acc += mses[i]
            oracle = acc / (hi - lo)
            worst = max(worst, abs(anomaly_file_score(mses, range(lo, hi)) - oracle) / oracle)
        v.check(worst <= 1e-12, f"file score deviation {worst:.3g}")
        v.note(f"0.88/0.86 pass, 0.84 fails; 1000 file scores within {worst:.2g}")


# -- 6 ---------------------------------------------------------------------------


def random_message(rng: random.Random) -> p.Message:
    choices = [
        lambda: p.Name(), lambda: p.Timestamp(), lambda: p.SetTensor(), lambda: p.GetResults(),
        lambda: p.LoadChunk(rng.randrange(1 << 20), rng.randbytes(rng.randint(1, p.MAX_CHUNK))),
        lambda: p.LoadDone(rng.randrange(1 << 20)),
        lambda: p.Infer(rng.randint(1, 10**6), rng.randrange(10)),
        lambda: p.SetMode(rng.choice(list(p.Mode))),
        lambda: p.Ready(), lambda: p.Ack(),
        lambda: p.NameIs("dut-" + str(rng.randrange(1000))),
        lambda: p.TimestampIs(rng.randrange(1 << 40)),
        lambda: p.ResultTensor(tuple(rng.uniform(-1e3, 1e3) for _ in range(rng.randint(0, 12)))),
        lambda: p.Error(rng.choice(list(p.ErrorCode)), rng.choice(["", "detail text"])),
    ]
    return rng.choice(choices)()


def test_protocol_robustness(acceptance_log):
    with criterion(acceptance_log, 6, "protocol robustness", 10.0) as v:
        rng = random.Random(6)
        bad = sum(p.parse(p.encode(m)) != m for m in (random_message(rng) for _ in range(10_000)))
        v.check(bad == 0, f"{bad} round-trip failures")

        rejected = 0
        for k in range(5000):
            if k % 2:
                line = rng.randbytes(rng.randint(0, 120))
            else:
                # A valid line with one byte overwritten.
                buf = bytearray(p.encode(random_message(rng)))
                buf[rng.randrange(len(buf))] = rng.randrange(256)
                line = bytes(buf)
            try:
                p.parse(line)
            except MalformedLine:
                rejected += 1
            except Exception as exc:
                v.check(False, f"parser crashed on {line!r}: {exc!r}")
                break

        sizes = [1, 2, 511, 512, 513, 4096, 65_535, 65_536]
        for size in sizes:
            data = rng.randbytes(size)
            for chunk in (1, 7, 512):
                if chunk == 1 and size > 20_000:
                    continue  # byte-sized chunks of 64 KiB add time, not coverage
                cmds = p.chunk_input(data, chunk)
                ok = b"".join(c.payload for c in cmds[:-1]) == data and cmds[-1] == p.LoadDone(size)
                v.check(ok, f"reassembly size {size} chunk {chunk}")
        v.note(f"10000 round trips, 5000 noise lines without a crash ({rejected} rejected), "
               f"reassembly exact up to 64 KiB")


# -- 7 ---------------------------------------------------------------------------


def test_end_to_end_determinism(acceptance_log, tmp_path):
    with criterion(acceptance_log, 7, "end-to-end determinism", 10.0) as v:
        common = ["run", "--benchmark", "ic", "--mode", "energy", "--n-inputs", "20",
                  "--latency-us", "50000"]
        rc_a = cli_main(common + ["--out", str(tmp_path / "inproc")])
        rc_b = cli_main(common + ["--out", str(tmp_path / "pipe"), "--transport", "subprocess"])
        v.check(rc_a == rc_b == 0, f"exit codes {rc_a}, {rc_b}")
        ma = json.loads((tmp_path / "inproc" / "manifest.json").read_text())
        mb = json.loads((tmp_path / "pipe" / "manifest.json").read_text())
        v.check(ma["scores"] == mb["scores"], "subprocess scores differ from in-process")
        same_files = all(
            f.read_bytes() == (tmp_path / "pipe" / f.name).read_bytes()
            for f in (tmp_path / "inproc").glob("*.*")
        )
        v.check(same_files, "results folders differ")
        for name in ("inproc", "pipe"):
            stored, _ = load(tmp_path / name)
            v.check(rescore(tmp_path / name) == stored, f"{name}: rescore differs from manifest")
        v.note(f"median {ma['scores']['energy']['median_uj_per_inference']!r} uJ/inf and "
               f"{ma['scores']['latency']['median_ips']!r} IPS identical; rescore exact")


# -- 8 ---------------------------------------------------------------------------


def test_division_classification(acceptance_log):
    with criterion(acceptance_log, 8, "division classification", 1.0) as v:
        shapes = [
            ({"quantization_ptq"}, "ptq", Division.CLOSED),
            ({"hardware", "quantization_ptq"}, "ptq", Division.CLOSED),
            ({"hardware", "inference_framework", "optimizer", "quantization_ptq"}, "ptq", Division.CLOSED),
            ({"hardware", "inference_framework", "quantization_ptq"}, "ptq", Division.CLOSED),
            ({"model_architecture", "weights_or_training", "inference_framework", "hardware"}, "qat",
             Division.OPEN),
        ]
        for components, quant, division in shapes:
            got = classify_division(components, quant)
            v.check(got is division, f"{sorted(components)}/{quant} -> {got.value}")
            meta = SubmissionMeta(division, components, quant, "documented" if division is Division.OPEN else "")
            v.check(is_valid(validate_submission(closed_report("ic", 0.9), meta, get_profile("ic"))), "validator disagrees")
        v.note("4 closed (stack swaps, INT-8 PTQ), 1 open (new model, QAT, HLS flow)")
