"""Command-line entry point.

Exit status: 0 success, 1 runtime failure or invalid submission, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import tempfile
from dataclasses import asdict
from pathlib import Path

from . import __version__
from . import protocol as p
from .dut_sim import DutConfig, SimDut, run_as_subprocess, serve_socket
from .emon import Channel, EmonConfig
from .errors import HarnessError
from .fixtures import generate_dataset
from .results_store import audit, load, rescore, save
from .rules import COMPONENTS, Finding, Severity, SubmissionMeta, classify_division, is_valid, validate_submission
from .runner import InProcessLink, SessionConfig, SocketLink, SubprocessLink, run_session, sim_dut_argv
from .scoring import PROFILES, get_profile

STIMULI_ENV = "TINYHARNESS_STIMULI_ROOT"
DEFAULT_INPUTS = {"kws": 100, "vww": 20, "ic": 200, "ad": 40}

log = logging.getLogger("tinyharness")


def _host_port(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}")
    return host or "127.0.0.1", int(port)


def _components(text: str) -> frozenset[str]:
    items = frozenset(x.strip() for x in text.split(",") if x.strip())
    unknown = items - COMPONENTS
    if unknown:
        raise argparse.ArgumentTypeError(
            f"unknown component(s) {', '.join(sorted(unknown))}; choose from {', '.join(sorted(COMPONENTS))}"
        )
    return items


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tinyharness", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a benchmark session and write a results folder")
    run.add_argument("--benchmark", required=True, choices=sorted(PROFILES))
    run.add_argument("--mode", default="performance", choices=["performance", "perf", "energy"])
    run.add_argument("--out", required=True, type=Path, help="results folder")
    run.add_argument("--stimuli", type=Path,
                     help=f"latency stimuli directory (default: ${STIMULI_ENV}/<benchmark>, "
                          "else synthetic fixtures under <out>/stimuli)")
    run.add_argument("--dataset", type=Path, help="accuracy dataset directory (default: the stimuli)")
    run.add_argument("--skip-accuracy", action="store_true")
    run.add_argument("--transport", default="inproc", choices=["inproc", "subprocess", "tcp"])
    run.add_argument("--connect", type=_host_port, help="HOST:PORT of a listening DUT (tcp transport)")
    run.add_argument("--probe", type=Path, help="probe file written by a remote sim DUT (tcp + energy)")
    run.add_argument("--timeout", type=float, default=5.0, help="seconds to wait for each live response")

    dut = run.add_argument_group("simulated DUT")
    d = DutConfig()
    dut.add_argument("--dut-name", default=d.name)
    dut.add_argument("--latency-us", type=int, default=d.latency_us)
    dut.add_argument("--active-mw", type=float, default=d.active_mw)
    dut.add_argument("--idle-mw", type=float, default=d.idle_mw)
    dut.add_argument("--timer-resolution-us", type=int, default=d.timer_resolution_us)

    em = run.add_argument_group("energy monitor")
    e = EmonConfig()
    em.add_argument("--sample-rate", type=float, default=e.sample_rate, help="Hz")
    em.add_argument("--voltage", type=float, default=e.supply_voltage, help="DUT supply voltage")
    em.add_argument("--level-shifter-mw", type=float, default=e.level_shifter_mw)

    rr = run.add_argument_group("run rules")
    rr.add_argument("--min-run-seconds", type=float, default=10.0)
    rr.add_argument("--min-iterations", type=int, default=10)
    rr.add_argument("--runs", type=int, default=5)
    rr.add_argument("--max-chunk", type=int, default=p.MAX_CHUNK)

    sm = run.add_argument_group("submission")
    sm.add_argument("--division", choices=["closed", "open"], default="closed")
    sm.add_argument("--modified", type=_components, default=frozenset(),
                    help="comma-separated modified components")
    sm.add_argument("--quantization", choices=["none", "ptq", "qat"], default="none")
    sm.add_argument("--deviations-doc", default="")
    sm.add_argument("--calibration-dataset", default="", help="declared PTQ calibration set")

    fx = run.add_argument_group("synthetic fixtures")
    fx.add_argument("--seed", type=int, default=0)
    fx.add_argument("--n-inputs", type=int)
    fx.add_argument("--accuracy", type=float, default=0.9,
                    help="share of fixtures the stub kernel gets right")

    score = sub.add_parser("score", help="re-derive scores from a results folder")
    score.add_argument("folder", type=Path)

    val = sub.add_parser("validate", help="check a results folder against the submission rules")
    val.add_argument("folder", type=Path)

    view = sub.add_parser("view-trace", help="export plot-ready power data of stored energy traces")
    view.add_argument("folder", type=Path)
    view.add_argument("--run", type=int, help="only this run index")
    view.add_argument("--channel", default="dut", choices=[c.value for c in Channel])
    view.add_argument("--triggers", action="store_true", help="emit trigger edges instead of power")
    view.add_argument("--out", type=Path, help="write CSV here instead of stdout")

    sim = sub.add_parser("sim-dut", help="serve the DUT protocol on stdio or a TCP socket")
    DutConfig.add_arguments(sim)
    sim.add_argument("--probe", type=Path, help="write power/GPIO signals here for an energy monitor")
    sim.add_argument("--listen", type=_host_port, help="HOST:PORT to accept one connection on")
    return parser


# -- subcommands ----------------------------------------------------------------------


def _resolve_stimuli(args: argparse.Namespace) -> Path:
    if args.stimuli:
        return args.stimuli
    root = os.environ.get(STIMULI_ENV)
    if root:
        return Path(root) / args.benchmark
    target = args.out / "stimuli"
    n = args.n_inputs or DEFAULT_INPUTS[args.benchmark]
    generate_dataset(target, args.benchmark, n, accuracy=args.accuracy, seed=args.seed)
    log.info("generated %d synthetic %s fixtures in %s", n, args.benchmark, target)
    return target


def cmd_run(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    mode = p.Mode.coerce(args.mode)
    if args.transport == "tcp" and not args.connect:
        parser.error("--transport tcp needs --connect HOST:PORT")
    if args.transport == "tcp" and mode is p.Mode.ENERGY and not args.probe:
        parser.error("energy mode over tcp needs --probe (the DUT's probe file)")
    meta = SubmissionMeta(args.division, args.modified, args.quantization, args.deviations_doc,
                          args.calibration_dataset)

    dut_config = DutConfig(
        name=args.dut_name, latency_us=args.latency_us, active_mw=args.active_mw,
        idle_mw=args.idle_mw, timer_resolution_us=args.timer_resolution_us, max_chunk=args.max_chunk,
    )
    stimuli = _resolve_stimuli(args)
    config = SessionConfig(
        mode=mode,
        stimuli_dir=stimuli,
        benchmark=get_profile(args.benchmark),
        emon_config=EmonConfig(args.sample_rate, args.voltage, args.level_shifter_mw),
        min_run_seconds=args.min_run_seconds,
        min_iterations=args.min_iterations,
        n_runs=args.runs,
        max_chunk=args.max_chunk,
    )

    with tempfile.TemporaryDirectory(prefix="tinyharness-") as tmp:
        if args.transport == "inproc":
            link = InProcessLink(SimDut(dut_config))
        elif args.transport == "subprocess":
            probe = Path(tmp) / "probe.txt" if mode is p.Mode.ENERGY else None
            link = SubprocessLink(sim_dut_argv(dut_config, probe), timeout=args.timeout, probe_path=probe)
        else:
            host, port = args.connect
            link = SocketLink(host, port, timeout=args.timeout, probe_path=args.probe)
        try:
            report, raw = run_session(link, config, args.dataset, meta, accuracy=not args.skip_accuracy)
        finally:
            link.close()
    save(report, raw, args.out)
    _print_report(report)
    return 0


def _print_report(report) -> None:
    print(f"benchmark {report.benchmark}  mode {report.mode.value}  dut {report.dut_name}")
    if report.latency:
        ips = ", ".join(f"{x:.6g}" for x in report.latency.per_run_ips)
        print(f"latency   median {report.latency.median_ips!r} inf/s  (runs: {ips})")
    if report.energy:
        uj = ", ".join(f"{r.uj_per_inference:.6g}" for r in report.energy.runs)
        print(f"energy    median {report.energy.median_uj_per_inference!r} uJ/inf  (runs: {uj})")
    if report.accuracy:
        a = report.accuracy
        print(f"accuracy  {a.metric_kind.value} {a.value!r} over {a.n_inputs} inputs")


def _jsonable(obj):
    if obj is None:
        return None
    d = asdict(obj)
    return json.loads(json.dumps(d, default=str))


def cmd_score(args: argparse.Namespace) -> int:
    fresh = rescore(args.folder)
    out = {"latency": _jsonable(fresh.latency), "accuracy": _jsonable(fresh.accuracy),
           "energy": _jsonable(fresh.energy)}
    print(json.dumps(out, indent=2, sort_keys=True))
    mismatches = audit(args.folder)
    for m in mismatches:
        print(f"MISMATCH {m}", file=sys.stderr)
    return 1 if mismatches else 0


def cmd_validate(args: argparse.Namespace) -> int:
    report, _ = load(args.folder)
    profile = get_profile(report.benchmark)
    findings = validate_submission(report, report.meta, profile)
    findings += [Finding("INT-1", Severity.ERROR, m) for m in audit(args.folder)]
    eligible = classify_division(report.meta.modified_components, report.meta.quantization_kind)
    print(f"declared division {report.meta.division.value}, eligible for {eligible.value}")
    for f in findings:
        print(f)
    valid = is_valid(findings)
    print("VALID" if valid else "INVALID")
    return 0 if valid else 1


def cmd_view_trace(args: argparse.Namespace) -> int:
    _, raw = load(args.folder)
    if not raw.traces:
        raise HarnessError(f"{args.folder} holds no energy traces (not an energy-mode run)")
    runs = range(len(raw.traces)) if args.run is None else [args.run]
    fh = open(args.out, "w", newline="", encoding="ascii") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        if args.triggers:
            w.writerow(["run", "t"])
        else:
            w.writerow(["run", "t", "mw"])
        for k in runs:
            if not 0 <= k < len(raw.traces):
                raise HarnessError(f"run {k} out of range (0..{len(raw.traces) - 1})")
            trace = raw.traces[k]
            if args.triggers:
                w.writerows([k, repr(t)] for t in trace.triggers)
            else:
                t, mw = trace.power_mw(args.channel)
                w.writerows([k, repr(a), repr(b)] for a, b in zip(t.tolist(), mw.tolist()))
    finally:
        if args.out:
            fh.close()
    return 0


def cmd_sim_dut(args: argparse.Namespace) -> int:
    config = DutConfig.from_args(args)
    if args.listen:
        host, port = args.listen

        def announce(h: str, prt: int) -> None:
            print(f"listening on {h}:{prt}", file=sys.stderr, flush=True)

        return serve_socket(config, host, port, args.probe, on_listen=announce)
    return run_as_subprocess(config, probe_path=args.probe)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return cmd_run(args, parser)
        if args.command == "score":
            return cmd_score(args)
        if args.command == "validate":
            return cmd_validate(args)
        if args.command == "view-trace":
            return cmd_view_trace(args)
        return cmd_sim_dut(args)
    except BrokenPipeError:
        # Downstream reader (e.g. `head`) went away; not an error.
        devnull = os.open(os.devnull, os.O_WRONLY)
        os.dup2(devnull, sys.stdout.fileno())
        return 0
    except (HarnessError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
