from __future__ import annotations

from pathlib import Path

import pytest

from tinyharness.dut_sim import DutConfig, SimDut
from tinyharness.emon import EmonConfig
from tinyharness.fixtures import generate_dataset
from tinyharness.runner import InProcessLink, SessionConfig, run_session


@pytest.fixture(scope="session")
def ic_stimuli(tmp_path_factory) -> Path:
    d = tmp_path_factory.mktemp("ic_stimuli")
    generate_dataset(d, "ic", 5, accuracy=1.0, seed=1)
    return d


@pytest.fixture(scope="session")
def ic_dataset_173(tmp_path_factory) -> Path:
    d = tmp_path_factory.mktemp("ic_200")
    generate_dataset(d, "ic", 200, accuracy=173 / 200, seed=7)
    return d


@pytest.fixture(scope="session")
def ad_dataset(tmp_path_factory) -> Path:
    d = tmp_path_factory.mktemp("ad")
    generate_dataset(d, "ad", 12, accuracy=1.0, seed=3, ad_windows=10, ad_window_len=16)
    return d


@pytest.fixture
def run_inproc():
    """Run a full in-process session; returns (report, raw, link)."""

    def _run(stimuli, *, benchmark="ic", mode="performance", dataset=None, accuracy=True,
             emon=None, meta=None, **dut_kwargs):
        dut = SimDut(DutConfig(**dut_kwargs))
        link = InProcessLink(dut)
        config = SessionConfig(mode=mode, stimuli_dir=stimuli, benchmark=benchmark,
                               emon_config=emon or (EmonConfig() if mode == "energy" else None))
        report, raw = run_session(link, config, dataset, meta, accuracy=accuracy)
        return report, raw, link

    return _run


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def acceptance_log(request):
    """Record one verdict line per acceptance criterion for the terminal summary."""

    def _log(line: str) -> None:
        print(line)
        request.config.stash[_ACCEPTANCE].append(line)

    return _log


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
