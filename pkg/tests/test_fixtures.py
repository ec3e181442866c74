from __future__ import annotations

import numpy as np
import pytest

from tinyharness.errors import FixtureError
from tinyharness.fixtures import (
    Stimulus, central_window_range, decode_fixture, encode_fixture, generate_dataset, list_dataset,
    read_fixture,
)
from tinyharness.dut_sim import stub_output
from tinyharness.scoring import argmax


def test_encode_decode_round_trip():
    stim = Stimulus("kws", 3, tuple(float(x) for x in np.float32(np.linspace(0, 1, 490))))
    assert decode_fixture(encode_fixture(stim)) == stim


def test_window_layout_round_trip():
    stim = Stimulus("ad", 1, tuple([0.5] * 40), window_len=4, central_start=2, central_stop=8)
    back = decode_fixture(encode_fixture(stim))
    assert back == stim
    assert back.n_windows == 10
    assert back.central_range == range(2, 8)


@pytest.mark.parametrize("blob", [
    b"",
    b"XXXX" + bytes(24),
    encode_fixture(Stimulus("ic", 0, (1.0,)))[:-1],
    encode_fixture(Stimulus("ic", 0, (float("nan"),))),
])
def test_decode_rejects(blob):
    with pytest.raises(FixtureError):
        decode_fixture(blob)


def test_central_range_share():
    r = central_window_range(25)
    assert len(r) == 16
    assert r == range(4, 20)


def test_generated_classifier_accuracy(tmp_path):
    paths = generate_dataset(tmp_path, "ic", 50, accuracy=0.8, seed=2)
    assert list_dataset(tmp_path) == paths
    hits = sum(argmax(stub_output(s)) == s.label for s in map(read_fixture, paths))
    assert hits == 40


def test_generation_is_deterministic(tmp_path):
    a = generate_dataset(tmp_path / "a", "kws", 10, accuracy=0.5, seed=9)
    b = generate_dataset(tmp_path / "b", "kws", 10, accuracy=0.5, seed=9)
    assert [p.read_bytes() for p in a] == [p.read_bytes() for p in b]


def test_list_dataset_missing_dir(tmp_path):
    assert list_dataset(tmp_path / "none") == []
