"""Host runner, simulated device under test and scoring for tiny-ML inference benchmarks."""

__version__ = "0.1.0"
