import math

import pytest

from becbench.physics import CloudState, TrapGeometry


@pytest.fixture(scope="session")
def benchmark_trap():
    # calibrated so the nominal benchmark cloud sits at peak PSD 0.25
    return TrapGeometry.from_frequencies_hz(85.0, 85.0, 98.42228)


@pytest.fixture(scope="session")
def trap_750(benchmark_trap):
    return benchmark_trap.scaled(math.sqrt(750.0 / 1100.0))


@pytest.fixture(scope="session")
def round_trap():
    return TrapGeometry.from_frequencies_hz(100.0, 100.0, 100.0)


@pytest.fixture(scope="session")
def benchmark_cloud(benchmark_trap):
    return CloudState(3e6, 1e-6, benchmark_trap)
