import numpy as np
import pytest

from biplan.abstraction import ReferenceEncoder
from biplan.dynamics import fit_knn
from biplan.operators import mine, symbolize
from biplan.world import LARGE, SMALL, ContinuousState, PhysicsConfig, collect_dataset

NOISY = PhysicsConfig(noise_sigma=0.01)


def scene(*blocks):
    """Build a state from (x, y, z, type) tuples; z=None puts the block on the table."""
    pos, types = [], []
    for x, y, z, t in blocks:
        half = 0.03 if t == LARGE else 0.015
        pos.append((x, y, half if z is None else z))
        types.append(t)
    return ContinuousState(np.array(pos, dtype=float), np.array(types))


@pytest.fixture(scope="session")
def encoder():
    return ReferenceEncoder()


@pytest.fixture(scope="session")
def noisy_data():
    return collect_dataset(8000, seed=11, physics=NOISY)


@pytest.fixture(scope="session")
def noisy_ops(noisy_data, encoder):
    return mine(symbolize(noisy_data, encoder), encoder)


@pytest.fixture(scope="session")
def knn(noisy_data):
    return fit_knn(noisy_data)


@pytest.fixture
def two_blocks():
    # small block 0 and large block 1, 20 cm apart
    return scene((0.40, 0.50, None, SMALL), (0.60, 0.50, None, LARGE))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        ok, detail = results[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
