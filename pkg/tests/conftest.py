import numpy as np
import pytest

from proxybridge.dataset import Dataset
from proxybridge.kernel import kernel_config_from

# filled by test_acceptance; echoed once at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def random_dataset(rng, n, d_a=1, d_z=2, d_w=2):
    u = rng.normal(size=(n, 1))
    a = u + 0.5 * rng.normal(size=(n, d_a))
    z = u + rng.normal(size=(n, d_z))
    w = u + rng.normal(size=(n, d_w))
    y = np.cos(a[:, :1]) + u + 0.1 * rng.normal(size=(n, 1))
    return Dataset(a, y, z, w)


def kcfg_for(*parts):
    a = np.vstack([p.a for p in parts])
    w = np.vstack([p.w for p in parts])
    z = np.vstack([p.z for p in parts])
    return kernel_config_from(a, w, z)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
