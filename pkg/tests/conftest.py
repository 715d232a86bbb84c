import numpy as np
import pytest

from cdg import data


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def idx_dir(tmp_path):
    """Small MNIST-shaped IDX pair for both partitions (random pixels, balanced labels)."""
    r = np.random.default_rng(7)
    for part, n in (("t10k", 60), ("train", 50)):
        img, lab = data.dataset_paths(str(tmp_path), "mnist", part)
        data.write_idx(img, lab, r.integers(0, 256, (n, 28, 28)), np.arange(n) % 10)
    return str(tmp_path)


@pytest.fixture(scope="session")
def acceptance_log(pytestconfig):
    """Collects one line per acceptance criterion for the terminal summary."""
    lines = getattr(pytestconfig, "_acceptance_lines", None)
    if lines is None:
        lines = pytestconfig._acceptance_lines = []
    return lines


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "_acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
