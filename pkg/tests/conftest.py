import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from priorguide.dataset import NoiseSpec, inject_noise, split, synth_blobs  # noqa: E402


@pytest.fixture
def tiny_blobs():
    return synth_blobs(2, 40, 2, 6.0, seed=3)


@pytest.fixture(scope="session")
def noisy_blobs():
    """Small 3-class noisy set, shared by the slower pipeline tests."""
    full = synth_blobs(3, 120, 4, 4.0, seed=11)
    train, test = split(full, (0.75, 0.25), seed=11)
    noisy, flips = inject_noise(train, NoiseSpec("symmetric", 0.4), seed=11)
    return noisy, test, flips


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
