import numpy as np
import pytest

from semmix.types import Frame, LabelSet, PointCloud, make_rng


def random_frame(rng, n, n_classes=3, with_intensity=True, ignore_frac=0.0):
    coords = rng.normal(0, 5, size=(n, 3)).astype(np.float32)
    inten = rng.uniform(0, 1, n).astype(np.float32) if with_intensity else None
    labels = rng.integers(0, n_classes, n)
    if ignore_frac:
        labels[rng.uniform(size=n) < ignore_frac] = -1
    return Frame(PointCloud(coords, inten), LabelSet(labels))


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture
def frame_factory():
    return random_frame


# acceptance outcomes, printed in the terminal summary
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
