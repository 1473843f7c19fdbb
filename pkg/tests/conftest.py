import numpy as np
import pytest

from fewshot_haad.motion import default_synthetic_spec, generate_synthetic_corpus, write_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_corpus(per_category=6, joints=4, frames=12, categories=3, seed=0):
    spec = default_synthetic_spec(categories, per_category, joints, frames, seed=seed)
    return generate_synthetic_corpus(spec, seed)


@pytest.fixture
def tiny_manifest(tmp_path):
    """3 categories x 6 samples, J=4, H=12; the last category is unseen."""
    corpus = small_corpus()
    return write_dataset(corpus, tmp_path / "data", unseen=["action2"], seed=0)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
