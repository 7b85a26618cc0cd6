import logging
import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from heartsae.data import encode, preprocess  # noqa: E402
from heartsae.synthetic import make_synthetic_dataset  # noqa: E402

logging.getLogger("heartsae.data").setLevel(logging.ERROR)


@pytest.fixture(scope="session")
def synthetic_raw():
    return make_synthetic_dataset(seed=0)


@pytest.fixture(scope="session")
def synthetic_matrix(synthetic_raw):
    return preprocess(synthetic_raw)


@pytest.fixture(scope="session")
def synthetic_encoded(synthetic_raw):
    return encode(synthetic_raw)


def canonical_path():
    env = os.environ.get("HEARTSAE_DATA")
    candidates = [Path(env)] if env else []
    candidates.append(Path(__file__).resolve().parents[1] / "data" / "heart.csv")
    for path in candidates:
        if path.is_file():
            return path
    return None


def pytest_terminal_summary(terminalreporter):
    import verdicts

    if verdicts.LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(verdicts.LINES):
            terminalreporter.write_line(line)
