import numpy as np
import pytest

from draction.synthetic import write_samples


@pytest.fixture(scope="session")
def samples(tmp_path_factory):
    return write_samples(tmp_path_factory.mktemp("samples"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_rotations(rng, n):
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    from draction.kinematics import quat_to_mat

    return quat_to_mat(q)


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance verdicts at the end of the run, one line per criterion."""
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "VERDICTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(lines):
        terminalreporter.write_line(lines[n])
