import numpy as np
import pytest

from vigal.dataio import make_blobs


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def blobs2():
    """Two well separated 2-d blobs, 20 points each."""
    return make_blobs(2, 20, 2, 5.0, 0.5, seed=0)


def random_sample_set(rng, S, M, C, concentration=1.0):
    return rng.dirichlet(np.full(C, concentration), size=(S, M))


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion and assert it."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(number, title, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'} [{number:>2}] {title}" + (f": {detail}" if detail else "")
        lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("[")[1].split("]")[0])):
            terminalreporter.write_line(line)
