import numpy as np
import pytest
from hypothesis import settings

from fracbasis import rational as ra

# max |r(z) - z^-1/2| of the shipped table over 5e6 equispaced z in [1e-6, 1], from a
# standalone float64 evaluation of the JSON document (frozen before the package existed)
E_FIX = 0.00021475699065831577

ACCEPTANCE_LINES = []

settings.register_profile("fracbasis", deadline=None, max_examples=40)
settings.load_profile("fracbasis")


@pytest.fixture(scope="session")
def fixture_approximant():
    return ra.load_fixture()


@pytest.fixture(scope="session")
def small_grid():
    return ra.build_grid(1e-8)


@pytest.fixture(scope="session")
def coarse_dictionary():
    # 1000 shifts on the same squared grid shape; fast enough for unit tests
    return ra.build_dictionary(1e-8, hd=5e-3, t_cap=5.0)


def random_spd(n, rng, cond=100.0):
    """Dense SPD matrix with eigenvalues log-spaced in [1/cond, 1]."""
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = np.logspace(-np.log10(cond), 0, n)
    return (Q * lam) @ Q.T


@pytest.fixture(scope="session")
def acceptance():
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""
    def record(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
