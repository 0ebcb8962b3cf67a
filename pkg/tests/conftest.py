import numpy as np
import pytest

from notchkit import BandOfInterest, generate_loaded_noise, generate_rrc_qpsk

BAUD = 95e9
RBW = 500e6

CRITERIA = []


def record(number, title, ok, detail):
    line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    CRITERIA.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def rrc_small():
    return generate_rrc_qpsk(BAUD, 0.05, 4096, 4, seed=1)


@pytest.fixture(scope="session")
def rrc_full():
    return generate_rrc_qpsk(BAUD, 0.05, 2**15, 4, seed=1)


@pytest.fixture(scope="session")
def flat_small():
    wfm = generate_loaded_noise(4 * BAUD, BAUD * 0.95, 4096 * 4, seed=2)
    return wfm


@pytest.fixture(scope="session")
def boi44():
    return BandOfInterest(-44e9, 44e9)


def db(x):
    with np.errstate(divide="ignore"):
        return 10 * np.log10(x)
