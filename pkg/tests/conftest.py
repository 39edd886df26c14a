import numpy as np
import pytest

from knf.cnoidal import build_cnoidal
from knf.fourier_core import FourierField


def random_field(N: int, rng: np.random.Generator, mean_zero: bool = True) -> FourierField:
    pos = rng.standard_normal(N + 1) + 1j * rng.standard_normal(N + 1)
    pos[0] = 0 if mean_zero else pos[0].real
    return FourierField.from_positive(pos, mean_zero)


def band_field(N: int, lo: int, hi: int, rng: np.random.Generator) -> FourierField:
    """Unit-l2 field with random phases on lo <= |k| <= hi."""
    pos = np.zeros(N + 1, dtype=complex)
    pos[lo:hi + 1] = np.exp(2j * np.pi * rng.random(hi - lo + 1))
    pos /= np.sqrt(2 * np.sum(np.abs(pos) ** 2))
    return FourierField.from_positive(pos, True)


@pytest.fixture(scope="session")
def wave():
    return build_cnoidal(8.0, 0.0, 1e-12)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: dict = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
