import numpy as np
import pytest

from lensless.calibration import calibrate
from lensless.optics import desk_config, render_psfs
from lensless.solver import svd


@pytest.fixture(scope="session")
def desk():
    return desk_config()


@pytest.fixture(scope="session")
def desk_psfs(desk):
    return render_psfs(desk)


@pytest.fixture(scope="session")
def desk_ideal(desk, desk_psfs):
    A = calibrate(desk, ideal=True, psfs=desk_psfs)
    return A, svd(A)


@pytest.fixture(scope="session")
def desk_noisy(desk, desk_psfs):
    A = calibrate(desk, n_avg=100, rng_seed=0, psfs=desk_psfs)
    return A, svd(A)


@pytest.fixture
def rng():
    return np.random.default_rng(20170101)


ACCEPTANCE: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def verdict():
    """Record one pass/fail line for an acceptance criterion."""

    def record(criterion: str, ok: bool, detail: str) -> bool:
        ACCEPTANCE[criterion] = (bool(ok), detail)
        print(f"{criterion}: {'PASS' if ok else 'FAIL'}  {detail}")
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split()[0][1:])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key}  {detail}")
