import numpy as np
import pytest
from hypothesis import settings

from ddsim.lattice import LatticeConfig, generate_network

settings.register_profile("ddsim", deadline=None, max_examples=40)
settings.load_profile("ddsim")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def net3():
    return generate_network(LatticeConfig(0.03, seed=7), 3)


@pytest.fixture
def net4():
    return generate_network(LatticeConfig(0.03, seed=11), 4)


# criterion id -> list of (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def record_acceptance(criterion: str, passed: bool, detail: str) -> None:
    ACCEPTANCE.setdefault(criterion, []).append((bool(passed), detail))
    print(f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k)):
        parts = ACCEPTANCE[key]
        ok = all(p for p, _ in parts)
        detail = "; ".join(d for _, d in parts)
        terminalreporter.write_line(f"criterion {key:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
