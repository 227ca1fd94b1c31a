import numpy as np
import pytest
from hypothesis import settings

from rwrc.env import ConductanceField, ConductanceLaw

# compiled kernels make the first example slow
settings.register_profile("rwrc", deadline=None)
settings.load_profile("rwrc")

UNIT_LAW = ConductanceLaw(slowly_varying="bounded", lo=1.0, hi=1.0)


def unit_field(K=2.0, bias_lambda=1.0, dimension=2, direction=None, overrides=None, seed=0):
    """Every conductance equal to one."""
    return ConductanceField(UNIT_LAW, seed=seed, dimension=dimension, K=K, bias_lambda=bias_lambda,
                            bias_direction=direction, overrides=overrides)


@pytest.fixture
def pareto_field():
    return ConductanceField(ConductanceLaw(0.5), seed=12345, K=20.0, bias_lambda=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# -- acceptance summary ----------------------------------------------------------------------

ACCEPTANCE_LINES = {}


@pytest.fixture
def criterion():
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
