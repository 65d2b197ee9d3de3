import numpy as np
import pytest

from tfopt.volume import ScalarField


def pytest_runtest_logreport(report):
    # one visible pass/fail line per acceptance criterion; marker-skipped
    # tests only ever report a setup phase
    if "test_acceptance" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.skipped):
        name = report.nodeid.rsplit("::", 1)[-1]
        outcome = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        print(f"\n[ACCEPTANCE] {name}: {outcome}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_field(rng):
    values = rng.uniform(0.0, 1.0, size=(8, 8, 8))
    return ScalarField(values=values, spacing=(1.0, 1.0, 1.0))


@pytest.fixture
def ramp_field():
    # strictly non-constant but structureless; handy when only the TF matters
    n = 8
    values = np.linspace(0.0, 1.0, n ** 3).reshape(n, n, n)
    return ScalarField(values=values, spacing=(1.0, 1.0, 1.0))
