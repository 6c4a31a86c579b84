import math

import numpy as np
import pytest

from bjlab.domain import RadiusProfile

ACCEPTANCE_LINES = []


def record_acceptance(n: int, ok: bool, detail: str):
    line = f"CRITERION {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def circle():
    return RadiusProfile.circle()


@pytest.fixture(scope="session")
def oval():
    # rho = (1 + 0.3 cos 2 theta) / (2 pi)
    return RadiusProfile.from_harmonics([(2, 0.3, 0.0)])


@pytest.fixture(scope="session")
def oval3():
    return RadiusProfile.from_harmonics([(2, 0.3, 0.0), (3, 0.05, 0.02)])


@pytest.fixture(scope="session")
def skew():
    return RadiusProfile.from_harmonics([(2, 0.2, 0.05), (3, 0.05, 0.02)])


@pytest.fixture(scope="session")
def ellipse08():
    return RadiusProfile.ellipse(0.8)


@pytest.fixture(scope="session")
def perturbed_ellipse(ellipse08):
    r0 = ellipse08.mean_radius
    return RadiusProfile(r0, ellipse08.harmonics + ((3, 1e-4 * r0, 3e-5 * r0),))


def five_domains():
    return [
        RadiusProfile.circle(),
        RadiusProfile.from_harmonics([(2, 0.3, 0.0)]),
        RadiusProfile.from_harmonics([(2, 0.2, 0.05), (3, 0.05, 0.02)]),
        RadiusProfile.from_harmonics([(3, 0.1, 0.0), (5, 0.01, 0.01)]),
        RadiusProfile.ellipse(0.7),
    ]


def rel(a, b, floor=1e-300):
    return abs(a - b) / max(abs(b), floor)


TWO_PI = 2 * math.pi
