import numpy as np
import pytest
from hypothesis import settings

from vexpand.dynamics import CircleExpand, LinearMap, SkewCosine, SkewGeneral

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def family_maps():
    """One representative per implemented family."""
    return {
        "linear": LinearMap([[2, 1], [1, 3]]),
        "linear_diag": LinearMap([[2, 0], [0, 3]]),
        "doubling": CircleExpand(2, 0.0),
        "perturbed": CircleExpand(2, 0.05),
        "tripling": CircleExpand(3, 0.1),
        "skew": SkewCosine(3, 3),
        "skew8": SkewCosine(8, 8),
        "skew_general": SkewGeneral(CircleExpand(2, 0.05), (0.0, 0.3), (0.2,)),
    }


@pytest.fixture(params=sorted(family_maps()))
def family(request):
    return request.param, family_maps()[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
