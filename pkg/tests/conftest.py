import numpy as np
import pytest
from hypothesis import settings

from ceo.graphs import MANIPULATIVE, NON_MANIPULATIVE, TARGET, Dag, InterventionSet

settings.register_profile("ceo", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("ceo")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def chain():
    return Dag.from_roles({"X": MANIPULATIVE, "Z": MANIPULATIVE, "Y": TARGET}, [("X", "Z"), ("Z", "Y")])


def health_dag() -> Dag:
    roles = {
        "Age": NON_MANIPULATIVE,
        "BMI": NON_MANIPULATIVE,
        "Aspirin": MANIPULATIVE,
        "Statin": MANIPULATIVE,
        "Cancer": NON_MANIPULATIVE,
        "PSA": TARGET,
    }
    edges = [
        ("Age", "BMI"), ("Age", "Aspirin"), ("Age", "Statin"), ("Age", "Cancer"), ("Age", "PSA"),
        ("BMI", "Aspirin"), ("BMI", "Statin"), ("BMI", "Cancer"), ("BMI", "PSA"),
        ("Aspirin", "Cancer"), ("Statin", "Cancer"), ("Aspirin", "PSA"), ("Statin", "PSA"), ("Cancer", "PSA"),
    ]
    return Dag.from_roles(roles, edges)


def iset(*targets, domain=(-5.0, 5.0)):
    return InterventionSet(tuple(targets), tuple(domain for _ in targets))


# Linear-Gaussian chain X -> Z -> Y with closed-form moments:
# X ~ N(0, 1), Z = 1 + 2X + N(0, 0.5^2), Y = -2 + 3Z + N(0, 0.5^2),
# so E[Y] = 1 and E[Y | do(Z=z)] = 3z - 2.
LINEAR_A, LINEAR_B = 3.0, -2.0


def linear_chain_scm(noise=0.5):
    from ceo.graphs import chain_graph
    from ceo.scm import ClosedForm, NormalRoot, Scm

    return Scm(
        chain_graph(),
        {
            "Z": ClosedForm(("X",), "linear", {"intercept": 1.0, "weights": {"X": 2.0}}, noise),
            "Y": ClosedForm(("Z",), "linear", {"intercept": LINEAR_B, "weights": {"Z": LINEAR_A}}, noise),
        },
        {"X": NormalRoot(0.0, 1.0)},
    )


def pytest_collection_modifyitems(config, items):
    # every hypothesis test belongs to the property battery
    for item in items:
        if getattr(getattr(item, "obj", None), "is_hypothesis_test", False):
            item.add_marker(pytest.mark.property)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
