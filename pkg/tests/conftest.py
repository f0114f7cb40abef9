import random

import pytest

from darlab.network import ModelParams, NetworkState
from darlab.routing import PolicyKind
from darlab.simulation import Simulator

ACCEPTANCE_LINES = []


def reachable_state(seed, n=4, C=2, d=1, lam=1.0, events=30, policy=PolicyKind.BDAR):
    """State after ``events`` CTMC events from the empty network."""
    sim = Simulator(NetworkState(ModelParams(n, C, d, lam)), policy, random.Random(seed))
    for _ in range(events):
        sim.step_ctmc()
    return sim.state


@pytest.fixture
def make_state():
    return reachable_state


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
