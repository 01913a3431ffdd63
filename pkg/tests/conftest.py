import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from ctfbounds.graph import make_diagram  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running statistical checks")


@pytest.fixture(scope="session")
def iv():
    """Z -> X -> Y, U1 -> Z, U2 -> {X, Y}."""
    return make_diagram([("Z", "X"), ("X", "Y")], {"U1": ["Z"], "U2": ["X", "Y"]})


@pytest.fixture(scope="session")
def see_do_binary():
    """Z -> X -> Y, U1 -> {Z, Y}, U2 -> {X, Y}: one c-component."""
    return make_diagram([("Z", "X"), ("X", "Y")], {"U1": ["Z", "Y"], "U2": ["X", "Y"]})


@pytest.fixture(scope="session")
def frontdoor():
    return make_diagram([("X", "W"), ("W", "Y")], {"U1": ["X", "Y"], "U2": ["W"]})


@pytest.fixture(scope="session")
def bow():
    return make_diagram([("X", "Y")], {"U": ["X", "Y"]})
