from __future__ import annotations

import itertools

import pytest

from textmarl.backend import make_backend
from textmarl.scripted import KITCHEN_SUITE, PISTON_SUITE
from textmarl.types import BackendDescriptor


@pytest.fixture
def counter_clock():
    """Deterministic epoch-ms clock for byte-stable policy histories."""
    counter = itertools.count(1_700_000_000_000)
    return lambda: next(counter)


@pytest.fixture
def piston_backend():
    return make_backend(BackendDescriptor(kind="scripted",
                                          script_name=PISTON_SUITE))


@pytest.fixture
def kitchen_backend():
    return make_backend(BackendDescriptor(kind="scripted",
                                          script_name=KITCHEN_SUITE))
