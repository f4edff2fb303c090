import os

import numpy as np
import pytest

from lattices import honeycomb, kagome, square
from structure import Flake, assign_hoppings, build_flake


def pytest_collection_modifyitems(config, items):
    if os.getenv("HB_ACCEPTANCE") == "1":
        return
    skip = pytest.mark.skip(reason="set HB_ACCEPTANCE=1 to run acceptance-scale tests")
    for item in items:
        if "acceptance" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def square_lattice():
    return assign_hoppings(square())


@pytest.fixture
def graphene():
    return assign_hoppings(honeycomb())


@pytest.fixture
def kagome_lattice():
    return assign_hoppings(kagome())


@pytest.fixture
def dimer():
    """Two carbon sites 1.42 A apart with t = -2.7 eV."""
    return Flake.from_edges(np.array([[0.0, 0.0], [1.42, 0.3]]), ["C", "C"], [(0, 1, -2.7)])


@pytest.fixture
def square_flake(square_lattice):
    return build_flake(square_lattice, 10, 10)
