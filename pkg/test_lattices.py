import math

import pytest

from errors import PreconditionError
from lattices import builtin_lattice, kagome, porous_honeycomb
from structure import assign_hoppings


def test_builtin_names_and_arguments():
    assert builtin_lattice("graphene") == builtin_lattice("honeycomb")
    assert builtin_lattice("square(2.0)").a1 == (2.0, 0.0)
    lattice = builtin_lattice("porous-honeycomb(1.42, 1.8)")
    assert len(lattice.sites) == 8
    assert lattice.cell_area == pytest.approx(3 * math.sqrt(3) / 2 * 1.42 ** 2 * 1.8)


@pytest.mark.parametrize("spec", ["hexagonal", "square(a)", "kagome(1, 2, 3)", ""])
def test_bad_builtin_specs(spec):
    with pytest.raises(PreconditionError):
        builtin_lattice(spec)


def test_kagome_coordination():
    lattice = assign_hoppings(kagome())
    assert len(lattice.sites) == 3
    assert len(lattice.bonds) == 6


def test_porous_honeycomb_bonds():
    lattice = assign_hoppings(porous_honeycomb())
    # three framework bonds and the six bonds of the guest ring per cell
    assert len(lattice.bonds) == 9
    species = {(lattice.sites[b.i].species, lattice.sites[b.j].species) for b in lattice.bonds}
    assert species == {("C", "C"), ("N", "N")}
    for bad in (0.3, 1.0, 1.05):
        with pytest.raises(PreconditionError):
            porous_honeycomb(pore_scale=bad)


def test_porous_honeycomb_rejects_touching_guests():
    # at this pore_scale guests in neighbouring pores sit one ring bond apart
    with pytest.raises(PreconditionError, match="bond"):
        porous_honeycomb(1.42, 2.05)
    assert len(assign_hoppings(porous_honeycomb(1.42, 1.8)).bonds) == 9
