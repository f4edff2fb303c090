import math

import numpy as np
import pytest

from errors import ConfigError, DomainError, EmbeddingError, PreconditionError
from lattices import honeycomb, kagome, porous_honeycomb, square
from plaquette import (FLUX_QUANTA, H_OVER_E, FluxQuantum, beat_periods, enumerate_faces,
                       face_walks, flake_faces, flux_quantum, period_of_area, plaquette_classes)
from structure import HoppingRule, assign_hoppings, build_flake

HEXAGON = 3 * math.sqrt(3) / 2 * 1.42 ** 2


def test_flux_quanta():
    assert H_OVER_E == pytest.approx(4.135667696e-15)
    assert flux_quantum("h_over_2e") == pytest.approx(H_OVER_E / 2)
    assert FluxQuantum.from_name("H_over_E").value == FLUX_QUANTA["h_over_e"]
    with pytest.raises(ConfigError):
        flux_quantum("h_over_3e")


def test_square_has_one_unit_face(square_lattice):
    faces = enumerate_faces(square_lattice)
    assert len(faces) == 1
    assert faces[0].area == pytest.approx(1.0)
    assert faces[0].size == 4
    assert faces[0].period == pytest.approx(H_OVER_E * 1e20)


def test_graphene_hexagon(graphene):
    faces = enumerate_faces(graphene)
    assert len(faces) == 1
    assert faces[0].size == 6
    assert faces[0].area == pytest.approx(HEXAGON, rel=1e-9)
    assert 77.5e3 <= faces[0].period <= 80.5e3


def test_kagome_has_triangles_and_a_hexagon(kagome_lattice):
    faces = enumerate_faces(kagome_lattice)
    assert sorted(f.size for f in faces) == [3, 3, 6]
    classes = plaquette_classes(faces)
    assert [(c.representative.size, c.multiplicity) for c in classes] == [(6, 1), (3, 2)]
    assert classes[0].area / classes[1].area == pytest.approx(6.0)


@pytest.mark.parametrize("make", [square, honeycomb, kagome])
def test_faces_tile_the_cell(make):
    lattice = assign_hoppings(make())
    faces = enumerate_faces(lattice)
    assert sum(f.area for f in faces) == pytest.approx(lattice.cell_area, rel=1e-9)


def test_porous_honeycomb_period_hierarchy():
    lattice = assign_hoppings(porous_honeycomb())
    classes = plaquette_classes(enumerate_faces(lattice))
    assert [c.multiplicity for c in classes] == [1, 1]
    pore, ring = classes
    # the framework pore alone tiles the cell; the guest ring sits inside it
    assert pore.area == pytest.approx(lattice.cell_area, rel=1e-9)
    assert ring.area == pytest.approx(HEXAGON, rel=1e-9)
    assert ring.period / pore.period == pytest.approx(1.5)
    beats = beat_periods([pore.period, ring.period], 0.02)
    assert len(beats) == 1
    assert beats[0].multiplicities == (3, 2)
    assert beats[0].period == pytest.approx(2 * ring.period)


def test_periods_survive_rotation(graphene):
    turned = assign_hoppings(honeycomb().rotated(0.731))
    a = [f.period for f in enumerate_faces(graphene)]
    b = [f.period for f in enumerate_faces(turned)]
    np.testing.assert_allclose(a, b, rtol=1e-9)


def test_crossing_bonds_are_rejected():
    crossed = assign_hoppings(square(), [HoppingRule("C", "C", 0.9, 1.5, -1.0)])
    with pytest.raises(EmbeddingError):
        enumerate_faces(crossed)


def test_period_of_area():
    assert period_of_area(5.238) == pytest.approx(7.90e4, rel=2e-3)
    assert period_of_area(3091.0) == pytest.approx(133.8, abs=0.05)
    assert period_of_area(2.0) == pytest.approx(period_of_area(1.0) / 2)
    assert period_of_area(1.0, flux_quantum("h_over_2e")) == pytest.approx(period_of_area(1.0) / 2)
    for bad in (0.0, -1.0, float("nan")):
        with pytest.raises(DomainError):
            period_of_area(bad)


def test_beat_periods():
    (beat,) = beat_periods([121.9e3, 81.06e3], 0.02)
    assert 243e3 <= beat.period <= 244e3
    assert beat.multiplicities == (2, 3)

    (same,) = beat_periods([50.0, 50.0], 0.02)
    assert same.period == pytest.approx(50.0)
    assert same.multiplicities == (1, 1)

    (exact,) = beat_periods([100.0, 50.0], 0.0)
    assert exact.period == pytest.approx(100.0)
    assert exact.multiplicities == (1, 2)


def test_beat_periods_without_common_multiple():
    assert beat_periods([1.0, math.pi * 1000], 0.0, max_order=10) == []
    assert beat_periods([7.0], 0.02) == []


def test_beat_periods_covers_subsets():
    beats = beat_periods([60.0, 40.0, 30.0], 0.01)
    by_members = {b.members: b for b in beats}
    assert by_members[(0, 1)].period == pytest.approx(120.0)
    assert by_members[(0, 2)].period == pytest.approx(60.0)
    assert by_members[(0, 1, 2)].multiplicities == (2, 3, 4)


@pytest.mark.parametrize("args", [([], 0.02), ([1.0, -2.0], 0.02), ([1.0, 2.0], 0.2), ([1.0], -0.1)])
def test_beat_periods_preconditions(args):
    with pytest.raises(PreconditionError):
        beat_periods(*args)


@pytest.mark.parametrize("n", range(2, 11))
def test_euler_characteristic_of_flakes(square_lattice, graphene, n):
    for lattice in (square_lattice, graphene):
        flake = build_flake(lattice, n, n)
        faces = flake_faces(flake)
        assert flake.num_sites - flake.num_edges + len(faces) == 1


def test_face_walks_use_each_half_edge_once(graphene):
    walks = face_walks(build_flake(graphene, 5, 4))
    n_half = 2 * build_flake(graphene, 5, 4).num_edges
    np.testing.assert_array_equal(np.sort(walks.next), np.arange(n_half))
    # one outer walk, the rest bounded
    assert np.sum(walks.areas < 0) == 1


def test_flake_faces_of_square_flake(square_lattice):
    faces = flake_faces(build_flake(square_lattice, 20, 20))
    assert len(faces) == 19 * 19
    assert all(f.area == pytest.approx(1.0) for f in faces)
    assert all(f.size == 4 for f in faces)
