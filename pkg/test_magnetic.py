import math

import numpy as np
import pytest
from scipy.linalg import eigvalsh

from errors import ConfigError
from lattices import honeycomb
from magnetic import HamiltonianBuilder, SparseHermitian, assemble, peierls_phase
from plaquette import H_OVER_E, flake_faces, loop_phase, period_of_area
from structure import Flake, assign_hoppings, build_flake


def test_phase_vanishes_along_y_and_at_zero_field():
    assert peierls_phase((0.3, 1.0), (0.3, 5.0), 1e4) == 0.0
    assert peierls_phase((0.0, 2.0), (1.0, 2.0), 0.0) == 0.0


def test_unit_square_loop_carries_one_flux_quantum():
    B = H_OVER_E * 1e20
    clockwise = [(0, 0), (0, 1), (1, 1), (1, 0)]
    assert loop_phase(clockwise, B) == pytest.approx(2 * math.pi, rel=1e-12)
    assert loop_phase(clockwise[::-1], B) == pytest.approx(-2 * math.pi, rel=1e-12)


def test_loop_flux_identity_on_square_flake(square_lattice):
    flake = build_flake(square_lattice, 20, 20)
    faces = flake_faces(flake)
    rng = np.random.default_rng(7)
    picked = rng.choice(len(faces), size=100, replace=False)
    b_p = period_of_area(1.0)
    for B in rng.uniform(0.1, 2.0, size=10) * b_p * rng.choice([-1, 1], size=10):
        for k in picked:
            face = faces[k]
            # faces are counter-clockwise
            expected = -2 * math.pi * B * face.area * 1e-20 / H_OVER_E
            assert loop_phase(face.polygon, B) == pytest.approx(expected, rel=1e-12)


def test_zero_field_hamiltonian_is_real_symmetric(square_flake):
    H = assemble(square_flake, B=0.0)
    dense = H.toarray()
    assert np.all(dense.imag == 0.0)
    np.testing.assert_array_equal(dense, dense.T)
    assert H.dim == square_flake.num_sites


def test_hamiltonian_is_hermitian_with_sorted_rows(square_flake):
    builder = HamiltonianBuilder(square_flake)
    for B in (0.0, 1234.5, -9.9e4):
        H = builder.assemble(B)
        assert H.is_hermitian()
        for row in range(H.dim):
            cols = H.col_indices[H.row_offsets[row]:H.row_offsets[row + 1]]
            assert np.all(np.diff(cols) > 0)
        assert np.all(H.toarray().diagonal().imag == 0.0)


def test_pattern_is_shared_between_fields(square_flake):
    builder = HamiltonianBuilder(square_flake)
    a, b = builder.assemble(10.0), builder.assemble(2e5)
    assert a.row_offsets is b.row_offsets
    assert a.col_indices is b.col_indices
    assert not np.array_equal(a.values, b.values)


def test_dimer_spectrum_is_field_independent(dimer):
    for B in (0.0, 3e4, -7e5):
        np.testing.assert_allclose(eigvalsh(assemble(dimer, B=B).toarray()), [-2.7, 2.7], atol=1e-12)


def test_half_flux_square_equals_one_flipped_bond():
    positions = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    edges = [(0, 1, -1.0), (1, 2, -1.0), (2, 3, -1.0), (0, 3, -1.0)]
    flake = Flake.from_edges(positions, ["C"] * 4, edges)
    with_field = eigvalsh(assemble(flake, B=0.5 * period_of_area(1.0)).toarray())
    flipped = Flake.from_edges(positions, ["C"] * 4, edges[:3] + [(0, 3, 1.0)])
    np.testing.assert_allclose(with_field, eigvalsh(assemble(flipped).toarray()), atol=1e-12)
    np.testing.assert_allclose(with_field, [-math.sqrt(2), -math.sqrt(2), math.sqrt(2), math.sqrt(2)],
                               atol=1e-12)


def test_spectrum_is_gauge_invariant_under_translation():
    base = assign_hoppings(honeycomb())
    moved = assign_hoppings(honeycomb().translated((13.1, -4.7)))
    B = 0.13 * period_of_area(3 * math.sqrt(3) / 2 * 1.42 ** 2)
    a = eigvalsh(assemble(build_flake(base, 5, 5), B=B).toarray())
    b = eigvalsh(assemble(build_flake(moved, 5, 5), B=B).toarray())
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_spectrum_is_even_in_field(graphene):
    flake = build_flake(graphene, 10, 10)
    builder = HamiltonianBuilder(flake)
    rng = np.random.default_rng(3)
    for B in rng.uniform(1e3, 8e4, size=10):
        plus = eigvalsh(builder.assemble(B).toarray())
        minus = eigvalsh(builder.assemble(-B).toarray())
        np.testing.assert_allclose(plus, minus, atol=1e-10)


def test_onsite_energies(dimer):
    H = assemble(dimer, {"C": 1.0}, B=0.0)
    np.testing.assert_allclose(eigvalsh(H.toarray()), [1.0 - 2.7, 1.0 + 2.7], atol=1e-12)
    with pytest.raises(ConfigError):
        assemble(dimer, {"N": 0.0})


def test_from_matrix_round_trip():
    dense = np.array([[1.0, 2j], [-2j, 0.5]])
    H = SparseHermitian.from_matrix(dense)
    assert H.dim == 2
    np.testing.assert_array_equal(H.toarray(), dense)
    assert H.is_hermitian()
