import math

import numpy as np
import pytest
from scipy.sparse import identity

from errors import PreconditionError, SizeError
from kpm import DOSCurve
from magnetic import SparseHermitian, assemble
from oracle import (RationalFlux, band_mass_fraction, exact_dos, exact_eigenvalues, farey_fluxes,
                    harper_spectrum_honeycomb, harper_spectrum_square)


def test_farey_fluxes():
    assert [str(f) for f in farey_fluxes(3)] == ["0/1", "1/3", "1/2", "2/3", "1/1"]
    assert len(farey_fluxes(1)) == 2
    for bad in (0, 201):
        with pytest.raises(PreconditionError):
            farey_fluxes(bad)


def test_rational_flux_is_reduced():
    assert RationalFlux(2, 5).value == pytest.approx(0.4)
    with pytest.raises(PreconditionError):
        RationalFlux(2, 4)
    with pytest.raises(PreconditionError):
        RationalFlux(1, 0)


def test_square_band_at_zero_flux():
    spectrum = harper_spectrum_square(RationalFlux(0, 1), t=1.0)
    assert spectrum.num_bands == 1
    assert spectrum.values()[0] == pytest.approx(-4.0, abs=1e-12)
    assert spectrum.values()[-1] == pytest.approx(4.0, abs=1e-12)


def test_square_at_half_flux():
    values = harper_spectrum_square(RationalFlux(1, 2), t=1.0).values()
    assert values[0] == pytest.approx(-2 * math.sqrt(2), abs=1e-8)
    assert values[-1] == pytest.approx(2 * math.sqrt(2), abs=1e-8)


@pytest.mark.parametrize("p, q", [(1, 3), (2, 5), (3, 7), (1, 10)])
def test_square_flux_symmetries(p, q):
    base = harper_spectrum_square(RationalFlux(p, q), k_grid=8)
    assert base.num_bands == q
    mirrored = harper_spectrum_square(RationalFlux(q - p, q), k_grid=8)
    shifted = harper_spectrum_square(RationalFlux(p + q, q), k_grid=8)
    np.testing.assert_allclose(base.values(), mirrored.values(), atol=1e-10)
    np.testing.assert_allclose(base.values(), shifted.values(), atol=1e-10)


def test_square_band_edges_are_ordered():
    edges = harper_spectrum_square(RationalFlux(1, 4), k_grid=16).band_edges()
    assert edges.shape == (4, 2)
    assert np.all(edges[:, 0] <= edges[:, 1])
    assert np.all(np.diff(edges[:, 0]) >= 0)


def test_honeycomb_at_zero_flux():
    values = harper_spectrum_honeycomb(RationalFlux(0, 1), t=2.7).values()
    assert values[0] == pytest.approx(-8.1, abs=1e-12)
    assert values[-1] == pytest.approx(8.1, abs=1e-12)


@pytest.mark.parametrize("flux", farey_fluxes(12))
def test_honeycomb_particle_hole_and_gauge(flux):
    n1 = harper_spectrum_honeycomb(flux, k_grid=6, gauge="n1")
    assert n1.num_bands == 2 * flux.q
    np.testing.assert_allclose(n1.values(), -n1.values()[::-1], atol=1e-12)
    n2 = harper_spectrum_honeycomb(flux, k_grid=6, gauge="n2")
    np.testing.assert_allclose(n1.values(), n2.values(), atol=1e-10)


def test_harper_preconditions():
    with pytest.raises(PreconditionError):
        harper_spectrum_square(RationalFlux(1, 201))
    with pytest.raises(PreconditionError):
        harper_spectrum_square(RationalFlux(1, 3), k_grid=0)
    with pytest.raises(PreconditionError):
        harper_spectrum_honeycomb(RationalFlux(1, 3), gauge="n3")


def test_exact_dos_of_dimer(dimer):
    grid = np.linspace(-5.0, 5.0, 2001)
    curve = exact_dos(assemble(dimer, B=0.0), 0.1, grid)
    assert curve.integral() == pytest.approx(2.0, rel=1e-6)
    assert abs(curve.energies[np.argmax(curve.density)]) == pytest.approx(2.7, abs=0.01)


def test_exact_dos_of_empty_hamiltonian():
    curve = exact_dos(SparseHermitian.from_matrix(np.zeros((5, 5))), 0.05, np.linspace(-1, 1, 801))
    assert curve.integral() == pytest.approx(5.0, rel=1e-6)
    assert curve.energies[np.argmax(curve.density)] == pytest.approx(0.0, abs=1e-9)


def test_exact_dos_of_three_site_chain():
    chain = SparseHermitian.from_matrix(np.array([[0, -1, 0], [-1, 0, -1], [0, -1, 0]], dtype=float))
    np.testing.assert_allclose(exact_eigenvalues(chain), [-math.sqrt(2), 0.0, math.sqrt(2)], atol=1e-12)
    grid = np.linspace(-2.0, 2.0, 4001)
    density = exact_dos(chain, 0.05, grid).density
    peaks = grid[1:-1][(density[1:-1] > density[:-2]) & (density[1:-1] > density[2:])]
    np.testing.assert_allclose(peaks, [-math.sqrt(2), 0.0, math.sqrt(2)], atol=2e-3)


def test_exact_diagonalisation_is_capped():
    with pytest.raises(SizeError):
        exact_eigenvalues(SparseHermitian.from_matrix(identity(4001, format="csr")))
    with pytest.raises(PreconditionError):
        exact_dos(SparseHermitian.from_matrix(np.eye(2)), 0.0, [0.0])


def test_band_mass_fraction():
    energies = np.linspace(0.0, 1.0, 1001)
    flat = DOSCurve(energies, np.ones_like(energies))
    assert band_mass_fraction(flat, [(0.0, 0.5)]) == pytest.approx(0.5, abs=1e-2)
    assert band_mass_fraction(flat, [(0.0, 0.2), (0.8, 1.0)]) == pytest.approx(0.4, abs=1e-2)
    assert band_mass_fraction(flat, [(0.0, 0.4)], widen=0.1) == pytest.approx(0.5, abs=1e-2)
    with pytest.raises(PreconditionError):
        band_mass_fraction(DOSCurve(energies, np.zeros_like(energies)), [(0.0, 1.0)])
