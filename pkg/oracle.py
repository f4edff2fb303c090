"""
Ground truth for the KPM path: dense diagonalisation of small flakes and
Harper magnetic-Bloch spectra at rational flux.
"""
import math
import logging
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import eigvalsh

from errors import PreconditionError, SizeError
from kpm import DOSCurve, SpectralBounds, rescaled
from magnetic import SparseHermitian

logger = logging.getLogger(__name__)

MAX_EXACT_DIM = 4000
MAX_HARPER_Q = 200
# k points diagonalised per batch, scaled by the matrix size
BATCH_ENTRIES = 1 << 22


@dataclass(frozen=True, order=True)
class RationalFlux:
    """Flux per plaquette p/q in units of the flux quantum."""
    p: int
    q: int

    def __post_init__(self):
        if self.q <= 0:
            raise PreconditionError(f"Flux denominator must be positive, got {self.q}.")
        if math.gcd(self.p, self.q) != 1:
            raise PreconditionError(f"Flux {self.p}/{self.q} is not in lowest terms.")

    @property
    def value(self) -> float:
        return self.p / self.q

    def __str__(self) -> str:
        return f"{self.p}/{self.q}"


def farey_fluxes(q_max: int) -> list[RationalFlux]:
    """All reduced p/q in [0, 1] with q <= q_max, ascending."""
    if not (1 <= q_max <= MAX_HARPER_Q):
        raise PreconditionError(f"q_max must lie in [1, {MAX_HARPER_Q}], got {q_max}.")
    fluxes = [RationalFlux(p, q) for q in range(1, q_max + 1)
              for p in range(0, q + 1) if math.gcd(p, q) == 1]
    return sorted(fluxes, key=lambda f: (f.value, f.q))


# === Dense oracle ===

def _dense(H: SparseHermitian) -> np.ndarray:
    if H.dim > MAX_EXACT_DIM:
        raise SizeError(f"Exact diagonalisation is limited to dim <= {MAX_EXACT_DIM}, got {H.dim}.")
    return H.toarray()


def exact_eigenvalues(H: SparseHermitian) -> np.ndarray:
    return eigvalsh(_dense(H))


def exact_dos(H: SparseHermitian, sigma: float, grid) -> DOSCurve:
    """Sum of unit-weight Gaussians of width `sigma` at every eigenvalue."""
    if not sigma > 0:
        raise PreconditionError(f"Broadening must be positive, got {sigma}.")
    grid = np.asarray(grid, dtype=float)
    eigenvalues = exact_eigenvalues(H)
    z = (grid[:, None] - eigenvalues[None, :]) / sigma
    density = np.exp(-0.5 * z * z).sum(axis=1) / (sigma * math.sqrt(2.0 * math.pi))
    return DOSCurve(grid, density)


def exact_moments(H: SparseHermitian, bounds: SpectralBounds, num_moments: int,
                  margin: float = 0.01) -> np.ndarray:
    """Tr T_k(H~) from exact eigenvalues, on the same rescale the KPM path uses."""
    x = eigvalsh(_dense(SparseHermitian.from_matrix(rescaled(H, bounds, margin))))
    if np.any(np.abs(x) > 1.0):
        raise PreconditionError("Bounds do not contain the spectrum.")
    theta = np.arccos(np.clip(x, -1.0, 1.0))
    k = np.arange(num_moments)
    return np.cos(np.outer(k, theta)).sum(axis=1).astype(complex)


# === Harper solvers ===

@dataclass(frozen=True, eq=False)
class HarperSpectrum:
    flux: RationalFlux
    eigenvalues: np.ndarray  # (k points, bands), ascending per row

    @property
    def num_bands(self) -> int:
        return self.eigenvalues.shape[1]

    def band_edges(self) -> np.ndarray:
        """(bands, 2) array of [min, max] per band over the k mesh."""
        return np.stack([self.eigenvalues.min(axis=0), self.eigenvalues.max(axis=0)], axis=1)

    def values(self) -> np.ndarray:
        return np.sort(self.eigenvalues.ravel())


def _check_harper(flux: RationalFlux, k_grid: int):
    if flux.q > MAX_HARPER_Q:
        raise PreconditionError(f"Harper solvers accept q <= {MAX_HARPER_Q}, got {flux.q}.")
    if k_grid < 1:
        raise PreconditionError(f"k_grid must be >= 1, got {k_grid}.")


def _batched(build, n_k: int, size: int, solve):
    batch = max(1, BATCH_ENTRIES // (size * size))
    out = [solve(build(slice(lo, min(lo + batch, n_k)))) for lo in range(0, n_k, batch)]
    return np.concatenate(out, axis=0)


def harper_spectrum_square(flux: RationalFlux, t: float = 1.0, k_grid: int = 32) -> HarperSpectrum:
    """
    q x q Harper matrices on a k_grid x k_grid mesh of the magnetic zone:
    diagonal 2t cos(k2 + 2 pi p j / q), nearest-row coupling t, and the corner
    Bloch factor exp(+-i q k1) closing the magnetic cell.
    """
    _check_harper(flux, k_grid)
    q = flux.q
    rows = np.arange(q)
    shift = 2.0 * np.pi * ((flux.p * rows) % q) / q
    k1, k2 = np.meshgrid(2.0 * np.pi * np.arange(k_grid) / (q * k_grid),
                         2.0 * np.pi * np.arange(k_grid) / k_grid, indexing="ij")
    k1, k2 = k1.ravel(), k2.ravel()

    def build(sl):
        n = k1[sl].shape[0]
        h = np.zeros((n, q, q), dtype=complex)
        h[:, rows, rows] = 2.0 * t * np.cos(k2[sl, None] + shift[None, :])
        if q > 1:
            h[:, rows[:-1], rows[:-1] + 1] += t
            h[:, rows[:-1] + 1, rows[:-1]] += t
        h[:, q - 1, 0] += t * np.exp(1j * q * k1[sl])
        h[:, 0, q - 1] += t * np.exp(-1j * q * k1[sl])
        return h

    eigenvalues = _batched(build, k1.shape[0], q, np.linalg.eigvalsh)
    return HarperSpectrum(flux, eigenvalues)


def harper_spectrum_honeycomb(flux: RationalFlux, t: float = 1.0, k_grid: int = 32,
                              gauge: str = "n1") -> HarperSpectrum:
    """
    2q x 2q honeycomb magnetic Bloch Hamiltonian, written through its q x q
    A->B block D; the energies are the +- singular values of D.

    gauge "n1" puts the Landau phase on the bond along one lattice direction,
    "n2" on the other; both give the same spectrum.
    """
    _check_harper(flux, k_grid)
    if gauge not in ("n1", "n2"):
        raise PreconditionError(f"gauge must be 'n1' or 'n2', got {gauge!r}.")
    q = flux.q
    rows = np.arange(q)
    sign = 1.0 if gauge == "n1" else -1.0
    shift = sign * 2.0 * np.pi * ((flux.p * rows) % q) / q
    ka, kc = np.meshgrid(2.0 * np.pi * np.arange(k_grid) / k_grid,
                         2.0 * np.pi * np.arange(k_grid) / k_grid, indexing="ij")
    ka, kc = ka.ravel(), kc.ravel()

    def build(sl):
        n = ka[sl].shape[0]
        d = np.zeros((n, q, q), dtype=complex)
        d[:, rows, rows] = t + t * np.exp(1j * (kc[sl, None] + shift[None, :]))
        if q > 1:
            d[:, rows[:-1] + 1, rows[:-1]] += t
        d[:, 0, q - 1] += t * np.exp(1j * ka[sl])
        return d

    def solve(d):
        s = np.linalg.svd(d, compute_uv=False)
        return np.sort(np.concatenate([-s, s], axis=1), axis=1)

    eigenvalues = _batched(build, ka.shape[0], q, solve)
    return HarperSpectrum(flux, eigenvalues)


def band_mass_fraction(dos: DOSCurve, intervals, widen: float = 0.0) -> float:
    """Share of the DOS integral lying inside the union of [lo - widen, hi + widen]."""
    e = dos.energies
    inside = np.zeros(e.shape, dtype=bool)
    for lo, hi in np.asarray(intervals, dtype=float).reshape(-1, 2):
        inside |= (e >= lo - widen) & (e <= hi + widen)
    total = trapezoid(dos.density, e)
    if total <= 0:
        raise PreconditionError("DOS curve has no mass.")
    return float(trapezoid(np.where(inside, dos.density, 0.0), e) / total)
