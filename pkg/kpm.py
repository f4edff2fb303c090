"""
Kernel polynomial method for the density of states of a SparseHermitian.

H is mapped into [-1+eps, 1-eps], Chebyshev moments are estimated with
random-phase vectors, damped with the Jackson kernel and summed on
Chebyshev nodes with a type-3 DCT before resampling to a uniform grid.
"""
import math
import logging
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed
from scipy.fft import dct
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.linalg import eigh_tridiagonal
from scipy.sparse import identity

from config_utils import load_settings
from errors import BoundsError, DegenerateError, PreconditionError
from magnetic import SparseHermitian

logger = logging.getLogger(__name__)

MIN_BOUNDS_WIDTH = 1e-6
LANCZOS_STEPS = 100
# Full reorthogonalisation keeps the whole Krylov basis in memory; above this
# many stored entries the plain three-term recurrence is used instead.
REORTHOGONALIZE_LIMIT = 20_000_000
BLOWUP_FACTOR = 1e3
# Rounding in the DCT and the cumulative count, relative to the peak density.
POSITIVITY_NOISE = 1e-9


@dataclass(frozen=True)
class KPMParams:
    num_moments: int = 512
    num_random_vectors: int = 3
    energy_points: int = 512
    rescale_margin: float = 0.01
    rng_seed: int = 0

    def __post_init__(self):
        if self.num_moments < 2:
            raise PreconditionError(f"num_moments must be >= 2, got {self.num_moments}.")
        if self.num_random_vectors < 1:
            raise PreconditionError(f"num_random_vectors must be >= 1, got {self.num_random_vectors}.")
        if self.energy_points < 2:
            raise PreconditionError(f"energy_points must be >= 2, got {self.energy_points}.")
        if not (0.0 < self.rescale_margin < 0.5):
            raise PreconditionError(f"rescale_margin must lie in (0, 0.5), got {self.rescale_margin}.")
        if not (0 <= self.rng_seed < 2 ** 64):
            raise PreconditionError(f"rng_seed must be an unsigned 64-bit integer, got {self.rng_seed}.")


@dataclass(frozen=True)
class SpectralBounds:
    e_min: float
    e_max: float

    def __post_init__(self):
        if not (math.isfinite(self.e_min) and math.isfinite(self.e_max)) or self.e_min >= self.e_max:
            raise PreconditionError(f"Invalid spectral bounds [{self.e_min}, {self.e_max}].")

    @property
    def center(self) -> float:
        return 0.5 * (self.e_max + self.e_min)

    @property
    def half_width(self) -> float:
        return 0.5 * (self.e_max - self.e_min)

    def union(self, other: "SpectralBounds") -> "SpectralBounds":
        return SpectralBounds(min(self.e_min, other.e_min), max(self.e_max, other.e_max))


@dataclass(frozen=True, eq=False)
class DOSCurve:
    energies: np.ndarray
    density: np.ndarray

    def integral(self) -> float:
        return float(trapezoid(self.density, self.energies))


def _lanczos(matrix, v0: np.ndarray, steps: int):
    """Returns Ritz values and their residual norms after `steps` Lanczos iterations."""
    n = v0.shape[0]
    steps = min(steps, n)
    keep_basis = n * (steps + 1) <= REORTHOGONALIZE_LIMIT
    alpha = np.zeros(steps)
    beta = np.zeros(steps)
    basis = np.zeros((n, steps + 1), dtype=complex) if keep_basis else None

    q = v0 / np.linalg.norm(v0)
    q_prev = np.zeros_like(q)
    done = steps
    for i in range(steps):
        if keep_basis:
            basis[:, i] = q
        w = matrix @ q
        if i > 0:
            w -= beta[i - 1] * q_prev
        alpha[i] = np.vdot(q, w).real
        w -= alpha[i] * q
        if keep_basis:
            Q = basis[:, :i + 1]
            for _ in range(2):
                w -= Q @ (Q.conj().T @ w)
        beta[i] = np.linalg.norm(w)
        if beta[i] <= 1e-12 * max(1.0, abs(alpha[i])):
            done = i + 1
            beta[i] = 0.0
            break
        q_prev, q = q, w / beta[i]

    if done == 1:
        return alpha[:1].copy(), np.zeros(1)
    theta, vectors = eigh_tridiagonal(alpha[:done], beta[:done - 1])
    residuals = beta[done - 1] * np.abs(vectors[-1, :])
    return theta, residuals


def estimate_bounds(H: SparseHermitian, margin: float = 0.01, seed: int = 0,
                    steps: int = LANCZOS_STEPS) -> SpectralBounds:
    """
    Extremal Ritz values of a Lanczos run, widened by margin * spread and by
    the Ritz residuals. Containment holds with overwhelming probability, it
    is not proved.
    """
    if H.dim < 2:
        raise DegenerateError(f"Cannot bound the spectrum of a {H.dim}-dimensional matrix.")
    if steps < 50 and steps < H.dim:
        raise PreconditionError(f"Lanczos needs at least 50 steps, got {steps}.")
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(H.dim) + 1j * rng.standard_normal(H.dim)
    theta, residuals = _lanczos(H.to_csr(), v0, steps)

    lo, hi = float(theta[0]), float(theta[-1])
    widen = margin * (hi - lo)
    e_min = lo - max(widen, float(residuals[0]))
    e_max = hi + max(widen, float(residuals[-1]))
    if e_max - e_min < MIN_BOUNDS_WIDTH:
        mid = 0.5 * (e_min + e_max)
        e_min, e_max = mid - MIN_BOUNDS_WIDTH / 2, mid + MIN_BOUNDS_WIDTH / 2
    logger.debug(f"Lanczos bounds [{e_min:.6f}, {e_max:.6f}] eV after {len(theta)} steps")
    return SpectralBounds(e_min, e_max)


def _scale(bounds: SpectralBounds, margin: float) -> tuple[float, float]:
    return bounds.half_width / (1.0 - margin), bounds.center


def rescaled(H: SparseHermitian, bounds: SpectralBounds, margin: float):
    """Affine map of H into [-1+margin, 1-margin]."""
    a, b = _scale(bounds, margin)
    return ((H.to_csr() - b * identity(H.dim, format="csr", dtype=complex)) / a).tocsr()


def jackson_kernel(num_moments: int) -> np.ndarray:
    m = num_moments + 1
    k = np.arange(num_moments)
    return ((m - k) * np.cos(np.pi * k / m) + np.sin(np.pi * k / m) / np.tan(np.pi / m)) / m


def jackson_width(bounds: SpectralBounds, params: KPMParams) -> float:
    """
    Energy resolution (eV) of a Jackson-damped expansion at the centre of the
    bounds. Away from the centre the broadening narrows roughly as
    sqrt(1 - x^2) in rescaled units, so this is an upper bound everywhere.
    """
    a, _ = _scale(bounds, params.rescale_margin)
    return math.pi * a / params.num_moments


def random_phase_vector(dim: int, seed_seq: np.random.SeedSequence, conjugate: bool = False) -> np.ndarray:
    theta = 2.0 * np.pi * np.random.default_rng(seed_seq).random(dim)
    return np.exp(-1j * theta) if conjugate else np.exp(1j * theta)


def chebyshev_moments(h_tilde, r: np.ndarray, num_moments: int) -> np.ndarray:
    """<r|T_k(H~)|r> for k < num_moments."""
    dim = r.shape[0]
    limit = BLOWUP_FACTOR * dim
    mu = np.empty(num_moments, dtype=complex)
    mu[0] = np.vdot(r, r)
    v_prev, v = r, h_tilde @ r
    mu[1] = np.vdot(r, v)
    for k in range(2, num_moments):
        v_prev, v = v, 2.0 * (h_tilde @ v) - v_prev
        mu[k] = np.vdot(r, v)
        if abs(mu[k]) > limit:
            raise BoundsError(f"Chebyshev recursion diverged at moment {k}; "
                              f"the spectral bounds do not contain the spectrum.")
    return mu


def moments(H: SparseHermitian, bounds: SpectralBounds, params: KPMParams,
            n_jobs: int | None = None, conjugate: bool = False) -> np.ndarray:
    """
    Stochastic Chebyshev moments, normalised so mu_0 = dim(H).

    Each random vector owns a child of SeedSequence(rng_seed), so the result
    does not depend on `n_jobs`; per-vector moments are summed in vector order.
    `conjugate` uses the complex conjugates of the same vectors.
    """
    h_tilde = rescaled(H, bounds, params.rescale_margin)
    children = np.random.SeedSequence(params.rng_seed).spawn(params.num_random_vectors)
    n_jobs = n_jobs or load_settings().kpm_jobs

    def one(seed_seq):
        r = random_phase_vector(H.dim, seed_seq, conjugate)
        return chebyshev_moments(h_tilde, r, params.num_moments)

    if n_jobs == 1 or params.num_random_vectors == 1:
        per_vector = [one(s) for s in children]
    else:
        per_vector = Parallel(n_jobs=n_jobs, prefer="threads")(delayed(one)(s) for s in children)

    mu = np.zeros(params.num_moments, dtype=complex)
    for contribution in per_vector:
        mu += contribution
    mu /= params.num_random_vectors
    return mu * (H.dim / mu[0].real)


def reconstruct_dos(mu, bounds: SpectralBounds, params: KPMParams) -> DOSCurve:
    """
    Jackson-damped Chebyshev series evaluated on Chebyshev nodes (never at +-1),
    mapped back to eV and resampled onto `energy_points` uniform energies
    spanning the bounds.
    """
    mu = np.asarray(mu)
    if not mu.real[0] > 0:
        raise PreconditionError("mu_0 must be positive.")
    num_moments = mu.shape[0]
    n_nodes = max(2 * num_moments, 2 * params.energy_points)

    coeffs = np.zeros(n_nodes)
    coeffs[:num_moments] = jackson_kernel(num_moments) * mu.real
    # type-3 DCT: gamma_j = c_0 + 2 sum_k c_k cos(pi k (j + 1/2) / N)
    gamma = dct(coeffs, type=3)
    x = np.cos(np.pi * (np.arange(n_nodes) + 0.5) / n_nodes)
    rho_x = gamma / (np.pi * np.sqrt(1.0 - x * x))

    a, b = _scale(bounds, params.rescale_margin)
    node_energies = (a * x + b)[::-1]
    node_density = (rho_x / a)[::-1]
    energies = np.linspace(bounds.e_min, bounds.e_max, params.energy_points)

    # Resample through the state count so every grid cell keeps its mass,
    # however narrow the peaks are compared with the grid step.
    step = energies[1] - energies[0]
    edges = np.concatenate([[energies[0] - step / 2], energies + step / 2])
    count = cumulative_trapezoid(node_density, node_energies, initial=0.0)
    density = np.diff(np.interp(edges, node_energies, count)) / step

    floor = POSITIVITY_NOISE * max(float(np.max(np.abs(density))), 1.0)
    density = np.where((density < 0.0) & (density > -floor), 0.0, density)
    if density.min() < 0.0:
        logger.warning(f"   [WARN] Reconstructed DOS dips to {density.min():.3e} states/eV; "
                       f"moments are not those of a positive spectrum.")
    return DOSCurve(energies, density)


def compute_dos(H: SparseHermitian, params: KPMParams = KPMParams(),
                bounds: SpectralBounds | None = None, n_jobs: int | None = None,
                conjugate: bool = False) -> DOSCurve:
    if bounds is None:
        bounds = estimate_bounds(H, params.rescale_margin, seed=params.rng_seed)
    mu = moments(H, bounds, params, n_jobs=n_jobs, conjugate=conjugate)
    return reconstruct_dos(mu, bounds, params)
