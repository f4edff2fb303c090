import math
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed
from tqdm import tqdm

from config_utils import load_settings
from errors import CenteringError, InsufficientRangeError, PreconditionError
from kpm import KPMParams, SpectralBounds, estimate_bounds, moments, reconstruct_dos
from magnetic import HamiltonianBuilder
from plaquette import H_OVER_E
from structure import Flake

logger = logging.getLogger(__name__)

# Fields are keyed for seeding at this resolution (Tesla)
FIELD_KEY_RESOLUTION = 1e-6
DOS_FLOOR = 1e-6
MIN_PERIOD_POINTS = 16
MIN_PERIOD_STRENGTH = 0.5
HARMONIC_MARGIN = 0.05
ENERGY_WINDOWS = 8
# windows holding less than this share of the states are not searched
MIN_WINDOW_SHARE = 0.02
# a window peak must rise this far above the lowest correlation at shorter lags
WINDOW_PROMINENCE = 0.05
BOUND_SAMPLES = 5


@dataclass(frozen=True)
class SweepPlan:
    b_min: float
    b_max: float
    b_points: int
    kpm: KPMParams = field(default_factory=KPMParams)
    flake_dims: tuple[int, int] = (50, 50)

    def __post_init__(self):
        if not (math.isfinite(self.b_min) and math.isfinite(self.b_max)) or self.b_min > self.b_max:
            raise PreconditionError(f"Need b_min <= b_max, got [{self.b_min}, {self.b_max}].")
        if self.b_points < 1:
            raise PreconditionError(f"b_points must be >= 1, got {self.b_points}.")

    def b_values(self) -> np.ndarray:
        """b_min + i * step, so grids refined by 2n - 1 points reproduce the coarse values exactly."""
        if self.b_points == 1:
            return np.array([self.b_min])
        step = (self.b_max - self.b_min) / (self.b_points - 1)
        values = self.b_min + np.arange(self.b_points) * step
        values[-1] = self.b_max
        return values


@dataclass(frozen=True, eq=False)
class Spectrum:
    b_values: np.ndarray
    energies: np.ndarray
    dos: np.ndarray  # (b_points, energy_points)
    dim: int | None = None
    centered: bool = False
    energy_shift: float = 0.0

    def __post_init__(self):
        if self.dos.shape != (self.b_values.shape[0], self.energies.shape[0]):
            raise PreconditionError(
                f"dos shape {self.dos.shape} does not match {self.b_values.shape[0]} fields "
                f"x {self.energies.shape[0]} energies.")

    @property
    def b_step(self) -> float:
        return float(self.b_values[1] - self.b_values[0]) if self.b_values.shape[0] > 1 else 0.0


def field_seed(global_seed: int, B: float) -> int:
    """64-bit seed from (global seed, |B| quantized); +B and -B share noise."""
    key = int(round(abs(B) / FIELD_KEY_RESOLUTION)) % (1 << 64)
    words = np.random.SeedSequence([global_seed, key]).generate_state(2, dtype=np.uint32)
    return (int(words[0]) << 32) | int(words[1])


def global_bounds(builder: HamiltonianBuilder, plan: SweepPlan) -> SpectralBounds:
    """Union of Lanczos bounds at b_min, b_max and interior sample fields; one energy grid for every row."""
    samples = np.unique(np.linspace(plan.b_min, plan.b_max, BOUND_SAMPLES))
    bounds = None
    for B in samples:
        b = estimate_bounds(builder.assemble(float(B)), plan.kpm.rescale_margin, seed=plan.kpm.rng_seed)
        bounds = b if bounds is None else bounds.union(b)
    return bounds


def _dos_rows(builder: HamiltonianBuilder, fields, bounds: SpectralBounds, kpm: KPMParams):
    rows = []
    for B in fields:
        params = replace(kpm, rng_seed=field_seed(kpm.rng_seed, B))
        mu = moments(builder.assemble(float(B)), bounds, params, n_jobs=1, conjugate=B < 0)
        rows.append(reconstruct_dos(mu, bounds, params).density)
    return rows


def run_sweep(flake: Flake, plan: SweepPlan, onsite: dict[str, float] | None = None,
              flux_quantum: float = H_OVER_E, workers: int | None = None) -> Spectrum:
    """
    KPM DOS at every field of the plan, rows ascending in B on one shared
    energy grid. Each row depends only on (seed, B), never on scheduling.
    """
    workers = workers or load_settings().workers
    builder = HamiltonianBuilder(flake, onsite, flux_quantum)
    b_values = plan.b_values()
    logger.info(f" ✅  [START] Sweeping {len(b_values)} fields in [{plan.b_min:g}, {plan.b_max:g}] T "
                f"on {flake.num_sites} sites with {workers} worker(s)...")

    bounds = global_bounds(builder, plan)
    logger.info(f"   [INFO] Shared spectral bounds [{bounds.e_min:.4f}, {bounds.e_max:.4f}] eV.")

    n_chunks = min(len(b_values), max(1, 4 * workers))
    chunks = [c for c in np.array_split(np.arange(len(b_values)), n_chunks) if c.size]
    dos = np.empty((len(b_values), plan.kpm.energy_points))
    progress = tqdm(total=len(b_values), desc="fields", unit="B", disable=None)

    if workers == 1:
        results = (_dos_rows(builder, b_values[c], bounds, plan.kpm) for c in chunks)
    else:
        results = Parallel(n_jobs=workers, return_as="generator")(
            delayed(_dos_rows)(builder, b_values[c], bounds, plan.kpm) for c in chunks)
    for chunk, rows in zip(chunks, results):
        dos[chunk] = np.asarray(rows)
        progress.update(chunk.size)
    progress.close()

    energies = np.linspace(bounds.e_min, bounds.e_max, plan.kpm.energy_points)
    logger.info(" ✅  [FINISH] Sweep complete.")
    return Spectrum(b_values, energies, dos, dim=flake.num_sites)


def center_energies(spectrum: Spectrum) -> Spectrum:
    """
    Shifts the energy grid by -(E_min + E_max)/2 of the support above
    1e-6 of the peak DOS. An already centered spectrum comes back unchanged.
    """
    if spectrum.centered:
        return spectrum
    peak = float(np.max(spectrum.dos)) if spectrum.dos.size else 0.0
    if not (math.isfinite(peak) and peak > 0.0):
        raise CenteringError("Cannot center an all-zero spectrum.")
    support = np.nonzero((spectrum.dos > DOS_FLOOR * peak).any(axis=0))[0]
    shift = -0.5 * (spectrum.energies[support[0]] + spectrum.energies[support[-1]])
    return replace(spectrum, energies=spectrum.energies + shift, centered=True,
                   energy_shift=spectrum.energy_shift + shift)


def autocorrelation(spectrum: Spectrum, window: slice | None = None) -> np.ndarray:
    """
    Pearson correlation between dos rows B and B + lag, for lag = 0 .. (n-1)//2
    steps, optionally over the energy columns in `window` only.
    """
    dos = spectrum.dos if window is None else spectrum.dos[:, window]
    rows = dos.reshape(dos.shape[0], -1)
    max_lag = (rows.shape[0] - 1) // 2
    r = np.zeros(max_lag + 1)
    r[0] = 1.0
    for lag in range(1, max_lag + 1):
        a = rows[:-lag].ravel()
        b = rows[lag:].ravel()
        a = a - a.mean()
        b = b - b.mean()
        norm = math.sqrt(float(np.dot(a, a)) * float(np.dot(b, b)))
        r[lag] = float(np.dot(a, b)) / norm if norm > 0 else 0.0
    return r


def energy_windows(spectrum: Spectrum, count: int = ENERGY_WINDOWS) -> list[slice]:
    """Equal slices of the energy axis holding at least MIN_WINDOW_SHARE of the states."""
    n_e = spectrum.energies.shape[0]
    edges = np.linspace(0, n_e, min(count, n_e) + 1).astype(int)
    weight = np.abs(spectrum.dos).sum(axis=0)
    total = float(weight.sum())
    if total <= 0:
        return []
    return [slice(int(lo), int(hi)) for lo, hi in zip(edges[:-1], edges[1:])
            if hi > lo and weight[lo:hi].sum() >= MIN_WINDOW_SHARE * total]


def _peaks(r: np.ndarray, min_strength: float, prominence: float = 0.0) -> list[tuple[float, float]]:
    """Local maxima of r as (fractional lag, strength), refined by a parabola through three lags."""
    found = []
    for lag in range(2, r.shape[0] - 1):
        if r[lag] > r[lag - 1] and r[lag] >= r[lag + 1] and r[lag] > min_strength \
                and r[lag] - r[1:lag].min() >= prominence:
            curvature = r[lag - 1] - 2.0 * r[lag] + r[lag + 1]
            delta = 0.5 * (r[lag - 1] - r[lag + 1]) / curvature if curvature < 0 else 0.0
            found.append((lag + float(np.clip(delta, -0.5, 0.5)), float(r[lag])))
    return found


def _same_lag(lag: float, other: float) -> bool:
    return abs(lag - other) <= max(1.5, 0.02 * lag)


def _is_harmonic(lag: float, strength: float, kept: list[tuple[float, float]]) -> bool:
    for base_lag, base_strength in kept:
        n = round(lag / base_lag)
        if n >= 2 and _same_lag(lag, n * base_lag) and strength < base_strength + HARMONIC_MARGIN:
            return True
    return False


def _drop_harmonics(candidates: list[tuple[float, float]]) -> list[tuple[float, float]]:
    kept = []
    for lag, strength in sorted(candidates):
        if not _is_harmonic(lag, strength, kept):
            kept.append((lag, strength))
    return kept


def measure_period(spectrum: Spectrum, min_strength: float = MIN_PERIOD_STRENGTH,
                   windows: int = ENERGY_WINDOWS) -> list[tuple[float, float]]:
    """
    Candidate field periods from local maxima of the row autocorrelation,
    as (period in Tesla, strength), strongest first. Lags are limited to
    half the sweep so every candidate fits twice.

    The whole DOS matrix is searched first, then each energy window on its
    own: a ribbon of states that recurs with its own plaquette period shows
    it there even when the full matrix only recurs at the common beat.
    Within a search, a candidate close to an integer multiple of a shorter
    one and not clearly stronger is its harmonic. Whole-matrix candidates
    are always kept; a window candidate is dropped when it repeats a kept
    lag or is a harmonic of one.
    """
    b = spectrum.b_values
    if b.shape[0] < MIN_PERIOD_POINTS:
        raise PreconditionError(f"Period measurement needs >= {MIN_PERIOD_POINTS} fields, got {b.shape[0]}.")
    steps = np.diff(b)
    if not (steps[0] > 0 and np.allclose(steps, steps[0], rtol=1e-9, atol=0.0)):
        raise PreconditionError("Period measurement needs a uniform ascending field grid.")
    step = float(steps[0])

    kept = _drop_harmonics(_peaks(autocorrelation(spectrum), min_strength))
    ribbon = []
    for window in energy_windows(spectrum, windows):
        r = autocorrelation(spectrum, window)
        ribbon.extend(_drop_harmonics(_peaks(r, min_strength, WINDOW_PROMINENCE)))
    for lag, strength in sorted(ribbon, key=lambda c: (c[0], -c[1])):
        same = [i for i, (other, _) in enumerate(kept) if _same_lag(lag, other)]
        if same:
            i = same[0]
            if strength > kept[i][1]:
                kept[i] = (lag, strength)
        elif not _is_harmonic(lag, strength, kept):
            kept.append((lag, strength))
    logger.debug(f"period candidates (lags): {[round(lag, 2) for lag, _ in kept]}")

    if not kept:
        raise InsufficientRangeError(
            f"No recurring pattern above strength {min_strength} fits twice in "
            f"[{b[0]:g}, {b[-1]:g}] T; widen the sweep.")
    kept.sort(key=lambda c: (-round(c[1], 6), c[0]))
    return [(lag * step, strength) for lag, strength in kept]
