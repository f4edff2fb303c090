import re
import math
import logging
from dataclasses import dataclass, replace, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from config_utils import load_settings
from errors import (AmbiguityError, ConfigError, ParseError, PreconditionError,
                    SizeError)

logger = logging.getLogger(__name__)

# Rule boundaries are closed intervals compared with this slack (Angstrom)
DISTANCE_TOL = 1e-6
MIN_SITE_SEPARATION = 0.5

LATTICE_KEY = re.compile(r'Lattice\s*=\s*"([^"]*)"', re.IGNORECASE)


# === Domain types ===

@dataclass(frozen=True)
class Site:
    species: str
    position: tuple[float, float]

    def __post_init__(self):
        if not isinstance(self.species, str) or not self.species.strip():
            raise PreconditionError("Site species must be a non-empty chemical symbol.")
        x, y = (float(c) for c in self.position)
        if not (math.isfinite(x) and math.isfinite(y)):
            raise PreconditionError(f"Site position {self.position} is not finite.")
        object.__setattr__(self, "position", (x, y))


@dataclass(frozen=True)
class HoppingRule:
    species_a: str
    species_b: str
    d_min: float
    d_max: float
    t: float

    def __post_init__(self):
        if not (0.0 < self.d_min < self.d_max):
            raise PreconditionError(
                f"Hopping rule {self.species_a}-{self.species_b} needs 0 < d_min < d_max, "
                f"got [{self.d_min}, {self.d_max}].")
        if not math.isfinite(self.t):
            raise PreconditionError(f"Hopping amplitude {self.t} is not finite.")

    @property
    def pair(self) -> tuple[str, str]:
        return tuple(sorted((self.species_a, self.species_b)))

    def matches(self, species_a: str, species_b: str, distance: float) -> bool:
        if tuple(sorted((species_a, species_b))) != self.pair:
            return False
        return self.d_min - DISTANCE_TOL <= distance <= self.d_max + DISTANCE_TOL


@dataclass(frozen=True)
class Bond:
    """Site `i` of cell (0, 0) bonded to site `j` of cell `offset`."""
    i: int
    j: int
    offset: tuple[int, int]
    t: float


@dataclass(frozen=True)
class Lattice:
    a1: tuple[float, float]
    a2: tuple[float, float]
    sites: tuple[Site, ...]
    hopping_rules: tuple[HoppingRule, ...] = ()
    # None until assign_hoppings has run; () means "assigned, no bonds"
    bonds: tuple[Bond, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "a1", tuple(float(c) for c in self.a1))
        object.__setattr__(self, "a2", tuple(float(c) for c in self.a2))
        object.__setattr__(self, "sites", tuple(self.sites))
        object.__setattr__(self, "hopping_rules", tuple(self.hopping_rules))
        if self.bonds is not None:
            object.__setattr__(self, "bonds", tuple(self.bonds))

        if not np.all(np.isfinite(self.a1 + self.a2)) or self.cell_area <= 0.0:
            raise PreconditionError(f"Degenerate lattice vectors a1={self.a1}, a2={self.a2}.")
        if len(self.sites) > 1:
            pairs = cKDTree(self.positions).query_pairs(MIN_SITE_SEPARATION)
            if pairs:
                i, j = sorted(min(pairs))
                raise PreconditionError(
                    f"Sites {i} and {j} are closer than {MIN_SITE_SEPARATION} Angstrom.")

    @property
    def cell(self) -> np.ndarray:
        """Lattice vectors as rows."""
        return np.array([self.a1, self.a2])

    @property
    def cell_area(self) -> float:
        return abs(self.a1[0] * self.a2[1] - self.a1[1] * self.a2[0])

    @property
    def positions(self) -> np.ndarray:
        return np.array([s.position for s in self.sites], dtype=float).reshape(-1, 2)

    @property
    def species(self) -> list[str]:
        return [s.species for s in self.sites]

    def fractional(self, points: np.ndarray) -> np.ndarray:
        return np.linalg.solve(self.cell.T, np.asarray(points, dtype=float).T).T

    def translated(self, shift) -> "Lattice":
        dx, dy = shift
        sites = [Site(s.species, (s.position[0] + dx, s.position[1] + dy)) for s in self.sites]
        return replace(self, sites=tuple(sites))

    def rotated(self, angle: float) -> "Lattice":
        c, s = math.cos(angle), math.sin(angle)
        rot = np.array([[c, -s], [s, c]])
        turn = lambda v: tuple(rot @ np.asarray(v, dtype=float))
        sites = [Site(site.species, turn(site.position)) for site in self.sites]
        return replace(self, a1=turn(self.a1), a2=turn(self.a2), sites=tuple(sites))


@dataclass(frozen=True)
class FlakeProvenance:
    lattice: Lattice
    nx: int
    ny: int
    boundary: str = "open"


@dataclass(frozen=True, eq=False)
class Flake:
    """A finite open-boundary sample. Edges are stored once, with n < m."""
    positions: np.ndarray
    species: np.ndarray
    edge_n: np.ndarray
    edge_m: np.ndarray
    edge_t: np.ndarray
    provenance: FlakeProvenance | None = None

    def __post_init__(self):
        positions = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        species = np.asarray(self.species, dtype=str)
        edge_n = np.asarray(self.edge_n, dtype=np.int64)
        edge_m = np.asarray(self.edge_m, dtype=np.int64)
        edge_t = np.asarray(self.edge_t, dtype=float)
        if species.shape != (positions.shape[0],):
            raise PreconditionError("One species entry per flake site is required.")
        if not (edge_n.shape == edge_m.shape == edge_t.shape):
            raise PreconditionError("Edge arrays must have equal length.")
        if edge_n.size:
            if np.any(edge_n >= edge_m):
                raise PreconditionError("Each flake edge must be stored once with n < m.")
            if edge_n.min() < 0 or edge_m.max() >= positions.shape[0]:
                raise PreconditionError("Flake edge refers to a missing site.")
            if np.any(np.abs(edge_t) <= 0.0):
                raise PreconditionError("Flake edges need a non-zero hopping.")
        for name, arr in (("positions", positions), ("species", species), ("edge_n", edge_n),
                          ("edge_m", edge_m), ("edge_t", edge_t)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @classmethod
    def from_edges(cls, positions, species, edges) -> "Flake":
        """Builds a flake from (n, m, t) triples in any orientation."""
        edges = list(edges)
        n = np.array([min(e[0], e[1]) for e in edges], dtype=np.int64)
        m = np.array([max(e[0], e[1]) for e in edges], dtype=np.int64)
        t = np.array([e[2] for e in edges], dtype=float)
        return cls(positions, species, n, m, t)

    @property
    def num_sites(self) -> int:
        return self.positions.shape[0]

    @property
    def num_edges(self) -> int:
        return self.edge_n.shape[0]

    @property
    def sites(self) -> list[Site]:
        return [Site(str(s), tuple(p)) for s, p in zip(self.species, self.positions)]

    @property
    def edges(self) -> list[tuple[int, int, float]]:
        return list(zip(self.edge_n.tolist(), self.edge_m.tolist(), self.edge_t.tolist()))


# === Extended-XYZ ingestion ===

def parse_structure(text: str) -> Lattice:
    """
    Parses an extended-XYZ frame into a strictly 2D Lattice.
    z coordinates and the third lattice vector are discarded.
    """
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise ParseError("missing site count", 1)
    try:
        count = int(lines[0].strip())
    except ValueError:
        raise ParseError(f"malformed site count {lines[0].strip()!r}", 1)
    if count < 1:
        raise ParseError(f"site count must be positive, got {count}", 1)

    if len(lines) < 2:
        raise ParseError('missing comment line with the Lattice="..." key', 2)
    match = LATTICE_KEY.search(lines[1])
    if not match:
        raise ParseError('missing Lattice="ax ay az bx by bz cx cy cz" key', 2)
    try:
        cell = [float(tok) for tok in match.group(1).split()]
    except ValueError:
        raise ParseError(f"non-numeric Lattice entry in {match.group(1)!r}", 2)
    if len(cell) != 9:
        raise ParseError(f"Lattice needs 9 numbers, got {len(cell)}", 2)

    sites = []
    for idx in range(count):
        line_no = idx + 3
        if idx + 2 >= len(lines) or not lines[idx + 2].strip():
            raise ParseError(f"expected {count} site lines, found {idx}", line_no)
        fields = lines[idx + 2].split()
        if len(fields) < 4:
            raise ParseError(f"site line needs 'symbol x y z', got {lines[idx + 2].strip()!r}", line_no)
        coords = []
        for tok in fields[1:4]:
            try:
                coords.append(float(tok))
            except ValueError:
                raise ParseError(f"non-numeric coordinate {tok!r}", line_no)
        try:
            sites.append(Site(fields[0], (coords[0], coords[1])))
        except PreconditionError as e:
            raise ParseError(str(e), line_no)

    for offset, extra in enumerate(lines[count + 2:]):
        if extra.strip():
            raise ParseError(f"site count is {count} but more site lines follow", count + 3 + offset)

    try:
        return Lattice(a1=(cell[0], cell[1]), a2=(cell[3], cell[4]), sites=tuple(sites))
    except PreconditionError as e:
        raise ParseError(str(e), 2)


def read_structure(path) -> Lattice:
    logger.info(f"   [INFO] Reading structure from {path}...")
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ParseError(f"cannot read structure file {path}: {e}")
    lattice = parse_structure(text)
    logger.info(f"   [SUCCESS] Parsed {len(lattice.sites)} sites, cell area {lattice.cell_area:.4f} A^2.")
    return lattice


# === Hopping config ===

DEFAULT_RULES = (HoppingRule("C", "C", 1.2, 1.6, -2.7),)


@dataclass(frozen=True)
class HoppingConfig:
    rules: tuple[HoppingRule, ...] = DEFAULT_RULES
    onsite: tuple[tuple[str, float], ...] = ()
    flux_quantum: str | None = None

    def onsite_table(self, species) -> dict[str, float]:
        """
        Without any `onsite` line every species sits at 0 eV. With at least one,
        the table is explicit and missing species are left out (assembly rejects them).
        """
        if not self.onsite:
            return {sp: 0.0 for sp in species}
        return dict(self.onsite)


def parse_hopping_config(text: str) -> HoppingConfig:
    rules, onsite, flux = [], {}, None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        key = fields[0].lower()
        try:
            if key == "hop" and len(fields) == 6:
                rules.append(HoppingRule(fields[1], fields[2], float(fields[3]),
                                         float(fields[4]), float(fields[5])))
            elif key == "onsite" and len(fields) == 3:
                onsite[fields[1]] = float(fields[2])
            elif key == "flux_quantum" and len(fields) in (2, 3):
                flux = fields[-1]
            else:
                raise ParseError(f"unrecognised config line {line!r}", line_no)
        except ValueError as e:
            # PreconditionError is a ValueError too; both mean a bad line
            raise ParseError(str(e), line_no)
    return HoppingConfig(rules=tuple(rules), onsite=tuple(sorted(onsite.items())), flux_quantum=flux)


def read_hopping_config(path) -> HoppingConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read hopping config {path}: {e}")
    config = parse_hopping_config(text)
    logger.info(f"   [INFO] Loaded {len(config.rules)} hopping rules and "
                f"{len(config.onsite)} on-site energies from {path}.")
    return config


# === Hopping assignment ===

def _image_range(lattice: Lattice, cutoff: float) -> tuple[int, int]:
    """Number of periodic images needed along a1/a2 to see every pair within `cutoff`."""
    frac = lattice.fractional(lattice.positions)
    spread = frac.max(axis=0) - frac.min(axis=0)
    area = lattice.cell_area
    h1 = area / math.hypot(*lattice.a2)
    h2 = area / math.hypot(*lattice.a1)
    return (int(math.ceil(cutoff / h1 + spread[0])) + 1,
            int(math.ceil(cutoff / h2 + spread[1])) + 1)


def assign_hoppings(lattice: Lattice, rules=None) -> Lattice:
    """
    Bonds every site pair (periodic images included) whose distance lies in a
    rule's closed [d_min, d_max]. Each bond is kept once on the unit cell.
    """
    rules = tuple(lattice.hopping_rules if rules is None else rules)
    if not rules or not lattice.sites:
        return replace(lattice, hopping_rules=rules, bonds=())

    cutoff = max(r.d_max for r in rules) + DISTANCE_TOL
    n1_max, n2_max = _image_range(lattice, cutoff)
    positions = lattice.positions
    species = lattice.species
    ns = len(species)

    offsets = np.array([(n1, n2) for n1 in range(-n1_max, n1_max + 1)
                        for n2 in range(-n2_max, n2_max + 1)])
    shifts = offsets @ lattice.cell
    images = (shifts[:, None, :] + positions[None, :, :]).reshape(-1, 2)
    tree = cKDTree(images)

    bonds = []
    for i, neighbours in enumerate(tree.query_ball_point(positions, cutoff)):
        for flat in neighbours:
            image, j = divmod(flat, ns)
            offset = (int(offsets[image, 0]), int(offsets[image, 1]))
            if offset == (0, 0) and j == i:
                continue
            # keep one orientation of each undirected bond
            if offset < (0, 0) or (offset == (0, 0) and j < i):
                continue
            distance = float(np.linalg.norm(images[flat] - positions[i]))
            hits = [r for r in rules if r.matches(species[i], species[j], distance)]
            if len(hits) > 1:
                raise AmbiguityError(
                    f"{len(hits)} hopping rules match {species[i]}{i}-{species[j]}{j} "
                    f"at {distance:.6f} Angstrom.")
            if hits:
                bonds.append(Bond(i, j, offset, hits[0].t))

    bonds.sort(key=lambda b: (b.i, b.j, b.offset))
    if not bonds:
        logger.warning("   [WARN] No site pair matched any hopping rule; the lattice has zero bonds.")
    return replace(lattice, hopping_rules=rules, bonds=tuple(bonds))


# === Flake materialisation ===

def build_flake(lattice: Lattice, nx: int, ny: int, max_sites: int | None = None) -> Flake:
    """Tiles nx x ny cells with open boundaries; bonds leaving the sample are dropped."""
    if nx < 1 or ny < 1:
        raise PreconditionError(f"Flake dimensions must be >= 1, got {nx}x{ny}.")
    if lattice.bonds is None:
        raise PreconditionError("Lattice has no hoppings assigned; call assign_hoppings first.")
    ns = len(lattice.sites)
    total = nx * ny * ns
    limit = max_sites if max_sites is not None else load_settings().max_sites
    if total > limit:
        raise SizeError(f"Flake of {nx}x{ny} cells has {total} sites, above the limit of {limit}.")

    ix, iy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    ix, iy = ix.ravel(), iy.ravel()
    origins = np.stack([ix, iy], axis=1) @ lattice.cell
    positions = (origins[:, None, :] + lattice.positions[None, :, :]).reshape(-1, 2)
    species = np.tile(np.array(lattice.species, dtype=str), nx * ny)

    ns_, ms_, ts_ = [], [], []
    for bond in lattice.bonds:
        o1, o2 = bond.offset
        jx, jy = ix + o1, iy + o2
        inside = (jx >= 0) & (jx < nx) & (jy >= 0) & (jy < ny)
        n = (ix[inside] * ny + iy[inside]) * ns + bond.i
        m = (jx[inside] * ny + jy[inside]) * ns + bond.j
        ns_.append(np.minimum(n, m))
        ms_.append(np.maximum(n, m))
        ts_.append(np.full(n.shape, bond.t))

    if ns_:
        edge_n, edge_m, edge_t = np.concatenate(ns_), np.concatenate(ms_), np.concatenate(ts_)
        order = np.lexsort((edge_m, edge_n))
        edge_n, edge_m, edge_t = edge_n[order], edge_m[order], edge_t[order]
    else:
        edge_n = edge_m = np.zeros(0, dtype=np.int64)
        edge_t = np.zeros(0)

    logger.info(f"   [INFO] Built {nx}x{ny} flake: {total} sites, {edge_n.size} edges.")
    return Flake(positions, species, edge_n, edge_m, edge_t,
                 provenance=FlakeProvenance(lattice, nx, ny, "open"))
