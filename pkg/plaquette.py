import math
import logging
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy import constants
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from errors import ConfigError, DomainError, EmbeddingError, PreconditionError
from structure import Flake, Lattice, assign_hoppings

logger = logging.getLogger(__name__)

FLUX_QUANTA = {
    "h_over_e": constants.h / constants.e,
    "h_over_2e": constants.h / (2.0 * constants.e),
}
H_OVER_E = FLUX_QUANTA["h_over_e"]
ANGSTROM2 = 1e-20  # m^2 per square Angstrom
# Strongest continuous laboratory field (Tesla)
STRONGEST_CONTINUOUS_FIELD = 45.5

AREA_TOL = 1e-9
ANGLE_TOL = 1e-12
MAX_BEAT_ORDER = 100


@dataclass(frozen=True)
class FluxQuantum:
    name: str
    value: float

    @classmethod
    def from_name(cls, name: str) -> "FluxQuantum":
        key = (name or "").strip().lower()
        if key not in FLUX_QUANTA:
            raise ConfigError(f"Unknown flux quantum {name!r}; use one of {sorted(FLUX_QUANTA)}.")
        return cls(key, FLUX_QUANTA[key])


def flux_quantum(name: str) -> float:
    return FluxQuantum.from_name(name).value


def period_of_area(area: float, flux_quantum: float = H_OVER_E) -> float:
    """B_p = Phi_0 / A_p, with the area in square Angstrom and the result in Tesla."""
    if not math.isfinite(area) or area <= 0.0:
        raise DomainError(f"Plaquette area must be positive, got {area}.")
    return flux_quantum / (area * ANGSTROM2)


@dataclass(frozen=True)
class Plaquette:
    vertex_cycle: tuple[int, ...]
    cells: tuple[tuple[int, int], ...]
    polygon: tuple[tuple[float, float], ...]
    area: float
    period: float

    def __post_init__(self):
        if len(self.vertex_cycle) < 3:
            raise PreconditionError("A plaquette needs at least 3 vertices.")
        if not self.area > 0.0:
            raise DomainError(f"Plaquette area must be positive, got {self.area}.")
        if len(set(zip(self.vertex_cycle, self.cells))) != len(self.vertex_cycle):
            raise PreconditionError("Plaquette vertices must be distinct.")

    @property
    def size(self) -> int:
        return len(self.vertex_cycle)


@dataclass(frozen=True)
class PlaquetteClass:
    representative: Plaquette
    multiplicity: int

    @property
    def area(self) -> float:
        return self.representative.area

    @property
    def period(self) -> float:
        return self.representative.period


@dataclass(frozen=True)
class BeatPeriod:
    members: tuple[int, ...]
    period: float
    multiplicities: tuple[int, ...]


def _shoelace(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _drop_spikes(walk: list) -> list:
    """Removes back-and-forth excursions (u -> v -> u) along dangling bonds."""
    stack = []
    for node in walk:
        if len(stack) >= 2 and stack[-2] == node:
            stack.pop()
        else:
            stack.append(node)
    while len(stack) >= 3 and stack[1] == stack[-1]:
        stack = stack[1:-1]
    return stack


def _bond_segments(lattice: Lattice) -> np.ndarray:
    pos, cell = lattice.positions, lattice.cell
    return np.array([[pos[b.i], pos[b.j] + np.asarray(b.offset) @ cell] for b in lattice.bonds])


def _check_planar(lattice: Lattice):
    """Bond segments may meet only at shared end points."""
    segs = _bond_segments(lattice)
    if len(segs) == 0:
        return
    reach = float(np.max(np.linalg.norm(segs[:, 1] - segs[:, 0], axis=1)))
    frac = lattice.fractional(segs.reshape(-1, 2))
    span = frac.max(axis=0) - frac.min(axis=0)
    area = lattice.cell_area
    n1 = int(math.ceil(span[0] + reach * math.hypot(*lattice.a2) / area)) + 1
    n2 = int(math.ceil(span[1] + reach * math.hypot(*lattice.a1) / area)) + 1
    shifts = np.array([(i, j) for i in range(-n1, n1 + 1) for j in range(-n2, n2 + 1)]) @ lattice.cell
    others = (segs[None, :, :, :] + shifts[:, None, None, :]).reshape(-1, 2, 2)

    def cross(o, a, b):
        return (a[..., 0] - o[..., 0]) * (b[..., 1] - o[..., 1]) - (a[..., 1] - o[..., 1]) * (b[..., 0] - o[..., 0])

    scale = max(reach, 1.0) ** 2 * 1e-9
    for k, (p, q) in enumerate(segs):
        c, d = others[:, 0], others[:, 1]
        d1, d2 = cross(p, q, c), cross(p, q, d)
        d3, d4 = cross(c, d, p), cross(c, d, q)
        hit = (d1 * d2 < -scale) & (d3 * d4 < -scale)
        if np.any(hit):
            raise EmbeddingError(f"Bond {k} crosses another bond; the embedding is not planar.")


def _outgoing(lattice: Lattice) -> list[list[tuple[int, tuple[int, int]]]]:
    """Half-edges leaving each site, sorted counter-clockwise by angle then length."""
    pos, cell = lattice.positions, lattice.cell
    out = [[] for _ in lattice.sites]
    for b in lattice.bonds:
        o = tuple(b.offset)
        out[b.i].append((b.j, o))
        out[b.j].append((b.i, (-o[0], -o[1])))

    for i, half_edges in enumerate(out):
        keyed = []
        for j, o in half_edges:
            v = pos[j] + np.asarray(o) @ cell - pos[i]
            keyed.append((math.atan2(v[1], v[0]), math.hypot(v[0], v[1]), j, o))
        keyed.sort(key=lambda e: (e[0], e[1]))
        for a, b in zip(keyed, keyed[1:]):
            if abs(a[0] - b[0]) <= ANGLE_TOL and abs(a[1] - b[1]) <= ANGLE_TOL:
                raise EmbeddingError(f"Two bonds leave site {i} along the same ray.")
        out[i] = [(j, o) for _, _, j, o in keyed]
    return out


def _canonical(cycle: list, lattice: Lattice) -> tuple:
    """Rotates a (site, cell) cycle to start at its smallest fractional vertex, moved to cell (0, 0)."""
    frac_sites = lattice.fractional(lattice.positions)
    keys = [tuple(np.round(frac_sites[s] + np.asarray(c), 9)) for s, c in cycle]
    start = min(range(len(cycle)), key=lambda k: keys[k])
    rotated = cycle[start:] + cycle[:start]
    c0 = rotated[0][1]
    return tuple((s, (c[0] - c0[0], c[1] - c0[1])) for s, c in rotated)


def enumerate_faces(lattice: Lattice, flux_quantum: float = H_OVER_E) -> list[Plaquette]:
    """
    Traces the bounded faces of the periodic lattice graph.

    Walks follow the rotation system on the unit-cell quotient: arriving at a
    site, leave along the next bond clockwise from the reversed arrival bond.
    A walk whose net cell offset is non-zero wraps the torus and bounds no
    face; a walk with non-positive signed area is an outer boundary.
    Faces come back largest first.
    """
    if lattice.bonds is None:
        lattice = assign_hoppings(lattice)
    _check_planar(lattice)
    out = _outgoing(lattice)
    slot = {}
    for i, half_edges in enumerate(out):
        for k, (j, o) in enumerate(half_edges):
            slot[(i, j, o)] = k

    pos, cell = lattice.positions, lattice.cell
    visited = set()
    faces, seen = [], set()
    for i, half_edges in enumerate(out):
        for k in range(len(half_edges)):
            if (i, k) in visited:
                continue
            walk = []
            site, at, idx = i, (0, 0), k
            while (site, idx) not in visited:
                visited.add((site, idx))
                walk.append((site, at))
                j, o = out[site][idx]
                back = slot[(j, site, (-o[0], -o[1]))]
                site, at, idx = j, (at[0] + o[0], at[1] + o[1]), (back - 1) % len(out[j])
            if at != (0, 0):
                continue

            walk = _drop_spikes(walk)
            if len(walk) < 3:
                continue
            poly = np.array([pos[s] + np.asarray(c) @ cell for s, c in walk])
            area = _shoelace(poly)
            if area <= AREA_TOL:
                continue
            key = _canonical(walk, lattice)
            if key in seen:
                continue
            seen.add(key)
            c0 = np.asarray(key[0][1])
            poly = np.array([pos[s] + (np.asarray(c) + c0) @ cell for s, c in key])
            faces.append(Plaquette(
                vertex_cycle=tuple(s for s, _ in key),
                cells=tuple(c for _, c in key),
                polygon=tuple(map(tuple, poly)),
                area=area,
                period=period_of_area(area, flux_quantum),
            ))

    faces.sort(key=lambda f: (-f.area, f.vertex_cycle, f.cells))
    logger.info(f"   [INFO] Found {len(faces)} faces per unit cell.")
    return faces


def plaquette_classes(faces: list[Plaquette], rtol: float = 1e-6) -> list[PlaquetteClass]:
    """Groups faces of equal area; multiplicity counts faces per unit cell."""
    classes: list[list[Plaquette]] = []
    for face in sorted(faces, key=lambda f: -f.area):
        if classes and abs(classes[-1][0].area - face.area) <= rtol * classes[-1][0].area:
            classes[-1].append(face)
        else:
            classes.append([face])
    return [PlaquetteClass(group[0], len(group)) for group in classes]


def _least_common_multiple(periods: list[float], tolerance: float, max_order: int):
    p0 = max(periods)
    for k0 in range(1, max_order + 1):
        target = k0 * p0
        ks = [max(1, round(target / p)) for p in periods]
        if max(ks) > max_order:
            # larger k0 only pushes the other multiples further out
            return None
        multiples = [k * p for k, p in zip(ks, periods)]
        common = float(np.mean(multiples))
        if all(abs(m - common) / common <= tolerance + 1e-12 for m in multiples):
            return common, tuple(ks)
    return None


def beat_periods(periods, tolerance: float = 0.02,
                 max_order: int = MAX_BEAT_ORDER) -> list[BeatPeriod]:
    """
    For every subset of two or more periods, the smallest L such that each
    period has an integer multiple within `tolerance` (relative) of L.
    Subsets without such an L within `max_order` multiples are left out.
    """
    periods = [float(p) for p in periods]
    if not periods:
        raise PreconditionError("beat_periods needs at least one period.")
    if any(not (p > 0 and math.isfinite(p)) for p in periods):
        raise PreconditionError("All periods must be positive and finite.")
    if not (0.0 <= tolerance < 0.2):
        raise PreconditionError(f"Tolerance must lie in [0, 0.2), got {tolerance}.")

    found = []
    for size in range(2, len(periods) + 1):
        for members in combinations(range(len(periods)), size):
            hit = _least_common_multiple([periods[m] for m in members], tolerance, max_order)
            if hit is not None:
                found.append(BeatPeriod(members, hit[0], hit[1]))
    return found


def loop_phase(polygon, B: float, flux_quantum: float = H_OVER_E) -> float:
    """Sum of directed Peierls phases around a closed polygon (last vertex joins the first)."""
    from magnetic import peierls_phase

    poly = np.asarray(polygon, dtype=float)
    return float(np.sum(peierls_phase(poly, np.roll(poly, -1, axis=0), B, flux_quantum)))


@dataclass(frozen=True, eq=False)
class FaceWalks:
    """Rotation-system walks of a flake graph; every half-edge lies on exactly one walk."""
    src: np.ndarray
    dst: np.ndarray
    next: np.ndarray
    labels: np.ndarray
    areas: np.ndarray


def face_walks(flake: Flake) -> FaceWalks:
    pos = flake.positions
    n_half = 2 * flake.num_edges
    src = np.concatenate([flake.edge_n, flake.edge_m])
    dst = np.concatenate([flake.edge_m, flake.edge_n])
    d = pos[dst] - pos[src]
    order = np.lexsort((np.arctan2(d[:, 1], d[:, 0]), src))
    src, dst = src[order], dst[order]

    degree = np.bincount(src, minlength=flake.num_sites)
    start = np.concatenate([[0], np.cumsum(degree)[:-1]])
    rank = np.arange(n_half) - start[src]
    key = src * flake.num_sites + dst
    by_key = np.argsort(key)
    reverse = by_key[np.searchsorted(key[by_key], dst * flake.num_sites + src)]
    nxt = start[dst] + (rank[reverse] - 1) % degree[dst]

    graph = coo_matrix((np.ones(n_half), (np.arange(n_half), nxt)), shape=(n_half, n_half))
    _, labels = connected_components(graph, directed=True, connection="weak")
    cross = pos[src, 0] * pos[dst, 1] - pos[dst, 0] * pos[src, 1]
    areas = 0.5 * np.bincount(labels, weights=cross)
    return FaceWalks(src, dst, nxt, labels, areas)


def flake_faces(flake: Flake, flux_quantum: float = H_OVER_E) -> list[Plaquette]:
    """Bounded faces of a finite flake, each as a counter-clockwise site cycle."""
    if flake.num_edges == 0:
        return []
    walks = face_walks(flake)
    _, first = np.unique(walks.labels, return_index=True)
    faces = []
    for label in np.nonzero(walks.areas > AREA_TOL)[0]:
        h0 = first[label]
        walk, h = [int(walks.src[h0])], walks.next[h0]
        while h != h0:
            walk.append(int(walks.src[h]))
            h = walks.next[h]
        walk = _drop_spikes(walk)
        if len(walk) < 3:
            continue
        area = float(walks.areas[label])
        faces.append(Plaquette(
            vertex_cycle=tuple(walk),
            cells=((0, 0),) * len(walk),
            polygon=tuple(map(tuple, flake.positions[walk])),
            area=area,
            period=period_of_area(area, flux_quantum),
        ))
    return faces
