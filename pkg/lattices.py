"""Built-in test lattices, so the pipeline runs without external geometry files."""
import re
import math
import logging

import numpy as np

from errors import PreconditionError
from structure import MIN_SITE_SEPARATION, HoppingRule, Lattice, Site

logger = logging.getLogger(__name__)

GRAPHENE_BOND = 1.42
GRAPHENE_T = -2.7
GUEST_T = -0.3
# Turns each guest ring off the framework vertex directions; with the default
# pore_scale every guest atom stays > 0.58 A from framework and other guests.
GUEST_TWIST = math.radians(18.0)


def square(a: float = 1.0, t: float = -1.0) -> Lattice:
    if a <= 0:
        raise PreconditionError(f"Square lattice constant must be positive, got {a}.")
    return Lattice(a1=(a, 0.0), a2=(0.0, a), sites=(Site("C", (0.0, 0.0)),),
                   hopping_rules=(HoppingRule("C", "C", 0.9 * a, 1.1 * a, t),))


def honeycomb(bond: float = GRAPHENE_BOND, t: float = GRAPHENE_T) -> Lattice:
    if bond <= 0:
        raise PreconditionError(f"Bond length must be positive, got {bond}.")
    s3 = math.sqrt(3.0)
    rule = (HoppingRule("C", "C", 1.2, 1.6, t) if bond == GRAPHENE_BOND
            else HoppingRule("C", "C", 0.85 * bond, 1.15 * bond, t))
    return Lattice(a1=(s3 * bond, 0.0), a2=(s3 * bond / 2, 1.5 * bond),
                   sites=(Site("C", (0.0, 0.0)), Site("C", (0.0, bond))),
                   hopping_rules=(rule,))


def kagome(bond: float = 1.0, t: float = -1.0) -> Lattice:
    if bond <= 0:
        raise PreconditionError(f"Bond length must be positive, got {bond}.")
    a = 2.0 * bond
    a1 = (a, 0.0)
    a2 = (a / 2, a * math.sqrt(3.0) / 2)
    sites = (Site("C", (0.0, 0.0)),
             Site("C", (a1[0] / 2, a1[1] / 2)),
             Site("C", (a2[0] / 2, a2[1] / 2)))
    return Lattice(a1=a1, a2=a2, sites=sites,
                   hopping_rules=(HoppingRule("C", "C", 0.9 * bond, 1.1 * bond, t),))


def porous_honeycomb(ring_size: float = GRAPHENE_BOND, pore_scale: float = 1.5,
                     t: float = GRAPHENE_T, guest_t: float = GUEST_T) -> Lattice:
    """
    Honeycomb framework whose pores each hold a guest hexagonal ring.

    The guest ring has bond `ring_size` and no bond to the framework; the
    framework bond is set so a pore has `pore_scale` times the ring area.
    Framework and guests therefore recur with their own plaquette periods
    (1.5 gives the 3:2 hierarchy) and together only at their beat. The weak
    `guest_t` keeps the guest states in a narrow ribbon at the band centre.
    """
    r, s = ring_size, pore_scale
    if r <= 0:
        raise PreconditionError(f"Ring bond length must be positive, got {r}.")
    if s <= 1.0:
        raise PreconditionError(f"pore_scale must exceed 1 so the ring fits inside the pore, got {s}.")

    host = honeycomb(r * math.sqrt(s), t)
    cx, cy = 0.5 * host.a1[0], 0.5 * host.a2[1] / 1.5
    angles = [math.pi / 6 + GUEST_TWIST + k * math.pi / 3 for k in range(6)]
    ring = tuple(Site("N", (cx + r * math.cos(a), cy + r * math.sin(a))) for a in angles)
    rule = HoppingRule("N", "N", 0.95 * r, 1.05 * r, guest_t)
    lattice = Lattice(a1=host.a1, a2=host.a2, sites=host.sites + ring,
                      hopping_rules=host.hopping_rules + (rule,))
    _check_guest_clearance(lattice, rule)
    logger.debug(f"porous honeycomb: framework bond {r * math.sqrt(s):.4f} A, ring bond {r:.4f} A")
    return lattice


def _check_guest_clearance(lattice: Lattice, rule: HoppingRule):
    """Guest atoms must keep clear of framework atoms and of the guests in other pores."""
    pos = lattice.positions
    shifts = np.array([(i, j) for i in (-1, 0, 1) for j in (-1, 0, 1)]) @ lattice.cell
    guests = pos[2:]
    for shift in shifts:
        others = pos + shift
        d = np.linalg.norm(guests[:, None, :] - others[None, :, :], axis=2)
        if not shift.any():
            d = d[:, :2]
        if d.min() < MIN_SITE_SEPARATION:
            raise PreconditionError(f"pore_scale leaves guest atoms {d.min():.3f} A from their neighbours.")
        if shift.any() and np.any((d[:, 2:] >= rule.d_min) & (d[:, 2:] <= rule.d_max)):
            raise PreconditionError("Guest rings in neighbouring pores would bond at this pore_scale.")


BUILTINS = {
    "square": square,
    "honeycomb": honeycomb,
    "graphene": honeycomb,
    "kagome": kagome,
    "porous-honeycomb": porous_honeycomb,
}

_CALL = re.compile(r"^\s*([a-z][a-z0-9_-]*)\s*(?:\((.*)\))?\s*$", re.IGNORECASE)


def builtin_lattice(text: str) -> Lattice:
    """Resolves `name` or `name(arg, ...)`, e.g. `porous-honeycomb(1.42,1.5)`."""
    match = _CALL.match(text or "")
    if not match or match.group(1).lower() not in BUILTINS:
        raise PreconditionError(
            f"Unknown built-in lattice {text!r}; choose from {', '.join(sorted(BUILTINS))}.")
    args = []
    if match.group(2) and match.group(2).strip():
        try:
            args = [float(tok) for tok in match.group(2).split(",")]
        except ValueError:
            raise PreconditionError(f"Built-in lattice arguments must be numbers: {text!r}.")
    try:
        return BUILTINS[match.group(1).lower()](*args)
    except TypeError:
        raise PreconditionError(f"Too many arguments for built-in lattice {text!r}.")
