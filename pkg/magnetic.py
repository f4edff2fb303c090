import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix

from errors import ConfigError, PreconditionError
from plaquette import ANGSTROM2, H_OVER_E
from structure import Flake

logger = logging.getLogger(__name__)


def peierls_phase(pos_n, pos_m, B, flux_quantum: float = H_OVER_E):
    """
    Phase picked up hopping from n to m in the Landau gauge A = (B*y, 0, 0).

    The gauge is linear in y, so the midpoint rule is the exact straight-line
    integral. Positions in Angstrom, B in Tesla; works on stacked (..., 2) arrays.
    """
    pos_n = np.asarray(pos_n, dtype=float)
    pos_m = np.asarray(pos_m, dtype=float)
    y_mid = 0.5 * (pos_n[..., 1] + pos_m[..., 1])
    dx = pos_m[..., 0] - pos_n[..., 0]
    return 2.0 * math.pi / flux_quantum * B * y_mid * dx * ANGSTROM2


@dataclass(frozen=True, eq=False)
class SparseHermitian:
    """CSR storage of H(B). Column indices are strictly increasing per row."""
    dim: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def to_csr(self) -> csr_matrix:
        return csr_matrix((self.values, self.col_indices, self.row_offsets),
                          shape=(self.dim, self.dim), copy=False)

    def toarray(self) -> np.ndarray:
        return self.to_csr().toarray()

    @classmethod
    def from_matrix(cls, matrix) -> "SparseHermitian":
        """Wraps any dense or sparse square matrix (used for test matrices)."""
        csr = csr_matrix(matrix, dtype=complex)
        if csr.shape[0] != csr.shape[1]:
            raise PreconditionError(f"Hamiltonian must be square, got shape {csr.shape}.")
        csr.sum_duplicates()
        csr.sort_indices()
        return cls(csr.shape[0], csr.indptr, csr.indices, csr.data)

    def is_hermitian(self, atol: float = 0.0) -> bool:
        csr = self.to_csr()
        diff = csr - csr.conj().T
        return diff.nnz == 0 or float(np.max(np.abs(diff.data))) <= atol


class HamiltonianBuilder:
    """
    Builds the CSR pattern of a flake once; `assemble(B)` only rewrites values.

    Builders are read-only after construction and may be shared by workers.
    """

    def __init__(self, flake: Flake, onsite: dict[str, float] | None = None,
                 flux_quantum: float = H_OVER_E):
        self.flake = flake
        self.flux_quantum = flux_quantum
        self.dim = flake.num_sites
        if onsite is None:
            onsite = {str(sp): 0.0 for sp in np.unique(flake.species)}
        missing = sorted(set(np.unique(flake.species).tolist()) - set(onsite))
        if missing:
            raise ConfigError(f"No on-site energy configured for species {', '.join(missing)}.")
        self.diagonal = np.array([onsite[str(sp)] for sp in flake.species], dtype=float)

        n, m = flake.edge_n, flake.edge_m
        n_edges = n.shape[0]
        rows = np.concatenate([np.arange(self.dim), n, m])
        cols = np.concatenate([np.arange(self.dim), m, n])
        # tag each entry with its position so the CSR permutation can be read back
        tags = np.arange(1, rows.shape[0] + 1, dtype=float)
        pattern = coo_matrix((tags, (rows, cols)), shape=(self.dim, self.dim)).tocsr()
        pattern.sort_indices()
        entry_of_slot = pattern.data.astype(np.int64) - 1
        slot_of_entry = np.empty_like(entry_of_slot)
        slot_of_entry[entry_of_slot] = np.arange(entry_of_slot.shape[0])

        self.row_offsets = pattern.indptr
        self.col_indices = pattern.indices
        self.row_offsets.flags.writeable = False
        self.col_indices.flags.writeable = False
        self._diag_slots = slot_of_entry[:self.dim]
        self._forward_slots = slot_of_entry[self.dim:self.dim + n_edges]
        self._backward_slots = slot_of_entry[self.dim + n_edges:]
        self._hoppings = flake.edge_t
        # phase per Tesla for each stored edge n -> m
        self._phase_per_tesla = peierls_phase(flake.positions[n], flake.positions[m], 1.0, flux_quantum)

    def phases(self, B: float) -> np.ndarray:
        return B * self._phase_per_tesla

    def assemble(self, B: float) -> SparseHermitian:
        if not math.isfinite(B):
            raise PreconditionError(f"Field must be finite, got {B}.")
        values = np.empty(self.col_indices.shape[0], dtype=complex)
        values[self._diag_slots] = self.diagonal
        hop = self._hoppings * np.exp(1j * self.phases(B))
        values[self._forward_slots] = hop
        values[self._backward_slots] = np.conj(hop)
        return SparseHermitian(self.dim, self.row_offsets, self.col_indices, values)


def assemble(flake: Flake, onsite: dict[str, float] | None = None, B: float = 0.0,
             flux_quantum: float = H_OVER_E) -> SparseHermitian:
    """H[n,m] = t_nm exp(i phase(n,m,B)), H[m,n] its conjugate, H[n,n] = onsite(species(n))."""
    return HamiltonianBuilder(flake, onsite, flux_quantum).assemble(B)
