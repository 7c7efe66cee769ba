"""Constrained Hilbert space of the blockaded spin-j ring and its momentum-zero sector.

States are stored as integer codes in base ``2j+1`` with site 1 as the most
significant digit and local digit ``a = m + j``.  Sorting codes therefore
sorts states lexicographically in ``(m_1, ..., m_D)`` with ``m`` ascending.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

DEFAULT_DIM_CAP = 2_000_000


class BasisError(ValueError):
    pass


def transfer_matrix(j: int) -> np.ndarray:
    """All-ones (2j+1)x(2j+1) matrix with the (m=j -> m=-j) entry removed."""
    n = 2 * j + 1
    T = np.ones((n, n), dtype=np.int64)
    T[n - 1, 0] = 0
    return T


def transfer_matrix_dim(D: int, j: int) -> int:
    """Exact dimension Tr(T^D) in integer arithmetic."""
    T = transfer_matrix(j).astype(object)
    M = np.identity(T.shape[0], dtype=object)
    for _ in range(D):
        M = M.dot(T)
    return int(np.trace(M))


@dataclass(frozen=True, eq=False)
class ConstrainedBasis:
    """Blockade-free product states of a periodic chain, lexicographically ordered."""

    D: int
    j: int
    codes: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return len(self.codes)

    @property
    def local_dim(self) -> int:
        return 2 * self.j + 1

    @property
    def states(self) -> np.ndarray:
        """(dim, D) array of magnetic quantum numbers."""
        return self.digits() - self.j

    def digits(self, codes: Optional[np.ndarray] = None) -> np.ndarray:
        codes = self.codes if codes is None else np.asarray(codes)
        return codes_to_digits(codes, self.D, self.local_dim)

    def lookup(self, codes: np.ndarray) -> np.ndarray:
        """Ordinals of ``codes``; -1 where a code is not in the basis."""
        codes = np.asarray(codes, dtype=np.int64)
        pos = np.searchsorted(self.codes, codes)
        pos = np.minimum(pos, self.dim - 1)
        return np.where(self.codes[pos] == codes, pos, -1)

    def index_of(self, state: Sequence[int]) -> Optional[int]:
        return index_of(self, state)

    def encode(self, state: Sequence[int]) -> int:
        if len(state) != self.D:
            raise BasisError(f"state has length {len(state)}, chain has D={self.D}")
        code = 0
        for m in state:
            if abs(m) > self.j:
                raise BasisError(f"|m|={abs(m)} exceeds j={self.j}")
            code = code * self.local_dim + (int(m) + self.j)
        return code

    def translate_codes(self, codes: Optional[np.ndarray] = None, shift: int = 1) -> np.ndarray:
        """Cyclic shift of every state by ``shift`` sites (site k -> k + shift)."""
        dig = self.digits(codes)
        return digits_to_codes(np.roll(dig, shift, axis=1), self.local_dim)

    def inversion_codes(self, codes: Optional[np.ndarray] = None) -> np.ndarray:
        """Site inversion k -> D-k+1 composed with the global flip m -> -m."""
        dig = self.digits(codes)
        flipped = (self.local_dim - 1) - dig[:, ::-1]
        return digits_to_codes(flipped, self.local_dim)

    def permutation(self, kind: str = "translation") -> np.ndarray:
        """Index permutation ``p`` with ``op |s_k> = |s_{p[k]}>``."""
        if kind == "translation":
            images = self.translate_codes()
        elif kind == "inversion":
            images = self.inversion_codes()
        else:
            raise ValueError(f"unknown symmetry {kind!r}")
        idx = self.lookup(images)
        if np.any(idx < 0):
            raise BasisError(f"{kind} does not map the basis onto itself")
        return idx

    def symmetry_matrix(self, kind: str = "translation") -> sp.csr_matrix:
        perm = self.permutation(kind)
        n = self.dim
        return sp.csr_matrix((np.ones(n, dtype=complex), (perm, np.arange(n))), shape=(n, n))


def codes_to_digits(codes: np.ndarray, D: int, base: int) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.int64)
    out = np.empty(codes.shape + (D,), dtype=np.int64)
    rem = codes.copy()
    for k in range(D - 1, -1, -1):
        out[..., k] = rem % base
        rem //= base
    return out


def digits_to_codes(digits: np.ndarray, base: int) -> np.ndarray:
    digits = np.asarray(digits, dtype=np.int64)
    codes = np.zeros(digits.shape[:-1], dtype=np.int64)
    for k in range(digits.shape[-1]):
        codes = codes * base + digits[..., k]
    return codes


def allowed_pairs(j: int) -> np.ndarray:
    """Boolean table ``ok[a, b]`` for local digits of neighbouring sites."""
    return transfer_matrix(j).astype(bool)


def enumerate_basis(D: int, j: int, dim_cap: int = DEFAULT_DIM_CAP) -> ConstrainedBasis:
    """Enumerate all blockade-free states of a periodic length-``D`` spin-``j`` chain."""
    if int(D) != D or D < 2:
        raise BasisError(f"chain length must be an integer >= 2, got {D}")
    if int(j) != j or j < 1:
        raise BasisError(f"spin size must be an integer >= 1, got {j}")
    D, j = int(D), int(j)
    expected = transfer_matrix_dim(D, j)
    if expected > dim_cap:
        raise BasisError(f"constrained dimension {expected} exceeds cap {dim_cap}")

    base = 2 * j + 1
    ok = allowed_pairs(j)
    # grow open strings site by site, keeping the first digit to close the ring at the end
    first = np.arange(base, dtype=np.int64)
    codes = first.copy()
    last = first.copy()
    for _ in range(D - 1):
        nxt = np.arange(base, dtype=np.int64)
        keep = ok[last[:, None], nxt[None, :]]
        rows, cols = np.nonzero(keep)
        codes = codes[rows] * base + nxt[cols]
        first = first[rows]
        last = nxt[cols]
    codes = codes[ok[last, first]]
    codes.sort()
    assert len(codes) == expected
    return ConstrainedBasis(D=D, j=j, codes=codes)


def brute_force_basis(D: int, j: int) -> np.ndarray:
    """Sorted codes obtained by filtering every product state (small D only)."""
    base = 2 * j + 1
    allc = np.arange(base ** D, dtype=np.int64)
    dig = codes_to_digits(allc, D, base)
    nxt = np.roll(dig, -1, axis=1)
    blocked = (dig == 2 * j) & (nxt == 0)
    return allc[~blocked.any(axis=1)]


def index_of(basis: ConstrainedBasis, state: Sequence[int]) -> Optional[int]:
    """Ordinal of a product state given as a sequence of m values, ``None`` if blockaded."""
    code = basis.encode(state)
    idx = int(basis.lookup(np.array([code]))[0])
    return None if idx < 0 else idx


@dataclass(frozen=True, eq=False)
class SymmetrySector:
    """Momentum-zero sector, optionally split into I_SS parity blocks.

    ``V`` is the (dim_full x dim) real isometry whose columns are the symmetrized
    orbit vectors (or their parity combinations).  When parity is resolved the
    even block comes first; ``parity`` then holds +1/-1 per column, otherwise 0.
    """

    basis: ConstrainedBasis
    V: sp.csr_matrix = field(repr=False)
    parity: np.ndarray = field(repr=False)
    representatives: np.ndarray = field(repr=False)
    periods: np.ndarray = field(repr=False)
    momentum: int = 0

    @property
    def dim(self) -> int:
        return self.V.shape[1]

    @property
    def resolved(self) -> bool:
        return bool(np.all(self.parity != 0))

    @property
    def dim_even(self) -> int:
        return int(np.sum(self.parity == 1))

    @property
    def dim_odd(self) -> int:
        return int(np.sum(self.parity == -1))

    def block_slices(self) -> list[tuple[int, slice]]:
        if not self.resolved:
            return [(0, slice(0, self.dim))]
        ne = self.dim_even
        out = []
        if ne:
            out.append((1, slice(0, ne)))
        if ne < self.dim:
            out.append((-1, slice(ne, self.dim)))
        return out

    def expand(self, v: np.ndarray) -> np.ndarray:
        return expand_to_full(self, v)

    def project(self, psi: np.ndarray) -> np.ndarray:
        psi = np.asarray(psi)
        if psi.shape[0] != self.basis.dim:
            raise BasisError(f"vector has {psi.shape[0]} rows, basis has {self.basis.dim}")
        return self.V.T @ psi

    def key(self) -> str:
        return f"D{self.basis.D}_j{self.basis.j}_k0_{'parity' if self.resolved else 'merged'}"


def translation_orbits(basis: ConstrainedBasis) -> tuple[np.ndarray, np.ndarray]:
    """Per-state orbit representative (minimal code) and orbit period."""
    rep = basis.codes.copy()
    period = np.zeros(basis.dim, dtype=np.int64)
    cur = basis.codes
    for shift in range(1, basis.D + 1):
        cur = basis.translate_codes(cur)
        rep = np.minimum(rep, cur)
        hit = (cur == basis.codes) & (period == 0)
        period[hit] = shift
    return rep, period


def build_momentum_zero_sector(basis: ConstrainedBasis, resolve_parity: bool = True) -> SymmetrySector:
    """Orthonormal translation-invariant vectors, one per orbit.

    With ``resolve_parity`` the orbit vectors are recombined into I_SS-even and
    I_SS-odd combinations (even block first).
    """
    rep, period = translation_orbits(basis)
    reps, orbit_of_state = np.unique(rep, return_inverse=True)
    n_orb = len(reps)
    rep_idx = basis.lookup(reps)
    orbit_period = period[rep_idx]
    amp = 1.0 / np.sqrt(period.astype(float))
    V_orb = sp.csr_matrix((amp, (np.arange(basis.dim), orbit_of_state)), shape=(basis.dim, n_orb))

    if not resolve_parity:
        return SymmetrySector(basis, V_orb, np.zeros(n_orb, dtype=int), reps, orbit_period)

    # I_SS maps orbit vectors onto orbit vectors with phase +1
    inv_state = basis.permutation("inversion")
    partner = orbit_of_state[inv_state[rep_idx]]
    fixed = np.nonzero(partner == np.arange(n_orb))[0]
    pair_lo = np.nonzero(partner > np.arange(n_orb))[0]
    pair_hi = partner[pair_lo]

    rows, cols, vals = [], [], []
    col = 0
    even_cols = []
    for o in fixed:
        rows.append(o); cols.append(col); vals.append(1.0)
        even_cols.append(o)
        col += 1
    s = 1.0 / np.sqrt(2.0)
    for a, b in zip(pair_lo, pair_hi):
        rows += [a, b]; cols += [col, col]; vals += [s, s]
        col += 1
    n_even = col
    for a, b in zip(pair_lo, pair_hi):
        rows += [a, b]; cols += [col, col]; vals += [s, -s]
        col += 1
    C = sp.csr_matrix((vals, (rows, cols)), shape=(n_orb, n_orb))
    V = (V_orb @ C).tocsr()
    V.eliminate_zeros()
    parity = np.concatenate([np.ones(n_even, dtype=int), -np.ones(n_orb - n_even, dtype=int)])
    # column representative: the orbit with the smaller code
    col_rep = np.concatenate([reps[fixed], reps[pair_lo], reps[pair_lo]])
    col_period = np.concatenate([orbit_period[fixed], orbit_period[pair_lo], orbit_period[pair_lo]])
    return SymmetrySector(basis, V, parity, col_rep, col_period)


def expand_to_full(sector: SymmetrySector, v: np.ndarray) -> np.ndarray:
    """Map sector coordinates (vector or column stack) to constrained-basis amplitudes."""
    v = np.asarray(v)
    if v.shape[0] != sector.dim:
        raise BasisError(f"expected {sector.dim} sector coordinates, got {v.shape[0]}")
    return sector.V @ v


def burnside_count(basis: ConstrainedBasis) -> int:
    """Number of translation orbits via Burnside's lemma (independent of orbit search)."""
    total = 0
    for shift in range(basis.D):
        total += int(np.sum(basis.translate_codes(shift=shift) == basis.codes))
    assert total % basis.D == 0
    return total // basis.D


def dimensions(D: int, j: int, dim_cap: int = DEFAULT_DIM_CAP) -> dict:
    basis = enumerate_basis(D, j, dim_cap)
    sec = build_momentum_zero_sector(basis, resolve_parity=True)
    return {"dim_full": basis.dim, "dim_k0": sec.dim, "dim_even": sec.dim_even, "dim_odd": sec.dim_odd}
