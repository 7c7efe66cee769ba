"""Partial traces of states stored on the constrained basis.

A constrained basis state factorizes uniquely into a region-A configuration
``a`` and a complement configuration ``r``; only (a, r) combinations present in
the basis carry amplitude.  Cross blocks are therefore computed by pairing rows
that share the same complement configuration.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .basis import ConstrainedBasis


class RegionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RegionSplit:
    basis: ConstrainedBasis
    sites: tuple
    a_index: np.ndarray = field(repr=False)
    r_index: np.ndarray = field(repr=False)
    n_rest: int = 0

    @property
    def dim_A(self) -> int:
        return self.basis.local_dim ** len(self.sites)

    def rows_for(self, a: int) -> tuple[np.ndarray, np.ndarray]:
        """(basis rows, complement ids) of states whose region digits equal ``a``."""
        rows = np.nonzero(self.a_index == a)[0]
        return rows, self.r_index[rows]

    def pairing(self, a: int, b: int) -> tuple[np.ndarray, np.ndarray]:
        """Row pairs (with region a, with region b) sharing a complement configuration."""
        ra, ca = self.rows_for(a)
        rb, cb = self.rows_for(b)
        common, ia, ib = np.intersect1d(ca, cb, assume_unique=True, return_indices=True)
        return ra[ia], rb[ib]


def region_split(basis: ConstrainedBasis, sites: Sequence[int]) -> RegionSplit:
    """Split on 1-based ``sites`` of region A."""
    sites = tuple(int(s) for s in sites)
    if not sites:
        raise RegionError("region A must be nonempty")
    if len(set(sites)) != len(sites) or any(not 1 <= s <= basis.D for s in sites):
        raise RegionError(f"region {sites} invalid for D={basis.D}")
    d = basis.local_dim
    dig = basis.digits()
    idx = [s - 1 for s in sites]
    a = np.zeros(basis.dim, dtype=np.int64)
    for s in idx:
        a = a * d + dig[:, s]
    rest = [k for k in range(basis.D) if k not in idx]
    rc = np.zeros(basis.dim, dtype=np.int64)
    for s in rest:
        rc = rc * d + dig[:, s]
    uniq, r = np.unique(rc, return_inverse=True)
    return RegionSplit(basis, sites, a, r.astype(np.int64), len(uniq))


def reduced_dms(split: RegionSplit, F: np.ndarray) -> np.ndarray:
    """Reduced density matrices of every column of ``F`` (full-basis amplitudes).

    Returns an array of shape (n_states, dA, dA).
    """
    if F.ndim == 1:
        F = F[:, None]
    dA = split.dim_A
    n = F.shape[1]
    dtype = np.result_type(F.dtype, np.float64)
    out = np.zeros((n, dA, dA), dtype=np.complex128 if np.iscomplexobj(F) else dtype)
    for a in range(dA):
        for b in range(a, dA):
            ra, rb = split.pairing(a, b)
            if len(ra) == 0:
                continue
            val = np.einsum("ri,ri->i", F[ra], F[rb].conj())
            out[:, a, b] = val
            if b != a:
                out[:, b, a] = val.conj()
    return out


def mixture_dm(split: RegionSplit, F: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return np.einsum("i,iab->ab", weights, reduced_dms(split, F))


def cross_dm(split: RegionSplit, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Tr_{not A} |u><v| for two full-basis vectors."""
    dA = split.dim_A
    out = np.zeros((dA, dA), dtype=np.result_type(u, v))
    for a in range(dA):
        for b in range(dA):
            ra, rb = split.pairing(a, b)
            if len(ra):
                out[a, b] = np.dot(u[ra], v[rb].conj())
    return out


def cross_blocks(split: RegionSplit, F: np.ndarray, G: np.ndarray | None = None) -> np.ndarray:
    """All cross reduced matrices between columns of F and of G.

    Returns X with X[a, b, i, k] = (Tr_{not A} |F_i><G_k|)[a, b].
    """
    G = F if G is None else G
    dA = split.dim_A
    X = np.zeros((dA, dA, F.shape[1], G.shape[1]), dtype=np.result_type(F, G))
    for a in range(dA):
        for b in range(dA):
            ra, rb = split.pairing(a, b)
            if len(ra):
                X[a, b] = F[ra].T @ G[rb].conj()
    return X


def ccp_matrix(split: RegionSplit, F: np.ndarray, G: np.ndarray | None = None) -> np.ndarray:
    """Cross coherence purity between every column of F and every column of G."""
    G = F if G is None else G
    dA = split.dim_A
    T = np.zeros((F.shape[1], G.shape[1]))
    for a in range(dA):
        for b in range(dA):
            ra, rb = split.pairing(a, b)
            if len(ra):
                blk = F[ra].T @ G[rb].conj()
                T += (blk * blk.conj()).real
    return T
