"""Sector diagonalization, eigenstate tables, scar tagging and EEV surface fits."""
from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from . import __version__
from .basis import SymmetrySector, build_momentum_zero_sector, enumerate_basis
from .operators import SectorOperator

CACHE_FORMAT = 1
DEGENERACY_RTOL = 1e-10


class SpectralError(RuntimeError):
    pass


class CacheError(SpectralError):
    pass


@dataclass(eq=False)
class Spectrum:
    sector: SymmetrySector = field(repr=False)
    energies: np.ndarray = field(repr=False)
    vectors: np.ndarray = field(repr=False)
    parity: np.ndarray = field(repr=False)
    h_norm: float = 1.0

    @property
    def dim(self) -> int:
        return len(self.energies)

    @property
    def D(self) -> int:
        return self.sector.basis.D

    @property
    def j(self) -> int:
        return self.sector.basis.j

    def full_vectors(self, idx=None) -> np.ndarray:
        """Eigenvectors expanded to constrained-basis amplitudes (columns)."""
        C = self.vectors if idx is None else self.vectors[:, idx]
        return self.sector.V @ C

    def to_eigenbasis(self, op: SectorOperator | np.ndarray) -> np.ndarray:
        M = op.matrix if isinstance(op, SectorOperator) else np.asarray(op)
        C = self.vectors
        return C.conj().T @ M @ C

    def coefficients(self, psi: np.ndarray) -> np.ndarray:
        """Eigenbasis amplitudes c_i = <E_i|psi> of a sector vector."""
        return self.vectors.conj().T @ psi

    def degenerate_groups(self, rtol: float = DEGENERACY_RTOL) -> np.ndarray:
        """Group label per eigenvalue; consecutive levels closer than rtol*||H|| merge."""
        tol = rtol * self.h_norm
        gaps = np.diff(self.energies) > tol
        return np.concatenate([[0], np.cumsum(gaps)])


def _fix_phase(vecs: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(vecs) - 1e-12 * np.arange(vecs.shape[0])[:, None], axis=0)
    ph = vecs[idx, np.arange(vecs.shape[1])]
    return vecs * (np.abs(ph) / ph)[None, :]


def diagonalize(op: SectorOperator, sector: Optional[SymmetrySector] = None,
                merge_parity: bool = False, check: bool = True) -> Spectrum:
    """Dense eigendecomposition, block by block when parity labels are present."""
    M = op.matrix
    if not np.allclose(M, M.conj().T, atol=1e-12 * max(1.0, np.abs(M).max())):
        raise SpectralError("sector matrix is not Hermitian")
    real = not np.iscomplexobj(M) or np.abs(M.imag).max() < 1e-14
    if real:
        M = M.real
    parity = op.parity if not merge_parity else np.zeros(op.dim, dtype=int)
    labels = np.unique(parity)

    n = op.dim
    vecs = np.zeros((n, n), dtype=M.dtype)
    vals = np.zeros(n)
    par = np.zeros(n, dtype=int)
    col = 0
    for p in labels[::-1]:
        idx = np.nonzero(parity == p)[0]
        try:
            w, v = np.linalg.eigh(M[np.ix_(idx, idx)])
        except np.linalg.LinAlgError as exc:
            raise SpectralError(f"eigensolver failed on parity block {p}") from exc
        m = len(idx)
        vals[col:col + m] = w
        vecs[idx, col:col + m] = v
        par[col:col + m] = p
        col += m
    order = np.argsort(vals, kind="stable")
    vals, vecs, par = vals[order], _fix_phase(vecs[:, order]), par[order]
    h_norm = float(np.linalg.norm(M, 2)) if n else 1.0
    if check and n:
        res = np.linalg.norm(M @ vecs - vecs * vals[None, :], axis=0)
        if res.max() > 1e-10 * max(h_norm, 1.0):
            raise SpectralError(f"eigenpair residual {res.max():.3e} too large")
    return Spectrum(sector, vals, vecs, par, h_norm)


def align_degenerate(spectrum: Spectrum, reference: np.ndarray,
                     rtol: float = DEGENERACY_RTOL) -> Spectrum:
    """Rotate every degenerate same-parity eigenspace so that the projection of
    ``reference`` lies along its first vector.

    Eigenvalues and the spanned subspaces are unchanged; only the arbitrary
    basis inside exact degeneracies is fixed.
    """
    vecs = spectrum.vectors.copy()
    if np.iscomplexobj(reference) and not np.iscomplexobj(vecs):
        if np.abs(np.imag(reference)).max() > 0:
            vecs = vecs.astype(complex)
        else:
            reference = reference.real
    groups = spectrum.degenerate_groups(rtol)
    for g in np.unique(groups):
        for p in np.unique(spectrum.parity):
            idx = np.nonzero((groups == g) & (spectrum.parity == p))[0]
            if len(idx) < 2:
                continue
            B = vecs[:, idx]
            c = B.conj().T @ reference
            if np.linalg.norm(c) < 1e-12:
                continue
            # orthonormal basis of the block with c/|c| as first coordinate vector
            Q, _ = np.linalg.qr(np.column_stack([c, np.eye(len(idx), dtype=c.dtype)]))
            Q = Q[:, :len(idx)]
            if np.vdot(Q[:, 0], c).real < 0:
                Q[:, 0] *= -1
            vecs[:, idx] = B @ Q
    return Spectrum(spectrum.sector, spectrum.energies.copy(), _fix_phase(vecs),
                    spectrum.parity.copy(), spectrum.h_norm)


@dataclass(eq=False)
class EEVTable:
    E: np.ndarray
    N: np.ndarray
    parity: np.ndarray
    observables: dict = field(default_factory=dict)
    overlaps: dict = field(default_factory=dict)
    scar: np.ndarray = None

    def __post_init__(self):
        if self.scar is None:
            self.scar = np.zeros(len(self.E), dtype=bool)

    def __len__(self) -> int:
        return len(self.E)


def expectation_values(spectrum: Spectrum, op: SectorOperator) -> np.ndarray:
    M = op.matrix if isinstance(op, SectorOperator) else op
    C = spectrum.vectors
    return np.einsum("ij,ij->j", C.conj(), M @ C).real


def eev_table(spectrum: Spectrum, number_op: SectorOperator,
              observables: Mapping[str, SectorOperator] = (),
              references: Mapping[str, np.ndarray] = ()) -> EEVTable:
    if number_op.dim != spectrum.dim:
        raise SpectralError(f"operator dim {number_op.dim} != spectrum dim {spectrum.dim}")
    N = expectation_values(spectrum, number_op)
    obs = {}
    for name, op in dict(observables).items():
        if op.dim != spectrum.dim:
            raise SpectralError(f"observable {name} has dim {op.dim}, spectrum {spectrum.dim}")
        obs[name] = expectation_values(spectrum, op)
    ovl = {}
    for name, psi in dict(references).items():
        psi = np.asarray(psi)
        if psi.shape[0] != spectrum.dim:
            raise SpectralError(f"reference {name} has dim {psi.shape[0]}, spectrum {spectrum.dim}")
        ovl[name] = np.abs(spectrum.coefficients(psi)) ** 2
    return EEVTable(spectrum.energies.copy(), N, spectrum.parity.copy(), obs, ovl)


def tag_scars(energies: np.ndarray, overlap: np.ndarray, theta: float = 1e-2,
              bin_width: float = 1.0) -> np.ndarray:
    """Indices of scar states: per unit-width bin centred on integer energies,
    the largest-overlap state if its overlap exceeds ``theta * max(overlap)``."""
    energies = np.asarray(energies)
    overlap = np.asarray(overlap)
    if len(energies) == 0:
        return np.zeros(0, dtype=int)
    cut = theta * overlap.max()
    bins = np.floor(energies / bin_width + 0.5).astype(int)
    out = []
    for b in np.unique(bins):
        idx = np.nonzero(bins == b)[0]
        best = idx[np.argmax(overlap[idx])]
        if overlap[best] >= cut:
            out.append(best)
    return np.array(sorted(out), dtype=int)


def _monomials(x: np.ndarray, y: Optional[np.ndarray], degree: int) -> np.ndarray:
    cols = []
    if y is None:
        for p in range(degree + 1):
            cols.append(x ** p)
    else:
        for total in range(degree + 1):
            for q in range(total + 1):
                cols.append(x ** (total - q) * y ** q)
    return np.stack(cols, axis=1)


@dataclass
class SurfaceFit:
    mode: str
    degree: int
    coefficients: np.ndarray
    deviation: np.ndarray
    rmse: float
    scale: tuple

    def predict(self, E, N=None) -> np.ndarray:
        (e0, es), (n0, ns) = self.scale
        x = (np.asarray(E) - e0) / es
        y = None if self.mode == "energy" else (np.asarray(N) - n0) / ns
        return _monomials(x, y, self.degree) @ self.coefficients


def fit_eev_surface(E: np.ndarray, N: np.ndarray, values: np.ndarray,
                    mode: str = "energy-number", degree: int = 4) -> SurfaceFit:
    """Least-squares polynomial of E (``mode='energy'``) or of (E, N) in total degree."""
    if mode not in ("energy", "energy-number"):
        raise ValueError(f"unknown mode {mode!r}")
    E, N, values = map(np.asarray, (E, N, values))
    if len(E) < (degree + 1) ** 2:
        raise SpectralError(f"need at least {(degree + 1) ** 2} states for degree {degree}")
    scale_e = (E.mean(), E.std() or 1.0)
    scale_n = (N.mean(), N.std() or 1.0)
    x = (E - scale_e[0]) / scale_e[1]
    y = None if mode == "energy" else (N - scale_n[0]) / scale_n[1]
    A = _monomials(x, y, degree)
    coef, _, rank, _ = np.linalg.lstsq(A, values, rcond=None)
    if rank < A.shape[1]:
        raise SpectralError(f"design matrix rank {rank} < {A.shape[1]}")
    dev = values - A @ coef
    return SurfaceFit(mode, degree, coef, dev, float(np.sqrt(np.mean(dev ** 2))), (scale_e, scale_n))


# ---------------------------------------------------------------------------
# cache

def _digest(arrays: Mapping[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for k in sorted(arrays):
        h.update(k.encode())
        h.update(np.ascontiguousarray(arrays[k]).tobytes())
    return h.hexdigest()


def cache_store(spectrum: Spectrum, path) -> Path:
    path = Path(path)
    arrays = {"energies": spectrum.energies, "vectors": spectrum.vectors, "parity": spectrum.parity}
    meta = {
        "format": CACHE_FORMAT,
        "code_version": __version__,
        "D": spectrum.D,
        "j": spectrum.j,
        "sector": spectrum.sector.key(),
        "resolved": spectrum.sector.resolved,
        "h_norm": spectrum.h_norm,
        "sha256": _digest(arrays),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    np.savez(buf, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)
    return path


def cache_load(path, D: Optional[int] = None, j: Optional[int] = None,
               sector_key: Optional[str] = None, sector: Optional[SymmetrySector] = None) -> Spectrum:
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            arrays = {k: z[k] for k in ("energies", "vectors", "parity")}
    except (OSError, ValueError, KeyError, zipfile.BadZipFile, EOFError) as exc:
        raise CacheError(f"cannot read cache {path}: {exc}") from exc
    if meta.get("format") != CACHE_FORMAT:
        raise CacheError(f"cache format {meta.get('format')} != {CACHE_FORMAT}")
    if meta.get("code_version") != __version__:
        raise CacheError(f"cache written by version {meta.get('code_version')}, running {__version__}")
    if _digest(arrays) != meta["sha256"]:
        raise CacheError("cache checksum mismatch")
    for name, want in (("D", D), ("j", j), ("sector", sector_key)):
        if want is not None and meta[name] != want:
            raise CacheError(f"cache holds {name}={meta[name]!r}, requested {want!r}")
    if sector is None:
        sector = build_momentum_zero_sector(enumerate_basis(meta["D"], meta["j"]), meta["resolved"])
    elif sector.key() != meta["sector"]:
        raise CacheError(f"cache holds sector {meta['sector']}, requested {sector.key()}")
    return Spectrum(sector, arrays["energies"], arrays["vectors"], arrays["parity"], meta["h_norm"])
