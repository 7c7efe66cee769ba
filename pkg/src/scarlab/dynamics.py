"""Quench dynamics in the eigenbasis.

Everything is evaluated from the eigendecomposition: time series exactly, long
time averages and fluctuations through degeneracy-grouped sums.  A trapezoid
time integration is kept as an independent check of the long-time formulas.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .basis import SymmetrySector, codes_to_digits, translation_orbits
from .operators import SectorOperator
from .spectral import DEGENERACY_RTOL, Spectrum

ORACLE_T = 1e4
ORACLE_DT = 0.05


class DynamicsError(ValueError):
    pass


@dataclass
class TimeSeries:
    times: np.ndarray
    values: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise DynamicsError("times must be strictly increasing")


def make_initial_state(spec, sector: SymmetrySector) -> np.ndarray:
    """Normalized momentum-zero vector for ``psi1``, ``psi2``, ``("product", ms)`` or ``("raw", v)``."""
    basis = sector.basis
    if isinstance(spec, str):
        spec = (spec,)
    kind = spec[0]
    if kind == "psi1":
        ms = [basis.j] * basis.D
    elif kind == "psi2":
        ms = [basis.j] * basis.D
        ms[0] = basis.j - 1
    elif kind == "product":
        ms = list(spec[1])
    elif kind == "raw":
        v = np.asarray(spec[1])
        if v.shape != (sector.dim,):
            raise DynamicsError(f"raw vector must have {sector.dim} entries")
        return v / np.linalg.norm(v)
    else:
        raise DynamicsError(f"unknown initial state kind {kind!r}")
    if len(ms) != basis.D:
        raise DynamicsError(f"product state needs {basis.D} entries, got {len(ms)}")
    idx = basis.index_of(ms)
    if idx is None:
        raise DynamicsError(f"product state {ms} violates the blockade")
    full = np.zeros(basis.dim)
    full[idx] = 1.0
    v = sector.project(full)
    return v / np.linalg.norm(v)


def orbit_product_states(sector: SymmetrySector) -> list[tuple[tuple, np.ndarray]]:
    """One (m-sequence, sector vector) per translation orbit of product states."""
    basis = sector.basis
    rep, _ = translation_orbits(basis)
    reps = np.unique(rep)
    digits = codes_to_digits(reps, basis.D, basis.local_dim)
    out = []
    for row in digits:
        ms = tuple(int(a) - basis.j for a in row)
        out.append((ms, make_initial_state(("product", ms), sector)))
    return out


def _check(spectrum: Spectrum, psi0: np.ndarray) -> np.ndarray:
    psi0 = np.asarray(psi0)
    if psi0.shape != (spectrum.dim,):
        raise DynamicsError(f"state has shape {psi0.shape}, sector dimension is {spectrum.dim}")
    return spectrum.coefficients(psi0)


def _eig_op(spectrum: Spectrum, op) -> np.ndarray:
    M = op.matrix if isinstance(op, SectorOperator) else np.asarray(op)
    if M.shape != (spectrum.dim, spectrum.dim):
        raise DynamicsError(f"operator shape {M.shape} does not match sector dimension {spectrum.dim}")
    return spectrum.to_eigenbasis(M)


def evolve_expectation(spectrum: Spectrum, psi0: np.ndarray, op, times, chunk: int = 512,
                       O_eig: Optional[np.ndarray] = None) -> TimeSeries:
    """O(t) = sum_{i,i'} c_i^* c_i' exp(i(E_i - E_i')t) O_{i,i'}."""
    c = _check(spectrum, psi0)
    O = _eig_op(spectrum, op) if O_eig is None else O_eig
    times = np.asarray(times, dtype=float)
    E = spectrum.energies
    keep = np.abs(c) > 0
    c, E, O = c[keep], E[keep], O[np.ix_(keep, keep)]
    vals = np.empty(len(times), dtype=complex)
    for s in range(0, len(times), chunk):
        t = times[s:s + chunk]
        A = c[:, None] * np.exp(-1j * np.outer(E, t))
        vals[s:s + chunk] = np.einsum("it,it->t", A.conj(), O @ A)
    if len(vals) and np.abs(vals.imag).max() > 1e-10 * max(1.0, np.abs(O).max()):
        raise DynamicsError(f"imaginary residue {np.abs(vals.imag).max():.2e} (operator not Hermitian?)")
    return TimeSeries(times, vals.real.copy())


def fidelity_series(spectrum: Spectrum, psi0: np.ndarray, times, chunk: int = 4096) -> TimeSeries:
    c = _check(spectrum, psi0)
    p = np.abs(c) ** 2
    times = np.asarray(times, dtype=float)
    out = np.empty(len(times))
    for s in range(0, len(times), chunk):
        t = times[s:s + chunk]
        out[s:s + chunk] = np.abs(p @ np.exp(-1j * np.outer(spectrum.energies, t))) ** 2
    return TimeSeries(times, out)


def _group_blocks(spectrum: Spectrum, rtol: float):
    groups = spectrum.degenerate_groups(rtol)
    return [np.nonzero(groups == g)[0] for g in np.unique(groups)]


def long_time_average(spectrum: Spectrum, psi0: np.ndarray, op, rtol: float = DEGENERACY_RTOL,
                      O_eig: Optional[np.ndarray] = None) -> float:
    """Diagonal-ensemble average with degenerate eigenspaces treated as blocks."""
    c = _check(spectrum, psi0)
    O = _eig_op(spectrum, op) if O_eig is None else O_eig
    total = 0.0
    for idx in _group_blocks(spectrum, rtol):
        cg = c[idx]
        total += (cg.conj() @ O[np.ix_(idx, idx)] @ cg).real
    return float(total / np.sum(np.abs(c) ** 2))


def _pair_weights(spectrum: Spectrum, c: np.ndarray, rtol: float) -> np.ndarray:
    """|c_i|^2 |c_i'|^2 with pairs inside one degenerate group removed."""
    p = np.abs(c) ** 2
    W = np.outer(p, p)
    groups = spectrum.degenerate_groups(rtol)
    W[groups[:, None] == groups[None, :]] = 0.0
    return W


def _group_starts(spectrum: Spectrum, rtol: float) -> np.ndarray:
    groups = spectrum.degenerate_groups(rtol)
    return np.concatenate([[0], np.nonzero(np.diff(groups))[0] + 1])


def fluctuation_exact(spectrum: Spectrum, psi0: np.ndarray, op, rtol: float = DEGENERACY_RTOL,
                      O_eig: Optional[np.ndarray] = None) -> float:
    """sum over distinct degenerate groups g != g' of |<P_g psi|O|P_g' psi>|^2."""
    c = _check(spectrum, psi0)
    O = _eig_op(spectrum, op) if O_eig is None else O_eig
    return _grouped_offdiag(c.conj()[:, None] * O * c[None, :], _group_starts(spectrum, rtol))


def _grouped_offdiag(X: np.ndarray, starts: np.ndarray) -> float:
    # energies are sorted, so degenerate groups are contiguous index ranges
    if len(starts) < X.shape[0]:
        X = np.add.reduceat(np.add.reduceat(X, starts, axis=0), starts, axis=1)
    A = np.abs(X) ** 2
    return float(A.sum() - np.trace(A))


def fluctuation_time_oracle(spectrum: Spectrum, psi0: np.ndarray, op, T: float = ORACLE_T,
                            dt: float = ORACLE_DT, O_eig: Optional[np.ndarray] = None) -> tuple[float, float]:
    """(time average, time variance) of O(t) on [0, T] by the trapezoid rule."""
    times = np.arange(0.0, T + dt / 2, dt)
    series = evolve_expectation(spectrum, psi0, op, times, O_eig=O_eig).values
    mean = np.trapezoid(series, times) / T
    var = np.trapezoid((series - mean) ** 2, times) / T
    return float(mean), float(var)


def fluctuation_gap_resolved(spectrum: Spectrum, psi0: np.ndarray, op, gap_tol: float = 1e-7,
                             rtol: float = DEGENERACY_RTOL, O_eig: Optional[np.ndarray] = None) -> float:
    """Infinite-time variance with equal gaps summed coherently.

    Diagnostic only: gaps closer than ``gap_tol`` are merged, so the value is
    what a long enough time average converges to when the spectrum has
    repeated gaps (the E -> -E symmetry guarantees many).
    """
    c = _check(spectrum, psi0)
    O = _eig_op(spectrum, op) if O_eig is None else O_eig
    X = c.conj()[:, None] * O * c[None, :]
    E = spectrum.energies
    groups = spectrum.degenerate_groups(rtol)
    off = groups[:, None] != groups[None, :]
    w = (E[None, :] - E[:, None])[off]
    keys = np.round(w / gap_tol).astype(np.int64)
    _, inv = np.unique(keys, return_inverse=True)
    s = np.zeros(inv.max() + 1, dtype=complex) if len(inv) else np.zeros(0, dtype=complex)
    np.add.at(s, inv, X[off])
    return float(np.sum(np.abs(s) ** 2))


def fluctuation_estimate(spectrum: Spectrum, psi0: np.ndarray, kernel: np.ndarray,
                         rtol: float = DEGENERACY_RTOL) -> float:
    """sum_{i != i'} |c_i|^2 |c_i'|^2 K_{i,i'} for a pair kernel (1/Omega or CCP)."""
    c = _check(spectrum, psi0)
    return float(np.sum(_pair_weights(spectrum, c, rtol) * kernel))


def temporal_fluctuation(spectrum: Spectrum, psi0: np.ndarray, op, dos_kernel: Optional[np.ndarray] = None,
                         ccp_kernel: Optional[np.ndarray] = None, oracle: bool = False,
                         O_eig: Optional[np.ndarray] = None, **oracle_kw) -> dict:
    """Squared temporal fluctuation: exact sum plus whichever estimates are requested."""
    O = _eig_op(spectrum, op) if O_eig is None else O_eig
    out = {"exact": fluctuation_exact(spectrum, psi0, op, O_eig=O)}
    out["oracle"] = fluctuation_time_oracle(spectrum, psi0, op, O_eig=O, **oracle_kw)[1] if oracle else None
    out["dos"] = fluctuation_estimate(spectrum, psi0, dos_kernel) if dos_kernel is not None else None
    out["ccp"] = fluctuation_estimate(spectrum, psi0, ccp_kernel) if ccp_kernel is not None else None
    return out


def fluctuation_table(spectrum: Spectrum, states: np.ndarray, O_eig: np.ndarray,
                      dos_kernel: Optional[np.ndarray] = None, ccp_kernel: Optional[np.ndarray] = None,
                      rtol: float = DEGENERACY_RTOL) -> dict:
    """Long-time averages and squared fluctuations for many states (columns of ``states``)."""
    C = spectrum.coefficients(states)
    starts = _group_starts(spectrum, rtol)
    groups = spectrum.degenerate_groups(rtol)
    same = groups[:, None] == groups[None, :]
    P = np.abs(C) ** 2
    out = {"longtime": np.empty(C.shape[1]), "exact": np.empty(C.shape[1])}
    for s in range(C.shape[1]):
        c = C[:, s]
        X = c.conj()[:, None] * O_eig * c[None, :]
        out["longtime"][s] = X[same].sum().real / P[:, s].sum()
        out["exact"][s] = _grouped_offdiag(X, starts)
    for name, K in (("dos", dos_kernel), ("ccp", ccp_kernel)):
        if K is None:
            continue
        K = np.where(same, 0.0, K)
        out[name] = np.einsum("is,is->s", P, K @ P)
    return out


def inverse_dos_kernel(pair_dos: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        K = np.where(pair_dos > 0, 1.0 / pair_dos, 0.0)
    np.fill_diagonal(K, 0.0)
    return K
