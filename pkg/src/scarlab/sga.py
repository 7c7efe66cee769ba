"""Spectrum-generating-algebra diagnostics.

Conventions: for eigenstate i and partner i', ``omega = E_i' - E_i``.  The
denominators use ``(omega - 1)**2`` for the raising ratio and ``(omega + 1)**2``
for the lowering ratio; both are always emitted.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit

from .coherence import DEFAULT_GRID, DEFAULT_MIN_COUNT, DosModel, FitError, bin_plane, fit_inverse_dos
from .operators import SectorOperator, build_sga_operators, project_to_sector, sga_residuals
from .spectral import Spectrum

RESONANCE_TOL = 1e-8
OMEGA_BINS = 60
OMEGA_MIN_COUNT = 10
WINDOW = (0.4, 1.6)


def verify_sga_commutators(basis, sector=None) -> dict:
    """Frobenius residuals of the algebra on the constrained basis, or within a sector."""
    ops = build_sga_operators(basis)
    if sector is None:
        return sga_residuals(ops)
    dense = {k: project_to_sector(v, sector).matrix for k, v in ops.items() if k != "Rk"}
    return sga_residuals(dense)


def offdiagonal_matrix(spectrum: Spectrum, Rk: SectorOperator | np.ndarray) -> np.ndarray:
    """Eigenbasis matrix A[i, i'] = <E_i'|R_k|E_i>, i.e. column i' of row i."""
    M = spectrum.to_eigenbasis(Rk)
    return M.T


def allowed_pairs(spectrum: Spectrum) -> np.ndarray:
    """Mask of (i, i') pairs not forced to vanish by parity: opposite I_SS parity."""
    p = spectrum.parity
    if np.all(p != 0):
        return p[:, None] != p[None, :]
    mask = np.ones((len(p), len(p)), dtype=bool)
    np.fill_diagonal(mask, False)
    return mask


@dataclass
class SgaReport:
    E: np.ndarray
    N: np.ndarray
    n: np.ndarray
    d_plus: np.ndarray
    d_minus: np.ndarray
    r_plus: np.ndarray
    r_minus: np.ndarray
    resonant_plus: int = 0
    resonant_minus: int = 0
    dfit_plus: Optional[np.ndarray] = None
    dfit_minus: Optional[np.ndarray] = None
    diag_max: float = 0.0
    extras: dict = field(default_factory=dict)


def sga_ratios(spectrum: Spectrum, Rk: SectorOperator | np.ndarray, N: Optional[np.ndarray] = None,
               tol: float = RESONANCE_TOL) -> SgaReport:
    """Numerator n_i, denominators d_i^{+/-} and their ratios from R_k matrix elements."""
    A = offdiagonal_matrix(spectrum, Rk)
    diag_max = float(np.abs(np.diag(A)).max()) if len(A) else 0.0
    W = np.abs(A) ** 2
    np.fill_diagonal(W, 0.0)
    E = spectrum.energies
    omega = E[None, :] - E[:, None]
    n = W.sum(axis=1)
    out = {}
    for name, s in (("plus", 1.0), ("minus", -1.0)):
        res = np.abs(omega - s) < tol
        den = np.where(res, 1.0, (omega - s) ** 2)
        out[name] = np.where(res, 0.0, W / den).sum(axis=1)
        out["res_" + name] = int(np.sum(res & (W > 0)))
    with np.errstate(divide="ignore", invalid="ignore"):
        r_plus = np.where(out["plus"] > 0, n / out["plus"], np.nan)
        r_minus = np.where(out["minus"] > 0, n / out["minus"], np.nan)
    Nv = np.full(len(E), np.nan) if N is None else np.asarray(N)
    return SgaReport(E.copy(), Nv, n, out["plus"], out["minus"], r_plus, r_minus,
                     out["res_plus"], out["res_minus"], diag_max=diag_max)


def nonresonant_states(spectrum: Spectrum, tol: float = 1e-6) -> np.ndarray:
    """States with no partner at omega = +1 or -1; only for these do the sum and direct forms agree."""
    E = spectrum.energies
    om = E[None, :] - E[:, None]
    bad = np.any((np.abs(om - 1) < tol) | (np.abs(om + 1) < tol), axis=1)
    return np.nonzero(~bad)[0]


def direct_ratios(spectrum: Spectrum, sector_ops: dict, idx) -> dict:
    """r_i^{+/-} = <R^dag R> / <Q^-/+ Q^+/-> evaluated directly on eigenvectors."""
    C = spectrum.vectors[:, idx]
    R = sector_ops["R"]
    RC = R @ C
    num = np.einsum("ij,ij->j", RC.conj(), RC).real
    out = {}
    for name, key in (("plus", "Qplus"), ("minus", "Qminus")):
        QC = sector_ops[key] @ C
        out[name] = num / np.einsum("ij,ij->j", QC.conj(), QC).real
    return out


def _pair_arrays(spectrum: Spectrum, A: np.ndarray, N: np.ndarray):
    mask = allowed_pairs(spectrum)
    I, K = np.nonzero(mask)
    E = spectrum.energies
    return I, K, E[K] - E[I], (E[I] + E[K]) / 2, (N[I] + N[K]) / 2, np.abs(A[I, K]) ** 2


def offdiag_dos_check(spectrum: Spectrum, Rk, N: np.ndarray, model: DosModel, window=WINDOW,
                      grid=DEFAULT_GRID, min_count: int = DEFAULT_MIN_COUNT):
    """Fit binned 1/|<E_i'|R_k|E_i>|^2 inside an omega window against a * Omega."""
    A = offdiagonal_matrix(spectrum, Rk)
    I, K, om, EE, NN, val = _pair_arrays(spectrum, A, np.asarray(N))
    w = (om > window[0]) & (om < window[1])
    if not w.any():
        raise FitError(f"no pairs with {window[0]} < omega < {window[1]}")
    g = bin_plane(EE[w], NN[w], val[w], grid, min_count)
    return fit_inverse_dos(g, model)


def gaussian(w, A, w0, sigma):
    return A * np.exp(-(w - w0) ** 2 / (2 * sigma ** 2))


@dataclass
class GaussianFit:
    A: float
    omega0: float
    sigma: float
    centers: np.ndarray = field(repr=False)
    means: np.ndarray = field(repr=False)
    counts: np.ndarray = field(repr=False)
    residual_rms: float = 0.0

    def __call__(self, w):
        return gaussian(np.asarray(w), self.A, self.omega0, self.sigma)

    def as_dict(self) -> dict:
        return {"A": self.A, "omega0": self.omega0, "sigma": self.sigma,
                "residual_rms": self.residual_rms, "bins": int(len(self.centers))}


def bin_omega(omega: np.ndarray, values: np.ndarray, n_bins: int = OMEGA_BINS,
              min_count: int = OMEGA_MIN_COUNT):
    """Bin means along omega; bins with fewer than ``min_count`` samples are dropped."""
    edges = np.linspace(omega.min(), omega.max(), n_bins + 1)
    b = np.clip(np.searchsorted(edges, omega, side="right") - 1, 0, n_bins - 1)
    cnt = np.bincount(b, minlength=n_bins)
    ok = cnt >= max(min_count, 1)
    c = cnt[ok]
    return np.bincount(b, omega, n_bins)[ok] / c, np.bincount(b, values, n_bins)[ok] / c, c


def fit_gaussian(centers, means, counts) -> GaussianFit:
    if len(centers) < 4:
        raise FitError(f"only {len(centers)} omega bins for a three-parameter fit")
    k = int(np.argmax(means))
    p0 = [means[k], centers[k], max(np.sqrt(np.average((centers - centers[k]) ** 2, weights=np.maximum(means, 0) + 1e-300)), 1e-3)]
    try:
        with warnings.catch_warnings():
            # the covariance is not used; an exact fit makes it singular
            warnings.simplefilter("ignore", OptimizeWarning)
            p, _ = curve_fit(gaussian, centers, means, p0=p0, maxfev=20000)
    except RuntimeError as exc:
        raise FitError(f"Gaussian fit did not converge: {exc}") from exc
    res = means - gaussian(centers, *p)
    return GaussianFit(float(p[0]), float(p[1]), float(abs(p[2])), centers, means, counts,
                       float(np.sqrt(np.mean(res ** 2))))


def g_samples(spectrum: Spectrum, Rk, N: np.ndarray, model: DosModel, sign: int, pair_dos=None,
              tol: float = RESONANCE_TOL):
    """(omega, |R_k element|^2 * Omega / (omega -/+ 1)^2) over symmetry-allowed pairs."""
    A = offdiagonal_matrix(spectrum, Rk)
    I, K, om, EE, NN, val = _pair_arrays(spectrum, A, np.asarray(N))
    dos_vals = pair_dos[I, K] if pair_dos is not None else model(EE, NN)
    keep = np.abs(om - sign) >= tol
    return om[keep], val[keep] * dos_vals[keep] / (om[keep] - sign) ** 2


def fit_g_omega(spectrum: Spectrum, Rk, N: np.ndarray, model: DosModel, sign: int = 1,
                n_bins: int = OMEGA_BINS, min_count: int = OMEGA_MIN_COUNT, pair_dos=None) -> GaussianFit:
    om, v = g_samples(spectrum, Rk, N, model, sign, pair_dos)
    return fit_gaussian(*bin_omega(om, v, n_bins, min_count))


def estimate_d_fit(spectrum: Spectrum, g, N: np.ndarray, model: DosModel, sign: int = 1,
                   pair_dos=None, tol: float = RESONANCE_TOL) -> np.ndarray:
    """Per-state sum over allowed partners of g(omega) / Omega(midpoint)."""
    E = spectrum.energies
    N = np.asarray(N)
    mask = allowed_pairs(spectrum)
    I, K = np.nonzero(mask)
    om = E[K] - E[I]
    keep = np.abs(om - sign) >= tol
    I, K, om = I[keep], K[keep], om[keep]
    dos_vals = pair_dos[I, K] if pair_dos is not None else model((E[I] + E[K]) / 2, (N[I] + N[K]) / 2)
    return np.bincount(I, g(om) / dos_vals, len(E))


def unimodal_fraction(values: np.ndarray) -> float:
    """Fraction of bins covered by the longest run that rises then falls."""
    v = np.asarray(values)
    n = len(v)
    if n == 0:
        return 0.0
    up = np.ones(n, dtype=int)      # longest non-decreasing run ending at k
    down = np.ones(n, dtype=int)    # longest non-increasing run starting at k
    for k in range(1, n):
        if v[k] >= v[k - 1]:
            up[k] = up[k - 1] + 1
    for k in range(n - 2, -1, -1):
        if v[k] >= v[k + 1]:
            down[k] = down[k + 1] + 1
    return float(np.max(up + down - 1)) / n
