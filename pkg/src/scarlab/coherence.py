"""Cross density matrices, cross coherence purity (CCP) and the kernel DOS on
the energy / quasiparticle-number plane."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import least_squares

from .partial_trace import ccp_matrix, cross_dm, region_split
from .spectral import Spectrum

log = logging.getLogger(__name__)

DEFAULT_GRID = (20, 20)
DEFAULT_MIN_COUNT = 5
WIDTH_STARTS = (0.25, 0.5, 1.0, 2.0, 4.0)


class FitError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# cross density matrices

def cross_reduced_dm(spectrum: Spectrum, i: int, k: int, region: Sequence[int] = (1,)) -> np.ndarray:
    """Tr over the complement of |E_i><E_k| on region A (1-based sites)."""
    n = spectrum.dim
    if not (0 <= i < n and 0 <= k < n):
        raise IndexError(f"state indices ({i}, {k}) outside 0..{n - 1}")
    split = region_split(spectrum.sector.basis, region)
    F = spectrum.full_vectors([i, k])
    return cross_dm(split, F[:, 0], F[:, 1])


def ccp(spectrum: Spectrum, i: int, k: int, region: Sequence[int] = (1,)) -> float:
    rho = cross_reduced_dm(spectrum, i, k, region)
    return float(np.sum(np.abs(rho) ** 2))


def ccp_all(spectrum: Spectrum, region: Sequence[int] = (1,), F: Optional[np.ndarray] = None) -> np.ndarray:
    """CCP for every eigenstate pair as a dense symmetric matrix."""
    split = region_split(spectrum.sector.basis, region)
    F = spectrum.full_vectors() if F is None else F
    T = ccp_matrix(split, F)
    return 0.5 * (T + T.T)


def bound_violations(spectrum: Spectrum, pairs: np.ndarray, region: Sequence[int], n_obs: int,
                     seed: int = 0, F: Optional[np.ndarray] = None) -> dict:
    """Check |<E_i|O|E_k>| <= max|O_l| sqrt(dim A) sqrt(T_ik) for random Hermitian O on A."""
    split = region_split(spectrum.sector.basis, region)
    F = spectrum.full_vectors() if F is None else F
    rng = np.random.default_rng(seed)
    dA = split.dim_A
    pairs = np.asarray(pairs)
    pi, pk = pairs[:, 0], pairs[:, 1]
    # rho[a, b, p] = (Tr |E_i><E_k|)[a, b] for pair p = (i, k)
    rho = np.zeros((dA, dA, len(pairs)), dtype=np.result_type(F, np.complex128))
    for a in range(dA):
        for b in range(dA):
            ra, rb = split.pairing(a, b)
            if len(ra):
                rho[a, b] = np.einsum("rp,rp->p", F[ra][:, pi], F[rb][:, pk].conj())
    T = np.sum(np.abs(rho) ** 2, axis=(0, 1))
    worst = 0.0
    violations = 0
    for _ in range(n_obs):
        A = rng.normal(size=(dA, dA)) + 1j * rng.normal(size=(dA, dA))
        O = (A + A.conj().T) / 2
        # <E_i|O|E_k> = Tr(rho^{k,i} O) = sum_ab rho^{k,i}[a,b] O[b,a], with rho^{k,i} = rho^{i,k}^dagger
        elem = np.einsum("bap,ba->p", rho.conj(), O)
        bound = np.max(np.abs(np.linalg.eigvalsh(O))) * np.sqrt(dA) * np.sqrt(T)
        ratio = np.abs(elem) / np.where(bound > 0, bound, 1.0)
        violations += int(np.sum(np.abs(elem) > bound * (1 + 1e-10) + 1e-14))
        worst = max(worst, float(ratio.max()))
    return {"pairs": len(pairs), "observables": n_obs, "violations": violations, "max_ratio": worst}


# ---------------------------------------------------------------------------
# kernel DOS

@dataclass
class DosModel:
    E: np.ndarray = field(repr=False)
    N: np.ndarray = field(repr=False)
    h1: float = 1.0
    h2: float = 1.0

    def __post_init__(self):
        if not (self.h1 > 0 and self.h2 > 0):
            raise ValueError(f"kernel widths must be positive, got ({self.h1}, {self.h2})")
        self.E = np.asarray(self.E, dtype=float)
        self.N = np.asarray(self.N, dtype=float)

    @classmethod
    def from_states(cls, E, N, h1: Optional[float] = None, h2: Optional[float] = None) -> "DosModel":
        """Widths default to the standard deviations of the state coordinates."""
        E, N = np.asarray(E, float), np.asarray(N, float)
        return cls(E, N, float(h1 if h1 is not None else E.std()), float(h2 if h2 is not None else N.std()))

    @property
    def Z(self) -> float:
        return 1.0 / (2 * np.pi * len(self.E) * self.h1 * self.h2)

    def with_widths(self, h1: float, h2: float) -> "DosModel":
        return DosModel(self.E, self.N, h1, h2)

    def __call__(self, e, n, chunk: int = 2048) -> np.ndarray:
        e = np.asarray(e, dtype=float)
        n = np.asarray(n, dtype=float)
        shape = np.broadcast(e, n).shape
        e, n = np.broadcast_to(e, shape).ravel(), np.broadcast_to(n, shape).ravel()
        out = np.empty(e.size)
        a1, a2 = 0.5 / self.h1 ** 2, 0.5 / self.h2 ** 2
        for s in range(0, e.size, chunk):
            de = e[s:s + chunk, None] - self.E[None, :]
            dn = n[s:s + chunk, None] - self.N[None, :]
            out[s:s + chunk] = np.exp(-a1 * de * de - a2 * dn * dn).sum(axis=1)
        return (self.Z * out).reshape(shape)

    def pair_matrix(self) -> np.ndarray:
        """Omega at the midpoints of every eigenstate pair, as a symmetric matrix."""
        n = len(self.E)
        iu, ku = np.triu_indices(n)
        vals = self((self.E[iu] + self.E[ku]) / 2, (self.N[iu] + self.N[ku]) / 2)
        W = np.empty((n, n))
        W[iu, ku] = vals
        W[ku, iu] = vals
        return W

    def normalization(self, n_grid: int = 401, width: float = 10.0) -> float:
        """Trapezoid integral of Omega over a box extending ``width`` kernel widths."""
        e = np.linspace(self.E.min() - width * self.h1, self.E.max() + width * self.h1, n_grid)
        n = np.linspace(self.N.min() - width * self.h2, self.N.max() + width * self.h2, n_grid)
        # separable kernel: integrate each axis and sum over states
        ge = np.exp(-(e[:, None] - self.E[None, :]) ** 2 / (2 * self.h1 ** 2))
        gn = np.exp(-(n[:, None] - self.N[None, :]) ** 2 / (2 * self.h2 ** 2))
        ie = np.trapezoid(ge, e, axis=0)
        inn = np.trapezoid(gn, n, axis=0)
        return float(self.Z * np.sum(ie * inn))


def dos(model: DosModel, e, n) -> np.ndarray:
    return model(e, n)


# ---------------------------------------------------------------------------
# pair samples

@dataclass
class PairSamples:
    """Unordered eigenstate pairs i < k with midpoint, differences and a value."""

    i: np.ndarray
    k: np.ndarray
    E: np.ndarray
    N: np.ndarray
    omega: np.ndarray
    nu: np.ndarray
    value: np.ndarray

    def __len__(self) -> int:
        return len(self.i)

    def subset(self, mask) -> "PairSamples":
        return PairSamples(*(getattr(self, f)[mask] for f in ("i", "k", "E", "N", "omega", "nu", "value")))


def pair_samples(E, N, values: Optional[np.ndarray] = None, pairs: Optional[np.ndarray] = None) -> PairSamples:
    """Pairs from the upper triangle (or explicit ``pairs``); values from a matrix."""
    E, N = np.asarray(E, float), np.asarray(N, float)
    if pairs is None:
        i, k = np.triu_indices(len(E), 1)
    else:
        i, k = np.asarray(pairs)[:, 0], np.asarray(pairs)[:, 1]
    v = np.full(len(i), np.nan) if values is None else np.asarray(values)[i, k]
    return PairSamples(i, k, (E[i] + E[k]) / 2, (N[i] + N[k]) / 2, E[i] - E[k], N[i] - N[k], v)


def mahalanobis_sq(omega: np.ndarray, nu: np.ndarray) -> np.ndarray:
    """Squared Mahalanobis radius under the Gaussian fitted to the symmetric (omega, nu) cloud.

    Every unordered pair stands for the two ordered pairs (omega, nu) and
    (-omega, -nu), so the surrogate Gaussian is centred at the origin.
    """
    cov = np.array([[np.mean(omega * omega), np.mean(omega * nu)],
                    [np.mean(omega * nu), np.mean(nu * nu)]])
    if np.linalg.det(cov) <= 1e-14 * max(np.trace(cov) ** 2, 1e-300):
        raise FitError("degenerate (omega, nu) covariance")
    ci = np.linalg.inv(cov)
    return ci[0, 0] * omega ** 2 + 2 * ci[0, 1] * omega * nu + ci[1, 1] * nu ** 2


def select_pairs_by_density(samples: PairSamples, percentile: float) -> np.ndarray:
    """Boolean mask of pairs inside the equal-density ellipse holding ``percentile`` % of them."""
    if not 0 < percentile <= 100:
        raise ValueError(f"percentile must be in (0, 100], got {percentile}")
    d2 = mahalanobis_sq(samples.omega, samples.nu)
    if percentile >= 100:
        return np.ones(len(d2), dtype=bool)
    cut = np.percentile(d2, percentile)
    mask = d2 <= cut
    if not mask.any():
        mask[np.argmin(d2)] = True
    return mask


# ---------------------------------------------------------------------------
# binning and fits

@dataclass
class GridMeans:
    E: np.ndarray
    N: np.ndarray
    value: np.ndarray
    count: np.ndarray


def bin_plane(e, n, v, grid=DEFAULT_GRID, min_count: int = DEFAULT_MIN_COUNT) -> GridMeans:
    """Per-bin means of (e, n, v) on a uniform grid spanning the samples."""
    e, n, v = (np.asarray(x, float) for x in (e, n, v))
    ge, gn = grid
    eb = np.linspace(e.min(), e.max(), ge + 1)
    nb = np.linspace(n.min(), n.max(), gn + 1)
    ie = np.clip(np.searchsorted(eb, e, side="right") - 1, 0, ge - 1)
    inn = np.clip(np.searchsorted(nb, n, side="right") - 1, 0, gn - 1)
    key = ie * gn + inn
    cnt = np.bincount(key, minlength=ge * gn)
    ok = cnt >= min_count
    c = cnt[ok]
    return GridMeans(np.bincount(key, e, ge * gn)[ok] / c,
                     np.bincount(key, n, ge * gn)[ok] / c,
                     np.bincount(key, v, ge * gn)[ok] / c, c)


@dataclass
class InverseDosFit:
    a: float
    h1: float
    h2: float
    r2: float
    r2_linear: float
    n_bins: int
    grid: GridMeans = field(repr=False, default=None)

    def as_dict(self) -> dict:
        return {"a": self.a, "h1": self.h1, "h2": self.h2, "r2": self.r2,
                "r2_linear": self.r2_linear, "n_bins": self.n_bins}


def fit_inverse_dos(grid: GridMeans, model: DosModel, min_bins: int = 11) -> InverseDosFit:
    """Fit 1/value ~ a * Omega(E, N; h1, h2) by least squares in log space.

    ``r2`` is the coefficient of determination of the log-space regression;
    ``r2_linear`` is computed on 1/value itself.
    """
    if len(grid.value) < min_bins:
        raise FitError(f"only {len(grid.value)} occupied bins, need {min_bins}")
    if np.any(grid.value <= 0):
        raise FitError("non-positive bin means")
    y = -np.log(grid.value)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot <= 1e-24 * max(1.0, float(np.sum(y ** 2))):
        raise FitError("constant target: fit is degenerate")

    def resid(x):
        m = model.with_widths(np.exp(x[1]), np.exp(x[2]))
        # floor keeps residuals finite when trial widths underflow the model
        return y - x[0] - np.log(np.maximum(m(grid.E, grid.N), 1e-300))

    # seeded at the given widths, then restarted from scaled widths to escape local minima
    sol = None
    for f1 in WIDTH_STARTS:
        for f2 in WIDTH_STARTS:
            m0 = model.with_widths(model.h1 * f1, model.h2 * f2)
            x0 = np.array([np.mean(y - np.log(m0(grid.E, grid.N))), np.log(m0.h1), np.log(m0.h2)])
            trial = least_squares(resid, x0, x_scale="jac", max_nfev=2000)
            if trial.success and (sol is None or trial.cost < sol.cost):
                sol = trial
    if sol is None:
        raise FitError("fit did not converge from any starting widths")
    r2 = 1.0 - float(np.sum(sol.fun ** 2)) / ss_tot
    a, h1, h2 = np.exp(sol.x)
    pred = a * model.with_widths(h1, h2)(grid.E, grid.N)
    inv = 1.0 / grid.value
    r2_lin = 1.0 - float(np.sum((inv - pred) ** 2) / np.sum((inv - inv.mean()) ** 2))
    return InverseDosFit(float(a), float(h1), float(h2), r2, r2_lin, len(y), grid)


def fit_ccp_vs_dos(samples: PairSamples, model: DosModel, grid=DEFAULT_GRID,
                   min_count: int = DEFAULT_MIN_COUNT) -> InverseDosFit:
    g = bin_plane(samples.E, samples.N, samples.value, grid, min_count)
    return fit_inverse_dos(g, model)
