"""Canonical and grand-canonical-like ensembles over eigenstates.

Weights are w_i ~ exp(-beta (E_i - mu N_i)).  The grand problem is solved in the
natural parameters theta = (-beta, beta*mu), where log Z is convex and its
gradient and Hessian are the mean and covariance of (E, N).

Targets on the boundary of the convex hull of {(E_i, N_i)} cannot be reached at
finite (beta, mu).  They are answered with the limiting distribution, which lives
on the hull face (or vertex) containing the target, and a flag saying which
parameter diverged.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.spatial import ConvexHull, QhullError

log = logging.getLogger(__name__)

MAX_ITER = 100


class EnsembleError(ValueError):
    pass


class InfeasibleTarget(EnsembleError):
    pass


@dataclass
class EnsembleSolution:
    kind: str
    beta: float
    mu: float
    weights: np.ndarray = field(repr=False)
    residuals: tuple = (0.0, 0.0)
    flag: str = "ok"
    iterations: int = 0

    def average(self, values: np.ndarray) -> float:
        return float(self.weights @ np.asarray(values))


def _levels(obj) -> np.ndarray:
    return np.asarray(obj.energies if hasattr(obj, "energies") else obj, dtype=float)


def boltzmann_weights(E, N, beta: float, mu: float = 0.0) -> np.ndarray:
    """Normalized weights with the largest exponent shifted to zero."""
    x = -beta * (np.asarray(E) - mu * np.asarray(N))
    x = x - x.max()
    w = np.exp(x)
    return w / w.sum()


def _natural_weights(P: np.ndarray, theta: np.ndarray) -> np.ndarray:
    x = P @ theta
    w = np.exp(x - x.max())
    return w / w.sum()


def _extreme_weights(E: np.ndarray, pick_min: bool, tol: float) -> np.ndarray:
    ref = E.min() if pick_min else E.max()
    w = (np.abs(E - ref) <= tol).astype(float)
    return w / w.sum()


def solve_canonical(levels, E_target: float, tol: float = 1e-8) -> EnsembleSolution:
    """beta such that the canonical mean energy equals ``E_target``.

    Targets equal to the extreme energies return the ground (or top) state limit
    with beta = +/-inf; targets beyond them raise.
    """
    E = _levels(levels)
    width = float(E.max() - E.min())
    atol = tol * max(width, 1e-300)
    if width == 0.0:
        if abs(E_target - E[0]) > atol:
            raise InfeasibleTarget("degenerate spectrum cannot reach a different energy")
        return EnsembleSolution("canonical", 0.0, 0.0, np.full(len(E), 1.0 / len(E)))
    if E_target < E.min() - atol or E_target > E.max() + atol:
        raise InfeasibleTarget(f"E_target={E_target} outside [{E.min()}, {E.max()}]")
    if E_target <= E.min() + atol or E_target >= E.max() - atol:
        low = E_target <= E.min() + atol
        w = _extreme_weights(E, low, atol)
        return EnsembleSolution("canonical", np.inf if low else -np.inf, 0.0, w,
                                (float(w @ E - E_target), 0.0), "beta+inf" if low else "beta-inf")

    Ec = E - E.mean()
    t = E_target - E.mean()

    def f(b):
        return boltzmann_weights(Ec, 0, b) @ Ec - t

    if abs(f(0.0)) <= atol:
        w = np.full(len(E), 1.0 / len(E))
        return EnsembleSolution("canonical", 0.0, 0.0, w, (float(f(0.0)), 0.0))
    # f decreases in beta; walk outward until the sign flips
    step = 1.0 / width
    sgn = 1.0 if f(0.0) > 0 else -1.0
    a, b = 0.0, sgn * step
    while f(b) * sgn > 0:
        a, b = b, 2 * b
        if abs(b) > 1e12 / width:
            raise EnsembleError("failed to bracket beta")
    lo, hi = min(a, b), max(a, b)
    beta = brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    w = boltzmann_weights(Ec, 0, beta)
    res = float(w @ E - E_target)
    if abs(res) > atol:
        raise EnsembleError(f"canonical residual {res:.2e} above tolerance")
    return EnsembleSolution("canonical", float(beta), 0.0, w, (res, 0.0))


def _newton(P: np.ndarray, target: np.ndarray, atol: np.ndarray, theta0=None,
            max_iter: int = MAX_ITER):
    """Minimize log Z(theta) - theta.target with damped Newton steps."""
    theta = np.zeros(P.shape[1]) if theta0 is None else np.array(theta0, dtype=float)

    def objective(th):
        x = P @ th
        m = x.max()
        return m + np.log(np.exp(x - m).sum()) - th @ target

    F = objective(theta)
    for it in range(1, max_iter + 1):
        w = _natural_weights(P, theta)
        mean = w @ P
        g = mean - target
        if np.all(np.abs(g) <= atol):
            return theta, w, g, it - 1
        Pc = P - mean
        cov = (Pc * w[:, None]).T @ Pc
        try:
            step = -np.linalg.solve(cov, g)
        except np.linalg.LinAlgError as exc:
            raise EnsembleError("singular covariance in Newton step") from exc
        lam = 1.0
        while True:
            Fn = objective(theta + lam * step)
            if Fn <= F + 1e-4 * lam * (g @ step) or lam < 1e-12:
                break
            lam *= 0.5
        theta = theta + lam * step
        F = Fn
    w = _natural_weights(P, theta)
    g = w @ P - target
    if np.all(np.abs(g) <= atol):
        return theta, w, g, max_iter
    raise EnsembleError(f"Newton did not converge in {max_iter} iterations (residual {np.abs(g).max():.2e})")


@dataclass
class Hull:
    points: np.ndarray
    equations: np.ndarray
    scale: np.ndarray

    @classmethod
    def of(cls, E, N) -> Optional["Hull"]:
        P = np.column_stack([E, N])
        scale = np.maximum(P.max(axis=0) - P.min(axis=0), 1e-300)
        try:
            h = ConvexHull(P / scale)
        except QhullError:
            return None
        return cls(P, h.equations, scale)

    def signed_distance(self, t: np.ndarray) -> np.ndarray:
        return self.equations[:, :2] @ (t / self.scale) + self.equations[:, 2]


def solve_grand_canonical(E, N, E_target: float, N_target: float, tol: float = 1e-8,
                          hull: Optional[Hull] = None, theta0=None) -> EnsembleSolution:
    """(beta, mu) such that the ensemble reproduces both targets."""
    E = np.asarray(E, dtype=float)
    N = np.asarray(N, dtype=float)
    target = np.array([E_target, N_target], dtype=float)
    widths = np.array([np.ptp(E), np.ptp(N)])
    if widths[1] <= tol * max(widths[0], 1.0):
        log.warning("all states share one quasiparticle number; using the canonical ensemble")
        sol = solve_canonical(E, E_target, tol)
        sol.kind, sol.flag = "grand", sol.flag + ";canonical-fallback"
        return sol
    atol = tol * np.maximum(widths, 1e-300)
    hull = hull or Hull.of(E, N)
    if hull is None:
        raise EnsembleError("(E, N) points are collinear")
    dist = hull.signed_distance(target)
    face_tol = 1e-10
    if dist.max() > face_tol:
        raise InfeasibleTarget(f"target ({E_target}, {N_target}) outside the (E, N) hull")
    on = np.nonzero(dist >= -face_tol)[0]
    if len(on) == 0:
        P = np.column_stack([E, N])
        theta, w, g, it = _newton(P, target, atol, theta0)
        beta = -theta[0]
        mu = theta[1] / beta if beta != 0 else 0.0
        return EnsembleSolution("grand", float(beta), float(mu), w, tuple(map(float, g)), "ok", it)
    return _boundary_solution(E, N, target, hull, on, atol)


def _boundary_solution(E, N, target, hull: Hull, on: np.ndarray, atol) -> EnsembleSolution:
    """Limit distribution on the hull face (or vertex) that contains the target."""
    P = np.column_stack([E, N])
    Ps = P / hull.scale
    normals = hull.equations[on, :2]
    # states lying on every active face
    resid = Ps @ normals.T + hull.equations[on, 2]
    support = np.all(np.abs(resid) <= 1e-9, axis=1)
    idx = np.nonzero(support)[0]
    if len(idx) == 0:
        raise EnsembleError("no states on the active hull face")
    sub = P[idx]
    w = np.zeros(len(E))
    if len(on) > 1 or np.ptp(sub, axis=0).max() <= np.max(atol):
        kind = "vertex"
        close = np.all(np.abs(sub - target) <= np.maximum(atol, 1e-9 * np.abs(target)), axis=1)
        if not close.any():
            raise EnsembleError("vertex target does not coincide with a state")
        w[idx[close]] = 1.0 / close.sum()
    else:
        kind = "face"
        u = np.array([normals[0][1], -normals[0][0]]) * hull.scale
        u /= np.linalg.norm(u)
        if u[0] < 0 or (u[0] == 0 and u[1] < 0):
            u = -u
        sol = solve_canonical(sub @ u, target @ u)
        w[idx] = sol.weights
        beta_face = sol.beta
    # theta = (-beta, beta*mu) runs off along the outward normal in (E, N) units
    n = normals.sum(axis=0) / hull.scale
    big = np.abs(n).max()
    parts = [f"boundary-{kind}"]
    if abs(n[0]) > 1e-12 * big:
        beta = float(-np.sign(n[0]) * np.inf)
        parts.append("beta+inf" if n[0] < 0 else "beta-inf")
        mu = float(-n[1] / n[0]) if abs(n[1]) > 1e-12 * big else 0.0
    else:
        beta = beta_face if kind == "face" else float("nan")
        mu = float(np.sign(n[1]) * np.sign(beta) * np.inf) if beta else float(np.sign(n[1]) * np.inf)
    if abs(n[1]) > 1e-12 * big:
        parts.append("mu+inf" if np.isinf(mu) and mu > 0 else "mu-inf" if np.isinf(mu) else "mu-finite")
    g = w @ P - target
    return EnsembleSolution("grand", beta, mu, w, tuple(map(float, g)), ";".join(parts))


def ensemble_average(solution: EnsembleSolution, diag_values) -> float:
    """sum_i w_i O_ii given the eigenstate expectation values O_ii."""
    v = np.asarray(diag_values)
    if v.shape != solution.weights.shape:
        raise EnsembleError(f"{len(v)} values for {len(solution.weights)} weights")
    return float(solution.weights @ v)


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    if rho.shape != sigma.shape:
        raise EnsembleError(f"shape mismatch {rho.shape} vs {sigma.shape}")
    d = rho - sigma
    return float(0.5 * np.abs(np.linalg.eigvalsh((d + d.conj().T) / 2)).sum())


def reduced_dm(split, states: np.ndarray, weights: Optional[np.ndarray] = None) -> np.ndarray:
    """Reduced density matrix on the split's region of a pure state or a weighted mixture.

    ``states`` holds constrained-basis amplitudes (a vector or columns).
    """
    from .partial_trace import reduced_dms
    states = np.asarray(states)
    if states.ndim == 1:
        return reduced_dms(split, states)[0]
    if weights is None:
        raise EnsembleError("weights are required for several states")
    keep = np.nonzero(np.asarray(weights) > 0)[0]
    return np.einsum("i,iab->ab", np.asarray(weights)[keep], reduced_dms(split, states[:, keep]))


@dataclass
class EnsembleRow:
    state: int
    E: float
    N: float
    beta_c: float
    beta: float
    mu: float
    dev_canonical: float
    dev_grand: float
    td_canonical: float
    td_grand: float
    flag: str


def compare_ensembles(E, N, eev, rdms: np.ndarray, targets: Sequence[int], tol: float = 1e-8) -> list[EnsembleRow]:
    """Per eigenstate target: EEV deviation and trace distance from both ensembles.

    ``rdms`` holds the reduced density matrix of every eigenstate (n, dA, dA).
    """
    E = np.asarray(E)
    N = np.asarray(N)
    eev = np.asarray(eev)
    hull = Hull.of(E, N)
    rows = []
    for i in targets:
        can = solve_canonical(E, E[i], tol)
        try:
            gr = solve_grand_canonical(E, N, E[i], N[i], tol, hull=hull)
        except EnsembleError as exc:
            rows.append(EnsembleRow(int(i), float(E[i]), float(N[i]), can.beta, np.nan, np.nan,
                                    float(abs(can.average(eev) - eev[i])), np.nan,
                                    trace_distance(np.einsum("i,iab->ab", can.weights, rdms), rdms[i]),
                                    np.nan, f"error:{exc}"))
            continue
        rho_c = np.einsum("i,iab->ab", can.weights, rdms)
        rho_g = np.einsum("i,iab->ab", gr.weights, rdms)
        flag = gr.flag if can.flag == "ok" else f"{gr.flag}|canonical:{can.flag}"
        rows.append(EnsembleRow(int(i), float(E[i]), float(N[i]), can.beta, gr.beta, gr.mu,
                                float(abs(can.average(eev) - eev[i])), float(abs(gr.average(eev) - eev[i])),
                                trace_distance(rho_c, rdms[i]), trace_distance(rho_g, rdms[i]), flag))
    return rows
