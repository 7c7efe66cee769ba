"""Small-size checks that the dissipative description reproduces constrained dynamics.

Both the non-Hermitian Schroedinger equation and the master equation are
integrated with fixed-step classic RK4 in the full product space and compared
with exact unitary evolution generated by the constrained Hamiltonian.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .operators import OpenSystem, open_system

DEFAULT_DT = 1e-3
MAX_D = 5
C_VALUES = (0.5, 1.0, 2.0, 5.0)


class IntegrationError(RuntimeError):
    pass


def rk4(f: Callable, y0: np.ndarray, dt: float, n_steps: int, every: int = 1, callback=None) -> np.ndarray:
    """Classic fourth-order Runge-Kutta with fixed step; ``callback(step, y)`` every ``every`` steps."""
    if not dt > 0 or dt < 1e-12:
        raise IntegrationError(f"step size {dt} underflows")
    y = np.array(y0, dtype=complex)
    if callback is not None:
        callback(0, y)
    for s in range(1, n_steps + 1):
        k1 = f(y)
        k2 = f(y + 0.5 * dt * k1)
        k3 = f(y + 0.5 * dt * k2)
        k4 = f(y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise IntegrationError(f"non-finite state at step {s}")
        if callback is not None and s % every == 0:
            callback(s, y)
    return y


def _steps(t_max: float, dt: float) -> int:
    n = int(round(t_max / dt))
    if abs(n * dt - t_max) > 1e-9 * max(1.0, t_max):
        raise IntegrationError(f"t_max={t_max} is not a multiple of dt={dt}")
    return n


class _Exact:
    """e^{-iHt} from the eigendecomposition of the (Hermitian) constrained Hamiltonian."""

    def __init__(self, H: np.ndarray):
        self.w, self.V = np.linalg.eigh(H)

    def state(self, psi: np.ndarray, t: float) -> np.ndarray:
        ph = np.exp(-1j * self.w * t)
        if psi.ndim == 2:
            ph = ph[:, None]
        return self.V @ (ph * (self.V.conj().T @ psi))

    def dm(self, rho: np.ndarray, t: float) -> np.ndarray:
        U = (self.V * np.exp(-1j * self.w * t)) @ self.V.conj().T
        return U @ rho @ U.conj().T


def random_constrained_states(sys: OpenSystem, n: int, seed: int = 0) -> np.ndarray:
    """Normalized complex Gaussian states supported on the constrained subspace (columns)."""
    rng = np.random.default_rng(seed)
    mask = np.real(np.diag(sys.P)) > 0.5
    X = np.zeros((sys.dim, n), dtype=complex)
    X[mask] = rng.normal(size=(mask.sum(), n)) + 1j * rng.normal(size=(mask.sum(), n))
    return X / np.linalg.norm(X, axis=0)


def polarized_state(sys: OpenSystem) -> np.ndarray:
    """|j, j, ..., j> in the full product space (site 1 most significant, digit = m + j)."""
    d = 2 * sys.j + 1
    code = sum((d - 1) * d ** k for k in range(sys.D))
    v = np.zeros(sys.dim, dtype=complex)
    v[code] = 1.0
    return v


class SparseLiouvillian:
    """The master-equation generator acting with sparse H_N and jump operators."""

    def __init__(self, sys: OpenSystem):
        self.HN = sp.csr_matrix(sys.HN)
        self.HNd = sp.csr_matrix(sys.HN.conj().T)
        self.channels = [(g, sp.csr_matrix(L), sp.csr_matrix(L.conj().T)) for g, L in sys.channels()]

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        out = -1j * (self.HN @ rho) + 1j * (self.HNd.T @ rho.T).T
        for g, L, Ld in self.channels:
            out += g * (Ld.T @ (L @ rho).T).T
        return out


@dataclass
class UnitaryReport:
    D: int
    j: int
    c: float
    t_max: float
    dt: float
    max_deviation: float
    max_leakage: float
    richardson_error: float
    per_state: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return asdict(self)


def verify_unitary_equivalence(D: int, j: int = 1, c: float = 1.0, t_max: float = 10.0,
                               dt: float = DEFAULT_DT, n_states: int = 10, seed: int = 0,
                               sample_every: float = 0.1, richardson: bool = True) -> UnitaryReport:
    """Max over random constrained states of |psi_HN(t) - e^{-iHt} psi| and of the leakage."""
    if D > MAX_D:
        raise ValueError(f"D={D} exceeds the verification limit {MAX_D}")
    sys = open_system(D, j, c)
    exact = _Exact(sys.H)
    HN = sp.csr_matrix(sys.HN)
    Q = np.eye(sys.dim) - sys.P
    n = _steps(t_max, dt)
    every = max(1, int(round(sample_every / dt)))
    Psi0 = random_constrained_states(sys, n_states, seed)
    dev = np.zeros(n_states)
    leak = np.zeros(n_states)

    def cb(step, Y):
        t = step * dt
        ref = exact.state(Psi0, t)
        dev[:] = np.maximum(dev, np.linalg.norm(Y - ref, axis=0))
        leak[:] = np.maximum(leak, np.linalg.norm(Q @ Y, axis=0))

    final = rk4(lambda Y: -1j * (HN @ Y), Psi0, dt, n, every, cb)
    rich = float("nan")
    if richardson:
        half = rk4(lambda Y: -1j * (HN @ Y), Psi0, dt / 2, 2 * n)
        rich = float(np.linalg.norm(half - final, axis=0).max() * 16 / 15)
    per = [{"state": k, "deviation": float(dev[k]), "leakage": float(leak[k])} for k in range(n_states)]
    return UnitaryReport(D, j, float(c), t_max, dt, float(dev.max()), float(leak.max()), rich, per)


def norm_decay(D: int, j: int = 1, c: float = 1.0, t_max: float = 1.0, dt: float = DEFAULT_DT,
               state: np.ndarray | None = None) -> float:
    """Final norm of a state with weight on blockaded patterns under H_N (reported, not asserted)."""
    sys = open_system(D, j, c)
    if state is None:
        state = np.ones(sys.dim, dtype=complex) / np.sqrt(sys.dim)
    y = rk4(lambda v: -1j * (sys.HN @ v), state, dt, _steps(t_max, dt))
    return float(np.linalg.norm(y))


@dataclass
class MasterReport:
    D: int
    j: int
    c: float
    t_max: float
    dt: float
    max_trace_deviation: float
    min_eigenvalue: float
    max_deviation: float
    max_leakage: float
    max_rate_mismatch: float
    gamma1: float
    gamma2: float

    def as_dict(self) -> dict:
        return asdict(self)


def verify_master_equation(D: int, j: int = 1, c: float = 1.0, t_max: float = 10.0,
                           dt: float = DEFAULT_DT, psi0: np.ndarray | None = None,
                           sample_every: float = 0.1) -> MasterReport:
    """Integrate the master equation from a pure constrained state and compare with unitary evolution.

    Along the trajectory both jump rates are compared with (2 sqrt(2j)/c) Tr(rho N).
    """
    if D > MAX_D:
        raise ValueError(f"D={D} exceeds the verification limit {MAX_D}")
    sys = open_system(D, j, c)
    exact = _Exact(sys.H)
    psi0 = polarized_state(sys) if psi0 is None else np.asarray(psi0, dtype=complex)
    rho0 = np.outer(psi0, psi0.conj())
    Nop = sys.number_operator()
    Q = np.eye(sys.dim) - sys.P
    pref = 2 * np.sqrt(2 * j) / c
    stats = {"tr": 0.0, "eig": np.inf, "dev": 0.0, "leak": 0.0, "rate": 0.0}

    def cb(step, rho):
        t = step * dt
        herm = (rho + rho.conj().T) / 2
        stats["tr"] = max(stats["tr"], abs(np.trace(rho).real - 1.0))
        stats["eig"] = min(stats["eig"], float(np.linalg.eigvalsh(herm)[0]))
        stats["dev"] = max(stats["dev"], float(np.linalg.norm(rho - exact.dm(rho0, t))))
        stats["leak"] = max(stats["leak"], float(abs(np.trace(Q @ rho))))
        p_plus, p_minus = sys.jump_rates(rho)
        ref = pref * np.trace(rho @ Nop).real
        stats["rate"] = max(stats["rate"], abs(p_plus - ref), abs(p_minus - ref))

    rk4(SparseLiouvillian(sys), rho0, dt, _steps(t_max, dt), max(1, int(round(sample_every / dt))), cb)
    return MasterReport(D, j, float(c), t_max, dt, stats["tr"], stats["eig"], stats["dev"], stats["leak"],
                        stats["rate"], sys.gamma1, sys.gamma2)


def c_independence(D: int, j: int = 1, c_values: Sequence[float] = C_VALUES, t_max: float = 10.0,
                   dt: float = DEFAULT_DT, seed: int = 0) -> dict:
    """Final constrained states for each c; spread across c measures c-dependence."""
    finals = []
    for c in c_values:
        sys = open_system(D, j, c)
        psi = random_constrained_states(sys, 1, seed)[:, 0]
        finals.append(rk4(lambda v, H=sys.HN: -1j * (H @ v), psi, dt, _steps(t_max, dt)))
    ref = finals[0]
    return {"c_values": list(map(float, c_values)),
            "max_spread": float(max(np.linalg.norm(f - ref) for f in finals))}


def order_check(D: int, j: int = 1, c: float = 1.0, t_max: float = 2.0, dt: float = 0.02, seed: int = 0) -> float:
    """Deviation ratio when dt is halved; about 16 for a fourth-order method."""
    a = verify_unitary_equivalence(D, j, c, t_max, dt, n_states=1, seed=seed, richardson=False)
    b = verify_unitary_equivalence(D, j, c, t_max, dt / 2, n_states=1, seed=seed, richardson=False)
    return a.max_deviation / b.max_deviation
