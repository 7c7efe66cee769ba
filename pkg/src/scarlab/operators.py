"""Sparse operators of the blockaded spin chain.

Everything acting on the constrained space is built as the compression
``P O P`` onto the enumerated basis: matrix elements whose target state is
blockaded are dropped.  The same builders act on the unconstrained product
space (``ProductBasis``) for the open-system checks.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence, Union

import numpy as np
import scipy.sparse as sp

from .basis import ConstrainedBasis, SymmetrySector, codes_to_digits

log = logging.getLogger(__name__)

FULL_SPACE_MAX_D = 6


class OperatorError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ProductBasis:
    """Unconstrained (2j+1)^D product basis with the same code convention."""

    D: int
    j: int

    @property
    def local_dim(self) -> int:
        return 2 * self.j + 1

    @property
    def dim(self) -> int:
        return self.local_dim ** self.D

    @property
    def codes(self) -> np.ndarray:
        return np.arange(self.dim, dtype=np.int64)

    def digits(self, codes=None) -> np.ndarray:
        codes = self.codes if codes is None else codes
        return codes_to_digits(codes, self.D, self.local_dim)

    def lookup(self, codes) -> np.ndarray:
        return np.asarray(codes, dtype=np.int64)

    def constrained_mask(self) -> np.ndarray:
        dig = self.digits()
        nxt = np.roll(dig, -1, axis=1)
        return ~((dig == 2 * self.j) & (nxt == 0)).any(axis=1)


AnyBasis = Union[ConstrainedBasis, ProductBasis]


@dataclass(frozen=True, eq=False)
class SparseOperator:
    matrix: sp.csr_matrix = field(repr=False)
    name: str = ""

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def hermitian(self) -> bool:
        diff = self.matrix - self.matrix.getH()
        return diff.nnz == 0 or float(abs(diff).max()) < 1e-13

    def entries(self):
        """Sorted coordinate list (row, col, value) with duplicates summed."""
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return coo.row[order], coo.col[order], coo.data[order]

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def __matmul__(self, other):
        if isinstance(other, SparseOperator):
            return SparseOperator((self.matrix @ other.matrix).tocsr())
        return self.matrix @ other

    def __add__(self, other: "SparseOperator") -> "SparseOperator":
        return SparseOperator((self.matrix + other.matrix).tocsr())

    def __sub__(self, other: "SparseOperator") -> "SparseOperator":
        return SparseOperator((self.matrix - other.matrix).tocsr())

    def scaled(self, a: complex) -> "SparseOperator":
        return SparseOperator((a * self.matrix).tocsr(), self.name)


def _make(mat, name: str = "") -> SparseOperator:
    mat = sp.csr_matrix(mat, dtype=complex)
    mat.sum_duplicates()
    mat.eliminate_zeros()
    return SparseOperator(mat, name)


# ---------------------------------------------------------------------------
# local matrices

def spin_matrices(j: int) -> dict[str, np.ndarray]:
    """Spin-j matrices in the (m = -j, ..., j) ordering."""
    m = np.arange(-j, j + 1, dtype=float)
    n = len(m)
    sp_ = np.zeros((n, n), dtype=complex)
    for a in range(n - 1):
        # s+ |m> = sqrt(j(j+1) - m(m+1)) |m+1>
        sp_[a + 1, a] = np.sqrt(j * (j + 1) - m[a] * (m[a] + 1))
    sm = sp_.conj().T
    return {
        "x": (sp_ + sm) / 2,
        "y": (sp_ - sm) / 2j,
        "z": np.diag(m).astype(complex),
        "+": sp_,
        "-": sm,
    }


def pair_ket(j: int, m1: int, m2: int) -> np.ndarray:
    d = 2 * j + 1
    v = np.zeros(d * d, dtype=complex)
    v[(m1 + j) * d + (m2 + j)] = 1.0
    return v


def pattern_kets(j: int) -> dict[str, np.ndarray]:
    """Two-site kets |x>, |y>, |y'> and the |j-1,-j>, |j,-j+1> states."""
    x = pair_ket(j, j, -j)
    a = pair_ket(j, j - 1, -j)
    b = pair_ket(j, j, -j + 1)
    s = spin_matrices(j)["x"]
    eye = np.eye(2 * j + 1)
    sx_pair = np.kron(s, eye) + np.kron(eye, s)
    y = sx_pair @ x / np.sqrt(j)
    yp = (b - a) / np.sqrt(2)
    return {"x": x, "y": y, "yp": yp, "a": a, "b": b}


# ---------------------------------------------------------------------------
# generic embedding

def site_operator(basis: AnyBasis, sites: Sequence[int], local: np.ndarray, name: str = "") -> SparseOperator:
    """Embed a local matrix acting on 0-based ``sites`` into ``basis``.

    The local index combines the site digits with the first listed site most
    significant.  Targets outside the basis are dropped (compression).
    """
    sites = [int(s) % basis.D for s in sites]
    if len(set(sites)) != len(sites):
        raise OperatorError(f"repeated site in {sites}")
    d = basis.local_dim
    local = np.asarray(local, dtype=complex)
    if local.shape != (d ** len(sites),) * 2:
        raise OperatorError(f"local matrix shape {local.shape} does not match {len(sites)} sites")
    dig = basis.digits()
    col_local = np.zeros(basis.dim, dtype=np.int64)
    for s in sites:
        col_local = col_local * d + dig[:, s]
    weights = d ** np.arange(basis.D - 1, -1, -1, dtype=np.int64)
    site_w = weights[sites]
    base_code = basis.codes - dig[:, sites] @ site_w

    rows, cols, vals = [], [], []
    nz_r, nz_c = np.nonzero(local)
    for r, c in zip(nz_r, nz_c):
        src = np.nonzero(col_local == c)[0]
        if len(src) == 0:
            continue
        r_dig = codes_to_digits(np.array([r]), len(sites), d)[0]
        tgt = basis.lookup(base_code[src] + int(r_dig @ site_w))
        ok = tgt >= 0
        rows.append(tgt[ok])
        cols.append(src[ok])
        vals.append(np.full(ok.sum(), local[r, c]))
    if rows:
        rows, cols, vals = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(basis.dim, basis.dim), dtype=complex)
    return _make(mat, name)


def _check_site(basis: AnyBasis, site: int) -> int:
    if not 1 <= site <= basis.D:
        raise OperatorError(f"site {site} outside 1..{basis.D}")
    return site - 1


def build_spin_operator(axis: str, site: int, basis: AnyBasis) -> SparseOperator:
    """Single-site spin component; ``site`` is 1-based."""
    k = _check_site(basis, site)
    if axis not in ("x", "y", "z", "+", "-"):
        raise OperatorError(f"unknown axis {axis!r}")
    return site_operator(basis, [k], spin_matrices(basis.j)[axis], f"s{axis}({site})")


def _sum_over_sites(basis: AnyBasis, local: np.ndarray, nsites: int, name: str) -> SparseOperator:
    mat = sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
    for k in range(basis.D):
        mat = mat + site_operator(basis, [k + i for i in range(nsites)], local).matrix
    return _make(mat, name)


def build_hamiltonian(basis: AnyBasis) -> SparseOperator:
    """Sum of s^x restricted to the basis; the constrained H on a ConstrainedBasis."""
    return _sum_over_sites(basis, spin_matrices(basis.j)["x"], 1, "H")


def build_free_hamiltonian(basis: ProductBasis) -> SparseOperator:
    return _sum_over_sites(basis, spin_matrices(basis.j)["x"], 1, "H0")


def two_site_projector(j: int, name: str) -> np.ndarray:
    k = pattern_kets(j)
    if name == "pi":
        return np.outer(k["x"], k["x"].conj())
    if name == "N":
        return np.outer(k["y"], k["y"].conj())
    if name == "M":
        return np.outer(k["x"], k["y"].conj())
    if name == "R":
        return np.outer(k["a"], k["a"]) - np.outer(k["b"], k["b"])
    raise OperatorError(f"unknown pattern operator {name!r}")


def build_pattern_operator(basis: AnyBasis, name: str, k: int) -> SparseOperator:
    """Two-site operator on the bond (k, k+1), ``k`` 1-based, names pi/N/M/R."""
    k0 = _check_site(basis, k)
    return site_operator(basis, [k0, k0 + 1], two_site_projector(basis.j, name), f"{name}({k})")


def build_number_operator(basis: AnyBasis) -> SparseOperator:
    """Quasiparticle number: sum of |y><y| on every bond."""
    return _sum_over_sites(basis, two_site_projector(basis.j, "N"), 2, "N")


def build_translation(basis: ConstrainedBasis) -> SparseOperator:
    return _make(basis.symmetry_matrix("translation"), "T")


def build_inversion(basis: ConstrainedBasis) -> SparseOperator:
    return _make(basis.symmetry_matrix("inversion"), "I_SS")


# ---------------------------------------------------------------------------
# observable specs, e.g. "sz(1)*sz(2)" or "proj(1,0)+proj(1,-1)"

_TERM_RE = re.compile(r"^\s*(?:([+-]?\s*[0-9.eE+-]*)\s*\*)?\s*(.+?)\s*$")
_FACTOR_RE = re.compile(r"^(sx|sy|sz|proj|id)\(\s*([0-9]+)\s*(?:,\s*([+-]?[0-9]+)\s*)?\)$")


def _split_terms(spec: str) -> list[tuple[float, str]]:
    spec = spec.replace("−", "-").replace(" ", "")
    terms, depth, cur, sign = [], 0, "", 1.0
    for ch in spec:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if depth == 0 and ch in "+-" and cur and not cur.endswith(("*", "e", "E")):
            terms.append((sign, cur))
            cur, sign = "", (1.0 if ch == "+" else -1.0)
            continue
        if depth == 0 and ch in "+-" and not cur:
            sign = sign * (1.0 if ch == "+" else -1.0)
            continue
        cur += ch
    if cur:
        terms.append((sign, cur))
    return terms


def parse_observable(spec: str, j: int) -> list[tuple[float, dict[int, np.ndarray]]]:
    """Parse a spec into (coefficient, {1-based site: local matrix}) terms."""
    d = 2 * j + 1
    mats = spin_matrices(j)
    out = []
    terms = _split_terms(spec)
    if not terms:
        raise OperatorError(f"empty observable spec {spec!r}")
    for sign, term in terms:
        coef = sign
        factors: dict[int, np.ndarray] = {}
        for fac in term.split("*"):
            if not fac:
                raise OperatorError(f"malformed term {term!r}")
            try:
                coef *= float(fac)
                continue
            except ValueError:
                pass
            m = _FACTOR_RE.match(fac)
            if m is None:
                raise OperatorError(f"unknown factor {fac!r} in {spec!r}")
            kind, site, arg = m.group(1), int(m.group(2)), m.group(3)
            if kind == "proj":
                if arg is None or abs(int(arg)) > j:
                    raise OperatorError(f"proj needs a level |m| <= {j}: {fac!r}")
                local = np.zeros((d, d), dtype=complex)
                local[int(arg) + j, int(arg) + j] = 1.0
            elif kind == "id":
                local = np.eye(d, dtype=complex)
            else:
                local = mats[kind[1]]
            factors[site] = factors[site] @ local if site in factors else local
        out.append((coef, factors))
    return out


def build_local_observable(spec: str, basis: AnyBasis) -> SparseOperator:
    mat = sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
    for coef, factors in parse_observable(spec, basis.j):
        for s in factors:
            _check_site(basis, s)
        sites = sorted(factors)
        local = np.ones((1, 1), dtype=complex)
        for s in sites:
            local = np.kron(local, factors[s])
        mat = mat + coef * site_operator(basis, [s - 1 for s in sites], local).matrix
    op = _make(mat, spec)
    if not op.hermitian:
        raise OperatorError(f"observable {spec!r} is not Hermitian")
    return op


# ---------------------------------------------------------------------------
# spectrum-generating-algebra operators

def rotate_about_z(op: SparseOperator, basis: AnyBasis, angle: float) -> SparseOperator:
    """exp(-i angle Qz) O exp(i angle Qz) for an operator in a z-product basis."""
    mag = (basis.digits() - basis.j).sum(axis=1).astype(float)
    coo = op.matrix.tocoo()
    phase = np.exp(-1j * angle * (mag[coo.row] - mag[coo.col]))
    return _make(sp.csr_matrix((coo.data * phase, (coo.row, coo.col)), shape=coo.shape))


def build_qy_direct(basis: AnyBasis) -> SparseOperator:
    """Constrained collective s^y written out with its |x>/|y'> correction terms."""
    j = basis.j
    k = pattern_kets(j)
    corr = -1j * np.sqrt(j) * np.outer(k["x"], k["yp"].conj()) + 1j * np.sqrt(j) * np.outer(k["yp"], k["x"].conj())
    sy = _sum_over_sites(basis, spin_matrices(j)["y"], 1, "")
    return _make(sy.matrix + _sum_over_sites(basis, corr, 2, "").matrix, "Qy_direct")


def build_sga_operators(basis: AnyBasis, H: SparseOperator | None = None) -> dict:
    """Qz, Qy, Q+, Q-, the residual R and the list of local R_k."""
    j = basis.j
    H = build_hamiltonian(basis) if H is None else H
    Qz = _sum_over_sites(basis, spin_matrices(j)["z"], 1, "Qz")
    Qy = rotate_about_z(H, basis, np.pi / 2)
    Qy = SparseOperator(Qy.matrix, "Qy")
    Qp = _make((Qy.matrix + 1j * Qz.matrix) / np.sqrt(2), "Q+")
    Qm = _make((Qy.matrix - 1j * Qz.matrix) / np.sqrt(2), "Q-")
    Rk = [build_pattern_operator(basis, "R", k) for k in range(1, basis.D + 1)]
    Rsum = sum((r.matrix for r in Rk[1:]), Rk[0].matrix)
    R = _make(1j * j / np.sqrt(2) * Rsum, "R")
    return {"H": H, "Qz": Qz, "Qy": Qy, "Qplus": Qp, "Qminus": Qm, "R": R, "Rk": Rk}


def commutator(A, B):
    return A @ B - B @ A


def sga_residuals(ops: dict) -> dict[str, float]:
    """Frobenius norms of the three algebra residuals and of H."""
    H, Qz, Qy, Qp, Qm, R = (ops[k] for k in ("H", "Qz", "Qy", "Qplus", "Qminus", "R"))
    H, Qz, Qy, Qp, Qm, R = (getattr(o, "matrix", o) for o in (H, Qz, Qy, Qp, Qm, R))

    def fro(m):
        if sp.issparse(m):
            return float(sp.linalg.norm(m)) if m.nnz else 0.0
        return float(np.linalg.norm(m))

    return {
        "norm_H": fro(H),
        "HQz": fro(commutator(H, Qz) + 1j * Qy),
        "HQy": fro(commutator(H, Qy) - 1j * Qz - np.sqrt(2) * R),
        "HQplus": fro(commutator(H, Qp) - Qp - R),
        "HQminus": fro(commutator(H, Qm) + Qm - R),
    }


# ---------------------------------------------------------------------------
# sector projection

@dataclass(frozen=True, eq=False)
class SectorOperator:
    matrix: np.ndarray = field(repr=False)
    parity: np.ndarray = field(repr=False)
    name: str = ""

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def block(self, p: int) -> np.ndarray:
        idx = np.nonzero(self.parity == p)[0]
        return self.matrix[np.ix_(idx, idx)]


def commutes_with_translation(op: SparseOperator, basis: ConstrainedBasis, tol: float = 1e-12) -> bool:
    T = basis.symmetry_matrix("translation")
    diff = T @ op.matrix - op.matrix @ T
    return diff.nnz == 0 or float(abs(diff).max()) < tol


def project_to_sector(op: SparseOperator, sector: SymmetrySector, check: bool = True) -> SectorOperator:
    """Dense compression V^T O V of an operator onto the sector."""
    if op.dim != sector.basis.dim:
        raise OperatorError(f"operator dim {op.dim} != basis dim {sector.basis.dim}")
    if check and not commutes_with_translation(op, sector.basis):
        log.warning("%s does not commute with translation; returning its compression", op.name or "operator")
    V = sector.V
    M = (V.T @ (op.matrix @ V)).toarray()
    return SectorOperator(M, sector.parity.copy(), op.name)


# ---------------------------------------------------------------------------
# open-system formulation on the unconstrained product space

@dataclass(frozen=True, eq=False)
class OpenSystem:
    """Dense full-space ingredients of the dissipative description."""

    D: int
    j: int
    c: float
    H0: np.ndarray = field(repr=False)
    HN: np.ndarray = field(repr=False)
    H: np.ndarray = field(repr=False)
    pi: list = field(repr=False)
    M: list = field(repr=False)
    P: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.H0.shape[0]

    @property
    def gamma1(self) -> float:
        return self.c * np.sqrt(2 * self.j)

    @property
    def gamma2(self) -> float:
        return -np.sqrt(2 * self.j) * 2 / self.c

    def channels(self):
        """(rate, L_k) for both channels on every bond."""
        out = []
        for pi_k, M_k in zip(self.pi, self.M):
            out.append((self.gamma1, pi_k - 1j * np.sqrt(2) / self.c * M_k))
            out.append((self.gamma2, M_k))
        return out

    def jump_term(self, rho: np.ndarray) -> np.ndarray:
        out = np.zeros_like(rho, dtype=complex)
        for g, L in self.channels():
            out += g * (L @ rho @ L.conj().T)
        return out

    def jump_term_expanded(self, rho: np.ndarray) -> np.ndarray:
        """The same jump term written with pi_k and M_k only."""
        out = np.zeros_like(rho, dtype=complex)
        s2 = np.sqrt(2)
        for pi_k, M_k in zip(self.pi, self.M):
            out += self.c * pi_k @ rho @ pi_k - 1j * s2 * M_k @ rho @ pi_k + 1j * s2 * pi_k @ rho @ M_k.conj().T
        return np.sqrt(2 * self.j) * out

    def liouvillian(self, rho: np.ndarray) -> np.ndarray:
        HN = self.HN
        return -1j * (HN @ rho) + 1j * (rho @ HN.conj().T) + self.jump_term(rho)

    def jump_rates(self, rho: np.ndarray) -> tuple[float, float]:
        p_plus = 0.0
        p_minus = 0.0
        for pi_k, M_k in zip(self.pi, self.M):
            L1 = pi_k - 1j * np.sqrt(2) / self.c * M_k
            p_plus += self.gamma1 * np.trace(L1 @ rho @ L1.conj().T).real
            p_minus += np.trace(M_k @ rho @ M_k.conj().T).real
        return float(p_plus), float(2 * np.sqrt(2 * self.j) / self.c * p_minus)

    def number_operator(self) -> np.ndarray:
        return sum(M_k.conj().T @ M_k for M_k in self.M)


@lru_cache(maxsize=16)
def open_system(D: int, j: int = 1, c: float = 1.0, max_D: int = FULL_SPACE_MAX_D) -> OpenSystem:
    if c <= 0:
        raise OperatorError(f"c must be positive, got {c}")
    if D > max_D:
        raise OperatorError(f"full product space for D={D} exceeds the D<={max_D} limit")
    pb = ProductBasis(D, j)
    H0 = build_free_hamiltonian(pb).toarray()
    pi = [build_pattern_operator(pb, "pi", k).toarray() for k in range(1, D + 1)]
    M = [build_pattern_operator(pb, "M", k).toarray() for k in range(1, D + 1)]
    sj = np.sqrt(j)
    H = H0 - sj * sum(M) - sj * sum(m.conj().T for m in M)
    HN = H0 - sj * sum(M) + sj * sum(m.conj().T for m in M) - 1j * c * np.sqrt(j / 2) * sum(pi)
    P = np.diag(pb.constrained_mask().astype(complex))
    return OpenSystem(D, j, float(c), H0, HN, H, pi, M, P)


def build_nonhermitian_hamiltonian(c: float, D: int, j: int = 1) -> SparseOperator:
    return _make(open_system(D, j, c).HN, "H_N")


def _system_for(rho: np.ndarray, c: float, j: int) -> OpenSystem:
    n = rho.shape[0]
    D = int(round(np.log(n) / np.log(2 * j + 1)))
    if (2 * j + 1) ** D != n or rho.shape != (n, n):
        raise OperatorError(f"rho of shape {rho.shape} is not a (2j+1)^D square matrix")
    return open_system(D, j, c)


def liouvillian_apply(rho: np.ndarray, c: float = 1.0, j: int = 1) -> np.ndarray:
    return _system_for(rho, c, j).liouvillian(np.asarray(rho, dtype=complex))


def jump_rates(rho: np.ndarray, c: float = 1.0, j: int = 1) -> tuple[float, float]:
    return _system_for(rho, c, j).jump_rates(np.asarray(rho, dtype=complex))


def embed_constrained(basis: ConstrainedBasis, psi: np.ndarray) -> np.ndarray:
    """Constrained-basis amplitudes as a full product-space vector."""
    out = np.zeros(((2 * basis.j + 1) ** basis.D,) + psi.shape[1:], dtype=complex)
    out[basis.codes] = psi
    return out


def build_named(name: str, basis: ConstrainedBasis) -> SparseOperator:
    """Operators addressable by name from the command line."""
    if name == "H":
        return build_hamiltonian(basis)
    if name == "N":
        return build_number_operator(basis)
    if name in ("Qy", "Qpm", "Qplus", "Qminus", "R", "Qz"):
        ops = build_sga_operators(basis)
        key = {"Qpm": "Qplus"}.get(name, name)
        return ops[key]
    if name.startswith("obs:"):
        return build_local_observable(name[4:], basis)
    raise OperatorError(f"unknown operator name {name!r}")
