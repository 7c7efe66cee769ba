"""Lazily built bundle of basis, operators and spectrum for one (D, j) chain."""
from __future__ import annotations

from functools import cached_property

import numpy as np

from .basis import build_momentum_zero_sector, enumerate_basis
from .operators import (build_hamiltonian, build_local_observable, build_number_operator,
                        build_pattern_operator, project_to_sector)
from .spectral import align_degenerate, diagonalize, eev_table, tag_scars

FIG1_OBSERVABLE = "sz(1)*sz(2)"
FIG3_OBSERVABLE = "proj(1,0)+proj(1,-1)"


class ChainModel:
    """Momentum-zero analysis of a length-D spin-j blockaded ring.

    Degenerate eigenspaces are aligned with the polarized state so that scar
    identification does not depend on the eigensolver's arbitrary basis.
    """

    def __init__(self, D: int = 10, j: int = 1, resolve_parity: bool = True,
                 scar_theta: float = 1e-2, spectrum=None):
        self.D, self.j = D, j
        self.resolve_parity = resolve_parity
        self.scar_theta = scar_theta
        if spectrum is not None:
            self.__dict__["spectrum"] = spectrum

    @cached_property
    def basis(self):
        return enumerate_basis(self.D, self.j)

    @cached_property
    def sector(self):
        if "spectrum" in self.__dict__:
            return self.__dict__["spectrum"].sector
        return build_momentum_zero_sector(self.basis, self.resolve_parity)

    @cached_property
    def H(self):
        return build_hamiltonian(self.basis)

    @cached_property
    def N(self):
        return build_number_operator(self.basis)

    @cached_property
    def H_sector(self):
        return project_to_sector(self.H, self.sector)

    @cached_property
    def N_sector(self):
        return project_to_sector(self.N, self.sector)

    def observable(self, spec: str):
        """Sector compression of a local observable (translation-averaged matrix elements)."""
        cache = self.__dict__.setdefault("_obs", {})
        if spec not in cache:
            cache[spec] = project_to_sector(build_local_observable(spec, self.basis), self.sector, check=False)
        return cache[spec]

    def Rk_sector(self, k: int = 1):
        return project_to_sector(build_pattern_operator(self.basis, "R", k), self.sector, check=False)

    def product_state(self, ms) -> np.ndarray:
        """Momentum-zero symmetrization of a product state, as sector coordinates."""
        from .dynamics import make_initial_state
        return make_initial_state(("product", list(ms)), self.sector)

    @cached_property
    def psi1(self) -> np.ndarray:
        return self.product_state([self.j] * self.D)

    @cached_property
    def psi2(self) -> np.ndarray:
        ms = [self.j] * self.D
        ms[0] = self.j - 1
        return self.product_state(ms)

    @cached_property
    def spectrum(self):
        raw = diagonalize(self.H_sector, self.sector)
        return align_degenerate(raw, self.psi1)

    @cached_property
    def full_vectors(self) -> np.ndarray:
        return self.spectrum.full_vectors()

    @cached_property
    def table(self):
        tab = eev_table(self.spectrum, self.N_sector, {FIG1_OBSERVABLE: self.observable(FIG1_OBSERVABLE)},
                        {"psi1": self.psi1, "psi2": self.psi2})
        tab.scar[self.scars] = True
        return tab

    @property
    def E(self) -> np.ndarray:
        return self.spectrum.energies

    @cached_property
    def Nvals(self) -> np.ndarray:
        from .spectral import expectation_values
        return expectation_values(self.spectrum, self.N_sector)

    @cached_property
    def scars(self) -> np.ndarray:
        ov = np.abs(self.spectrum.coefficients(self.psi1)) ** 2
        return tag_scars(self.E, ov, self.scar_theta)
