"""Run configuration: one JSON document, validated before any computation."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .model import FIG1_OBSERVABLE, FIG3_OBSERVABLE
from .operators import OperatorError, parse_observable


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    D: int = 10
    j: int = 1
    c: float = 1.0
    resolve_parity: bool = True
    observables: list = field(default_factory=lambda: [FIG1_OBSERVABLE, FIG3_OBSERVABLE])
    fig1_observable: str = FIG1_OBSERVABLE
    fig3_observable: str = FIG3_OBSERVABLE
    region: list = field(default_factory=lambda: [1])
    scar_theta: float = 1e-2
    eev_degree: int = 4
    # CCP / DOS statistics
    percentiles: list = field(default_factory=lambda: [10, 20, 30, 50, 70, 90])
    ccp_percentile: float = 10
    grid: list = field(default_factory=lambda: [20, 20])
    min_count: int = 5
    bound_observables: int = 100
    bound_pairs: int = 1000
    # dynamics
    tmax: float = 200.0
    dt: float = 0.05
    oracle_T: float = 1e4
    oracle_dt: float = 0.05
    oracle_D: int = 8
    oracle_states: int = 10
    # SGA
    sga_k: int = 1
    sga_window: list = field(default_factory=lambda: [0.4, 1.6])
    omega_bins: int = 60
    omega_min_count: int = 10
    direct_check_states: int = 20
    # open-system verification
    verify_D: list = field(default_factory=lambda: [3, 4])
    verify_c: list = field(default_factory=lambda: [0.5, 1.0, 2.0, 5.0])
    verify_tmax: float = 10.0
    verify_dt: float = 1e-3
    verify_states: int = 10
    # plumbing
    output_dir: str = "out"
    cache_path: Optional[str] = None
    threads: int = 1
    seed: int = 0
    emit_plots_data: bool = False

    def validate(self) -> "RunConfig":
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(isinstance(self.D, int) and self.D >= 2, f"D must be an integer >= 2, got {self.D!r}")
        need(isinstance(self.j, int) and self.j >= 1, f"j must be a positive integer, got {self.j!r}")
        need(self.c > 0, f"c must be positive, got {self.c}")
        need(len(self.region) >= 1 and all(1 <= int(s) <= self.D for s in self.region)
             and len(set(self.region)) == len(self.region), f"region {self.region} invalid for D={self.D}")
        need(len(self.grid) == 2 and all(int(g) >= 1 for g in self.grid), f"grid must be two positive ints, got {self.grid}")
        need(all(0 < p <= 100 for p in self.percentiles) and 0 < self.ccp_percentile <= 100,
             "percentiles must lie in (0, 100]")
        need(self.min_count >= 1 and self.omega_min_count >= 1, "minimum bin counts must be >= 1")
        need(self.dt > 0 and self.tmax > 0 and self.oracle_dt > 0 and self.oracle_T > 0, "time grids must be positive")
        need(self.sga_window[0] < self.sga_window[1], f"empty omega window {self.sga_window}")
        need(1 <= self.sga_k <= self.D, f"sga_k must be a bond index 1..{self.D}")
        need(all(2 <= d <= 5 for d in self.verify_D), "verification sizes must satisfy 2 <= D <= 5")
        need(all(c > 0 for c in self.verify_c), "verification c values must be positive")
        need(self.verify_dt > 0 and self.verify_tmax > 0, "verification time grid must be positive")
        need(self.threads >= 1, "threads must be >= 1")
        need(0 < self.scar_theta <= 1, "scar_theta must lie in (0, 1]")
        for spec in [*self.observables, self.fig1_observable, self.fig3_observable]:
            try:
                terms = parse_observable(spec, self.j)
            except OperatorError as exc:
                raise ConfigError(f"bad observable {spec!r}: {exc}") from exc
            sites = {s for _, fac in terms for s in fac}
            need(all(1 <= s <= self.D for s in sites), f"observable {spec!r} addresses sites outside 1..{self.D}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def merged(self, overrides: dict) -> "RunConfig":
        base = self.to_dict()
        unknown = set(overrides) - set(base)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        base.update(overrides)
        return RunConfig(**base)
