"""Run configuration: YAML file with explicit units in key names."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import yaml

from .fem import LameParams, SimpLaw, plane_stress_lame
from .mesh import ComponentFactory, GroundStructure, LATTICE_TYPES, MeshParams
from .optimizer import SolverConfig
from .problems import CANTILEVER_LOAD_N, L_BRACKET_LOAD_N, build_cantilever, build_custom, build_l_bracket
from .stress import KsConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    problem: str = "l_bracket"
    scale: int = 8
    scale_x: int = 16
    scale_y: int = 4
    pattern: str = "XF"
    layout: list = field(default_factory=list)
    bcs: dict = field(default_factory=dict)
    youngs_modulus_pa: float = 113.8e9
    poisson_ratio: float = 0.34
    thickness_m: float = 0.05
    cell_size_m: float = 0.0625
    load_n: float | None = None
    sigma_max_mpa: float = 880.0
    sigma_hat_max_mpa: float | None = None
    simp_rho_min: float = 1e-3
    simp_exponent: float = 3.0
    ks_p: float = 15.0
    n_agg: int = 10
    seed: int = 0
    energy_fraction: float = 0.999
    n_snapshots: int = 100
    eta: float = 10.0
    element_order: int = 2
    resolution: int = 12
    drop_tolerance: float = 0.2
    retry_sigma_hat_factor: float = 0.9
    sweep_p: list = field(default_factory=lambda: [10.0, 15.0])
    sweep_n_agg: list = field(default_factory=lambda: [1, 5])
    solver: SolverConfig = field(default_factory=SolverConfig)
    output_dir: str = "out"

    # ----------------------------------------------------------- validation

    def validate(self) -> "RunConfig":
        positive = {
            "youngs_modulus_pa": self.youngs_modulus_pa,
            "thickness_m": self.thickness_m,
            "cell_size_m": self.cell_size_m,
            "sigma_max_mpa": self.sigma_max_mpa,
            "simp_rho_min": self.simp_rho_min,
            "simp_exponent": self.simp_exponent,
            "ks_p": self.ks_p,
            "n_snapshots": self.n_snapshots,
            "eta": self.eta,
            "resolution": self.resolution,
        }
        for k, v in positive.items():
            if not v > 0:
                raise ConfigError(f"{k} must be positive, got {v}")
        if self.load_n is not None and not self.load_n > 0:
            raise ConfigError("load_n must be positive")
        if self.problem not in ("l_bracket", "cantilever", "custom"):
            raise ConfigError(f"unknown problem {self.problem!r}")
        if not 0.0 <= self.poisson_ratio < 0.5:
            raise ConfigError("poisson_ratio must lie in [0, 0.5)")
        if self.sigma_hat_max_mpa is not None and not 0 < self.sigma_hat_max_mpa <= self.sigma_max_mpa:
            raise ConfigError("sigma_hat_max_mpa must lie in (0, sigma_max_mpa]")
        if not 0.0 < self.energy_fraction <= 1.0:
            raise ConfigError("energy_fraction must lie in (0, 1]")
        if not 0.0 < self.drop_tolerance < 1.0:
            raise ConfigError("drop_tolerance must lie in (0, 1)")
        if not 0.0 < self.simp_rho_min < 1.0:
            raise ConfigError("simp_rho_min must lie in (0, 1)")
        if self.element_order not in (1, 2):
            raise ConfigError("element_order must be 1 or 2")
        if self.n_agg < 1:
            raise ConfigError("n_agg must be at least 1")
        if any(c not in LATTICE_TYPES for c in self.pattern):
            raise ConfigError(f"pattern may only use lattice types {sorted(LATTICE_TYPES)}")
        if self.problem == "custom" and not (self.layout and self.bcs):
            raise ConfigError("custom problems need 'layout' and 'bcs'")
        if self.solver.tol <= 0 or self.solver.max_iter < 1:
            raise ConfigError("solver tol must be positive and max_iter at least 1")
        return self

    # ------------------------------------------------------------ derived

    @property
    def mesh_params(self) -> MeshParams:
        return MeshParams(order=self.element_order, resolution=self.resolution, size=self.cell_size_m, thickness=self.thickness_m)

    @property
    def lame(self) -> LameParams:
        return plane_stress_lame(self.youngs_modulus_pa, self.poisson_ratio)

    @property
    def simp(self) -> SimpLaw:
        return SimpLaw(self.simp_rho_min, self.simp_exponent)

    def ks(self, p: float | None = None, sigma_hat_mpa: float | None = None) -> KsConfig:
        hat = sigma_hat_mpa if sigma_hat_mpa is not None else self.sigma_hat_max_mpa
        return KsConfig(
            float(p if p is not None else self.ks_p), self.sigma_max_mpa * 1e6, None if hat is None else hat * 1e6
        )

    def lattice_codes(self, gs: GroundStructure | None = None) -> list:
        if gs is not None:
            return sorted({code for _, code in gs.instances})
        return sorted(set(self.pattern))

    def build_problem(self, factory: ComponentFactory | None = None) -> GroundStructure:
        params = self.mesh_params
        if self.problem == "l_bracket":
            load = L_BRACKET_LOAD_N if self.load_n is None else self.load_n
            return build_l_bracket(self.scale, params, load, self.pattern, factory)
        if self.problem == "cantilever":
            load = CANTILEVER_LOAD_N if self.load_n is None else self.load_n
            return build_cantilever(self.scale_x, self.scale_y, params, load, self.pattern, factory)
        return build_custom(self.layout, self.bcs, params, factory)

    # ------------------------------------------------------------- I/O

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return d

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("output_dir", None)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict | None) -> "RunConfig":
        d = dict(d or {})
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {unknown}")
        solver = d.pop("solver", None) or {}
        snames = {f.name for f in dataclasses.fields(SolverConfig)}
        bad = sorted(set(solver) - snames)
        if bad:
            raise ConfigError(f"unknown solver keys: {bad}")
        try:
            cfg = cls(**d, solver=SolverConfig(**solver))
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        return cfg.validate()

    @classmethod
    def from_yaml(cls, text: str) -> "RunConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML: {exc}") from exc
        if data is not None and not isinstance(data, dict):
            raise ConfigError("configuration must be a mapping")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_yaml(fh.read())
