"""Experiment configuration: TOML files merged over per-experiment defaults."""

from __future__ import annotations

import copy
import math
import sys
from dataclasses import dataclass, field, fields, replace
from typing import Any, Dict, List, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from ..noise import ALPHA_PER_KM, C_FIBER_M_PER_S, ChainSpec

EXPERIMENTS = (
    "one_repeater_sweep",
    "cutoff_sweep",
    "opt_skr_heatmap",
    "feasible_region",
    "cc_delay_compare",
    "random_placement",
    "topology_study",
)
ENGINES = ("analytic", "mc", "des")
PROTOCOLS = ("sequential", "parallel")


class ConfigError(ValueError):
    pass


def _km_range(lo: float, hi: float, step: float) -> List[float]:
    n = int(round((hi - lo) / step))
    return [lo + i * step for i in range(n + 1)]


def _logspace(lo: float, hi: float, n: int) -> List[float]:
    return [float(x) for x in (10 ** (math.log10(lo) + i * (math.log10(hi) - math.log10(lo)) / (n - 1)) for i in range(n))]


# Cutoff search used by every optimising experiment: multiples of each link's
# attempt cycle up to ``max_multiples`` plus ``log_points`` log-spaced values,
# all capped at ``cap_factor`` times the slowest link's mean generation time.
SEARCH_DEFAULTS = {"max_multiples": 40, "log_points": 30, "cap_factor": 10.0, "include_no_cutoff": True}

GRID_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "one_repeater_sweep": {
        "total_km": 200.0,
        "positions_km": _km_range(5.0, 195.0, 5.0),
        "tau_coh_s": 0.1,
        "cutoff_s": 0.05,
    },
    "cutoff_sweep": {
        "n_repeaters": 7,
        "distances_km": [200.0, 300.0, 400.0],
        "tau_coh_s": 0.003,
        "cutoffs_s": _logspace(1e-4, 0.1, 121),
    },
    "opt_skr_heatmap": {
        "n_repeaters": 7,
        "distances_km": _km_range(100.0, 1000.0, 100.0),
        "tau_coh_s": _logspace(1e-4, 1.0, 17),
        **SEARCH_DEFAULTS,
    },
    "feasible_region": {
        "n_repeaters": 7,
        "distances_km": _km_range(100.0, 800.0, 100.0),
        # (F, mu, p_link); mu also sets the per-link depolarizing parameter
        "triples": [[1.0, 1.0, 1.0], [0.99, 1.0, 1.0], [1.0, 0.99, 1.0], [1.0, 1.0, 0.99]],
        "cutoff_modes": ["none", "optimized"],
        "tau_coh_bounds_s": [1e-6, 1e4],
        "rel_tol": 1e-3,
        **SEARCH_DEFAULTS,
    },
    "cc_delay_compare": {
        "n_repeaters": 7,
        "distances_km": _km_range(100.0, 600.0, 50.0),
        "tau_coh_s": 0.01,
        "cutoff_s": None,
    },
    "random_placement": {
        "total_km": 200.0,
        "n_repeaters": 5,
        "min_spacing_km": 5.0,
        "n_placements": 1000,
        "tau_coh_s": 0.1,
        "cutoff_s": 0.05,
        "hist_bins": 30,
    },
    "topology_study": {
        "graphml": None,  # None selects the bundled SURFnet file
        "inflation": 1.0,
        "min_km": 50.0,
        "max_km": 350.0,
        "min_repeaters": 2,
        "n_pairs": 900,
        "tau_coh_s": [0.001, 0.01, 0.1, 1.0],
        **SEARCH_DEFAULTS,
    },
}


@dataclass(frozen=True)
class PhysicsConfig:
    p_link: float = 1.0
    fidelity_F: float = 1.0
    mu: float = 1.0
    mu_link: float = 1.0
    alpha_per_km: float = ALPHA_PER_KM
    c_m_per_s: float = C_FIBER_M_PER_S

    def __post_init__(self):
        # a probe chain applies the same range checks the engines will
        try:
            ChainSpec.from_lengths([1.0], **self.chain_kwargs())
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"physics: {exc}") from None

    def chain_kwargs(self) -> dict:
        return dict(
            p_link=self.p_link,
            fidelity_F=self.fidelity_F,
            mu_link=self.mu_link,
            mu_swap=self.mu,
            alpha_per_km=self.alpha_per_km,
            c_m_per_s=self.c_m_per_s,
        )


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    engine: Optional[str] = None  # None: analytic for sequential, mc for parallel
    protocols: tuple = PROTOCOLS
    seed: int = 1
    n_samples: int = 100_000
    classical_delay: bool = True
    parallel_policy: str = "classical"
    max_restarts: int = 2000  # per delivery, on average; beyond it a point is reported as budget_exceeded
    output: Optional[str] = None
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    grid: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if self.engine is not None and self.engine not in ENGINES:
            raise ConfigError(f"engine must be one of {ENGINES}")
        protos = tuple(self.protocols)
        if not protos or any(p not in PROTOCOLS for p in protos):
            raise ConfigError(f"protocols must be a non-empty subset of {PROTOCOLS}")
        object.__setattr__(self, "protocols", protos)
        if self.engine == "analytic" and "parallel" in protos:
            raise ConfigError("the analytic engine only covers the sequential protocol")
        if self.n_samples < 2:
            raise ConfigError("n_samples must be >= 2")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.max_restarts < 1:
            raise ConfigError("max_restarts must be >= 1")
        if self.parallel_policy not in ("full", "instant", "classical"):
            raise ConfigError("parallel_policy must be 'full', 'instant' or 'classical'")
        merged = copy.deepcopy(GRID_DEFAULTS[self.experiment])
        unknown = set(self.grid) - set(merged)
        if unknown:
            raise ConfigError(f"unknown grid key(s) for {self.experiment}: {sorted(unknown)}")
        merged.update(copy.deepcopy(self.grid))
        _check_grid(self.experiment, merged)
        object.__setattr__(self, "grid", merged)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        if not kw:
            return self
        return replace(self, **kw)

    def as_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["protocols"] = list(self.protocols)
        out["physics"] = {f.name: getattr(self.physics, f.name) for f in fields(self.physics)}
        return out


def _check_grid(name: str, g: dict) -> None:
    def nonempty(key):
        v = g[key]
        if not isinstance(v, (list, tuple)) or not v:
            raise ConfigError(f"grid.{key} must be a non-empty list")

    def positive(key, allow_none=False):
        v = g[key]
        if v is None and allow_none:
            return
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not v > 0:
            raise ConfigError(f"grid.{key} must be a positive number")

    for key in ("distances_km", "positions_km", "cutoffs_s", "triples", "cutoff_modes"):
        if key in g:
            nonempty(key)
    if "tau_coh_s" in g:
        v = g["tau_coh_s"]
        vals = v if isinstance(v, (list, tuple)) else [v]
        if not vals or any(not isinstance(x, (int, float)) or not x > 0 for x in vals):
            raise ConfigError("grid.tau_coh_s must be positive (or a non-empty list of positives)")
    if "cutoff_s" in g:
        positive("cutoff_s", allow_none=True)
    if "n_repeaters" in g and (not isinstance(g["n_repeaters"], int) or g["n_repeaters"] < 0):
        raise ConfigError("grid.n_repeaters must be a non-negative integer")
    if name == "one_repeater_sweep":
        positive("total_km")
        for x in g["positions_km"]:
            if not 0 < x < g["total_km"]:
                raise ConfigError(f"repeater position {x} km lies outside (0, {g['total_km']})")
    if name == "random_placement":
        positive("total_km")
        if g["n_repeaters"] < 1:
            raise ConfigError("grid.n_repeaters must be >= 1")
        if g["min_spacing_km"] < 0 or (g["n_repeaters"] + 1) * g["min_spacing_km"] > g["total_km"]:
            raise ConfigError("minimum spacing cannot be met on the given total length")
        if g["n_placements"] < 1:
            raise ConfigError("grid.n_placements must be >= 1")
    if name == "feasible_region":
        for t in g["triples"]:
            if len(t) != 3:
                raise ConfigError("each triple is [F, mu, p_link]")
            try:
                ChainSpec.from_lengths([1.0], fidelity_F=t[0], mu_link=t[1], mu_swap=t[1], p_link=t[2])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"triple {t}: {exc}") from None
        lo, hi = g["tau_coh_bounds_s"]
        if not 0 < lo < hi:
            raise ConfigError("tau_coh_bounds_s must satisfy 0 < lo < hi")
        for mode in g["cutoff_modes"]:
            if mode not in ("none", "optimized"):
                raise ConfigError("cutoff_modes entries are 'none' or 'optimized'")
    if name == "topology_study":
        if g["min_km"] > g["max_km"]:
            raise ConfigError("min_km must not exceed max_km")
        if g["n_pairs"] < 1:
            raise ConfigError("grid.n_pairs must be >= 1")
    for key in ("max_multiples", "log_points"):
        if key in g and (not isinstance(g[key], int) or g[key] < 0):
            raise ConfigError(f"grid.{key} must be a non-negative integer")


_TOP_KEYS = {"experiment", "engine", "protocols", "seed", "n_samples", "classical_delay",
             "parallel_policy", "max_restarts", "output", "physics", "grid"}


def config_from_dict(d: dict) -> ExperimentConfig:
    unknown = set(d) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")
    if "experiment" not in d:
        raise ConfigError("missing 'experiment'")
    kw = {k: v for k, v in d.items() if k not in ("physics", "grid")}
    phys = d.get("physics", {})
    bad = set(phys) - {f.name for f in fields(PhysicsConfig)}
    if bad:
        raise ConfigError(f"unknown physics key(s): {sorted(bad)}")
    try:
        physics = PhysicsConfig(**phys)
        if "protocols" in kw:
            kw["protocols"] = tuple(kw["protocols"])
        return ExperimentConfig(physics=physics, grid=dict(d.get("grid", {})), **kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from None
    return config_from_dict(data)
