"""Experiment case definitions: presets, config-file loading, model builders.

Three built-in cases: ``case1`` (scalar diffusivity estimation on the
convection-diffusion pair), ``boundary`` (K-L boundary-field inversion on the
same geometry) and ``linear`` (exactly solvable linear model for oracle
runs). A YAML config file can override any preset key; CLI flags override
the file.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .forward import (
    BoundaryModes,
    ConvDiffConfig,
    ConvectionDiffusionModel,
    LinearModel,
    make_fidelity_pair,
)
from .grids import GridSpec
from .random_fields import BoxPrior, KernelSpec, KlBasis, build_kl_basis, gaussian_sample, lhs_sample

# the linear oracle's matrix is fixed so runs differ only through the seed
_LINEAR_MODEL_SEED = 1234
_LINEAR_SHAPE = (12, 3)


class ConfigError(ValueError):
    """Configuration problem; message names the offending field."""


@dataclass(frozen=True)
class BoundaryFieldSpec:
    """K-L prior for the left/bottom boundary profile."""

    n_modes: int = 3
    sigma0: float = 0.14
    length_scale: float = 0.7
    nodes: int = 64

    def kl_basis(self) -> KlBasis:
        arclength = np.linspace(0.0, 2.0, self.nodes)
        kernel = KernelSpec(sigma0=self.sigma0, length_scale=self.length_scale)
        return build_kl_basis(arclength, kernel, self.n_modes)

    def boundary_modes(self, base: float) -> BoundaryModes:
        basis = self.kl_basis()
        return BoundaryModes(
            arclength=basis.points[:, 0],
            modes=np.sqrt(basis.eigenvalues)[:, None] * basis.modes,
            base=base,
        )


@dataclass(frozen=True)
class CaseConfig:
    """Everything one experiment run needs, with per-case defaults."""

    name: str = "case1"
    hf_grid: tuple[int, int] = (100, 100)
    lf_grid: tuple[int, int] = (7, 7)

    velocity: tuple[float, float] = (1.0, 1.0)
    scheme: str = "central"
    bc_low: float = 1.0
    bc_high: float = 0.0
    diffusivity: float | None = None                  # None: read from the parameter vector
    boundary: BoundaryFieldSpec | None = None

    prior_kind: str = "box"                           # box | gaussian
    prior_lower: tuple[float, ...] = (0.15,)
    prior_upper: tuple[float, ...] = (0.25,)

    candidates: int = 1000
    candidate_lower: tuple[float, ...] = (0.02,)
    candidate_upper: tuple[float, ...] = (1.98,)
    basis_size: int = 15
    re_threshold: float = math.inf
    plateau_window: int = 0                           # 0 disables the plateau stop

    ensemble: int = 30
    min_iter: int = 3
    max_iter: int = 8
    obs_fraction: float = 0.02
    noise_fraction: float = 0.0
    perturb_obs: bool = True

    truth: tuple[float, ...] = (0.025,)
    domain_lower: tuple[float, ...] = (0.02,)
    domain_upper: tuple[float, ...] = (1.98,)

    seed: int = 11
    out_dir: str = "out/case1"
    threads: int = 1
    figures: bool = True

    check_max_error: float | None = 0.02
    check_min_improvement: float | None = None
    check_monotone_iters: int = 0
    check_bound_fraction: float = 0.9
    check_converged: bool = False

    def __post_init__(self):
        if self.candidates < 1:
            raise ConfigError("train.candidates must be positive")
        if not 1 <= self.basis_size <= self.candidates:
            raise ConfigError("train.basis_size must be in [1, train.candidates]")
        if self.ensemble < 2:
            raise ConfigError("invert.ensemble must be at least 2")
        if not 1 <= self.min_iter <= self.max_iter:
            raise ConfigError("need 1 <= invert.min_iter <= invert.max_iter")
        if not 0.0 < self.obs_fraction <= 1.0:
            raise ConfigError("invert.obs_fraction must be in (0, 1]")
        if self.noise_fraction < 0.0:
            raise ConfigError("invert.noise_fraction must be non-negative")
        if self.prior_kind not in ("box", "gaussian"):
            raise ConfigError(f"prior.kind must be 'box' or 'gaussian', got {self.prior_kind!r}")
        if self.scheme not in ("central", "upwind"):
            raise ConfigError(f"model.scheme must be 'central' or 'upwind', got {self.scheme!r}")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        if len(self.prior_lower) != len(self.prior_upper):
            raise ConfigError("prior.lower and prior.upper must have equal lengths")
        if self.prior_kind == "box" and not all(
            lo < hi for lo, hi in zip(self.prior_lower, self.prior_upper)
        ):
            raise ConfigError("prior.lower must be strictly below prior.upper")

    @property
    def param_dim(self) -> int:
        return len(self.truth)

    @property
    def cost_ratio(self) -> float:
        """Coarse-to-fine cost proxy: cell-count ratio."""
        return (self.lf_grid[0] * self.lf_grid[1]) / (self.hf_grid[0] * self.hf_grid[1])


_PRESETS: dict[str, CaseConfig] = {
    "case1": CaseConfig(),
    "boundary": CaseConfig(
        name="boundary",
        diffusivity=0.05,
        boundary=BoundaryFieldSpec(),
        prior_kind="gaussian",
        prior_lower=(-1.0, -1.0, -1.0),
        prior_upper=(1.0, 1.0, 1.0),
        candidates=400,
        candidate_lower=(-4.0, -4.0, -4.0),
        candidate_upper=(4.0, 4.0, 4.0),
        basis_size=8,
        re_threshold=10.0,
        ensemble=200,
        min_iter=4,
        max_iter=6,
        obs_fraction=0.02,
        noise_fraction=0.40,
        truth=(2.4, -1.6, 1.0),
        domain_lower=(-8.0, -8.0, -8.0),
        domain_upper=(8.0, 8.0, 8.0),
        seed=5,
        out_dir="out/boundary",
        check_max_error=None,
        check_min_improvement=3.0,
        check_monotone_iters=4,
    ),
    "linear": CaseConfig(
        name="linear",
        hf_grid=(_LINEAR_SHAPE[0], 1),
        lf_grid=(_LINEAR_SHAPE[0], 1),
        prior_kind="box",
        prior_lower=(-2.0, -2.0, -2.0),
        prior_upper=(2.0, 2.0, 2.0),
        candidates=200,
        candidate_lower=(-3.0, -3.0, -3.0),
        candidate_upper=(3.0, 3.0, 3.0),
        basis_size=6,
        re_threshold=10.0,
        ensemble=100,
        min_iter=1,
        max_iter=10,
        obs_fraction=0.5,
        noise_fraction=0.01,
        truth=(0.5, -0.3, 0.8),
        domain_lower=(-10.0, -10.0, -10.0),
        domain_upper=(10.0, 10.0, 10.0),
        seed=7,
        out_dir="out/linear",
        check_max_error=0.05,
        check_converged=True,
    ),
}


def available_presets() -> list[str]:
    return sorted(_PRESETS)


def preset(name: str) -> CaseConfig:
    try:
        return _PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown case preset {name!r}; choose from {available_presets()}") from None


def _as_tuple(value, key: str) -> tuple[float, ...]:
    if isinstance(value, (int, float)):
        return (float(value),)
    if isinstance(value, (list, tuple)):
        return tuple(float(v) for v in value)
    raise ConfigError(f"{key} must be a number or a list of numbers")


def _apply_section(cfg: CaseConfig, data: dict) -> CaseConfig:
    updates = {}

    def grab(section, key, target, conv):
        if section in data and isinstance(data[section], dict) and key in data[section]:
            updates[target] = conv(data[section][key], f"{section}.{key}")

    def num(v, key):
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise ConfigError(f"{key} must be a number")
        return float(v)

    def integer(v, key):
        if not isinstance(v, int) or isinstance(v, bool):
            raise ConfigError(f"{key} must be an integer")
        return v

    def boolean(v, key):
        if not isinstance(v, bool):
            raise ConfigError(f"{key} must be true or false")
        return v

    def text(v, key):
        if not isinstance(v, str):
            raise ConfigError(f"{key} must be a string")
        return v

    def grid(v, key):
        pair = _as_tuple(v, key)
        if len(pair) != 2 or any(p != int(p) or p < 1 for p in pair):
            raise ConfigError(f"{key} must be a pair of positive integers")
        return (int(pair[0]), int(pair[1]))

    if "case" in data:
        raise ConfigError("'case' must be selected before overrides are applied")

    grab("grids", "hf", "hf_grid", grid)
    grab("grids", "lf", "lf_grid", grid)
    grab("model", "scheme", "scheme", text)
    grab("model", "bc_low", "bc_low", num)
    grab("model", "bc_high", "bc_high", num)
    if "model" in data and "velocity" in data.get("model", {}):
        vel = _as_tuple(data["model"]["velocity"], "model.velocity")
        if len(vel) != 2:
            raise ConfigError("model.velocity must have two components")
        updates["velocity"] = vel
    if "model" in data and "diffusivity" in data.get("model", {}):
        value = data["model"]["diffusivity"]
        if value == "parameter":
            updates["diffusivity"] = None
        else:
            updates["diffusivity"] = num(value, "model.diffusivity")
    if "boundary" in data:
        if data["boundary"] is None:
            updates["boundary"] = None
        else:
            b = data["boundary"]
            updates["boundary"] = BoundaryFieldSpec(
                n_modes=integer(b.get("modes", 3), "boundary.modes"),
                sigma0=num(b.get("sigma0", 0.14), "boundary.sigma0"),
                length_scale=num(b.get("length_scale", 0.7), "boundary.length_scale"),
                nodes=integer(b.get("nodes", 64), "boundary.nodes"),
            )
    grab("prior", "kind", "prior_kind", text)
    if "prior" in data and "lower" in data.get("prior", {}):
        updates["prior_lower"] = _as_tuple(data["prior"]["lower"], "prior.lower")
    if "prior" in data and "upper" in data.get("prior", {}):
        updates["prior_upper"] = _as_tuple(data["prior"]["upper"], "prior.upper")
    grab("train", "candidates", "candidates", integer)
    if "train" in data and "lower" in data.get("train", {}):
        updates["candidate_lower"] = _as_tuple(data["train"]["lower"], "train.lower")
    if "train" in data and "upper" in data.get("train", {}):
        updates["candidate_upper"] = _as_tuple(data["train"]["upper"], "train.upper")
    grab("train", "basis_size", "basis_size", integer)
    if "train" in data and "re_threshold" in data.get("train", {}):
        updates["re_threshold"] = num(data["train"]["re_threshold"], "train.re_threshold")
    grab("train", "plateau_window", "plateau_window", integer)
    grab("invert", "ensemble", "ensemble", integer)
    grab("invert", "min_iter", "min_iter", integer)
    grab("invert", "max_iter", "max_iter", integer)
    grab("invert", "obs_fraction", "obs_fraction", num)
    grab("invert", "noise_fraction", "noise_fraction", num)
    grab("invert", "perturb", "perturb_obs", boolean)
    if "truth" in data:
        updates["truth"] = _as_tuple(data["truth"], "truth")
    if "domain" in data:
        if "lower" in data["domain"]:
            updates["domain_lower"] = _as_tuple(data["domain"]["lower"], "domain.lower")
        if "upper" in data["domain"]:
            updates["domain_upper"] = _as_tuple(data["domain"]["upper"], "domain.upper")
    grab("check", "max_error", "check_max_error", num)
    grab("check", "min_improvement", "check_min_improvement", num)
    grab("check", "monotone_iters", "check_monotone_iters", integer)
    grab("check", "bound_fraction", "check_bound_fraction", num)
    grab("check", "converged", "check_converged", boolean)
    if "seed" in data:
        updates["seed"] = integer(data["seed"], "seed")
    if "out" in data:
        updates["out_dir"] = text(data["out"], "out")
    if "threads" in data:
        updates["threads"] = integer(data["threads"], "threads")
    if "figures" in data:
        updates["figures"] = boolean(data["figures"], "figures")

    try:
        return replace(cfg, **updates)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path=None, case: str | None = None, overrides: dict | None = None) -> CaseConfig:
    """Resolve a CaseConfig: preset, then YAML file, then explicit overrides."""
    data = {}
    if path is not None:
        try:
            raw = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        try:
            data = yaml.safe_load(raw) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed YAML in {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config root in {path} must be a mapping")

    case_name = case or data.get("case") or "case1"
    if not isinstance(case_name, str):
        raise ConfigError("'case' must be a string")
    cfg = preset(case_name)
    data.pop("case", None)
    cfg = _apply_section(cfg, data)
    if overrides:
        cfg = _apply_section(cfg, overrides)
    _validate_dimensions(cfg)
    return cfg


def _validate_dimensions(cfg: CaseConfig) -> None:
    d = cfg.param_dim
    for key, value in [
        ("prior.lower", cfg.prior_lower),
        ("prior.upper", cfg.prior_upper),
        ("train.lower", cfg.candidate_lower),
        ("train.upper", cfg.candidate_upper),
        ("domain.lower", cfg.domain_lower),
        ("domain.upper", cfg.domain_upper),
    ]:
        if len(value) != d:
            raise ConfigError(f"{key} has length {len(value)}, expected {d} (length of truth)")
    model_dim = _model_param_dim(cfg)
    if model_dim != d:
        raise ConfigError(
            f"model parameterization has dimension {model_dim} but truth has length {d}"
        )


def _model_param_dim(cfg: CaseConfig) -> int:
    if cfg.name == "linear":
        return _LINEAR_SHAPE[1]
    d = 0 if cfg.diffusivity is not None else 1
    if cfg.boundary is not None:
        d += cfg.boundary.n_modes
    return d


def build_models(cfg: CaseConfig):
    """Instantiate the (lf, hf) forward-model pair for a case."""
    if cfg.name == "linear":
        rng = np.random.default_rng(_LINEAR_MODEL_SEED)
        matrix = rng.standard_normal(_LINEAR_SHAPE)
        model = LinearModel(matrix)
        return model, model
    conv = ConvDiffConfig(
        velocity=cfg.velocity,
        bc_low=cfg.bc_low,
        bc_high=cfg.bc_high,
        diffusivity=cfg.diffusivity,
        boundary_modes=cfg.boundary.boundary_modes(cfg.bc_low) if cfg.boundary else None,
        scheme=cfg.scheme,
    )
    return make_fidelity_pair(GridSpec(*cfg.lf_grid), GridSpec(*cfg.hf_grid), conv)


def build_prior_sampler(cfg: CaseConfig):
    """Prior ensemble sampler: LHS over the box or i.i.d. standard normal."""
    if cfg.prior_kind == "gaussian":
        dim = cfg.param_dim
        return lambda n, seed: gaussian_sample(n, dim, seed)
    box = BoxPrior(np.array(cfg.prior_lower), np.array(cfg.prior_upper))
    return lambda n, seed: lhs_sample(box, n, seed)


def build_candidates(cfg: CaseConfig, seed) -> np.ndarray:
    """Offline training candidates covering the search domain."""
    if cfg.prior_kind == "gaussian":
        return gaussian_sample(cfg.candidates, cfg.param_dim, seed)
    box = BoxPrior(np.array(cfg.candidate_lower), np.array(cfg.candidate_upper))
    return lhs_sample(box, cfg.candidates, seed)


def domain_bounds(cfg: CaseConfig) -> tuple[np.ndarray, np.ndarray]:
    return np.array(cfg.domain_lower), np.array(cfg.domain_upper)


def config_echo(cfg: CaseConfig) -> dict:
    """JSON-ready dictionary echo of the resolved configuration."""
    out = {}
    for key, value in vars(cfg).items():
        if isinstance(value, BoundaryFieldSpec):
            out[key] = vars(value).copy()
        elif isinstance(value, tuple):
            out[key] = list(value)
        elif isinstance(value, float) and math.isinf(value):
            out[key] = "inf"
        else:
            out[key] = value
    return out
