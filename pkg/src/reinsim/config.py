"""Experiment configuration: one YAML file per experiment, validated up front.

Every section maps onto a dataclass below.  Unknown keys, wrong types and any
value violating a module invariant are reported as ``ConfigError`` with the
offending key path and, when the value came from a file, its line number.
Defaults reproduce the desk setup used throughout the docs: 10-year horizon,
200 steps, S0 = 20,000, lambda = 10, lognormal(3.5, 1.0) severities, retention
bounds [0.2, 0.5], K = 5 layers and a 150,000 reinsurance budget.
"""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

from .claims import ClaimDistributionSpec, FrequencySpec, distribution_from_dict, gross_premium_rate
from .contracts import ConstraintSet, LayeredProgram, quantile_program
from .ppo import PpoConfig
from .surplus import EpisodeConfig
from .vae import VaeTrainConfig

METHODS = ("dp", "mc", "hdmc", "mo", "rl")


class ConfigError(ValueError):
    def __init__(self, key: str, message: str, line: int | None = None, source: str | None = None):
        self.key, self.line, self.source = key, line, source
        where = f"{source or '<config>'}:{line}: " if line is not None else (f"{source}: " if source else "")
        super().__init__(f"{where}{key}: {message}" if key else f"{where}{message}")


@dataclass(frozen=True)
class ClaimsSection:
    lam: float = 10.0
    distribution: dict = field(default_factory=lambda: {"kind": "lognormal", "mu": 3.5, "sigma": 1.0})
    theta: float = 0.1

    def __post_init__(self) -> None:
        if not self.theta >= 0:
            raise ValueError(f"theta must be >= 0, got {self.theta}")
        if not self.lam > 0:
            raise ValueError(f"lam must be > 0, got {self.lam}")
        try:
            distribution_from_dict(self.distribution).mean()
        except (ValueError, KeyError, TypeError) as exc:
            raise ValueError(f"distribution: {exc}") from None


@dataclass(frozen=True)
class ProgramSection:
    n_layers: int = 5
    quantiles: tuple[float, ...] = (0.0, 0.5, 0.75, 0.9, 0.975, 0.995)
    alpha_init: float = 0.35
    theta_k: float = 0.2
    alpha_bounds: tuple[float, float] = (0.2, 0.5)
    budget_max: float = 150_000.0
    psi_target: float = 0.01
    boundary_cap: float = 1500.0
    min_layer_width: float = 1.0
    pricing_samples: int = 20_000

    def __post_init__(self) -> None:
        if self.n_layers < 1:
            raise ValueError(f"n_layers must be >= 1, got {self.n_layers}")
        q = np.asarray(self.quantiles, dtype=float)
        if q.size != self.n_layers + 1:
            raise ValueError(f"quantiles needs n_layers + 1 = {self.n_layers + 1} entries, got {q.size}")
        if q[0] < 0 or q[-1] >= 1 or np.any(np.diff(q) <= 0):
            raise ValueError("quantiles must be strictly increasing in [0, 1)")
        if self.theta_k < 0:
            raise ValueError(f"theta_k must be >= 0, got {self.theta_k}")
        ConstraintSet(self.psi_target, self.budget_max, tuple(self.alpha_bounds))
        lo, hi = self.alpha_bounds
        if not lo <= self.alpha_init <= hi:
            raise ValueError(f"alpha_init must lie within alpha_bounds {list(self.alpha_bounds)}")
        if not self.min_layer_width > 0:
            raise ValueError(f"min_layer_width must be > 0, got {self.min_layer_width}")
        if self.boundary_cap < self.n_layers * self.min_layer_width:
            raise ValueError("boundary_cap cannot hold n_layers layers of min_layer_width")
        if self.pricing_samples < 1:
            raise ValueError(f"pricing_samples must be >= 1, got {self.pricing_samples}")


@dataclass(frozen=True)
class EnvSection:
    epsilon: float = 1.0
    alpha_step: float = 0.05
    boundary_step: float = 0.02
    variability_penalty: float = 0.0
    cumulative_actions: bool = True

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.alpha_step < 0 or self.boundary_step < 0:
            raise ValueError("alpha_step and boundary_step must be >= 0")
        if self.variability_penalty < 0:
            raise ValueError(f"variability_penalty must be >= 0, got {self.variability_penalty}")


@dataclass(frozen=True)
class VaeSection:
    n_train: int = 2000
    beta: float = 1.0
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 64
    latent_dim: int = 4
    hidden: tuple[int, ...] = (32, 32)
    tail_weight: float = 0.0
    n_generate: int = 10_000
    hist_bins: int = 50
    use_for_agent: bool = True

    def __post_init__(self) -> None:
        self.train_config()
        if self.n_train < self.batch_size:
            raise ValueError(f"n_train must be >= batch_size ({self.batch_size}), got {self.n_train}")
        if self.n_generate < 1 or self.hist_bins < 1:
            raise ValueError("n_generate and hist_bins must be >= 1")

    def train_config(self) -> VaeTrainConfig:
        return VaeTrainConfig(
            self.beta, self.learning_rate, self.epochs, self.batch_size, self.latent_dim, tuple(self.hidden), self.tail_weight
        )


@dataclass(frozen=True)
class BenchmarkSection:
    methods: tuple[str, ...] = METHODS
    eval_paths: int = 200
    mc_candidates: int = 200
    mc_paths: int = 100
    hdmc_candidates: int = 1000
    hdmc_screen_paths: int = 10
    hdmc_top_fraction: float = 0.1
    dp_surplus_buckets: int = 41
    dp_alpha_grid: int = 7
    dp_quadrature_samples: int = 400
    mo_alpha_grid: int = 4
    mo_attach_grid: tuple[float, ...] = (0.0, 0.5, 0.9, 0.99)
    mo_weights: tuple[float, float] = (1.0, 10_000.0)
    rl_stochastic: bool = False
    rl_eval_claims: str = "parametric"

    def __post_init__(self) -> None:
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ValueError(f"methods must be a nonempty subset of {list(METHODS)}, got {list(self.methods)}")
        for name in ("eval_paths", "mc_candidates", "mc_paths", "hdmc_candidates", "hdmc_screen_paths", "dp_quadrature_samples"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.dp_surplus_buckets < 2 or self.dp_alpha_grid < 2:
            raise ValueError("dp_surplus_buckets and dp_alpha_grid must be >= 2")
        if self.mo_alpha_grid < 1 or not self.mo_attach_grid:
            raise ValueError("multi-objective grid must be nonempty")
        if any(not 0 <= q < 1 for q in self.mo_attach_grid):
            raise ValueError("mo_attach_grid entries are quantiles in [0, 1)")
        if not 0 < self.hdmc_top_fraction <= 1:
            raise ValueError(f"hdmc_top_fraction must lie in (0, 1], got {self.hdmc_top_fraction}")
        ws, wr = self.mo_weights
        if ws < 0 or wr < 0 or ws == wr == 0:
            raise ValueError("mo_weights must be >= 0 and not both 0")
        if self.rl_eval_claims not in ("parametric", "vae"):
            raise ValueError("rl_eval_claims must be 'parametric' or 'vae'")


@dataclass(frozen=True)
class StressSection:
    high_frequency_multiplier: float = 2.0
    pandemic_frequency_multiplier: float = 1.5
    pandemic_severity_multiplier: float = 1.5
    pandemic_fraction: float = 0.2
    catastrophe_mean_multiple: float = 50.0

    def __post_init__(self) -> None:
        for f in dataclasses.fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"{f.name} must be > 0, got {getattr(self, f.name)}")
        if self.pandemic_fraction > 1:
            raise ValueError("pandemic_fraction must be <= 1")


@dataclass(frozen=True)
class EvaluationSection:
    n_paths: int = 200
    ruin_threshold: float = -100.0
    oos_distribution: dict = field(default_factory=lambda: {"kind": "lognormal", "mu": 3.6, "sigma": 1.1})
    sensitivity_cells: tuple[tuple[float, float], ...] = ((3.6, 1.1), (3.6, 1.2), (3.7, 1.0), (3.7, 1.1), (3.7, 1.2))
    ks_samples: int = 2000
    stress: StressSection = field(default_factory=StressSection)

    def __post_init__(self) -> None:
        if self.n_paths < 1 or self.ks_samples < 1:
            raise ValueError("n_paths and ks_samples must be >= 1")
        distribution_from_dict(self.oos_distribution)
        if not self.sensitivity_cells:
            raise ValueError("sensitivity_cells must be nonempty")
        for cell in self.sensitivity_cells:
            if len(cell) != 2 or not cell[1] > 0:
                raise ValueError(f"sensitivity_cells entries are [mu, sigma>0], got {list(cell)}")


@dataclass(frozen=True)
class SeedSection:
    master: int = 20240601
    vae: int = 1
    agent: int = 2
    evaluation: int = 3
    search: int = 4

    def __post_init__(self) -> None:
        for f in dataclasses.fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be >= 0")

    def sequence(self, name: str) -> np.random.SeedSequence:
        """Named stream derived from the master seed."""
        return np.random.SeedSequence([self.master, getattr(self, name)])

    def rng(self, name: str) -> np.random.Generator:
        return np.random.default_rng(self.sequence(name))


@dataclass(frozen=True)
class ExperimentConfig:
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    claims: ClaimsSection = field(default_factory=ClaimsSection)
    program: ProgramSection = field(default_factory=ProgramSection)
    env: EnvSection = field(default_factory=EnvSection)
    vae: VaeSection = field(default_factory=VaeSection)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    benchmark: BenchmarkSection = field(default_factory=BenchmarkSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    seeds: SeedSection = field(default_factory=SeedSection)
    output_dir: str = "runs/default"

    # Derived runtime objects.

    def frequency(self) -> FrequencySpec:
        return FrequencySpec(self.claims.lam)

    def severity(self) -> ClaimDistributionSpec:
        return distribution_from_dict(self.claims.distribution)

    def premium_rate(self) -> float:
        return gross_premium_rate(self.claims.theta, self.frequency(), self.severity())

    def constraints(self) -> ConstraintSet:
        p = self.program
        return ConstraintSet(p.psi_target, p.budget_max, tuple(p.alpha_bounds))

    def base_program(self) -> LayeredProgram:
        p = self.program
        prog = quantile_program(self.severity(), p.quantiles, p.alpha_init, p.theta_k)
        return LayeredProgram.from_arrays(
            np.minimum(prog.a, p.boundary_cap - p.min_layer_width), np.minimum(prog.b, p.boundary_cap), prog.alpha, p.theta_k
        )

    def pricing_sample(self) -> np.ndarray:
        """Fixed severity sample used to price programs; shared by every method."""
        return self.severity().sample(self.program.pricing_samples, self.seeds.rng("search"))

    def to_dict(self) -> dict[str, Any]:
        return _plain(dataclasses.asdict(self))


def _plain(x: Any) -> Any:
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


# Loading and validation.


def _line_map(text: str) -> dict[tuple[str, ...], int]:
    """1-based line of every mapping key in a YAML document, by key path."""
    out: dict[tuple[str, ...], int] = {}

    def walk(node: yaml.Node, path: tuple[str, ...]) -> None:
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                p = path + (str(k.value),)
                out[p] = k.start_mark.line + 1
                walk(v, p)

    root = yaml.compose(text)
    if root is not None:
        walk(root, ())
    return out


def _coerce(value: Any, tp: Any, key: str) -> Any:
    origin = typing.get_origin(tp)
    if tp is bool:
        if not isinstance(value, bool):
            raise TypeError(f"expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeError(f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError(f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise TypeError(f"expected a string, got {value!r}")
        return value
    if tp is dict or origin is dict:
        if not isinstance(value, dict):
            raise TypeError(f"expected a mapping, got {value!r}")
        return value
    if origin is tuple:
        if isinstance(value, str) and typing.get_args(tp)[0] is str:
            value = [v.strip() for v in value.split(",") if v.strip()]
        if not isinstance(value, (list, tuple)):
            raise TypeError(f"expected a list, got {value!r}")
        args = typing.get_args(tp)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], key) for v in value)
        if len(value) != len(args):
            raise TypeError(f"expected {len(args)} entries, got {len(value)}")
        return tuple(_coerce(v, a, key) for v, a in zip(value, args))
    if origin in (typing.Union, types.UnionType):
        for a in typing.get_args(tp):
            if a is type(None) and value is None:
                return None
        return _coerce(value, [a for a in typing.get_args(tp) if a is not type(None)][0], key)
    raise TypeError(f"unsupported field type {tp!r}")


def _build(cls: type, data: Any, path: tuple[str, ...], lines: Mapping[tuple[str, ...], int], source: str | None) -> Any:
    here = ".".join(path)
    line = lines.get(path)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(here, f"expected a mapping, got {data!r}", line, source)
    hints = typing.get_type_hints(cls)
    fields = {f.name: f for f in dataclasses.fields(cls) if f.init}
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        kpath = path + (str(key),)
        kname = ".".join(kpath)
        if key not in fields:
            raise ConfigError(kname, f"unknown key (allowed: {', '.join(sorted(fields))})", lines.get(kpath), source)
        tp = hints[key]
        if dataclasses.is_dataclass(tp):
            kwargs[key] = _build(tp, value, kpath, lines, source)
            continue
        try:
            kwargs[key] = _coerce(value, tp, kname)
        except TypeError as exc:
            raise ConfigError(kname, str(exc), lines.get(kpath), source) from None
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        msg = str(exc)
        bad = next((k for k in sorted(kwargs, key=len, reverse=True) if msg.startswith(k)), None)
        if bad is None:
            bad = next((k for k in kwargs if k in msg), None)
        kpath = path + (bad,) if bad else path
        raise ConfigError(".".join(kpath), msg, lines.get(kpath, line), source) from None


def config_from_dict(
    data: Mapping[str, Any] | None,
    lines: Mapping[tuple[str, ...], int] | None = None,
    source: str | None = None,
) -> ExperimentConfig:
    return _build(ExperimentConfig, dict(data or {}), (), lines or {}, source)


def load_config(path: str | Path, overrides: Mapping[str, Any] | None = None) -> ExperimentConfig:
    """Read a YAML config, apply dotted-key overrides and validate everything."""
    source = str(path)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("", f"cannot read config: {exc.strerror}", None, source) from None
    try:
        data = yaml.safe_load(text)
        lines = _line_map(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError("", f"invalid YAML: {getattr(exc, 'problem', exc)}", mark.line + 1 if mark else None, source) from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError("", "top level must be a mapping", 1, source)
    data = apply_overrides(data or {}, overrides or {})
    return config_from_dict(data, lines, source)


def apply_overrides(data: Mapping[str, Any], overrides: Mapping[str, Any]) -> dict[str, Any]:
    """Set ``a.b.c`` style keys on a nested mapping (copying along the way)."""
    out = _deep_copy(data)
    for dotted, value in overrides.items():
        parts = dotted.split(".")
        node = out
        for p in parts[:-1]:
            nxt = node.get(p)
            if not isinstance(nxt, dict):
                nxt = {}
                node[p] = nxt
            node = nxt
        node[parts[-1]] = value
    return out


def _deep_copy(x: Any) -> Any:
    if isinstance(x, dict):
        return {k: _deep_copy(v) for k, v in x.items()}
    return x


def parse_override(text: str) -> tuple[str, Any]:
    """``key.path=value`` with the value parsed as YAML (so ``3``, ``0.5``, ``[1, 2]`` work)."""
    if "=" not in text:
        raise ConfigError(text, "override must look like key.path=value")
    key, raw = text.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError:
        value = raw
    return key.strip(), value


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
