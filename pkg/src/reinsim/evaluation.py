"""Distribution diagnostics and frozen-policy evaluation under changed claim processes.

Out-of-sample, sensitivity and stress runs change only the claims the policy
faces.  The insurer's premium rate and the reinsurance pricing stay as
configured, since the point is to see how a policy tuned on one claim model
copes when reality differs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import kolmogorov

from .claims import ClaimDistributionSpec, Lognormal
from .rl_env import EnvConfig, PolicyEvaluation, evaluate_on_scenarios
from .surplus import SeveritySampler, draw_scenarios

QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


@dataclass(frozen=True)
class KsResult:
    statistic: float
    p_value: float
    d_location: float
    n_a: int
    n_b: int

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "d_location": self.d_location,
            "n_a": self.n_a,
            "n_b": self.n_b,
        }


def ks_two_sample(a: Sequence[float] | np.ndarray, b: Sequence[float] | np.ndarray) -> KsResult:
    """Two-sample KS statistic, asymptotic p-value and the location of the largest CDF gap.

    The gap is evaluated on the merged sorted support with right-continuous
    empirical CDFs.  Counts are compared as integers, so ties in the gap are
    exact and ``d_location`` is the smallest amount where the supremum is hit.
    """
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    na, nb = a.size, b.size
    if na == 0 or nb == 0:
        raise ValueError("both samples must be nonempty")
    if np.isnan(a).any() or np.isnan(b).any():
        raise ValueError("samples must not contain NaN")
    support = np.union1d(a, b)
    ca = np.searchsorted(a, support, side="right").astype(np.int64)
    cb = np.searchsorted(b, support, side="right").astype(np.int64)
    gap = np.abs(ca * nb - cb * na)
    i = int(np.argmax(gap))
    stat = float(gap[i]) / (na * nb)
    en = math.sqrt(na * nb / (na + nb))
    p = float(np.clip(kolmogorov(en * stat), 0.0, 1.0))
    return KsResult(stat, p, float(support[i]), na, nb)


def histogram_table(
    series: dict[str, np.ndarray],
    bins: int = 50,
    log_bins: bool | None = None,
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Density-normalized histograms on shared edges.

    Edges are log-spaced when every value is positive (claim amounts span
    several orders of magnitude), linear otherwise.
    """
    allv = np.concatenate([np.asarray(v, dtype=float).ravel() for v in series.values()])
    lo, hi = float(allv.min()), float(allv.max())
    if log_bins is None:
        log_bins = lo > 0
    if hi <= lo:
        hi = lo + 1.0
    edges = np.geomspace(lo, hi, bins + 1) if log_bins else np.linspace(lo, hi, bins + 1)
    dens = {k: np.histogram(np.asarray(v, dtype=float), bins=edges, density=True)[0] for k, v in series.items()}
    return edges, dens


def write_histogram_csv(path: str | Path, edges: np.ndarray, dens: dict[str, np.ndarray]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_left", "bin_right", *[f"density_{k}" for k in dens]])
        for i in range(edges.size - 1):
            w.writerow([repr(float(edges[i])), repr(float(edges[i + 1]))] + [repr(float(d[i])) for d in dens.values()])


@dataclass
class DistributionReport:
    ks: KsResult
    edges: np.ndarray
    densities: dict[str, np.ndarray]


def distribution_report(
    training: np.ndarray,
    generated: np.ndarray,
    bins: int = 50,
    histogram_path: str | Path | None = None,
) -> DistributionReport:
    ks = ks_two_sample(training, generated)
    edges, dens = histogram_table({"training": np.asarray(training), "generated": np.asarray(generated)}, bins)
    if histogram_path is not None:
        write_histogram_csv(histogram_path, edges, dens)
    return DistributionReport(ks, edges, dens)


# Frozen-policy evaluation.


@dataclass
class OosReport:
    mean_surplus: float
    ruin_probability: float
    final_surplus: np.ndarray
    ruin_threshold: float
    distribution: dict
    mean_cost: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.ruin_probability <= 1.0:
            raise ValueError("ruin probability must lie in [0, 1]")

    def summary(self) -> dict:
        return {
            "mean_surplus": self.mean_surplus,
            "ruin_probability": self.ruin_probability,
            "ruin_threshold": self.ruin_threshold,
            "n_paths": int(self.final_surplus.size),
            "mean_reinsurance_cost": self.mean_cost,
            "distribution": self.distribution,
            "surplus_quantiles": {str(q): float(v) for q, v in zip(QUANTILES, np.quantile(self.final_surplus, QUANTILES))},
        }


def _report(ev: PolicyEvaluation, threshold: float, dist: dict) -> OosReport:
    return OosReport(ev.mean_final, ev.ruin_probability, ev.final_surplus, threshold, dist, float(ev.total_cost.mean()))


def out_of_sample_eval(
    act: Callable[[np.ndarray], np.ndarray],
    env_cfg: EnvConfig,
    severity: SeveritySampler,
    n_paths: int,
    seed: int | np.random.SeedSequence,
    ruin_threshold: float = -100.0,
) -> OosReport:
    """Frozen policy on claims from ``severity`` (counts from the env's frequency)."""
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    scen = draw_scenarios(env_cfg.freq, severity, env_cfg.episode, n_paths, seed)
    ev = evaluate_on_scenarios(env_cfg, act, scen, ruin_threshold=ruin_threshold)
    dist = severity.to_dict() if hasattr(severity, "to_dict") else {"kind": type(severity).__name__}
    return _report(ev, ruin_threshold, dist)


@dataclass(frozen=True)
class SensitivityRow:
    mu: float
    sigma: float
    mean_surplus: float
    ruin_probability: float


def sensitivity_sweep(
    act: Callable[[np.ndarray], np.ndarray],
    env_cfg: EnvConfig,
    cells: Sequence[tuple[float, float]],
    n_paths: int,
    seed: int,
    ruin_threshold: float = -100.0,
) -> list[SensitivityRow]:
    """One out-of-sample run per lognormal ``(mu, sigma)`` cell, all on the same seed."""
    if not cells:
        raise ValueError("need at least one (mu, sigma) cell")
    rows = []
    for mu, sigma in cells:
        rep = out_of_sample_eval(act, env_cfg, Lognormal(float(mu), float(sigma)), n_paths, seed, ruin_threshold)
        rows.append(SensitivityRow(float(mu), float(sigma), rep.mean_surplus, rep.ruin_probability))
    return rows


def write_sensitivity_csv(path: str | Path, rows: Sequence[SensitivityRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mu", "sigma", "mean_surplus", "ruin_probability"])
        for r in rows:
            w.writerow([repr(r.mu), repr(r.sigma), repr(r.mean_surplus), repr(r.ruin_probability)])


@dataclass(frozen=True)
class StressScenario:
    """Scaled and shocked claim process.

    Multipliers act on steps ``window[0] <= t < window[1]`` (all steps when
    ``window`` is None); ``shock`` adds one claim ``(step, amount)`` to every path.
    """

    name: str
    frequency_multiplier: float = 1.0
    severity_multiplier: float = 1.0
    window: tuple[int, int] | None = None
    shock: tuple[int, float] | None = None

    def __post_init__(self) -> None:
        if not (self.frequency_multiplier > 0 and self.severity_multiplier > 0):
            raise ValueError("stress multipliers must be > 0")
        if self.window is not None and not 0 <= self.window[0] < self.window[1]:
            raise ValueError(f"window must satisfy 0 <= start < end, got {self.window}")
        if self.shock is not None and (self.shock[0] < 0 or self.shock[1] < 0):
            raise ValueError("shock step and amount must be >= 0")

    def multipliers(self, n_steps: int) -> tuple[np.ndarray, np.ndarray]:
        fm, sm = np.ones(n_steps), np.ones(n_steps)
        lo, hi = (0, n_steps) if self.window is None else self.window
        fm[lo:hi] = self.frequency_multiplier
        sm[lo:hi] = self.severity_multiplier
        return fm, sm

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "frequency_multiplier": self.frequency_multiplier,
            "severity_multiplier": self.severity_multiplier,
            "window": None if self.window is None else list(self.window),
            "shock": None if self.shock is None else [self.shock[0], self.shock[1]],
        }


def bundled_scenarios(
    n_steps: int,
    mean_claim: float,
    rng: np.random.Generator,
    high_frequency_multiplier: float = 2.0,
    pandemic_frequency_multiplier: float = 1.5,
    pandemic_severity_multiplier: float = 1.5,
    pandemic_fraction: float = 0.2,
    catastrophe_mean_multiple: float = 50.0,
) -> list[StressScenario]:
    """High frequency, a pandemic window at a random start, and one catastrophe at a random step."""
    width = max(1, int(round(pandemic_fraction * n_steps)))
    start = int(rng.integers(0, n_steps - width + 1))
    cat_step = int(rng.integers(0, n_steps))
    return [
        StressScenario("high_frequency", frequency_multiplier=high_frequency_multiplier),
        StressScenario(
            "pandemic",
            frequency_multiplier=pandemic_frequency_multiplier,
            severity_multiplier=pandemic_severity_multiplier,
            window=(start, start + width),
        ),
        StressScenario("catastrophe", shock=(cat_step, catastrophe_mean_multiple * mean_claim)),
    ]


@dataclass
class StressReport:
    scenario: StressScenario
    mean_surplus: float
    ruin_probability: float
    quantiles: dict[str, float] = field(default_factory=dict)
    mean_cost: float = 0.0

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.to_dict(),
            "mean_surplus": self.mean_surplus,
            "ruin_probability": self.ruin_probability,
            "surplus_quantiles": self.quantiles,
            "mean_reinsurance_cost": self.mean_cost,
        }


def stress_test(
    act: Callable[[np.ndarray], np.ndarray],
    env_cfg: EnvConfig,
    severity: ClaimDistributionSpec | SeveritySampler,
    scenario: StressScenario,
    n_paths: int,
    seed: int | np.random.SeedSequence,
    ruin_threshold: float | None = None,
) -> StressReport:
    ep = env_cfg.episode
    if scenario.window is not None and scenario.window[1] > ep.n_steps:
        raise ValueError("stress window runs past the episode")
    if scenario.shock is not None and scenario.shock[0] >= ep.n_steps:
        raise ValueError("shock step lies outside the episode")
    fm, sm = scenario.multipliers(ep.n_steps)
    shocks = [scenario.shock] if scenario.shock is not None else None
    scen = draw_scenarios(env_cfg.freq, severity, ep, n_paths, seed, fm, sm, shocks)
    ev = evaluate_on_scenarios(env_cfg, act, scen, ruin_threshold=ruin_threshold)
    q = {str(k): float(v) for k, v in zip(QUANTILES, np.quantile(ev.final_surplus, QUANTILES))}
    return StressReport(scenario, ev.mean_final, ev.ruin_probability, q, float(ev.total_cost.mean()))
