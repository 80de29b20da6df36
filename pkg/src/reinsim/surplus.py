"""Discrete-time surplus recursion, path simulation and ruin estimation.

Claims for many paths can be pre-drawn into a :class:`ScenarioSet`; every
strategy evaluated on the same set sees exactly the same claims (common random
numbers), which is what makes method comparisons low-variance.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .claims import FrequencySpec, PremiumSpec, sample_claim_count
from .contracts import LayeredProgram, ceded_loss_by_layer, reinsurance_premium


class SeveritySampler(Protocol):
    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray: ...


@dataclass(frozen=True)
class EpisodeConfig:
    horizon: float = 10.0
    n_steps: int = 200
    initial_surplus: float = 20_000.0
    ruin_threshold: float = 0.0

    def __post_init__(self) -> None:
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if not (math.isfinite(self.horizon) and self.horizon > 0):
            raise ValueError(f"horizon must be > 0, got {self.horizon}")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps


@dataclass
class SurplusPath:
    values: np.ndarray
    ruined: bool
    ruin_step: int | None
    total_reinsurance_cost: float
    claims_count: np.ndarray
    retained_sum: np.ndarray
    ceded_sum: np.ndarray
    cost: np.ndarray
    dt: float

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "time", "surplus", "claims_count", "retained_sum", "ceded_sum", "cost"])
            for i, s in enumerate(self.values):
                if i == 0:
                    w.writerow([0, 0.0, repr(float(s)), 0, 0.0, 0.0, 0.0])
                else:
                    w.writerow(
                        [
                            i,
                            repr(i * self.dt),
                            repr(float(s)),
                            int(self.claims_count[i - 1]),
                            repr(float(self.retained_sum[i - 1])),
                            repr(float(self.ceded_sum[i - 1])),
                            repr(float(self.cost[i - 1])),
                        ]
                    )


@dataclass(frozen=True)
class RuinEstimate:
    probability: float
    ci_low: float
    ci_high: float
    n_paths: int

    @property
    def half_width(self) -> float:
        return 1.96 * math.sqrt(self.probability * (1.0 - self.probability) / self.n_paths)


def step_surplus(
    s: float,
    c: float,
    dt: float,
    retained_claims: Sequence[float] | np.ndarray,
    reinsurance_cost_step: float = 0.0,
) -> float:
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    return s + c * dt - float(np.sum(retained_claims)) - reinsurance_cost_step


def first_crossing(values: np.ndarray, threshold: float) -> int | None:
    below = np.flatnonzero(values < threshold)
    return int(below[0]) if below.size else None


def simulate_path(
    cfg: EpisodeConfig,
    program: LayeredProgram,
    premium: PremiumSpec,
    freq: FrequencySpec,
    spec: SeveritySampler,
    rng: np.random.Generator,
    reinsurance_cost: float | None = None,
    n_mc: int = 10_000,
) -> SurplusPath:
    """One surplus path under a static program; the reinsurance premium is spread evenly over steps.

    If ``reinsurance_cost`` (the total over the horizon) is not given it is
    priced first with ``n_mc`` severity draws from ``rng``.
    """
    if reinsurance_cost is None:
        reinsurance_cost = reinsurance_premium(program, spec, freq, cfg.horizon, n_mc, rng)
    n, dt = cfg.n_steps, cfg.dt
    cost_step = reinsurance_cost / n
    values = np.empty(n + 1)
    values[0] = cfg.initial_surplus
    counts = np.zeros(n, dtype=np.int64)
    retained = np.zeros(n)
    ceded = np.zeros(n)
    for i in range(n):
        k = sample_claim_count(freq, dt, rng)
        x = spec.sample(k, rng)
        per_layer = ceded_loss_by_layer(program, x) if k else np.zeros((0, program.k))
        ceded[i] = per_layer.sum()
        retained[i] = x.sum() - ceded[i]
        counts[i] = k
        values[i + 1] = step_surplus(values[i], premium.c, dt, [retained[i]], cost_step)
    ruin_step = first_crossing(values, cfg.ruin_threshold)
    return SurplusPath(
        values=values,
        ruined=ruin_step is not None,
        ruin_step=ruin_step,
        total_reinsurance_cost=float(reinsurance_cost),
        claims_count=counts,
        retained_sum=retained,
        ceded_sum=ceded,
        cost=np.full(n, cost_step),
        dt=dt,
    )


@dataclass
class ScenarioSet:
    """Pre-drawn claims for ``n_paths`` paths of ``n_steps`` intervals.

    ``amounts`` is flat, ordered by (path, step, draw); ``counts[p, t]`` says
    how many of them belong to interval ``t`` of path ``p``.
    """

    counts: np.ndarray
    amounts: np.ndarray

    def __post_init__(self) -> None:
        self.counts = np.asarray(self.counts, dtype=np.int64)
        self.amounts = np.asarray(self.amounts, dtype=float)
        if self.counts.sum() != self.amounts.size:
            raise ValueError("claim counts do not match the number of amounts")
        self._offsets = np.concatenate([[0], np.cumsum(self.counts.ravel())])

    @property
    def n_paths(self) -> int:
        return self.counts.shape[0]

    @property
    def n_steps(self) -> int:
        return self.counts.shape[1]

    def cell_index(self) -> np.ndarray:
        """Flat ``path * n_steps + step`` index of every amount."""
        return np.repeat(np.arange(self.counts.size), self.counts.ravel())

    def step_claims(self, path: int, step: int) -> np.ndarray:
        j = path * self.n_steps + step
        return self.amounts[self._offsets[j] : self._offsets[j + 1]]

    def totals(self) -> np.ndarray:
        return np.bincount(self.cell_index(), weights=self.amounts, minlength=self.counts.size).reshape(self.counts.shape)

    def path(self, p: int) -> "ScenarioSet":
        lo, hi = self._offsets[p * self.n_steps], self._offsets[(p + 1) * self.n_steps]
        return ScenarioSet(self.counts[p : p + 1], self.amounts[lo:hi])


def draw_scenarios(
    freq: FrequencySpec,
    severity: SeveritySampler,
    cfg: EpisodeConfig,
    n_paths: int,
    seed: int | np.random.SeedSequence,
    frequency_multiplier: np.ndarray | float = 1.0,
    severity_multiplier: np.ndarray | float = 1.0,
    shocks: Sequence[tuple[int, float]] | None = None,
) -> ScenarioSet:
    """Draw claims path by path from spawned streams.

    Multipliers are per-step arrays (or scalars).  The unstressed claims of a
    path do not depend on the multipliers: extra frequency is superposed from a
    second stream and reduced frequency thins the base claims, so stressed and
    unstressed scenarios with the same seed are coupled path by path.
    ``shocks`` adds ``(step, amount)`` claims to every path.
    """
    n = cfg.n_steps
    fm = np.broadcast_to(np.asarray(frequency_multiplier, dtype=float), (n,))
    sm = np.broadcast_to(np.asarray(severity_multiplier, dtype=float), (n,))
    if np.any(fm < 0) or np.any(sm <= 0):
        raise ValueError("stress multipliers must be positive")
    mean_count = freq.lam * cfg.dt
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    all_counts = np.zeros((n_paths, n), dtype=np.int64)
    chunks: list[np.ndarray] = []
    stressed = bool(np.any(fm != 1.0))
    for p, child in enumerate(ss.spawn(n_paths)):
        base_ss, extra_ss = child.spawn(2)
        rng = np.random.default_rng(base_ss)
        counts = rng.poisson(mean_count, size=n)
        sizes = severity.sample(int(counts.sum()), rng)
        step_of = np.repeat(np.arange(n), counts)
        if stressed:
            extra = np.random.default_rng(extra_ss)
            keep = extra.random(sizes.size) < np.minimum(fm, 1.0)[step_of]
            add_counts = extra.poisson(mean_count * np.maximum(fm - 1.0, 0.0))
            add_sizes = severity.sample(int(add_counts.sum()), extra)
            step_of = np.concatenate([step_of[keep], np.repeat(np.arange(n), add_counts)])
            sizes = np.concatenate([sizes[keep], add_sizes])
        if shocks:
            step_of = np.concatenate([step_of, [int(t) for t, _ in shocks]])
            sizes = np.concatenate([sizes, [float(x) for _, x in shocks]])
        order = np.argsort(step_of, kind="stable")
        step_of, sizes = step_of[order], sizes[order] * sm[step_of[order]]
        all_counts[p] = np.bincount(step_of, minlength=n)
        chunks.append(sizes)
    amounts = np.concatenate(chunks) if chunks else np.zeros(0)
    return ScenarioSet(all_counts, amounts)


@dataclass
class StaticRun:
    """Vectorized outcome of a static program over a scenario set."""

    surplus: np.ndarray  # (n_paths, n_steps + 1)
    ruined: np.ndarray
    total_cost: float

    @property
    def final(self) -> np.ndarray:
        return self.surplus[:, -1]

    @property
    def mean_final(self) -> float:
        return float(self.final.mean())

    @property
    def ruin_probability(self) -> float:
        return float(self.ruined.mean())


def simulate_static(
    cfg: EpisodeConfig,
    program: LayeredProgram,
    premium_rate: float,
    scenarios: ScenarioSet,
    reinsurance_cost: float,
) -> StaticRun:
    if scenarios.n_steps != cfg.n_steps:
        raise ValueError("scenario length does not match the episode")
    n, dt = cfg.n_steps, cfg.dt
    ceded = ceded_loss_by_layer(program, scenarios.amounts).sum(axis=-1) if scenarios.amounts.size else np.zeros(0)
    retained = scenarios.amounts - ceded
    per_step = np.bincount(scenarios.cell_index(), weights=retained, minlength=scenarios.counts.size)
    per_step = per_step.reshape(scenarios.counts.shape)
    increments = premium_rate * dt - per_step - reinsurance_cost / n
    surplus = np.empty((scenarios.n_paths, n + 1))
    surplus[:, 0] = cfg.initial_surplus
    surplus[:, 1:] = cfg.initial_surplus + np.cumsum(increments, axis=1)
    ruined = (surplus < cfg.ruin_threshold).any(axis=1)
    return StaticRun(surplus, ruined, float(reinsurance_cost))


def ruin_estimate(ruined: np.ndarray) -> RuinEstimate:
    n = int(np.size(ruined))
    if n < 1:
        raise ValueError("need at least one path")
    p = float(np.mean(ruined))
    hw = 1.96 * math.sqrt(p * (1.0 - p) / n)
    return RuinEstimate(p, max(0.0, p - hw), min(1.0, p + hw), n)


def estimate_ruin_probability(
    cfg: EpisodeConfig,
    program: LayeredProgram,
    premium: PremiumSpec,
    freq: FrequencySpec,
    spec: SeveritySampler,
    n_paths: int,
    rng: np.random.Generator,
    reinsurance_cost: float | None = None,
    n_mc: int = 10_000,
) -> RuinEstimate:
    """Fraction of ruined paths with a 95% normal-approximation interval."""
    if n_paths < 1:
        raise ValueError(f"n_paths must be >= 1, got {n_paths}")
    if reinsurance_cost is None:
        reinsurance_cost = reinsurance_premium(program, spec, freq, cfg.horizon, n_mc, rng)
    seed = np.random.SeedSequence(int(rng.integers(2**63)))
    scenarios = draw_scenarios(freq, spec, cfg, n_paths, seed)
    run = simulate_static(cfg, program, premium.c, scenarios, reinsurance_cost)
    return ruin_estimate(run.ruined)
