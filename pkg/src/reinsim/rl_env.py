"""Gym-style environment: the agent re-tunes a layered program every interval.

Each step: squash the action, turn it into a :class:`DynamicAdjustment`, repair
the program, reprice it for the interval (projecting onto the remaining
reinsurance budget if needed), draw the interval's claims and update the
surplus.  The reward is ``ln(max(S_t - threshold, 0) + eps)``, which equals
``ln(S_t + eps)`` for the default threshold of zero.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Protocol

import numpy as np

from .claims import FrequencySpec
from .contracts import (
    ConstraintSet,
    DynamicAdjustment,
    LayeredProgram,
    apply_dynamic_adjustment,
    ceded_loss_by_layer,
    StopLossTable,
    raise_retentions_to_budget,
)
from .surplus import EpisodeConfig, ScenarioSet, SeveritySampler


class ClaimSource(Protocol):
    def draw(self, step: int, dt: float, rng: np.random.Generator) -> np.ndarray: ...


@dataclass
class SamplerClaims:
    """Poisson counts with severities from any sampler (parametric spec or trained VAE)."""

    freq: FrequencySpec
    severity: SeveritySampler

    def draw(self, step: int, dt: float, rng: np.random.Generator) -> np.ndarray:
        k = int(rng.poisson(self.freq.lam * dt))
        return self.severity.sample(k, rng) if k else np.zeros(0)


@dataclass
class ReplayClaims:
    """Replays one pre-drawn path of a :class:`ScenarioSet`; ignores the rng."""

    scenarios: ScenarioSet
    path: int = 0

    def draw(self, step: int, dt: float, rng: np.random.Generator) -> np.ndarray:
        return self.scenarios.step_claims(self.path, step)


@dataclass(frozen=True)
class EnvConfig:
    episode: EpisodeConfig
    constraints: ConstraintSet
    base_program: LayeredProgram
    premium_rate: float
    freq: FrequencySpec
    claims: ClaimSource
    pricing_sample: np.ndarray = field(repr=False)
    epsilon: float = 1.0
    lambda_ref: float = 10.0
    boundary_cap: float = 1500.0
    alpha_step: float = 0.05
    boundary_step: float = 0.02
    min_layer_width: float = 1.0
    cumulative_actions: bool = True
    variability_penalty: float = 0.0

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if not self.boundary_cap > 0:
            raise ValueError(f"boundary_cap must be > 0, got {self.boundary_cap}")
        if self.alpha_step < 0 or self.boundary_step < 0:
            raise ValueError("action scales must be >= 0")
        if self.variability_penalty < 0:
            raise ValueError("variability_penalty must be >= 0")
        object.__setattr__(self, "pricing", StopLossTable(self.pricing_sample))

    @property
    def n_layers(self) -> int:
        return self.base_program.k

    @property
    def obs_dim(self) -> int:
        return 2 + 3 * self.n_layers

    @property
    def action_dim(self) -> int:
        return 3 * self.n_layers

    def with_claims(self, claims: ClaimSource) -> "EnvConfig":
        return replace(self, claims=claims)


@dataclass
class EnvState:
    t: int
    surplus: float
    lam: float
    program: LayeredProgram
    cumulative_cost: float = 0.0
    done: bool = False
    ruined: bool = False


def action_to_adjustment(cfg: EnvConfig, action: np.ndarray) -> DynamicAdjustment:
    """``tanh`` squash then scale: retention by ``alpha_step``, boundaries by ``boundary_step * cap``."""
    k = cfg.n_layers
    a = np.tanh(np.nan_to_num(np.asarray(action, dtype=float), nan=0.0))
    if a.shape != (3 * k,):
        raise ValueError(f"action must have length {3 * k}, got shape {a.shape}")
    bstep = cfg.boundary_step * cfg.boundary_cap
    return DynamicAdjustment(a[:k] * cfg.alpha_step, a[k : 2 * k] * bstep, a[2 * k :] * bstep)


def observe(cfg: EnvConfig, state: EnvState) -> np.ndarray:
    """``[S/S0, lambda/lambda_ref, alpha_1..K, a_1..K / M, b_1..K / M]``."""
    p = state.program
    m = cfg.boundary_cap
    return np.concatenate(
        [
            [state.surplus / cfg.episode.initial_surplus, state.lam / cfg.lambda_ref],
            p.alpha,
            p.a / m,
            np.minimum(p.b, m) / m,
        ]
    )


def reward_fn(cfg: EnvConfig, surplus: float, previous: float) -> float:
    r = math.log(max(surplus - cfg.episode.ruin_threshold, 0.0) + cfg.epsilon)
    if cfg.variability_penalty:
        r -= cfg.variability_penalty * abs(surplus - previous) / cfg.episode.initial_surplus
    return r


def expected_claims_per_step(cfg: EnvConfig) -> float:
    return cfg.freq.lam * cfg.episode.dt


def price_step(cfg: EnvConfig, program: LayeredProgram) -> float:
    """Loaded reinsurance cost of holding ``program`` for one interval."""
    return cfg.pricing.premium(program, expected_claims_per_step(cfg))


def reset(cfg: EnvConfig, rng: np.random.Generator | None = None) -> tuple[EnvState, np.ndarray]:
    """Fresh episode at ``S0`` with the base program.  ``rng`` is accepted for API symmetry."""
    ep = cfg.episode
    below = ep.initial_surplus < ep.ruin_threshold
    state = EnvState(
        t=0,
        surplus=float(ep.initial_surplus),
        lam=cfg.freq.lam,
        program=cfg.base_program,
        done=below,
        ruined=below,
    )
    return state, observe(cfg, state)


def step(
    cfg: EnvConfig,
    state: EnvState,
    action: np.ndarray,
    rng: np.random.Generator,
) -> tuple[EnvState, np.ndarray, float, bool, dict[str, Any]]:
    """Advance one interval.  ``state`` is not mutated; a new one is returned."""
    if state.done:
        raise RuntimeError("episode is finished; call reset() before stepping again")
    ep = cfg.episode

    adj = action_to_adjustment(cfg, action)
    anchor = state.program.rebased() if cfg.cumulative_actions else state.program
    program = apply_dynamic_adjustment(anchor, adj, cfg.constraints, cfg.min_layer_width, cfg.boundary_cap)

    cost = price_step(cfg, program)
    steps_left = ep.n_steps - state.t
    remaining = cfg.constraints.p_max - state.cumulative_cost
    if cost * steps_left > remaining:
        program = raise_retentions_to_budget(program, cost * steps_left, remaining, cfg.constraints)
        cost = price_step(cfg, program)

    claims = cfg.claims.draw(state.t, ep.dt, rng)
    ceded = float(ceded_loss_by_layer(program, claims).sum()) if claims.size else 0.0
    retained = float(claims.sum()) - ceded
    surplus = state.surplus + cfg.premium_rate * ep.dt - retained - cost

    ruined = surplus < ep.ruin_threshold
    t = state.t + 1
    nxt = EnvState(
        t=t,
        surplus=surplus,
        lam=state.lam,
        program=program,
        cumulative_cost=state.cumulative_cost + cost,
        done=ruined or t >= ep.n_steps,
        ruined=ruined,
    )
    reward = reward_fn(cfg, surplus, state.surplus)
    info = {
        "surplus": surplus,
        "claims_count": int(claims.size),
        "retained": retained,
        "ceded": ceded,
        "cost": cost,
        "ruined": ruined,
        "truncated": nxt.done and not ruined,
    }
    return nxt, observe(cfg, nxt), reward, nxt.done, info


class ReinsuranceEnv:
    """Stateful wrapper over :func:`reset` / :func:`step` with the familiar gym calling style.

    ``step`` returns ``(observation, reward, done, info)``; ``info["truncated"]``
    marks episodes that hit the horizon without ruin, so learners can tell
    the time limit apart from a terminal state.
    """

    def __init__(self, cfg: EnvConfig):
        self.cfg = cfg
        self.state: EnvState | None = None
        self.rng = np.random.default_rng(0)
        self.obs_dim = cfg.obs_dim
        self.action_dim = cfg.action_dim

    def reset(self, rng: np.random.Generator | int | None = None) -> np.ndarray:
        if rng is not None:
            self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.state, obs = reset(self.cfg, self.rng)
        return obs

    def step(self, action: np.ndarray) -> tuple[np.ndarray, float, bool, dict[str, Any]]:
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        self.state, obs, reward, done, info = step(self.cfg, self.state, action, self.rng)
        return obs, reward, done, info


@dataclass
class EpisodeTrace:
    rows: list[dict[str, Any]] = field(default_factory=list)

    @property
    def final_surplus(self) -> float:
        return self.rows[-1]["surplus"]

    def to_csv(self, path: str | Path) -> None:
        if not self.rows:
            return
        keys = list(self.rows[0].keys())
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(keys)
            for r in self.rows:
                w.writerow([repr(v) if isinstance(v, float) else v for v in r.values()])


def run_episode(
    env: ReinsuranceEnv,
    act: Callable[[np.ndarray], np.ndarray],
    rng: np.random.Generator | int | None = None,
    trace: bool = False,
) -> tuple[float, bool, float, float, EpisodeTrace | None]:
    """Roll out one episode; returns ``(final_surplus, ruined, total_reward, total_cost, trace)``."""
    obs = env.reset(rng)
    st = env.state
    tr = EpisodeTrace() if trace else None
    total_reward = 0.0
    done = st.done
    while not done:
        action = act(obs)
        obs, r, done, info = env.step(action)
        total_reward += r
        if tr is not None:
            p = env.state.program
            row = {
                "step": env.state.t,
                "time": env.state.t * env.cfg.episode.dt,
                "surplus": info["surplus"],
                "claims_count": info["claims_count"],
                "retained_sum": info["retained"],
                "ceded_sum": info["ceded"],
                "cost": info["cost"],
            }
            for k in range(p.k):
                row[f"alpha_{k + 1}"] = float(p.alpha[k])
                row[f"a_{k + 1}"] = float(p.a[k])
                row[f"b_{k + 1}"] = float(p.b[k])
            for j, v in enumerate(np.asarray(action, dtype=float)):
                row[f"action_{j}"] = float(v)
            tr.rows.append(row)
    st = env.state
    return st.surplus, st.ruined, total_reward, st.cumulative_cost, tr


@dataclass
class PolicyEvaluation:
    """Per-path outcomes of a policy replayed over a scenario set."""

    final_surplus: np.ndarray
    ruined: np.ndarray
    total_cost: np.ndarray
    total_reward: np.ndarray

    @property
    def mean_final(self) -> float:
        return float(self.final_surplus.mean())

    @property
    def ruin_probability(self) -> float:
        return float(self.ruined.mean())


def evaluate_on_scenarios(
    cfg: EnvConfig,
    act: Callable[[np.ndarray], np.ndarray],
    scenarios: ScenarioSet,
    ruin_threshold: float | None = None,
) -> PolicyEvaluation:
    """Replay ``act`` on every path of ``scenarios`` (common random numbers across policies).

    Episodes stop at ruin as in training.  ``ruin_threshold`` overrides the
    episode threshold for this evaluation only.
    """
    if ruin_threshold is not None:
        cfg = replace(cfg, episode=replace(cfg.episode, ruin_threshold=float(ruin_threshold)))
    if scenarios.n_steps != cfg.episode.n_steps:
        raise ValueError("scenario length does not match the episode")
    n = scenarios.n_paths
    finals, costs, rewards = np.zeros(n), np.zeros(n), np.zeros(n)
    ruined = np.zeros(n, dtype=bool)
    dummy = np.random.default_rng(0)
    for p in range(n):
        pcfg = cfg.with_claims(ReplayClaims(scenarios, p))
        state, obs = reset(pcfg)
        total = 0.0
        while not state.done:
            state, obs, r, _, _ = step(pcfg, state, act(obs), dummy)
            total += r
        finals[p], ruined[p], costs[p], rewards[p] = state.surplus, state.ruined, state.cumulative_cost, total
    return PolicyEvaluation(finals, ruined, costs, rewards)
