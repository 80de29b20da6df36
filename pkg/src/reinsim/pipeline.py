"""Glue from an :class:`ExperimentConfig` to trained models, environments and reports.

Every stage draws from its own named seed stream (see ``SeedSection``), so
stages can be re-run independently and still reproduce the same numbers.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .benchmarks import (
    BaselineSpec,
    BenchmarkResult,
    run_dp_baseline,
    run_hybrid_deep_mc,
    run_hybrid_rl,
    run_monte_carlo,
    run_multi_objective,
)
from .claims import Lognormal, Mixture, Pareto, default_combined
from .config import ExperimentConfig
from .contracts import StopLossTable
from .evaluation import DistributionReport, distribution_report
from .ppo import MetricsRow, PolicyModel, train
from .rl_env import ClaimSource, EnvConfig, ReinsuranceEnv, SamplerClaims
from .surplus import SeveritySampler, draw_scenarios
from .vae import EpochStats, VaeModel, generate_claims, train_vae


def make_env_config(exp: ExperimentConfig, claims: ClaimSource | None = None) -> EnvConfig:
    p, e = exp.program, exp.env
    return EnvConfig(
        episode=exp.episode,
        constraints=exp.constraints(),
        base_program=exp.base_program(),
        premium_rate=exp.premium_rate(),
        freq=exp.frequency(),
        claims=claims if claims is not None else SamplerClaims(exp.frequency(), exp.severity()),
        pricing_sample=exp.pricing_sample(),
        epsilon=e.epsilon,
        lambda_ref=exp.claims.lam,
        boundary_cap=p.boundary_cap,
        alpha_step=e.alpha_step,
        boundary_step=e.boundary_step,
        min_layer_width=p.min_layer_width,
        cumulative_actions=e.cumulative_actions,
        variability_penalty=e.variability_penalty,
    )


@dataclass
class VaeStage:
    model: VaeModel
    history: list[EpochStats]
    training_claims: np.ndarray
    generated: np.ndarray
    report: DistributionReport


def train_vae_stage(
    exp: ExperimentConfig,
    severity: SeveritySampler | None = None,
    stream: str = "vae",
) -> VaeStage:
    """Sample training claims, fit the VAE, generate claims and compare them with the training set."""
    rng = exp.seeds.rng(stream)
    sev = exp.severity() if severity is None else severity
    claims = sev.sample(exp.vae.n_train, rng)
    model, history = train_vae(claims, exp.vae.train_config(), rng)
    generated = generate_claims(model, exp.vae.n_generate, rng)
    report = distribution_report(claims, generated, exp.vae.hist_bins)
    return VaeStage(model, history, claims, generated, report)


def family_specs(exp: ExperimentConfig) -> dict[str, Lognormal | Pareto | Mixture]:
    """Lognormal, Pareto and combined families around the configured lognormal."""
    d = exp.claims.distribution
    mu, sigma = (float(d["mu"]), float(d["sigma"])) if d.get("kind") == "lognormal" else (3.5, 1.0)
    combined = default_combined(mu, sigma)
    return {"lognormal": Lognormal(mu, sigma), "pareto": combined.components[1][1], "combined": combined}


def agent_claims(exp: ExperimentConfig, vae: VaeModel | None) -> ClaimSource:
    if vae is not None:
        return SamplerClaims(exp.frequency(), vae)
    return SamplerClaims(exp.frequency(), exp.severity())


@dataclass
class AgentStage:
    policy: PolicyModel
    metrics: list[MetricsRow]
    env_cfg: EnvConfig
    seconds: float


def train_agent_stage(exp: ExperimentConfig, vae: VaeModel | None = None) -> AgentStage:
    env_cfg = make_env_config(exp, agent_claims(exp, vae))
    t0 = time.perf_counter()
    policy, metrics = train(lambda: ReinsuranceEnv(env_cfg), exp.ppo, exp.seeds.rng("agent"))
    return AgentStage(policy, metrics, env_cfg, time.perf_counter() - t0)


def baseline_spec(exp: ExperimentConfig) -> BaselineSpec:
    b = exp.benchmark
    scen = draw_scenarios(exp.frequency(), exp.severity(), exp.episode, b.eval_paths, exp.seeds.sequence("evaluation"))
    search_seed = int(exp.seeds.sequence("search").generate_state(1)[0])
    return BaselineSpec(
        episode=exp.episode,
        freq=exp.frequency(),
        severity=exp.severity(),
        premium_rate=exp.premium_rate(),
        constraints=exp.constraints(),
        n_layers=exp.program.n_layers,
        theta_k=exp.program.theta_k,
        boundary_cap=exp.program.boundary_cap,
        min_layer_width=exp.program.min_layer_width,
        pricing=StopLossTable(exp.pricing_sample()),
        eval_scenarios=scen,
        search_seed=search_seed,
        mc_candidates=b.mc_candidates,
        mc_paths=b.mc_paths,
        hdmc_candidates=b.hdmc_candidates,
        hdmc_screen_paths=b.hdmc_screen_paths,
        hdmc_top_fraction=b.hdmc_top_fraction,
        dp_surplus_buckets=b.dp_surplus_buckets,
        dp_alpha_grid=b.dp_alpha_grid,
        dp_quadrature_samples=b.dp_quadrature_samples,
        mo_alpha_grid=b.mo_alpha_grid,
        mo_attach_grid=tuple(b.mo_attach_grid),
        mo_weights=tuple(b.mo_weights),
    )


def policy_actor(policy: PolicyModel, stochastic: bool = False, seed: int | None = None):
    """Deterministic mean actions by default; optional sampling from the policy distribution."""
    if not stochastic:
        return policy.act_deterministic
    rng = np.random.default_rng(seed)

    def act(obs: np.ndarray) -> np.ndarray:
        mean = policy.act_deterministic(obs)
        return mean + np.exp(policy.clamped_log_std()) * rng.standard_normal(mean.shape)

    return act


def run_benchmarks(
    exp: ExperimentConfig,
    methods: Sequence[str] | None = None,
    agent: AgentStage | None = None,
    vae: VaeModel | None = None,
) -> list[BenchmarkResult]:
    """Run the selected methods in a fixed order on shared scenarios."""
    methods = tuple(exp.benchmark.methods if methods is None else methods)
    spec = baseline_spec(exp)
    out: list[BenchmarkResult] = []
    for m in ("dp", "mc", "hdmc", "mo", "rl"):
        if m not in methods:
            continue
        if m == "dp":
            out.append(run_dp_baseline(spec))
        elif m == "mc":
            out.append(run_monte_carlo(spec))
        elif m == "hdmc":
            out.append(run_hybrid_deep_mc(spec))
        elif m == "mo":
            out.append(run_multi_objective(spec))
        else:
            if agent is None:
                raise ValueError("the rl method needs a trained agent")
            eval_cfg = make_env_config(exp)
            scen = spec.eval_scenarios
            if exp.benchmark.rl_eval_claims == "vae":
                if vae is None:
                    raise ValueError("rl_eval_claims = 'vae' needs a VAE model")
                scen = draw_scenarios(exp.frequency(), vae, exp.episode, exp.benchmark.eval_paths, exp.seeds.sequence("evaluation"))
            act = policy_actor(agent.policy, exp.benchmark.rl_stochastic, exp.seeds.master)
            details: dict[str, Any] = {
                "train_seconds": agent.seconds,
                "claims": exp.benchmark.rl_eval_claims,
                "stochastic": exp.benchmark.rl_stochastic,
            }
            out.append(run_hybrid_rl(spec, eval_cfg, act, scen, details))
    return out
