"""Five-way method comparison on shared claim scenarios.

Every method is scored on the same evaluation :class:`ScenarioSet`, so their
surpluses differ only through the reinsurance decisions.  Search-based methods
select on a separate search scenario set and are then re-evaluated on the
shared one, so no method's reported number carries its own selection bias.

Methods:
    dp    value iteration over (step, surplus bucket) with proportional retention
    mc    random search over static layered programs
    hdmc  random search screened by a small value-prediction net
    mo    grid scan of static programs under a weighted surplus/ruin objective
    rl    a trained PPO policy acting every interval
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
from scipy import stats

from .claims import ClaimDistributionSpec, FrequencySpec
from .contracts import ConstraintSet, LayeredProgram, StopLossTable, repair_boundaries
from .nnet import Adam, DenseNet, backward, forward
from .rl_env import EnvConfig, evaluate_on_scenarios
from .surplus import EpisodeConfig, ScenarioSet, draw_scenarios, ruin_estimate, simulate_static

CSV_COLUMNS = ("method", "final_surplus", "ruin_probability", "time_s", "budget_utilization", "efficiency")
METHOD_NAMES = {
    "dp": "Dynamic Programming",
    "mc": "Monte Carlo Simulation",
    "hdmc": "Hybrid Deep Monte Carlo",
    "mo": "Multi-Objective Optimization",
    "rl": "Hybrid RL with Generative Models",
}


def efficiency(final_surplus: float, seconds: float) -> float:
    """Surplus per second of wall-clock time."""
    if not seconds > 0:
        raise ValueError(f"seconds must be > 0, got {seconds}")
    return final_surplus / seconds


@dataclass
class BenchmarkResult:
    method: str
    final_surplus: float
    ruin_probability: float
    time_s: float
    budget_utilization: float | None
    efficiency: float
    n_paths: int
    details: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0.0 <= self.ruin_probability <= 1.0:
            raise ValueError("ruin probability must lie in [0, 1]")

    def row(self) -> dict[str, Any]:
        return {
            "method": self.method,
            "final_surplus": self.final_surplus,
            "ruin_probability": self.ruin_probability,
            "time_s": self.time_s,
            "budget_utilization": self.budget_utilization,
            "efficiency": self.efficiency,
        }


@dataclass
class BaselineSpec:
    """Shared setup for all methods plus per-method knobs."""

    episode: EpisodeConfig
    freq: FrequencySpec
    severity: ClaimDistributionSpec
    premium_rate: float
    constraints: ConstraintSet
    n_layers: int
    theta_k: float
    boundary_cap: float
    min_layer_width: float
    pricing: StopLossTable
    eval_scenarios: ScenarioSet
    search_seed: int
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

    @property
    def expected_claims(self) -> float:
        return self.freq.lam * self.episode.horizon

    def search_scenarios(self, n_paths: int, stream: int = 0) -> ScenarioSet:
        ss = np.random.SeedSequence([self.search_seed, 1, stream])
        return draw_scenarios(self.freq, self.severity, self.episode, n_paths, ss)

    def search_rng(self, stream: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.search_seed, 2, stream]))

    def horizon_premium(self, p: LayeredProgram) -> float:
        return self.pricing.premium(p, self.expected_claims)


def _timed(fn: Callable[[], tuple[float, bool, float | None, int, dict]], method: str) -> BenchmarkResult:
    t0 = time.perf_counter()
    surplus, ruined_frac, budget, n_paths, details = fn()
    dt = max(time.perf_counter() - t0, 1e-9)
    return BenchmarkResult(method, surplus, ruined_frac, dt, budget, efficiency(surplus, dt), n_paths, details)


def evaluate_static(spec: BaselineSpec, program: LayeredProgram, scenarios: ScenarioSet | None = None):
    sc = spec.eval_scenarios if scenarios is None else scenarios
    return simulate_static(spec.episode, program, spec.premium_rate, sc, spec.horizon_premium(program))


def _score(spec: BaselineSpec, program: LayeredProgram, scenarios: ScenarioSet) -> tuple[float, float]:
    run = evaluate_static(spec, program, scenarios)
    return run.mean_final, run.ruin_probability


def random_programs(spec: BaselineSpec, n: int, rng: np.random.Generator) -> list[LayeredProgram]:
    """Uniform draws: retentions in the bounds, 2K sorted boundary points in ``[0, cap]``, then repaired."""
    lo, hi = spec.constraints.alpha_bounds
    k = spec.n_layers
    out = []
    for _ in range(n):
        alpha = rng.uniform(lo, hi, size=k)
        pts = np.sort(rng.uniform(0.0, spec.boundary_cap, size=2 * k))
        a, b = repair_boundaries(pts[0::2], pts[1::2], spec.min_layer_width, spec.boundary_cap)
        out.append(LayeredProgram.from_arrays(a, b, alpha, spec.theta_k))
    return out


def program_features(spec: BaselineSpec, programs: Sequence[LayeredProgram]) -> np.ndarray:
    return np.array([np.concatenate([p.alpha, p.a / spec.boundary_cap, p.b / spec.boundary_cap]) for p in programs])


def _pick(scores: np.ndarray, ruin: np.ndarray, psi: float) -> int:
    """Best mean surplus among candidates meeting the ruin target; least ruin if none does."""
    ok = ruin <= psi
    if ok.any():
        return int(np.flatnonzero(ok)[np.argmax(scores[ok])])
    return int(np.argmin(ruin))


def _static_outcome(spec: BaselineSpec, program: LayeredProgram, details: dict) -> tuple[float, float, None, int, dict]:
    run = evaluate_static(spec, program)
    est = ruin_estimate(run.ruined)
    details = {**details, "program": program.to_dict(), "premium": spec.horizon_premium(program)}
    return run.mean_final, est.probability, None, spec.eval_scenarios.n_paths, details


# Monte Carlo search.


def monte_carlo_search(spec: BaselineSpec, n_candidates: int | None = None) -> tuple[LayeredProgram, float, np.ndarray]:
    """Best program among the first ``n_candidates`` random draws; returns ``(program, score, all_scores)``."""
    n = spec.mc_candidates if n_candidates is None else n_candidates
    if n < 1:
        raise ValueError("need at least one candidate")
    cands = random_programs(spec, n, spec.search_rng(0))
    scen = spec.search_scenarios(spec.mc_paths)
    scores, ruin = np.array([_score(spec, p, scen) for p in cands]).T
    i = _pick(scores, ruin, spec.constraints.psi_target)
    return cands[i], float(scores[i]), scores


def run_monte_carlo(spec: BaselineSpec) -> BenchmarkResult:
    def body():
        best, score, _ = monte_carlo_search(spec)
        return _static_outcome(spec, best, {"search_score": score, "candidates": spec.mc_candidates})

    return _timed(body, "mc")


# Value-guided Monte Carlo.


@dataclass
class Surrogate:
    net: DenseNet
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.net((x - self.x_mean) / self.x_std)[:, 0] * self.y_std + self.y_mean


def fit_surrogate(x: np.ndarray, y: np.ndarray, rng: np.random.Generator, epochs: int = 300, hidden: int = 32) -> Surrogate:
    """Small tanh net regressing mean surplus on program parameters (full-batch Adam on MSE)."""
    x_mean, x_std = x.mean(axis=0), x.std(axis=0) + 1e-9
    y_mean, y_std = float(y.mean()), float(y.std()) or 1.0
    xs, ys = (x - x_mean) / x_std, ((y - y_mean) / y_std)[:, None]
    net = DenseNet.init((x.shape[1], hidden, hidden, 1), "tanh", rng)
    opt = Adam(lr=3e-3)
    params = net.params()
    for _ in range(epochs):
        out, cache = forward(net, xs)
        grads, _ = backward(net, cache, 2.0 * (out - ys) / len(ys))
        opt.step(params, grads)
    return Surrogate(net, x_mean, x_std, y_mean, y_std)


def hybrid_deep_mc_search(spec: BaselineSpec, use_surrogate: bool = True) -> tuple[LayeredProgram, float, dict]:
    """Screen a candidate pool cheaply, re-evaluate the predicted top fraction with full paths.

    With ``use_surrogate=False`` every candidate is scored with full paths,
    which is exactly :func:`monte_carlo_search` over the same pool.
    """
    n = spec.hdmc_candidates
    cands = random_programs(spec, n, spec.search_rng(0))
    full = spec.search_scenarios(spec.mc_paths)
    if not use_surrogate:
        scores, ruin = np.array([_score(spec, p, full) for p in cands]).T
        i = _pick(scores, ruin, spec.constraints.psi_target)
        return cands[i], float(scores[i]), {"screened": n, "re_evaluated": n}
    screen = spec.search_scenarios(spec.hdmc_screen_paths, stream=1)
    screen_scores = np.array([_score(spec, p, screen)[0] for p in cands])
    feats = program_features(spec, cands)
    model = fit_surrogate(feats, screen_scores, spec.search_rng(1))
    pred = model.predict(feats)
    n_top = max(1, int(math.ceil(spec.hdmc_top_fraction * n)))
    top = np.argsort(-pred, kind="stable")[:n_top]
    scores, ruin = np.array([_score(spec, cands[j], full) for j in top]).T
    i = _pick(scores, ruin, spec.constraints.psi_target)
    return cands[top[i]], float(scores[i]), {"screened": n, "re_evaluated": n_top}


def run_hybrid_deep_mc(spec: BaselineSpec, use_surrogate: bool = True) -> BenchmarkResult:
    def body():
        best, score, info = hybrid_deep_mc_search(spec, use_surrogate)
        return _static_outcome(spec, best, {"search_score": score, **info})

    return _timed(body, "hdmc")


# Multi-objective grid scan.


def mo_grid(spec: BaselineSpec) -> list[LayeredProgram]:
    """Uniform retention level x attachment quantile; layers split the severity range above it evenly in probability."""
    lo, hi = spec.constraints.alpha_bounds
    levels = np.linspace(lo, hi, spec.mo_alpha_grid) if spec.mo_alpha_grid > 1 else np.array([hi])
    out = []
    for q0 in spec.mo_attach_grid:
        qs = np.linspace(q0, 0.999, spec.n_layers + 1)
        edges = np.array([0.0 if q <= 0 else spec.severity.quantile(q) for q in qs])
        a, b = repair_boundaries(edges[:-1], edges[1:], spec.min_layer_width, spec.boundary_cap)
        for al in levels:
            out.append(LayeredProgram.from_arrays(a, b, np.full(spec.n_layers, al), spec.theta_k))
    return out


def pareto_frontier(surplus: np.ndarray, ruin: np.ndarray) -> list[int]:
    """Indices not dominated in (higher surplus, lower ruin)."""
    idx = []
    for i in range(len(surplus)):
        dominated = np.any(
            (surplus >= surplus[i]) & (ruin <= ruin[i]) & ((surplus > surplus[i]) | (ruin < ruin[i]))
        )
        if not dominated:
            idx.append(i)
    return idx


def multi_objective_search(
    spec: BaselineSpec, weights: tuple[float, float] | None = None
) -> tuple[LayeredProgram, dict[str, Any]]:
    ws, wr = spec.mo_weights if weights is None else weights
    if ws < 0 or wr < 0 or ws == wr == 0:
        raise ValueError("objective weights must be >= 0 and not both 0")
    grid = mo_grid(spec)
    scen = spec.search_scenarios(spec.mc_paths)
    surplus, ruin = np.array([_score(spec, p, scen) for p in grid]).T
    objective = ws * surplus - wr * ruin
    i = int(np.argmax(objective))
    front = pareto_frontier(surplus, ruin)
    return grid[i], {
        "weights": [ws, wr],
        "objective": float(objective[i]),
        "frontier": [{"surplus": float(surplus[j]), "ruin_probability": float(ruin[j])} for j in front],
    }


def run_multi_objective(spec: BaselineSpec, weights: tuple[float, float] | None = None) -> BenchmarkResult:
    def body():
        best, info = multi_objective_search(spec, weights)
        return _static_outcome(spec, best, info)

    return _timed(body, "mo")


# Dynamic programming.


@dataclass
class DpSolution:
    grid: np.ndarray  # surplus bucket centres
    alphas: np.ndarray
    values: np.ndarray  # (n_steps + 1, n_buckets)
    policy: np.ndarray  # (n_steps, n_buckets) index into alphas

    def value_at(self, t: int, s: np.ndarray | float) -> np.ndarray:
        return _interp_value(self.grid, self.values[t], s)


def _interp_value(grid: np.ndarray, v: np.ndarray, s: np.ndarray | float, threshold: float | None = None) -> np.ndarray:
    """Piecewise-linear value with unit slope beyond the top bucket and zero below ``threshold``."""
    s = np.asarray(s, dtype=float)
    out = np.interp(s, grid, v) + np.maximum(s - grid[-1], 0.0)
    if threshold is not None:
        out = np.where(s < threshold, 0.0, out)
    return out


def dp_step_cost(spec: BaselineSpec, alpha: float) -> float:
    """Loaded proportional cession per step, ``(1 + theta)(1 - alpha) E[X] lambda dt``."""
    mean = float(spec.pricing.stop_loss(0.0))
    return (1.0 + spec.theta_k) * (1.0 - alpha) * mean * spec.freq.lam * spec.episode.dt


def solve_dp(
    spec: BaselineSpec,
    alphas: Sequence[float] | None = None,
    n_steps: int | None = None,
    quadrature: np.ndarray | None = None,
) -> DpSolution:
    """Backward value iteration maximizing expected terminal surplus; ruin is absorbing with value 0."""
    ep = spec.episode
    lo, hi = spec.constraints.alpha_bounds
    alphas = np.linspace(lo, hi, spec.dp_alpha_grid) if alphas is None else np.asarray(alphas, dtype=float)
    if spec.dp_surplus_buckets < 2 or alphas.size < 1:
        raise ValueError("DP needs at least 2 surplus buckets and 1 retention level")
    n = ep.n_steps if n_steps is None else n_steps
    if quadrature is None:
        quadrature = step_claim_totals(spec, spec.dp_quadrature_samples, spec.search_rng(3))
    thr = ep.ruin_threshold
    top = ep.initial_surplus + 2.0 * spec.premium_rate * ep.horizon
    grid = np.linspace(thr, top, spec.dp_surplus_buckets)
    drift = np.array([spec.premium_rate * ep.dt - dp_step_cost(spec, a) for a in alphas])
    values = np.zeros((n + 1, grid.size))
    values[n] = grid
    policy = np.zeros((n, grid.size), dtype=np.int64)
    for t in range(n - 1, -1, -1):
        nxt = grid[None, :, None] + drift[:, None, None] - alphas[:, None, None] * quadrature[None, None, :]
        q = _interp_value(grid, values[t + 1], nxt, thr).mean(axis=2)
        policy[t] = np.argmax(q, axis=0)
        values[t] = q.max(axis=0)
    return DpSolution(grid, alphas, values, policy)


def step_claim_totals(spec: BaselineSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Samples of one interval's aggregate claims (compound Poisson)."""
    counts = rng.poisson(spec.freq.lam * spec.episode.dt, size=n)
    sizes = spec.severity.sample(int(counts.sum()), rng)
    return np.bincount(np.repeat(np.arange(n), counts), weights=sizes, minlength=n)


def simulate_dp_policy(spec: BaselineSpec, sol: DpSolution, scenarios: ScenarioSet | None = None):
    """Forward simulation of the greedy table policy (nearest bucket) over a scenario set."""
    sc = spec.eval_scenarios if scenarios is None else scenarios
    ep = spec.episode
    totals = sc.totals()
    s = np.full(sc.n_paths, float(ep.initial_surplus))
    ruined = s < ep.ruin_threshold
    cost = np.zeros(sc.n_paths)
    step_costs = np.array([dp_step_cost(spec, a) for a in sol.alphas])
    for t in range(ep.n_steps):
        bucket = np.clip(np.rint((s - sol.grid[0]) / (sol.grid[1] - sol.grid[0])).astype(np.int64), 0, sol.grid.size - 1)
        k = sol.policy[t, bucket]
        s = s + spec.premium_rate * ep.dt - sol.alphas[k] * totals[:, t] - step_costs[k]
        cost += step_costs[k]
        ruined |= s < ep.ruin_threshold
    return s, ruined, cost


def run_dp_baseline(spec: BaselineSpec) -> BenchmarkResult:
    def body():
        sol = solve_dp(spec)
        finals, ruined, cost = simulate_dp_policy(spec, sol)
        est = ruin_estimate(ruined)
        used = np.bincount(sol.policy.ravel(), minlength=sol.alphas.size) / sol.policy.size
        details = {
            "alphas": sol.alphas.tolist(),
            "action_share": used.tolist(),
            "initial_value": float(sol.value_at(0, spec.episode.initial_surplus)),
            "mean_reinsurance_cost": float(cost.mean()),
        }
        return float(finals.mean()), est.probability, None, spec.eval_scenarios.n_paths, details

    return _timed(body, "dp")


# Hybrid RL.


def run_hybrid_rl(
    spec: BaselineSpec,
    env_cfg: EnvConfig,
    act: Callable[[np.ndarray], np.ndarray],
    scenarios: ScenarioSet | None = None,
    details: dict[str, Any] | None = None,
) -> BenchmarkResult:
    """Evaluate a trained policy on the shared scenarios; budget utilization is the mean cumulative spend."""
    sc = spec.eval_scenarios if scenarios is None else scenarios

    def body():
        ev = evaluate_on_scenarios(env_cfg, act, sc)
        est = ruin_estimate(ev.ruined)
        return ev.mean_final, est.probability, float(ev.total_cost.mean()), sc.n_paths, dict(details or {})

    return _timed(body, "rl")


# Output.


def write_results_csv(path: str | Path, results: Sequence[BenchmarkResult]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in results:
            row = r.row()
            w.writerow(
                [
                    METHOD_NAMES.get(r.method, r.method),
                    repr(row["final_surplus"]),
                    repr(row["ruin_probability"]),
                    repr(row["time_s"]),
                    "N/A" if row["budget_utilization"] is None else repr(row["budget_utilization"]),
                    repr(row["efficiency"]),
                ]
            )


def results_json(results: Sequence[BenchmarkResult]) -> list[dict[str, Any]]:
    return [{**r.row(), "name": METHOD_NAMES.get(r.method, r.method), "n_paths": r.n_paths, "details": r.details} for r in results]


def rank_correlation(a: np.ndarray, b: np.ndarray) -> float:
    return float(stats.spearmanr(a, b).statistic)


def dump_json(path: str | Path, obj: Any) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
