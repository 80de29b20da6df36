import csv
import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from reinsim.benchmarks import (
    CSV_COLUMNS,
    BenchmarkResult,
    evaluate_static,
    efficiency,
    fit_surrogate,
    hybrid_deep_mc_search,
    mo_grid,
    monte_carlo_search,
    multi_objective_search,
    pareto_frontier,
    program_features,
    random_programs,
    rank_correlation,
    results_json,
    run_dp_baseline,
    run_hybrid_deep_mc,
    run_hybrid_rl,
    run_monte_carlo,
    run_multi_objective,
    simulate_dp_policy,
    solve_dp,
    step_claim_totals,
    write_results_csv,
)
from reinsim.contracts import validate_program
from reinsim.pipeline import baseline_spec, policy_actor
from reinsim.ppo import PolicyModel
from reinsim.surplus import draw_scenarios

ZERO = np.zeros(15)


@pytest.fixture(scope="module")
def spec(exp):
    return replace(
        baseline_spec(exp),
        mc_candidates=20,
        mc_paths=30,
        hdmc_candidates=60,
        hdmc_screen_paths=5,
        dp_surplus_buckets=21,
        dp_alpha_grid=4,
        dp_quadrature_samples=200,
    )


class TestEfficiency:
    @pytest.mark.parametrize("surplus,seconds,table", [(12_487.71, 7.96, 1_568.63), (14_280.64, 7.92, 1_802.60)])
    def test_table_rows(self, surplus, seconds, table):
        assert efficiency(surplus, seconds) == pytest.approx(table, rel=5e-4)

    def test_zero_surplus(self):
        assert efficiency(0.0, 3.0) == 0.0

    @pytest.mark.parametrize("seconds", [0.0, -1.0, float("nan")])
    def test_rejects_nonpositive_time(self, seconds):
        with pytest.raises(ValueError):
            efficiency(1.0, seconds)

    def test_result_rejects_bad_ruin(self):
        with pytest.raises(ValueError):
            BenchmarkResult("mc", 1.0, 1.5, 1.0, None, 1.0, 10)


class TestMonteCarlo:
    def test_single_candidate_is_its_own_evaluation(self, spec):
        prog, score, scores = monte_carlo_search(spec, 1)
        (only,) = random_programs(spec, 1, spec.search_rng(0))
        assert prog == only
        assert score == evaluate_static(spec, only, spec.search_scenarios(spec.mc_paths)).mean_final
        res = run_monte_carlo(replace(spec, mc_candidates=1))
        assert res.final_surplus == evaluate_static(spec, only).mean_final

    def test_superset_never_worse(self, spec):
        small = monte_carlo_search(spec, 10)
        big = monte_carlo_search(spec, 40)
        np.testing.assert_array_equal(big[2][:10], small[2])
        assert big[1] >= small[1]

    def test_rejects_zero_candidates(self, spec):
        with pytest.raises(ValueError):
            monte_carlo_search(spec, 0)

    def test_candidates_respect_bounds(self, spec):
        for p in random_programs(spec, 50, np.random.default_rng(0)):
            assert validate_program(p, spec.constraints) == []

    def test_result_row(self, spec):
        res = run_monte_carlo(spec)
        assert res.method == "mc" and res.budget_utilization is None
        assert res.n_paths == spec.eval_scenarios.n_paths
        assert res.efficiency == pytest.approx(res.final_surplus / res.time_s, rel=1e-12)


class TestHybridDeepMc:
    def test_without_surrogate_equals_mc(self, spec):
        s = replace(spec, mc_candidates=spec.hdmc_candidates)
        prog, score, info = hybrid_deep_mc_search(s, use_surrogate=False)
        mc_prog, mc_score, _ = monte_carlo_search(s)
        assert prog == mc_prog and score == mc_score
        assert info["re_evaluated"] == s.hdmc_candidates

    def test_top_decile_re_evaluated(self, spec):
        _, _, info = hybrid_deep_mc_search(spec)
        assert info == {"screened": 60, "re_evaluated": 6}

    def test_surrogate_ranks_held_out_candidates(self, spec):
        cands = random_programs(spec, 300, np.random.default_rng(11))
        screen = spec.search_scenarios(spec.hdmc_screen_paths, stream=1)
        full = spec.search_scenarios(spec.mc_paths)
        feats = program_features(spec, cands)
        y_screen = np.array([evaluate_static(spec, p, screen).mean_final for p in cands[:200]])
        model = fit_surrogate(feats[:200], y_screen, np.random.default_rng(12))
        y_full = np.array([evaluate_static(spec, p, full).mean_final for p in cands[200:]])
        assert rank_correlation(model.predict(feats[200:]), y_full) > 0.5

    def test_run(self, spec):
        res = run_hybrid_deep_mc(spec)
        assert res.method == "hdmc" and 0.0 <= res.ruin_probability <= 1.0


class TestMultiObjective:
    def test_surplus_only_weights(self, spec):
        prog, _ = multi_objective_search(spec, (1.0, 0.0))
        scen = spec.search_scenarios(spec.mc_paths)
        grid = mo_grid(spec)
        means = [evaluate_static(spec, p, scen).mean_final for p in grid]
        assert prog == grid[int(np.argmax(means))]

    def test_frontier_nondominated(self, spec):
        _, info = multi_objective_search(spec)
        pts = [(f["surplus"], f["ruin_probability"]) for f in info["frontier"]]
        assert pts
        for s1, r1 in pts:
            for s2, r2 in pts:
                assert not (s2 >= s1 and r2 <= r1 and (s2 > s1 or r2 < r1))

    @settings(max_examples=100, deadline=None)
    @given(
        surplus=arrays(np.float64, 12, elements=st.integers(0, 5).map(float)),
        ruin=arrays(np.float64, 12, elements=st.integers(0, 3).map(float)),
    )
    def test_frontier_definition(self, surplus, ruin):
        front = set(pareto_frontier(surplus, ruin))
        for i in range(12):
            dominated = any(
                surplus[j] >= surplus[i] and ruin[j] <= ruin[i] and (surplus[j] > surplus[i] or ruin[j] < ruin[i])
                for j in range(12)
            )
            assert (i in front) == (not dominated)

    @pytest.mark.parametrize("w", [(-1.0, 1.0), (0.0, 0.0)])
    def test_rejects_bad_weights(self, spec, w):
        with pytest.raises(ValueError):
            multi_objective_search(spec, w)

    def test_grid_size_and_validity(self, spec):
        grid = mo_grid(spec)
        assert len(grid) == len(spec.mo_attach_grid) * spec.mo_alpha_grid
        assert all(validate_program(p, spec.constraints) == [] for p in grid)

    def test_run(self, spec):
        res = run_multi_objective(spec)
        assert res.method == "mo" and "frontier" in res.details


class TestDynamicProgramming:
    def test_single_action_single_step_matches_simulation(self, spec):
        quad = step_claim_totals(spec, 400, np.random.default_rng(1))
        sol = solve_dp(spec, alphas=[0.35], n_steps=1, quadrature=quad)
        # independent compound-Poisson sample for the same one-step transition
        rng = np.random.default_rng(2)
        n = 200_000
        counts = rng.poisson(spec.freq.lam * spec.episode.dt, size=n)
        sizes = spec.severity.sample(int(counts.sum()), rng)
        totals = np.bincount(np.repeat(np.arange(n), counts), weights=sizes, minlength=n)
        s0 = spec.episode.initial_surplus
        cost = 1.2 * 0.65 * float(spec.pricing.stop_loss(0.0)) * spec.freq.lam * spec.episode.dt
        direct = s0 + spec.premium_rate * spec.episode.dt - cost - 0.35 * totals
        se = 0.35 * np.hypot(quad.std() / np.sqrt(quad.size), totals.std() / np.sqrt(n))
        assert abs(float(sol.value_at(0, s0)) - direct.mean()) < 4 * se

    def test_value_monotone_in_surplus(self, spec):
        sol = solve_dp(spec)
        assert np.all(np.diff(sol.values, axis=1) >= -1e-9)

    def test_more_actions_never_lower_value(self, spec):
        quad = step_claim_totals(spec, 200, np.random.default_rng(3))
        few = solve_dp(spec, alphas=[0.2, 0.5], quadrature=quad)
        many = solve_dp(spec, alphas=[0.2, 0.3, 0.4, 0.5], quadrature=quad)
        assert np.all(many.values >= few.values - 1e-9)

    def test_degenerate_grids(self, spec):
        with pytest.raises(ValueError):
            solve_dp(replace(spec, dp_surplus_buckets=1))
        with pytest.raises(ValueError):
            solve_dp(spec, alphas=[])

    def test_policy_simulation(self, spec):
        sol = solve_dp(spec)
        finals, ruined, cost = simulate_dp_policy(spec, sol)
        assert finals.shape == ruined.shape == cost.shape == (spec.eval_scenarios.n_paths,)
        assert np.all(cost >= 0)

    def test_run(self, spec):
        res = run_dp_baseline(spec)
        assert res.method == "dp" and len(res.details["action_share"]) == spec.dp_alpha_grid
        assert sum(res.details["action_share"]) == pytest.approx(1.0)


class TestHybridRl:
    def test_zero_policy_is_static_program(self, spec, env_cfg):
        res = run_hybrid_rl(spec, env_cfg, lambda o: ZERO)
        static = evaluate_static(spec, env_cfg.base_program)
        assert res.final_surplus == pytest.approx(static.mean_final, rel=1e-10)
        assert res.ruin_probability == static.ruin_probability
        assert res.budget_utilization == pytest.approx(spec.horizon_premium(env_cfg.base_program), rel=1e-10)

    def test_deterministic_has_lower_variance(self, spec, env_cfg):
        pol = PolicyModel.init(17, 15, np.random.default_rng(0), init_log_std=0.0)
        scen = draw_scenarios(spec.freq, spec.severity, spec.episode, 20, 5)

        def spread(stochastic):
            means = [run_hybrid_rl(spec, env_cfg, policy_actor(pol, stochastic, s), scen).final_surplus for s in range(10)]
            return np.var(means)

        assert spread(False) < spread(True)


class TestOutput:
    def test_csv_and_json(self, spec, env_cfg, tmp_path):
        results = [run_monte_carlo(spec), run_hybrid_rl(spec, env_cfg, lambda o: ZERO)]
        write_results_csv(tmp_path / "b.csv", results)
        rows = list(csv.reader(open(tmp_path / "b.csv")))
        assert tuple(rows[0]) == CSV_COLUMNS
        assert rows[1][0] == "Monte Carlo Simulation" and rows[1][4] == "N/A"
        assert rows[2][0] == "Hybrid RL with Generative Models" and float(rows[2][4]) > 0
        for r in rows[1:]:
            assert float(r[5]) == pytest.approx(float(r[1]) / float(r[3]), rel=1e-9)
        js = json.loads(json.dumps(results_json(results)))
        assert [j["method"] for j in js] == ["mc", "rl"]
        assert js[0]["n_paths"] == spec.eval_scenarios.n_paths

    def test_rank_correlation(self):
        assert rank_correlation(np.arange(5.0), np.arange(5.0) ** 3) == pytest.approx(1.0)
