import csv
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from reinsim.claims import Lognormal
from reinsim.contracts import ConstraintSet, premium_from_sample, validate_program
from reinsim.rl_env import (
    EnvState,
    ReinsuranceEnv,
    ReplayClaims,
    action_to_adjustment,
    evaluate_on_scenarios,
    observe,
    price_step,
    reset,
    reward_fn,
    run_episode,
    step,
)
from reinsim.surplus import EpisodeConfig, ScenarioSet, draw_scenarios, simulate_static

ZERO = np.zeros(15)
SEVERITY = Lognormal(3.5, 1.0)


def empty_claims(n_steps):
    return ReplayClaims(ScenarioSet(np.zeros((1, n_steps), dtype=np.int64), np.zeros(0)))


def one_claim(n_steps, amount, at=0):
    counts = np.zeros((1, n_steps), dtype=np.int64)
    counts[0, at] = 1
    return ReplayClaims(ScenarioSet(counts, np.array([amount])))


class TestReset:
    def test_initial_surplus(self, env_cfg):
        state, obs = reset(env_cfg)
        assert state.surplus == 20_000 and state.t == 0
        assert obs[0] == 1.0
        assert state.program == env_cfg.base_program

    def test_same_seed_same_observation(self, env_cfg):
        assert np.array_equal(reset(env_cfg, np.random.default_rng(1))[1], reset(env_cfg, np.random.default_rng(1))[1])

    def test_reset_after_done(self, env_cfg):
        env = ReinsuranceEnv(replace(env_cfg, episode=replace(env_cfg.episode, n_steps=3)))
        env.reset(0)
        for _ in range(3):
            env.step(ZERO)
        assert env.state.done
        obs = env.reset(0)
        assert env.state.t == 0 and not env.state.done and env.state.cumulative_cost == 0
        assert obs[0] == 1.0

    def test_below_threshold_at_start(self, env_cfg):
        cfg = replace(env_cfg, episode=replace(env_cfg.episode, initial_surplus=-1e9))
        state, _ = reset(cfg)
        assert state.done and state.ruined


class TestStep:
    def test_reward_zero_at_threshold(self, env_cfg):
        thr = env_cfg.episode.ruin_threshold
        assert reward_fn(env_cfg, thr, thr) == 0.0

    def test_reward_total_below_threshold(self, env_cfg):
        assert reward_fn(env_cfg, -1e9, 0.0) == 0.0

    def test_reward_matches_log(self, env_cfg):
        assert reward_fn(env_cfg, 19_999.0, 20_000.0) == pytest.approx(math.log(20_000.0))

    def test_variability_penalty(self, env_cfg):
        cfg = replace(env_cfg, variability_penalty=2.0)
        assert reward_fn(cfg, 100.0, 300.0) == pytest.approx(math.log(101.0) - 2.0 * 200 / 20_000)

    def test_zero_action_no_claims_drift(self, env_cfg):
        cfg = env_cfg.with_claims(empty_claims(env_cfg.episode.n_steps))
        state, _ = reset(cfg)
        nxt, _, _, _, info = step(cfg, state, ZERO, np.random.default_rng(0))
        dt = cfg.episode.dt
        # independent pricing: plain sample mean instead of the stop-loss table
        cost = premium_from_sample(cfg.base_program, cfg.pricing_sample, cfg.freq.lam * dt)
        assert nxt.program == cfg.base_program
        assert info["cost"] == pytest.approx(cost, rel=1e-10)
        assert nxt.surplus == pytest.approx(20_000 + cfg.premium_rate * dt - cost, rel=1e-12)

    def test_ruin_ends_episode(self, env_cfg):
        cfg = env_cfg.with_claims(one_claim(env_cfg.episode.n_steps, 1e9))
        state, _ = reset(cfg)
        nxt, _, r, done, info = step(cfg, state, ZERO, np.random.default_rng(0))
        assert done and nxt.ruined and info["ruined"] and not info["truncated"]
        assert r == 0.0
        with pytest.raises(RuntimeError):
            step(cfg, nxt, ZERO, np.random.default_rng(0))

    def test_horizon_truncation(self, env_cfg):
        cfg = replace(env_cfg, episode=replace(env_cfg.episode, n_steps=2))
        cfg = cfg.with_claims(empty_claims(2))
        state, _ = reset(cfg)
        state, *_ = step(cfg, state, ZERO, np.random.default_rng(0))
        state, _, _, done, info = step(cfg, state, ZERO, np.random.default_rng(0))
        assert done and info["truncated"]

    def test_state_not_mutated(self, env_cfg):
        state, _ = reset(env_cfg)
        before = (state.t, state.surplus, state.program)
        step(env_cfg, state, np.ones(15), np.random.default_rng(0))
        assert (state.t, state.surplus, state.program) == before

    def test_action_shape(self, env_cfg):
        state, _ = reset(env_cfg)
        with pytest.raises(ValueError):
            step(env_cfg, state, np.zeros(14), np.random.default_rng(0))

    def test_conservation_per_step(self, env_cfg):
        env = ReinsuranceEnv(env_cfg)
        env.reset(3)
        s = env.state.surplus
        for _ in range(20):
            _, _, _, info = env.step(np.random.default_rng(env.state.t).standard_normal(15))
            assert info["surplus"] == pytest.approx(s + env_cfg.premium_rate * env_cfg.episode.dt - info["retained"] - info["cost"])
            s = info["surplus"]

    @staticmethod
    def _spend(cfg, action):
        env = ReinsuranceEnv(cfg)
        env.reset(0)
        done = False
        while not done:
            _, _, done, _ = env.step(action)
        return env.state

    def test_budget_projection(self, env_cfg):
        action = np.r_[-np.ones(5), np.zeros(10)]
        free = replace(env_cfg, constraints=ConstraintSet(0.01, 1e9, (0.0, 1.0)))
        spent = self._spend(free, action).cumulative_cost
        tight = replace(env_cfg, constraints=ConstraintSet(0.01, spent / 3, (0.0, 1.0)))
        assert self._spend(tight, action).cumulative_cost <= spent / 3 * (1 + 1e-12)

    def test_retention_bounds_take_precedence(self, env_cfg):
        # a budget no program within the retention bounds can meet: retentions saturate at the cap
        cfg = replace(env_cfg, constraints=ConstraintSet(0.01, 1.0, (0.2, 0.5)))
        state = self._spend(cfg, np.r_[-np.ones(5), np.zeros(10)])
        np.testing.assert_array_equal(state.program.alpha, 0.5)
        assert validate_program(state.program, cfg.constraints) == []


class TestObserve:
    def test_layout(self, env_cfg):
        state, obs = reset(env_cfg)
        p = env_cfg.base_program
        assert obs.shape == (17,)
        np.testing.assert_allclose(obs[2:7], p.alpha)
        np.testing.assert_allclose(obs[7:12], p.a / 1500)
        np.testing.assert_allclose(obs[12:], np.minimum(p.b, 1500) / 1500)
        assert obs[1] == 1.0

    def test_alpha_at_bounds(self, env_cfg):
        state, _ = reset(env_cfg)
        up, *_ = step(env_cfg, state, np.r_[np.full(5, 50.0), np.zeros(10)], np.random.default_rng(0))
        for _ in range(10):
            up, *_ = step(env_cfg, up, np.r_[np.full(5, 50.0), np.zeros(10)], np.random.default_rng(0))
        np.testing.assert_allclose(observe(env_cfg, up)[2:7], 0.5)

    def test_linear_in_surplus(self, env_cfg):
        state, obs = reset(env_cfg)
        doubled = EnvState(0, 2 * state.surplus, state.lam, state.program)
        assert observe(env_cfg, doubled)[0] == 2 * obs[0]


class TestActions:
    def test_squash_bounds(self, env_cfg):
        adj = action_to_adjustment(env_cfg, np.r_[np.full(5, 1e9), np.full(10, -1e9)])
        np.testing.assert_allclose(adj.delta_alpha, 0.05)
        np.testing.assert_allclose(adj.delta_a, -0.02 * 1500)

    def test_nan_is_no_op(self, env_cfg):
        adj = action_to_adjustment(env_cfg, np.full(15, np.nan))
        assert np.all(adj.delta_alpha == 0)

    @settings(max_examples=30, deadline=None)
    @given(actions=arrays(np.float64, (30, 15), elements=st.floats(-1e6, 1e6)))
    def test_programs_stay_valid_and_rewards_finite(self, env_cfg, actions):
        cfg = replace(env_cfg, episode=replace(env_cfg.episode, n_steps=30))
        state, obs = reset(cfg)
        rng = np.random.default_rng(0)
        total = 0.0
        for a in actions:
            state, obs, r, done, _ = step(cfg, state, a, rng)
            assert validate_program(state.program, cfg.constraints) == []
            assert obs.shape == (17,)
            total += r
            if done:
                break
        assert math.isfinite(total)


class TestRollouts:
    def test_bit_reproducible(self, env_cfg):
        policy = lambda obs: np.sin(np.arange(15) + obs[0])
        a = run_episode(ReinsuranceEnv(env_cfg), policy, 5, trace=True)
        b = run_episode(ReinsuranceEnv(env_cfg), policy, 5, trace=True)
        assert a[:4] == b[:4]
        assert a[4].rows == b[4].rows

    def test_episode_length(self, env_cfg):
        _, _, _, _, tr = run_episode(ReinsuranceEnv(env_cfg), lambda o: ZERO, 1, trace=True)
        assert len(tr.rows) == env_cfg.episode.n_steps

    def test_trace_csv(self, env_cfg, tmp_path):
        _, _, _, _, tr = run_episode(ReinsuranceEnv(env_cfg), lambda o: ZERO, 1, trace=True)
        tr.to_csv(tmp_path / "trace.csv")
        rows = list(csv.reader(open(tmp_path / "trace.csv")))
        assert rows[0][:7] == ["step", "time", "surplus", "claims_count", "retained_sum", "ceded_sum", "cost"]
        assert "action_14" in rows[0] and "alpha_5" in rows[0]
        assert len(rows) == 201

    def test_zero_policy_is_static_simulation(self, env_cfg):
        ep = env_cfg.episode
        scen = draw_scenarios(env_cfg.freq, SEVERITY, ep, 20, 7)
        ev = evaluate_on_scenarios(env_cfg, lambda o: ZERO, scen)
        run = simulate_static(ep, env_cfg.base_program, env_cfg.premium_rate, scen, price_step(env_cfg, env_cfg.base_program) * ep.n_steps)
        np.testing.assert_allclose(ev.final_surplus, run.final, rtol=1e-10)
        np.testing.assert_array_equal(ev.ruined, run.ruined)

    def test_threshold_override(self, env_cfg):
        scen = draw_scenarios(env_cfg.freq, SEVERITY, env_cfg.episode, 5, 7)
        ev = evaluate_on_scenarios(env_cfg, lambda o: ZERO, scen, ruin_threshold=1e9)
        assert ev.ruin_probability == 1.0
        ev = evaluate_on_scenarios(env_cfg, lambda o: ZERO, scen, ruin_threshold=-1e9)
        assert ev.ruin_probability == 0.0

    def test_scenario_length_checked(self, env_cfg):
        scen = draw_scenarios(env_cfg.freq, SEVERITY, EpisodeConfig(n_steps=5), 2, 7)
        with pytest.raises(ValueError):
            evaluate_on_scenarios(env_cfg, lambda o: ZERO, scen)
