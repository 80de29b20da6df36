import numpy as np
import pytest

from reinsim.claims import Lognormal, Mixture, Pareto
from reinsim.config import config_from_dict
from reinsim.pipeline import baseline_spec, family_specs, make_env_config, policy_actor, run_benchmarks, train_vae_stage
from reinsim.ppo import PolicyModel


def test_families(exp):
    fam = family_specs(exp)
    assert list(fam) == ["lognormal", "pareto", "combined"]
    assert isinstance(fam["lognormal"], Lognormal) and isinstance(fam["pareto"], Pareto)
    assert isinstance(fam["combined"], Mixture)


def test_env_matches_config(exp, env_cfg):
    assert env_cfg.premium_rate == exp.premium_rate()
    assert env_cfg.base_program == exp.base_program()
    assert env_cfg.boundary_cap == 1500.0


def test_shared_evaluation_scenarios(exp):
    a, b = baseline_spec(exp), baseline_spec(exp)
    np.testing.assert_array_equal(a.eval_scenarios.counts, b.eval_scenarios.counts)
    np.testing.assert_array_equal(a.eval_scenarios.amounts, b.eval_scenarios.amounts)
    assert a.eval_scenarios.n_paths == exp.benchmark.eval_paths


def test_vae_stage_report():
    exp = config_from_dict({"vae": {"n_train": 256, "epochs": 2, "n_generate": 300}})
    stage = train_vae_stage(exp)
    assert stage.generated.size == 300 and len(stage.history) == 2
    ks = stage.report.ks
    assert 0 <= ks.statistic <= 1
    lo = min(stage.training_claims.min(), stage.generated.min())
    hi = max(stage.training_claims.max(), stage.generated.max())
    assert lo <= ks.d_location <= hi


def test_policy_actor():
    pol = PolicyModel.init(17, 15, np.random.default_rng(0))
    obs = np.ones(17)
    np.testing.assert_array_equal(policy_actor(pol)(obs), pol.act_deterministic(obs))
    a = policy_actor(pol, True, 3)(obs)
    b = policy_actor(pol, True, 3)(obs)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, pol.act_deterministic(obs))


def test_rl_needs_agent():
    exp = config_from_dict({"benchmark": {"eval_paths": 2}})
    with pytest.raises(ValueError):
        run_benchmarks(exp, ["rl"])
