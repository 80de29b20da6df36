"""Proximal policy optimization with a diagonal Gaussian policy.

The policy mean and the value function are separate :class:`DenseNet` s; the
log standard deviation is a free, state-independent parameter vector.  Value
targets are standardized with statistics frozen from the first rollout, since
raw discounted log-surplus returns sit in the hundreds.

Environments only need ``reset(rng) -> obs``, ``step(action) -> (obs, reward,
done, info)`` and ``obs_dim`` / ``action_dim`` attributes.  ``info`` may carry
``truncated``; a truncated step is bootstrapped with ``gamma * V(s_T)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Protocol, Sequence

import numpy as np

from .nnet import Adam, DenseNet, backward, forward, load_checkpoint, net_arrays, net_from_arrays, save_checkpoint

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
METRIC_COLUMNS = (
    "timesteps",
    "mean_episode_reward",
    "policy_gradient_loss",
    "entropy_loss",
    "value_loss",
    "clip_fraction",
)


class Env(Protocol):
    obs_dim: int
    action_dim: int

    def reset(self, rng: np.random.Generator | None = None) -> np.ndarray: ...

    def step(self, action: np.ndarray) -> tuple[np.ndarray, float, bool, dict[str, Any]]: ...


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_ratio: float = 0.2
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    rollout_horizon: int = 2048
    epochs: int = 10
    minibatch_size: int = 64
    total_timesteps: int = 6144
    learning_rate: float = 3e-4
    hidden: tuple[int, ...] = (64, 64)
    init_log_std: float = 0.0
    target_kl: float = 0.03
    kl_limit: float = 0.2
    max_grad_norm: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError(f"gae_lambda must lie in [0, 1], got {self.gae_lambda}")
        if not self.clip_ratio > 0:
            raise ValueError(f"clip_ratio must be > 0, got {self.clip_ratio}")
        for name in ("rollout_horizon", "epochs", "minibatch_size", "total_timesteps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.learning_rate < 0 or self.entropy_coef < 0 or self.value_coef < 0:
            raise ValueError("learning_rate, entropy_coef and value_coef must be >= 0")
        if not LOG_STD_MIN <= self.init_log_std <= LOG_STD_MAX:
            raise ValueError(f"init_log_std must lie in [{LOG_STD_MIN}, {LOG_STD_MAX}]")
        if not 0 < self.target_kl <= self.kl_limit:
            raise ValueError("need 0 < target_kl <= kl_limit")


@dataclass
class PolicyModel:
    mean_net: DenseNet
    log_std: np.ndarray
    value_net: DenseNet
    value_shift: float = 0.0
    value_scale: float = 1.0

    def __post_init__(self) -> None:
        self.log_std = np.asarray(self.log_std, dtype=float)
        if self.log_std.shape != (self.mean_net.out_dim,):
            raise ValueError("log_std must have one entry per action dimension")
        if self.value_net.out_dim != 1 or self.value_net.in_dim != self.mean_net.in_dim:
            raise ValueError("value net must map observations to a scalar")
        if not self.value_scale > 0:
            raise ValueError("value_scale must be > 0")

    @classmethod
    def init(
        cls,
        obs_dim: int,
        action_dim: int,
        rng: np.random.Generator,
        hidden: Sequence[int] = (64, 64),
        init_log_std: float = 0.0,
    ) -> "PolicyModel":
        mean_net = DenseNet.init((obs_dim, *hidden, action_dim), "tanh", rng, out_scale=0.01)
        value_net = DenseNet.init((obs_dim, *hidden, 1), "tanh", rng)
        return cls(mean_net, np.full(action_dim, float(init_log_std)), value_net)

    @property
    def action_dim(self) -> int:
        return self.mean_net.out_dim

    @property
    def obs_dim(self) -> int:
        return self.mean_net.in_dim

    def clamped_log_std(self) -> np.ndarray:
        return np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX)

    def value(self, obs: np.ndarray) -> np.ndarray:
        return self.value_net(obs)[..., 0] * self.value_scale + self.value_shift

    def act_deterministic(self, obs: np.ndarray) -> np.ndarray:
        return self.mean_net(obs)

    def params(self) -> list[np.ndarray]:
        return self.mean_net.params() + [self.log_std] + self.value_net.params()

    def copy(self) -> "PolicyModel":
        return PolicyModel(self.mean_net.copy(), self.log_std.copy(), self.value_net.copy(), self.value_shift, self.value_scale)

    def save(self, path: str | Path) -> None:
        arrays = {**net_arrays("mean", self.mean_net), **net_arrays("value", self.value_net), "log_std": self.log_std}
        meta = {
            "kind": "policy",
            "mean": self.mean_net.to_dict(),
            "value": self.value_net.to_dict(),
            "value_shift": self.value_shift,
            "value_scale": self.value_scale,
        }
        save_checkpoint(path, arrays, meta)

    @classmethod
    def load(cls, path: str | Path) -> "PolicyModel":
        arrays, meta = load_checkpoint(path)
        if meta.get("kind") != "policy":
            raise ValueError(f"{path}: not a policy checkpoint")
        return cls(
            net_from_arrays("mean", meta["mean"], arrays),
            np.array(arrays["log_std"], dtype=float),
            net_from_arrays("value", meta["value"], arrays),
            float(meta["value_shift"]),
            float(meta["value_scale"]),
        )


def gaussian_log_prob(action: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    z = (action - mean) * np.exp(-log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - action.shape[-1] * HALF_LOG_2PI


def gaussian_entropy(log_std: np.ndarray) -> float:
    return float(np.sum(log_std) + log_std.size * (0.5 + HALF_LOG_2PI))


def select_action(policy: PolicyModel, obs: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, float, float]:
    """Sample ``a ~ N(mean(obs), exp(log_std)^2)``; returns ``(action, log_prob, value)``."""
    obs = np.asarray(obs, dtype=float)
    if obs.shape != (policy.obs_dim,):
        raise ValueError(f"observation must have length {policy.obs_dim}, got shape {obs.shape}")
    mean = policy.mean_net(obs)
    log_std = policy.clamped_log_std()
    action = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
    return action, float(gaussian_log_prob(action, mean, log_std)), float(policy.value(obs))


def compute_gae(
    rewards: Sequence[float] | np.ndarray,
    values: Sequence[float] | np.ndarray,
    dones: Sequence[bool] | np.ndarray,
    gamma: float,
    lam: float,
    last_value: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates and returns (``advantages + values``).

    ``dones[t]`` means no bootstrap from step ``t + 1``; ``last_value`` is the
    value of the state following the final step.
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    d = np.asarray(dones, dtype=float)
    if not r.shape == v.shape == d.shape or r.ndim != 1:
        raise ValueError("rewards, values and dones must be aligned 1-d arrays")
    n = r.size
    adv = np.zeros(n)
    next_v, running = float(last_value), 0.0
    for t in range(n - 1, -1, -1):
        live = 1.0 - d[t]
        delta = r[t] + gamma * next_v * live - v[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
        next_v = v[t]
    return adv, adv + v


@dataclass
class Trajectory:
    observations: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None
    episode_rewards: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        n = len(self.observations)
        for name in ("actions", "log_probs", "rewards", "values", "dones"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"trajectory field {name} is misaligned")

    def __len__(self) -> int:
        return len(self.observations)


@dataclass(frozen=True)
class LossReport:
    policy_gradient_loss: float
    value_loss: float
    entropy_loss: float
    clip_fraction: float
    approx_kl: float
    epochs_run: int
    reverted: bool = False


def policy_loss_and_grads(
    policy: PolicyModel,
    obs: np.ndarray,
    actions: np.ndarray,
    old_log_probs: np.ndarray,
    advantages: np.ndarray,
    returns_norm: np.ndarray,
    cfg: PpoConfig,
) -> tuple[dict[str, float], list[np.ndarray]]:
    """Clipped-surrogate + entropy + value loss on one minibatch, with gradients in ``policy.params()`` order."""
    n = obs.shape[0]
    mean, mcache = forward(policy.mean_net, obs)
    log_std = policy.clamped_log_std()
    inv_var = np.exp(-2.0 * log_std)
    diff = actions - mean
    logp = gaussian_log_prob(actions, mean, log_std)
    ratio = np.exp(logp - old_log_probs)
    clipped = np.clip(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio)
    s1, s2 = ratio * advantages, clipped * advantages
    pg_loss = -float(np.mean(np.minimum(s1, s2)))
    entropy = gaussian_entropy(log_std)

    g_logp = np.where(s1 <= s2, -advantages * ratio / n, 0.0)
    g_mean = g_logp[:, None] * diff * inv_var
    g_log_std = (g_logp[:, None] * (diff * diff * inv_var - 1.0)).sum(axis=0) - cfg.entropy_coef
    g_log_std = np.where((policy.log_std > LOG_STD_MIN) & (policy.log_std < LOG_STD_MAX), g_log_std, 0.0)
    mean_grads, _ = backward(policy.mean_net, mcache, g_mean)

    v_hat, vcache = forward(policy.value_net, obs)
    v_err = v_hat[:, 0] - returns_norm
    v_loss = float(np.mean(v_err**2))
    value_grads, _ = backward(policy.value_net, vcache, (cfg.value_coef * 2.0 * v_err / n)[:, None])

    stats = {
        "policy_gradient_loss": pg_loss,
        "value_loss": v_loss,
        "entropy": entropy,
        "total": pg_loss - cfg.entropy_coef * entropy + cfg.value_coef * v_loss,
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > cfg.clip_ratio)),
        "approx_kl": float(np.mean(np.expm1(logp - old_log_probs) - (logp - old_log_probs))),
    }
    return stats, mean_grads + [g_log_std] + value_grads


def approx_kl(policy: PolicyModel, obs: np.ndarray, actions: np.ndarray, old_log_probs: np.ndarray) -> float:
    """Low-variance estimator ``E[(r - 1) - log r]`` of ``KL(old || new)``."""
    logp = gaussian_log_prob(actions, policy.mean_net(obs), policy.clamped_log_std())
    log_ratio = logp - old_log_probs
    return float(np.mean(np.expm1(log_ratio) - log_ratio))


def ppo_update(
    policy: PolicyModel,
    batch: Trajectory,
    cfg: PpoConfig,
    opt: Adam,
    rng: np.random.Generator,
) -> LossReport:
    """Several epochs of minibatch passes with a KL guard.

    Updating stops once a minibatch's KL estimate (taken before its step)
    exceeds ``1.5 * target_kl``.  The full-batch KL is checked after every
    epoch; an epoch that pushes it past ``kl_limit`` is rolled back, so the
    update never moves the policy further than that.
    """
    if batch.advantages is None or batch.returns is None:
        raise ValueError("compute advantages before updating")
    adv = batch.advantages
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    ret_norm = (batch.returns - policy.value_shift) / policy.value_scale
    obs, acts, old = batch.observations, batch.actions, batch.log_probs
    params = policy.params()
    n = len(batch)
    sums = {"policy_gradient_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "clip_fraction": 0.0}
    n_mb = 0
    kl = 0.0
    reverted = False
    epochs_run = 0
    for _ in range(cfg.epochs):
        epochs_run += 1
        backup = [p.copy() for p in params]
        order = rng.permutation(n)
        stop = False
        for start in range(0, n, cfg.minibatch_size):
            idx = order[start : start + cfg.minibatch_size]
            stats, grads = policy_loss_and_grads(policy, obs[idx], acts[idx], old[idx], adv[idx], ret_norm[idx], cfg)
            if n_mb and stats["approx_kl"] > 1.5 * cfg.target_kl:
                stop = True
                break
            for k in sums:
                sums[k] += stats[k]
            n_mb += 1
            opt.step(params, grads)
        kl = approx_kl(policy, obs, acts, old)
        if kl > cfg.kl_limit:
            for p, b in zip(params, backup):
                p[...] = b
            kl = approx_kl(policy, obs, acts, old)
            reverted = stop = True
        if stop:
            break
    return LossReport(
        policy_gradient_loss=sums["policy_gradient_loss"] / n_mb,
        value_loss=sums["value_loss"] / n_mb,
        entropy_loss=-sums["entropy"] / n_mb,
        clip_fraction=sums["clip_fraction"] / n_mb,
        approx_kl=kl,
        epochs_run=epochs_run,
        reverted=reverted,
    )


@dataclass(frozen=True)
class MetricsRow:
    timesteps: int
    mean_episode_reward: float
    policy_gradient_loss: float
    entropy_loss: float
    value_loss: float
    clip_fraction: float
    approx_kl: float


def collect_rollout(
    env: Env,
    policy: PolicyModel,
    n_steps: int,
    rng: np.random.Generator,
    cfg: PpoConfig,
    obs: np.ndarray,
    episode_return: float,
) -> tuple[Trajectory, np.ndarray, float, float]:
    """Run ``n_steps`` transitions, resetting on episode end.

    Returns the trajectory, the observation to continue from, the running
    return of the unfinished episode and the bootstrap value for GAE.
    """
    d = policy.obs_dim
    obs_buf = np.zeros((n_steps, d))
    act_buf = np.zeros((n_steps, policy.action_dim))
    logp_buf, rew_buf, val_buf = np.zeros(n_steps), np.zeros(n_steps), np.zeros(n_steps)
    done_buf = np.zeros(n_steps, dtype=bool)
    finished: list[float] = []
    for t in range(n_steps):
        action, logp, value = select_action(policy, obs, rng)
        nxt, reward, done, info = env.step(action)
        episode_return += reward
        obs_buf[t], act_buf[t], logp_buf[t], val_buf[t] = obs, action, logp, value
        rew_buf[t] = reward
        done_buf[t] = done
        if done:
            if info.get("truncated", False) and cfg.gamma > 0:
                rew_buf[t] += cfg.gamma * float(policy.value(nxt))
            finished.append(episode_return)
            episode_return = 0.0
            nxt = env.reset()
        obs = nxt
    traj = Trajectory(obs_buf, act_buf, logp_buf, rew_buf, val_buf, done_buf, episode_rewards=finished)
    return traj, obs, episode_return, float(policy.value(obs))


def train(
    env_factory: Callable[[], Env],
    cfg: PpoConfig,
    rng: np.random.Generator,
    policy: PolicyModel | None = None,
    on_update: Callable[[MetricsRow], None] | None = None,
) -> tuple[PolicyModel, list[MetricsRow]]:
    """Alternate rollout collection and PPO updates until ``total_timesteps``.

    The number of update phases is ``ceil(total_timesteps / rollout_horizon)``;
    the last rollout is shortened so exactly ``total_timesteps`` transitions are
    collected.  ``mean_episode_reward`` averages the episodes that finished in a
    rollout (or the partial return if none did).
    """
    env = env_factory()
    if policy is None:
        policy = PolicyModel.init(env.obs_dim, env.action_dim, rng, cfg.hidden, cfg.init_log_std)
    opt = Adam(lr=cfg.learning_rate, max_grad_norm=cfg.max_grad_norm)
    obs = env.reset(rng)
    running = 0.0
    done_steps = 0
    log: list[MetricsRow] = []
    first = True
    while done_steps < cfg.total_timesteps:
        n = min(cfg.rollout_horizon, cfg.total_timesteps - done_steps)
        traj, obs, partial, last_v = collect_rollout(env, policy, n, rng, cfg, obs, running)
        running = partial
        done_steps += n
        if first:
            # Freeze the value normalization on the first batch of returns.
            _, raw = compute_gae(traj.rewards, traj.values, traj.dones, cfg.gamma, 1.0, last_v)
            policy.value_shift = float(raw.mean())
            policy.value_scale = float(raw.std()) or 1.0
            traj.values = policy.value(traj.observations)
            last_v = float(policy.value(obs))
            first = False
        traj.advantages, traj.returns = compute_gae(traj.rewards, traj.values, traj.dones, cfg.gamma, cfg.gae_lambda, last_v)
        report = ppo_update(policy, traj, cfg, opt, rng)
        ep_reward = float(np.mean(traj.episode_rewards)) if traj.episode_rewards else float(partial)
        row = MetricsRow(
            timesteps=done_steps,
            mean_episode_reward=ep_reward,
            policy_gradient_loss=report.policy_gradient_loss,
            entropy_loss=report.entropy_loss,
            value_loss=report.value_loss,
            clip_fraction=report.clip_fraction,
            approx_kl=report.approx_kl,
        )
        log.append(row)
        if on_update is not None:
            on_update(row)
    return policy, log


def write_metrics(path: str | Path, rows: Sequence[MetricsRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*METRIC_COLUMNS, "approx_kl"])
        for r in rows:
            w.writerow([r.timesteps] + [repr(float(getattr(r, c))) for c in METRIC_COLUMNS[1:]] + [repr(r.approx_kl)])


def config_dict(cfg: PpoConfig) -> dict:
    d = asdict(cfg)
    d["hidden"] = list(cfg.hidden)
    return d
