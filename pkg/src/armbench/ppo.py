"""PPO training on the benchmark environments.

On-policy loop: collect a fixed-size rollout across parallel environment
instances (stepped sequentially for determinism), estimate advantages with
GAE, then run clipped-surrogate updates over shuffled minibatches with the
hand-gradient MLP and Adam.  Observations are normalized by running
statistics that freeze at evaluation time.  Everything is reproducible from
the seed: env streams, action noise, minibatch order, and initialization.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass

import numpy as np

from .mlp import (
    Adam,
    MlpParams,
    RunningNorm,
    forward,
    gaussian_logp,
    init_params,
    ppo_loss_and_grad,
)
from .tasks import TaskEnv

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class PPOConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 10
    minibatch: int = 256
    lr: float = 3e-4
    entropy_coef: float = 1e-3
    value_coef: float = 0.5
    grad_clip: float = 0.5
    rollout: int = 2048          # total env steps per iteration
    n_envs: int = 8
    iterations: int = 400
    hidden: tuple = (64, 64)
    log_std_init: float = 0.0
    eval_interval: int = 10
    eval_episodes: int = 5
    early_stop_success: float = 1.0   # stop once eval success reaches this ...
    early_stop_patience: int = 2      # ... this many consecutive evals
    optimizer: str = "adam"

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("discount gamma must lie in [0, 1)")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("gae lambda must lie in [0, 1]")
        if self.clip_eps <= 0.0:
            raise ValueError("clip epsilon must be positive")
        if self.rollout % self.n_envs != 0:
            raise ValueError("rollout must be divisible by n_envs")


@dataclass
class TrainingLogRow:
    iteration: int
    env_steps: int
    mean_reward: float
    mean_success: float
    mean_energy: float
    mean_force: float
    max_force: float
    policy_loss: float
    value_loss: float
    entropy: float
    wall_clock_s: float
    seed: int

    CSV_FIELDS = ("iteration", "env_steps", "mean_reward", "mean_success",
                  "mean_energy", "mean_force", "max_force", "policy_loss",
                  "value_loss", "entropy", "seed")


@dataclass
class RolloutBuffer:
    """Time-major on-policy storage: (T, n_envs, ...)."""

    obs: np.ndarray
    actions: np.ndarray
    logp: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    bootstrap: np.ndarray      # value of the state after the last step, per env

    @staticmethod
    def allocate(t_env: int, n_envs: int, obs_dim: int, act_dim: int) -> "RolloutBuffer":
        return RolloutBuffer(
            obs=np.zeros((t_env, n_envs, obs_dim)),
            actions=np.zeros((t_env, n_envs, act_dim)),
            logp=np.zeros((t_env, n_envs)),
            rewards=np.zeros((t_env, n_envs)),
            values=np.zeros((t_env, n_envs)),
            dones=np.zeros((t_env, n_envs), dtype=bool),
            bootstrap=np.zeros(n_envs),
        )


def gae_advantages(rewards, values, dones, bootstrap: float, gamma: float, lam: float):
    """Generalized advantage estimation over one trajectory segment.

    delta_t = r_t + gamma v_{t+1} (1 - done_t) - v_t
    A_t = delta_t + gamma lam (1 - done_t) A_{t+1};  returns = A + v.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    T = len(rewards)
    adv = np.zeros(T)
    last = 0.0
    for t in range(T - 1, -1, -1):
        v_next = bootstrap if t == T - 1 else values[t + 1]
        nonterminal = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * v_next * nonterminal - values[t]
        last = delta + gamma * lam * nonterminal * last
        adv[t] = last
    return adv, adv + values


def ppo_update(params: MlpParams, optimizer: Adam, buffer: RolloutBuffer,
               cfg: PPOConfig, rng: np.random.Generator) -> dict:
    """One PPO update over the buffer; mutates params in place."""
    t_env, n_envs = buffer.rewards.shape
    adv = np.zeros_like(buffer.rewards)
    ret = np.zeros_like(buffer.rewards)
    for e in range(n_envs):
        adv[:, e], ret[:, e] = gae_advantages(
            buffer.rewards[:, e], buffer.values[:, e], buffer.dones[:, e],
            buffer.bootstrap[e], cfg.gamma, cfg.lam)
    obs = buffer.obs.reshape(t_env * n_envs, -1)
    actions = buffer.actions.reshape(t_env * n_envs, -1)
    logp_old = buffer.logp.reshape(-1)
    adv = adv.reshape(-1)
    ret = ret.reshape(-1)
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    n = obs.shape[0]
    stats_acc: dict = {}
    count = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch):
            idx = order[start:start + cfg.minibatch]
            loss, grads, stats = ppo_loss_and_grad(
                params, obs[idx], actions[idx], logp_old[idx], adv[idx], ret[idx],
                cfg.clip_eps, cfg.value_coef, cfg.entropy_coef)
            if not np.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite PPO loss on minibatch starting at {start}")
            new_flat = optimizer.step(params.flatten(), grads.flatten())
            params.assign_flat(new_flat)
            for k, v in stats.items():
                stats_acc[k] = stats_acc.get(k, 0.0) + v
            count += 1
    return {k: v / count for k, v in stats_acc.items()}


class Agent:
    """Policy + observation normalizer, with (de)serialization."""

    def __init__(self, params: MlpParams, normalizer: RunningNorm, meta: dict | None = None):
        self.params = params
        self.normalizer = normalizer
        self.meta = dict(meta or {})

    def act(self, obs_vec: np.ndarray, rng: np.random.Generator | None = None,
            deterministic: bool = False):
        z = self.normalizer.normalize(obs_vec)
        mean, value, _ = forward(self.params, z[None, :])
        if deterministic or rng is None:
            return mean[0], 0.0, float(value[0])
        action, logp = sample_action(mean[0], self.params.log_std, rng)
        return action, logp, float(value[0])

    def save(self, path) -> None:
        p = self.params
        arrays = {"log_std": p.log_std, "w_mean": p.w_mean, "b_mean": p.b_mean,
                  "w_value": p.w_value, "b_value": p.b_value,
                  "norm_mean": self.normalizer.mean, "norm_var": self.normalizer.var}
        for i, (w, b) in enumerate(zip(p.weights, p.biases)):
            arrays[f"w{i}"] = w
            arrays[f"b{i}"] = b
        meta = dict(self.meta)
        meta["version"] = CHECKPOINT_VERSION
        meta["n_hidden"] = len(p.weights)
        meta["norm_count"] = self.normalizer.count
        np.savez(path, meta=json.dumps(meta, sort_keys=True), **arrays)

    @staticmethod
    def load(path) -> "Agent":
        data = np.load(path, allow_pickle=False)
        meta = json.loads(str(data["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        n_hidden = int(meta["n_hidden"])
        params = MlpParams(
            weights=[data[f"w{i}"].copy() for i in range(n_hidden)],
            biases=[data[f"b{i}"].copy() for i in range(n_hidden)],
            w_mean=data["w_mean"].copy(), b_mean=data["b_mean"].copy(),
            w_value=data["w_value"].copy(), b_value=data["b_value"].copy(),
            log_std=data["log_std"].copy(),
        )
        norm = RunningNorm.from_state({"mean": data["norm_mean"],
                                       "var": data["norm_var"],
                                       "count": meta["norm_count"]})
        norm.frozen = True
        return Agent(params, norm, meta)


def config_hash(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str)
                          .encode()).hexdigest()[:16]


@dataclass
class TrainResult:
    agent: Agent
    best_agent: Agent
    log: list
    best_success: float
    iterations_run: int
    first_success_iteration: int | None


def _episode_seed(seed: int, env_index: int, counter: int) -> int:
    return (seed * 1_000_003 + env_index * 10_007 + counter * 97) % (2 ** 31 - 1)


def evaluate(agent: Agent, env_factory, n_episodes: int, seed: int = 0,
             deterministic: bool = True) -> dict:
    """Aggregate success/reward/energy/force statistics over n episodes."""
    if n_episodes <= 0:
        return {"episodes": 0, "flag": "empty"}
    env: TaskEnv = env_factory()
    rng = np.random.default_rng(seed)
    rows = []
    for ep in range(n_episodes):
        obs = env.reset(seed=_episode_seed(seed, 0, ep))
        done = False
        result = None
        while not done:
            action, _, _ = agent.act(obs.vector, rng, deterministic=deterministic)
            obs, _, done, result = env.step(action)
        rows.append((result.success, result.total_reward, result.energy,
                     result.mean_force, result.max_force))
    arr = np.asarray(rows)
    names = ("success", "reward", "energy", "mean_force", "max_force")
    out = {"episodes": n_episodes}
    for i, name in enumerate(names):
        col = arr[:, i]
        out[f"{name}_mean"] = float(col.mean())
        out[f"{name}_min"] = float(col.min())
        out[f"{name}_max"] = float(col.max())
        out[f"{name}_std"] = float(col.std())
    return out


def train(env_factory, cfg: PPOConfig, seed: int,
          initial_agent: Agent | None = None,
          checkpoint_dir=None, checkpoint_interval: int = 50,
          log_callback=None) -> TrainResult:
    """Iterate collect -> update until the budget or early stopping.

    `env_factory()` must build a fresh TaskEnv; the trainer owns `n_envs`
    instances plus one for evaluation.  Optimizer: Adam (recorded in the log
    header by the caller).
    """
    envs = [env_factory() for _ in range(cfg.n_envs)]
    obs_dim = envs[0].observation_dim
    act_dim = envs[0].action_dim
    t_env = cfg.rollout // cfg.n_envs

    if initial_agent is None:
        params = init_params(obs_dim, act_dim, cfg.hidden, cfg.log_std_init, seed=seed)
        normalizer = RunningNorm(obs_dim)
    else:
        params = initial_agent.params.copy()
        normalizer = RunningNorm.from_state(initial_agent.normalizer.state())
        normalizer.frozen = False
    agent = Agent(params, normalizer)
    optimizer = Adam(params.flatten().size, lr=cfg.lr, grad_clip=cfg.grad_clip)
    action_rng = np.random.default_rng([seed, 1])
    batch_rng = np.random.default_rng([seed, 2])

    episode_counter = np.zeros(cfg.n_envs, dtype=np.int64)
    current_obs = []
    for e, env in enumerate(envs):
        current_obs.append(env.reset(seed=_episode_seed(seed, e, 0)).vector)
        episode_counter[e] = 1

    log: list[TrainingLogRow] = []
    recent_episodes: list[tuple] = []
    best_success = -1.0
    best_agent = Agent(params.copy(), RunningNorm.from_state(normalizer.state()))
    first_success_iter = None
    consecutive_hits = 0
    t_start = time.time()
    iterations_run = 0

    for it in range(1, cfg.iterations + 1):
        buffer = RolloutBuffer.allocate(t_env, cfg.n_envs, obs_dim, act_dim)
        for t in range(t_env):
            raw_obs = np.asarray(current_obs)
            normalizer.update(raw_obs)
            z = normalizer.normalize(raw_obs)
            mean, value, _ = forward(params, z)
            noise = action_rng.standard_normal(mean.shape)
            actions = mean + np.exp(params.log_std) * noise
            logp = gaussian_logp(actions, mean, params.log_std)
            buffer.obs[t] = z
            buffer.actions[t] = actions
            buffer.logp[t] = logp
            buffer.values[t] = value
            for e, env in enumerate(envs):
                obs_e, breakdown, done, result = env.step(actions[e])
                buffer.rewards[t, e] = breakdown.total
                buffer.dones[t, e] = done
                if done:
                    recent_episodes.append((result.success, result.total_reward,
                                            result.energy, result.mean_force,
                                            result.max_force))
                    current_obs[e] = env.reset(
                        seed=_episode_seed(seed, e, int(episode_counter[e]))).vector
                    episode_counter[e] += 1
                else:
                    current_obs[e] = obs_e.vector

        # bootstrap values for unfinished segments
        z = normalizer.normalize(np.asarray(current_obs))
        _, boot_vals, _ = forward(params, z)
        buffer.bootstrap[:] = np.where(buffer.dones[-1], 0.0, boot_vals)

        stats = ppo_update(params, optimizer, buffer, cfg, batch_rng)
        iterations_run = it

        recent = recent_episodes[-20:]
        if recent:
            arr = np.asarray(recent)
            ep_stats = arr.mean(axis=0)
        else:
            ep_stats = np.zeros(5)
        row = TrainingLogRow(
            iteration=it, env_steps=it * cfg.rollout,
            mean_reward=float(ep_stats[1]), mean_success=float(ep_stats[0]),
            mean_energy=float(ep_stats[2]), mean_force=float(ep_stats[3]),
            max_force=float(ep_stats[4]),
            policy_loss=stats["policy_loss"], value_loss=stats["value_loss"],
            entropy=stats["entropy"], wall_clock_s=time.time() - t_start, seed=seed)
        log.append(row)
        if log_callback is not None:
            log_callback(row)

        if it % cfg.eval_interval == 0 or it == cfg.iterations:
            normalizer.frozen = True
            ev = evaluate(agent, env_factory, cfg.eval_episodes, seed=seed + 7919)
            normalizer.frozen = False
            succ = ev["success_mean"]
            if succ > best_success:
                best_success = succ
                best_agent = Agent(params.copy(),
                                   RunningNorm.from_state(normalizer.state()))
                best_agent.normalizer.frozen = True
            if succ >= cfg.early_stop_success and first_success_iter is None:
                first_success_iter = it
            if checkpoint_dir is not None and it % checkpoint_interval == 0:
                agent_snapshot = Agent(params.copy(),
                                       RunningNorm.from_state(normalizer.state()))
                agent_snapshot.save(f"{checkpoint_dir}/checkpoint_{it:05d}.npz")
            if succ >= cfg.early_stop_success:
                consecutive_hits += 1
                if consecutive_hits >= cfg.early_stop_patience:
                    break
            else:
                consecutive_hits = 0

    normalizer.frozen = True
    if best_success < 0.0:
        best_agent = Agent(params.copy(), RunningNorm.from_state(normalizer.state()))
        best_agent.normalizer.frozen = True
        best_success = 0.0
    return TrainResult(agent=agent, best_agent=best_agent, log=log,
                       best_success=best_success, iterations_run=iterations_run,
                       first_success_iteration=first_success_iter)
