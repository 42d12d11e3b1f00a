"""Tanh MLP with a diagonal-Gaussian policy head and a value head.

Reverse-mode gradients are written by hand and verified against finite
differences in the test suite; no autodiff framework is involved.  The
network is a shared trunk: obs -> tanh layers -> {action mean, value}.
The log standard deviation is a free state-independent parameter vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
LOG2PI = float(np.log(2.0 * np.pi))


@dataclass
class MlpParams:
    """Trunk weights/biases, the two heads, and the policy log-std vector."""

    weights: list          # per hidden layer, (fan_in, fan_out)
    biases: list
    w_mean: np.ndarray     # (hidden, act_dim)
    b_mean: np.ndarray
    w_value: np.ndarray    # (hidden, 1)
    b_value: np.ndarray
    log_std: np.ndarray    # (act_dim,)

    @property
    def obs_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def act_dim(self) -> int:
        return self.w_mean.shape[1]

    @property
    def hidden_sizes(self) -> tuple:
        return tuple(w.shape[1] for w in self.weights)

    def copy(self) -> "MlpParams":
        return MlpParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            w_mean=self.w_mean.copy(), b_mean=self.b_mean.copy(),
            w_value=self.w_value.copy(), b_value=self.b_value.copy(),
            log_std=self.log_std.copy(),
        )

    def flatten(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts += [w.reshape(-1), b]
        parts += [self.w_mean.reshape(-1), self.b_mean,
                  self.w_value.reshape(-1), self.b_value, self.log_std]
        return np.concatenate(parts)

    def assign_flat(self, flat: np.ndarray) -> None:
        i = 0

        def take(arr):
            nonlocal i
            n = arr.size
            arr[...] = flat[i:i + n].reshape(arr.shape)
            i += n

        for w, b in zip(self.weights, self.biases):
            take(w)
            take(b)
        take(self.w_mean)
        take(self.b_mean)
        take(self.w_value)
        take(self.b_value)
        take(self.log_std)
        assert i == flat.size
        np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX, out=self.log_std)


def _orthogonal(rng: np.random.Generator, shape, gain: float) -> np.ndarray:
    a = rng.standard_normal(shape)
    u, _, vt = np.linalg.svd(a, full_matrices=False)
    w = u if u.shape == shape else vt
    return gain * w.reshape(shape)


def init_params(obs_dim: int, act_dim: int, hidden=(64, 64),
                log_std_init: float = -0.5, seed: int = 0) -> MlpParams:
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    fan_in = obs_dim
    for h in hidden:
        weights.append(_orthogonal(rng, (fan_in, h), gain=np.sqrt(2.0)))
        biases.append(np.zeros(h))
        fan_in = h
    return MlpParams(
        weights=weights, biases=biases,
        w_mean=_orthogonal(rng, (fan_in, act_dim), gain=0.01),
        b_mean=np.zeros(act_dim),
        w_value=_orthogonal(rng, (fan_in, 1), gain=1.0),
        b_value=np.zeros(1),
        log_std=np.full(act_dim, float(np.clip(log_std_init, LOG_STD_MIN, LOG_STD_MAX))),
    )


def zero_params(obs_dim: int, act_dim: int, hidden=(64, 64)) -> MlpParams:
    p = init_params(obs_dim, act_dim, hidden, log_std_init=0.0, seed=0)
    flat = p.flatten()
    flat[:] = 0.0
    p.assign_flat(flat)
    return p


def forward(params: MlpParams, obs: np.ndarray):
    """Batch forward pass: returns (mean, value, hidden activations)."""
    x = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    acts = [x]
    for w, b in zip(params.weights, params.biases):
        x = np.tanh(x @ w + b)
        acts.append(x)
    mean = x @ params.w_mean + params.b_mean
    value = (x @ params.w_value + params.b_value)[:, 0]
    return mean, value, acts


def policy_forward(params: MlpParams, obs: np.ndarray):
    """Single-observation pass: (action mean, log-std, value)."""
    obs = np.asarray(obs, dtype=np.float64).reshape(-1)
    if obs.shape[0] != params.obs_dim:
        raise ValueError(f"expected observation of dim {params.obs_dim}, got {obs.shape[0]}")
    mean, value, _ = forward(params, obs[None, :])
    return mean[0], params.log_std.copy(), float(value[0])


def value_input_gradient(params: MlpParams, obs: np.ndarray) -> np.ndarray:
    """d value / d observation for one observation."""
    obs = np.asarray(obs, dtype=np.float64).reshape(1, -1)
    _, _, acts = forward(params, obs)
    dh = params.w_value.T.copy()           # (1, hidden)
    for layer in range(len(params.weights) - 1, -1, -1):
        h = acts[layer + 1]
        pre = dh * (1.0 - h * h)
        dh = pre @ params.weights[layer].T
    return dh[0]


def gaussian_logp(actions: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    """Diagonal-Gaussian log density, summed over action dimensions."""
    actions = np.atleast_2d(actions)
    mean = np.atleast_2d(mean)
    inv_var = np.exp(-2.0 * log_std)
    delta = actions - mean
    return np.sum(-0.5 * delta * delta * inv_var - log_std - 0.5 * LOG2PI, axis=1)


def entropy(log_std: np.ndarray) -> float:
    """Entropy of the diagonal Gaussian (state independent)."""
    return float(np.sum(log_std + 0.5 * (LOG2PI + 1.0)))


def sample_action(mean: np.ndarray, log_std: np.ndarray, rng: np.random.Generator):
    """Unbounded Gaussian sample plus its log probability."""
    mean = np.asarray(mean, dtype=np.float64)
    std = np.exp(log_std)
    action = mean + std * rng.standard_normal(mean.shape)
    logp = gaussian_logp(action[None] if action.ndim == 1 else action,
                         mean[None] if mean.ndim == 1 else mean, log_std)
    return action, (float(logp[0]) if action.ndim == 1 else logp)


@dataclass
class GradParams:
    """Gradient pytree matching MlpParams."""

    weights: list
    biases: list
    w_mean: np.ndarray
    b_mean: np.ndarray
    w_value: np.ndarray
    b_value: np.ndarray
    log_std: np.ndarray

    @staticmethod
    def zeros_like(p: MlpParams) -> "GradParams":
        return GradParams(
            weights=[np.zeros_like(w) for w in p.weights],
            biases=[np.zeros_like(b) for b in p.biases],
            w_mean=np.zeros_like(p.w_mean), b_mean=np.zeros_like(p.b_mean),
            w_value=np.zeros_like(p.w_value), b_value=np.zeros_like(p.b_value),
            log_std=np.zeros_like(p.log_std),
        )

    def flatten(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts += [w.reshape(-1), b]
        parts += [self.w_mean.reshape(-1), self.b_mean,
                  self.w_value.reshape(-1), self.b_value, self.log_std]
        return np.concatenate(parts)


def backward_heads(params: MlpParams, acts, d_mean: np.ndarray, d_value: np.ndarray,
                   d_log_std: np.ndarray) -> GradParams:
    """Backpropagate gradients at the heads through the shared trunk.

    d_mean: (B, act_dim) upstream gradient on the policy mean;
    d_value: (B,) on the value output; d_log_std: (act_dim,) direct gradient.
    """
    g = GradParams.zeros_like(params)
    h_last = acts[-1]
    g.w_mean[...] = h_last.T @ d_mean
    g.b_mean[...] = d_mean.sum(axis=0)
    g.w_value[...] = h_last.T @ d_value[:, None]
    g.b_value[...] = d_value.sum(axis=0, keepdims=True)[:1]
    g.log_std[...] = d_log_std
    dh = d_mean @ params.w_mean.T + d_value[:, None] @ params.w_value.T
    for layer in range(len(params.weights) - 1, -1, -1):
        h = acts[layer + 1]
        pre = dh * (1.0 - h * h)          # tanh'
        g.weights[layer][...] = acts[layer].T @ pre
        g.biases[layer][...] = pre.sum(axis=0)
        if layer > 0:
            dh = pre @ params.weights[layer].T
    return g


def ppo_loss_and_grad(params: MlpParams, obs, actions, logp_old, advantages,
                      returns, clip_eps: float, value_coef: float,
                      entropy_coef: float):
    """Clipped-surrogate PPO loss with hand-derived gradients.

    loss = -mean(min(r A, clip(r) A)) + c_v mean((v - R)^2) - c_e H
    """
    B = obs.shape[0]
    mean, value, acts = forward(params, obs)
    log_std = params.log_std
    inv_var = np.exp(-2.0 * log_std)
    delta = actions - mean
    logp_new = np.sum(-0.5 * delta * delta * inv_var - log_std - 0.5 * LOG2PI, axis=1)
    ratio = np.exp(logp_new - logp_old)
    unclipped = ratio * advantages
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * advantages
    surrogate = np.minimum(unclipped, clipped)
    policy_loss = -float(np.mean(surrogate))
    value_err = value - returns
    value_loss = float(np.mean(value_err ** 2))
    ent = entropy(log_std)
    loss = policy_loss + value_coef * value_loss - entropy_coef * ent

    # d loss / d logp_new: active only where the unclipped branch is the min
    active = (unclipped <= clipped).astype(np.float64)
    d_logp = -(active * unclipped) / B
    d_mean = d_logp[:, None] * (delta * inv_var)
    d_log_std = np.sum(d_logp[:, None] * (delta * delta * inv_var - 1.0), axis=0)
    d_log_std -= entropy_coef                       # entropy term, per dimension
    d_value = value_coef * 2.0 * value_err / B
    grads = backward_heads(params, acts, d_mean, d_value, d_log_std)

    stats = {
        "loss": float(loss),
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "entropy": ent,
        "clip_fraction": float(np.mean((np.abs(ratio - 1.0) > clip_eps))),
        "approx_kl": float(np.mean(logp_old - logp_new)),
    }
    return loss, grads, stats


class Adam:
    """Flat-vector Adam with global gradient-norm capping."""

    def __init__(self, size: int, lr: float = 3e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, grad_clip: float = 0.5):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.grad_clip = grad_clip
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, flat_params: np.ndarray, flat_grad: np.ndarray) -> np.ndarray:
        norm = float(np.linalg.norm(flat_grad))
        if self.grad_clip > 0.0 and norm > self.grad_clip:
            flat_grad = flat_grad * (self.grad_clip / norm)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * flat_grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * flat_grad ** 2
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return flat_params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class RunningNorm:
    """Per-dimension running mean/std for observation normalization."""

    def __init__(self, dim: int, clip: float = 10.0):
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.count = 1e-4
        self.clip = clip
        self.frozen = False

    def update(self, batch: np.ndarray) -> None:
        if self.frozen:
            return
        batch = np.atleast_2d(batch)
        b_mean = batch.mean(axis=0)
        b_var = batch.var(axis=0)
        b_count = batch.shape[0]
        delta = b_mean - self.mean
        total = self.count + b_count
        self.mean = self.mean + delta * b_count / total
        m_a = self.var * self.count
        m_b = b_var * b_count
        self.var = (m_a + m_b + delta ** 2 * self.count * b_count / total) / total
        self.count = total

    def normalize(self, x: np.ndarray) -> np.ndarray:
        z = (x - self.mean) / np.sqrt(self.var + 1e-8)
        return np.clip(z, -self.clip, self.clip)

    def state(self) -> dict:
        return {"mean": self.mean.copy(), "var": self.var.copy(),
                "count": float(self.count)}

    @staticmethod
    def from_state(state: dict, clip: float = 10.0) -> "RunningNorm":
        rn = RunningNorm(len(state["mean"]), clip=clip)
        rn.mean = np.asarray(state["mean"], dtype=np.float64).copy()
        rn.var = np.asarray(state["var"], dtype=np.float64).copy()
        rn.count = float(state["count"])
        return rn
