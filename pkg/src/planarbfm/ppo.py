"""PPO core: Gaussian actor-critic heads, GAE, and the clipped update.

Gradients are computed analytically through the MLP stack (nets.py); the
policy is a state-independent-std diagonal Gaussian, the critic a scalar
head.  All functions are pure — parameters go in, new parameters come out —
so rollout workers can hold read-only references while the trainer updates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gaussian import DiagGaussian, gaussian_log_prob
from .nets import (
    AdamState,
    MlpSpec,
    ParamStore,
    adam_step,
    clamp_log_std,
    init_mlp_params,
    log_std_grad_mask,
    merge_stores,
    mlp_backward_from_cache,
    mlp_forward,
    mlp_forward_cached,
)


class TrainingError(RuntimeError):
    """Non-finite training state; message carries diagnostics."""


@dataclass(frozen=True)
class ActorCriticSpec:
    obs_dim: int
    act_dim: int
    hidden: tuple[int, ...] = (256, 256, 256)
    activation: str = "elu"
    init_log_std: float = -1.0

    @property
    def pi_spec(self) -> MlpSpec:
        return MlpSpec((self.obs_dim, *self.hidden, self.act_dim), self.activation)

    @property
    def vf_spec(self) -> MlpSpec:
        return MlpSpec((self.obs_dim, *self.hidden, 1), self.activation)


def init_actor_critic(
    spec: ActorCriticSpec, rng: np.random.Generator, dtype=np.float32
) -> ParamStore:
    pi = init_mlp_params(spec.pi_spec, rng, dtype=dtype, output_gain=0.01, prefix="pi.")
    vf = init_mlp_params(spec.vf_spec, rng, dtype=dtype, output_gain=1.0, prefix="vf.")
    log_std = ParamStore(
        {"pi.log_std": np.full(spec.act_dim, spec.init_log_std, dtype=dtype)},
        check=False,
    )
    return merge_stores(pi, log_std, vf)


def policy_dist(spec: ActorCriticSpec, params: ParamStore, obs: np.ndarray) -> DiagGaussian:
    mean = mlp_forward(spec.pi_spec, params, obs, prefix="pi.")
    std = np.exp(clamp_log_std(params["pi.log_std"]))
    return DiagGaussian(mean=mean, std=np.broadcast_to(std, mean.shape).copy())


def value_forward(spec: ActorCriticSpec, params: ParamStore, obs: np.ndarray) -> np.ndarray:
    return mlp_forward(spec.vf_spec, params, obs, prefix="vf.")[..., 0]


@dataclass
class RolloutBuffer:
    """Time-major rollout storage: arrays shaped (T, N, ...)."""

    obs: np.ndarray        # (T, N, obs_dim)
    actions: np.ndarray    # (T, N, act_dim)
    log_probs: np.ndarray  # (T, N)
    rewards: np.ndarray    # (T, N)
    values: np.ndarray     # (T, N)
    dones: np.ndarray      # (T, N) episode boundary after this step
    last_values: np.ndarray  # (N,) bootstrap for the state after step T-1
    gamma: float = 0.99
    lam: float = 0.95

    def __post_init__(self):
        t, n = self.rewards.shape
        if t == 0:
            raise ValueError("empty rollout buffer")
        for name in ("obs", "actions", "log_probs", "values", "dones"):
            arr = getattr(self, name)
            if arr.shape[:2] != (t, n):
                raise ValueError(
                    f"{name} leading shape {arr.shape[:2]} != rewards {(t, n)}"
                )
        if self.last_values.shape != (n,):
            raise ValueError("last_values must be (N,)")
        if not (0.0 < self.gamma <= 1.0 and 0.0 < self.lam <= 1.0):
            raise ValueError("gamma and lam must lie in (0, 1]")

    @property
    def horizon(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_envs(self) -> int:
        return self.rewards.shape[1]


def gae(buffer: RolloutBuffer, normalize: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates and value targets.

    Returns (advantages, returns); advantages are batch-normalized to mean 0
    and std 1 unless `normalize` is False.  `dones` cut the recursion, so
    credit never leaks across episode boundaries.
    """
    t_max = buffer.horizon
    not_done = 1.0 - buffer.dones.astype(float)
    adv = np.zeros_like(buffer.rewards)
    carry = np.zeros(buffer.n_envs)
    next_value = buffer.last_values
    for t in reversed(range(t_max)):
        delta = (
            buffer.rewards[t]
            + buffer.gamma * next_value * not_done[t]
            - buffer.values[t]
        )
        carry = delta + buffer.gamma * buffer.lam * not_done[t] * carry
        adv[t] = carry
        next_value = buffer.values[t]
    returns = adv + buffer.values
    if normalize:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return adv, returns


@dataclass
class PpoStats:
    total_loss: float
    policy_loss: float
    value_loss: float
    entropy: float
    approx_kl: float
    clip_fraction: float


def ppo_loss_and_grads(
    spec: ActorCriticSpec,
    params: ParamStore,
    obs: np.ndarray,
    actions: np.ndarray,
    log_probs_old: np.ndarray,
    advantages: np.ndarray,
    returns: np.ndarray,
    clip_eps: float = 0.2,
    vf_coef: float = 0.5,
    ent_coef: float = 0.0,
) -> tuple[float, PpoStats, ParamStore]:
    """Clipped-surrogate loss, diagnostics, and exact analytic gradients."""
    b = obs.shape[0]
    dtype = obs.dtype

    mean, pi_acts = mlp_forward_cached(spec.pi_spec, params, obs, prefix="pi.")
    log_std = clamp_log_std(params["pi.log_std"])
    std = np.exp(log_std)
    z = (actions - mean) / std
    log_probs = (-0.5 * z * z - log_std - 0.5 * np.log(2.0 * np.pi)).sum(axis=1)

    ratio = np.exp(log_probs - log_probs_old)
    surr1 = ratio * advantages
    surr2 = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * advantages
    policy_loss = -np.minimum(surr1, surr2).mean()

    values, vf_acts = mlp_forward_cached(spec.vf_spec, params, obs, prefix="vf.")
    v = values[:, 0]
    value_loss = 0.5 * np.mean((v - returns) ** 2)

    entropy = float(
        (0.5 * (1.0 + np.log(2.0 * np.pi)) + log_std).sum())  # per-sample constant
    total = float(policy_loss + vf_coef * value_loss - ent_coef * entropy)
    if not np.isfinite(total):
        raise TrainingError(
            f"non-finite PPO loss: policy={policy_loss} value={value_loss} "
            f"ratio range=[{ratio.min()}, {ratio.max()}]"
        )

    # --- gradients ---------------------------------------------------------
    # policy: d(-mean(min(surr1, surr2)))/dlogp, active only where unclipped
    active = surr1 <= surr2
    dlogp = np.where(active, -advantages * ratio, 0.0) / b
    dmean = dlogp[:, None] * (z / std)
    dlog_std_vec = (dlogp[:, None] * (z * z - 1.0)).sum(axis=0) - ent_coef
    dlog_std_vec = dlog_std_vec * log_std_grad_mask(log_std)

    pi_grads, _ = mlp_backward_from_cache(
        spec.pi_spec, params, pi_acts, dmean.astype(dtype), prefix="pi.")
    dv = (vf_coef * (v - returns) / b)[:, None]
    vf_grads, _ = mlp_backward_from_cache(
        spec.vf_spec, params, vf_acts, dv.astype(dtype), prefix="vf.")
    grads = merge_stores(
        pi_grads,
        ParamStore({"pi.log_std": dlog_std_vec.astype(dtype)}, check=False),
        vf_grads,
    )

    stats = PpoStats(
        total_loss=total,
        policy_loss=float(policy_loss),
        value_loss=float(value_loss),
        entropy=entropy,
        approx_kl=float(np.mean(log_probs_old - log_probs)),
        clip_fraction=float(np.mean(np.abs(ratio - 1.0) > clip_eps)),
    )
    return total, stats, grads


def ppo_update(
    spec: ActorCriticSpec,
    params: ParamStore,
    adam: AdamState,
    buffer: RolloutBuffer,
    advantages: np.ndarray,
    returns: np.ndarray,
    rng: np.random.Generator,
    clip_eps: float = 0.2,
    epochs: int = 4,
    minibatches: int = 4,
    vf_coef: float = 0.5,
    ent_coef: float = 0.0,
) -> tuple[ParamStore, AdamState, PpoStats]:
    """Epochs of shuffled-minibatch clipped updates; returns final stats."""
    obs = buffer.obs.reshape(-1, buffer.obs.shape[-1])
    actions = buffer.actions.reshape(-1, buffer.actions.shape[-1])
    logp_old = buffer.log_probs.reshape(-1)
    adv = advantages.reshape(-1)
    ret = returns.reshape(-1)
    n = obs.shape[0]
    stats = None
    for _ in range(epochs):
        order = rng.permutation(n)
        for chunk in np.array_split(order, minibatches):
            _, stats, grads = ppo_loss_and_grads(
                spec, params, obs[chunk], actions[chunk], logp_old[chunk],
                adv[chunk], ret[chunk], clip_eps=clip_eps,
                vf_coef=vf_coef, ent_coef=ent_coef,
            )
            params, adam = adam_step(params, grads, adam)
    return params, adam, stats


def sample_actions(
    spec: ActorCriticSpec,
    params: ParamStore,
    obs: np.ndarray,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Draw actions for a rollout step: (actions, log_probs, values)."""
    dist = policy_dist(spec, params, obs)
    noise = rng.standard_normal(dist.mean.shape)
    actions = dist.mean + dist.std * noise
    log_probs = gaussian_log_prob(dist, actions)
    values = value_forward(spec, params, obs)
    return actions, log_probs, values
