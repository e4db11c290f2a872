"""Residual-adapter PPO on a frozen BFM, plus the RL-from-scratch baseline.

To acquire a behavior the BFM cannot track zero-shot, a small residual
policy Δ(history ⊕ z) is PPO-trained while every BFM parameter stays
frozen; the executed action is

    a' = decode(history, μ^ρ) + δ_max · tanh(u),   u ~ π_res

so the BFM provides the warm start and the residual only needs to learn a
bounded correction.  PPO operates in the unsquashed u-space (plain Gaussian
policy); the tanh bound is applied at the environment boundary.

The from_scratch baseline trains a fresh policy on (history ⊕ masked goal)
with at least the combined decoder+residual capacity, under the identical
environment, rewards, and termination curriculum — the paired comparison
isolates the value of the warm start.

A termination curriculum relaxes the early tracking tolerance (τ from 0.5
to 0.2 m over the first 40 % of updates, scaled by clip length / 200) so
exploration is not cut off before the residual finds the motion.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal

import numpy as np

from .control import apply_mask, build_goal_from_reference, preset_mask, real_proprio
from .cvae import BfmModel
from .embodiment import EmbodimentSpec, default_embodiment
from .motions import MotionClip
from .nets import ParamStore, adam_init
from .normalization import RunningNorm
from .obs import batch_kin_with_velocities
from .ppo import (
    ActorCriticSpec,
    RolloutBuffer,
    gae,
    init_actor_critic,
    policy_dist,
    ppo_update,
    sample_actions,
    value_forward,
)
from .proxy import ProxyConfig, TrackingVecEnv
from .rewards import CurriculumState, RewardWeights
from .sampler import MotionSampler
from .sim import DomainRandomizationConfig
from .control import MASK_DIM, ProprioHistory

__all__ = [
    "ResidualConfig",
    "ResidualController",
    "ResidualTrainResult",
    "TerminationCurriculum",
    "residual_act",
    "train_residual",
]

_HISTORY_DIM = 525


# ---------------------------------------------------------------------------
# termination curriculum
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class TerminationCurriculum:
    """Linear tolerance schedule, loose to tight, scaled by clip length."""

    tau_start: float = 0.5
    tau_end: float = 0.2
    frac: float = 0.4         # fraction of updates spent annealing
    ref_len: int = 200        # frames at which the schedule applies unscaled

    def __post_init__(self):
        if not 0.0 < self.tau_end <= self.tau_start:
            raise ValueError("need 0 < tau_end <= tau_start")
        if not 0.0 < self.frac <= 1.0:
            raise ValueError("frac must lie in (0, 1]")
        if self.ref_len <= 0:
            raise ValueError("ref_len must be positive")

    def tolerance(self, update: int, n_updates: int, clip_len: int) -> float:
        anneal = max(1, round(self.frac * n_updates))
        progress = min(1.0, update / anneal)
        tau = self.tau_start + (self.tau_end - self.tau_start) * progress
        return tau * (clip_len / self.ref_len)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ResidualConfig:
    """PPO settings shared by both arms; mirrors the proxy trainer."""

    total_env_steps: int = 500_000
    n_envs: int = 64
    rollout_steps: int = 32

    delta_max: float = 0.3                     # rad, residual action bound
    hidden: tuple[int, ...] = (256, 256)       # residual policy
    scratch_hidden: tuple[int, ...] = (512, 512)
    activation: str = "elu"
    init_log_std: float = -1.0

    lr: float = 3e-4
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 4
    minibatches: int = 4
    vf_coef: float = 0.5
    ent_coef: float = 0.0

    episode_cap: int = 500
    min_horizon: int = 50
    curriculum: TerminationCurriculum = field(default_factory=TerminationCurriculum)
    reward_curriculum_start: int = 0
    reward_curriculum_end: int = 300_000
    target_completion: float = 0.9             # fraction of available horizon

    dr: DomainRandomizationConfig = field(default_factory=DomainRandomizationConfig)
    reward_weights: RewardWeights = field(default_factory=RewardWeights)

    def residual_ac_spec(self, latent_dim: int) -> ActorCriticSpec:
        return ActorCriticSpec(
            obs_dim=_HISTORY_DIM + latent_dim, act_dim=6,
            hidden=self.hidden, activation=self.activation,
            init_log_std=self.init_log_std,
        )

    def scratch_ac_spec(self, masked_goal_dim: int) -> ActorCriticSpec:
        return ActorCriticSpec(
            obs_dim=_HISTORY_DIM + masked_goal_dim, act_dim=6,
            hidden=self.scratch_hidden, activation=self.activation,
            init_log_std=self.init_log_std,
        )


# ---------------------------------------------------------------------------
# environment: tracking env + real-obs history + completion accounting
# ---------------------------------------------------------------------------
class _ResidualVecEnv(TrackingVecEnv):
    """Tracking episodes that also maintain deployment-side state.

    Adds the 25-step proprioception ring and per-episode horizon accounting
    (fraction of the available frames survived) on top of the proxy env.
    """

    def __init__(self, spec, sampler, config: ProxyConfig, rng):
        self._ready = False
        super().__init__(spec, sampler, config, rng)
        n = config.n_envs
        self.history = ProprioHistory(n)
        self.history.reset(real_proprio(self.batch))
        self.ep_horizon = np.zeros(n, dtype=np.int64)
        for i in range(n):
            self._set_horizon(i)
        self.finished_completions: list[float] = []
        self._ready = True

    def _set_horizon(self, i: int) -> None:
        avail = int(self.bank.lengths[self.clip_idx[i]] - 1 - self.frame[i])
        self.ep_horizon[i] = min(avail, self.config.episode_cap)

    def _reset_env(self, i: int) -> None:
        if self._ready:
            self.finished_completions.append(
                float(self.ep_steps[i]) / max(1, int(self.ep_horizon[i]))
            )
        super()._reset_env(i)
        if self._ready:
            self._set_horizon(i)
            rows = np.array([i])
            self.history.reset(real_proprio(self.batch)[rows], rows=rows)

    def step(self, actions, curriculum_scale):
        out = super().step(actions, curriculum_scale)
        self.history.push(real_proprio(self.batch))
        return out

    def goals(self) -> np.ndarray:
        """TRACK-masked goal toward the next reference frame, (N, 43)."""
        ref_pose, ref_vel = self.bank.ref(self.clip_idx, self.frame + 1)
        ref_kin = self.bank.ref_kin(self.clip_idx, self.frame + 1)
        goal = build_goal_from_reference(self.spec, self.batch, ref_pose, ref_vel, ref_kin)
        mask = np.ones((self.batch.n, MASK_DIM))
        return apply_mask(goal, mask)


# ---------------------------------------------------------------------------
# acting
# ---------------------------------------------------------------------------
def residual_delta(config_delta_max: float, u: np.ndarray) -> np.ndarray:
    return config_delta_max * np.tanh(u)


def residual_act(
    bfm: BfmModel,
    res_spec: ActorCriticSpec,
    res_params: ParamStore,
    res_norm: RunningNorm,
    history: np.ndarray,
    goal: np.ndarray,
    mask: np.ndarray,
    delta_max: float = 0.3,
    spec: EmbodimentSpec | None = None,
) -> np.ndarray:
    """Deterministic deployment action a' = decode(h, μ^ρ) + δ_max·tanh(u)."""
    spec = spec or default_embodiment()
    masked_goal = apply_mask(goal, mask)
    z = bfm.prior(history, masked_goal).mean
    base = bfm.decode(history, z)
    obs = res_norm.normalize(np.concatenate([history, z], axis=-1))
    u = policy_dist(res_spec, res_params, obs).mean
    action = base + residual_delta(delta_max, u)
    return np.clip(action, spec.joint_lower, spec.joint_upper)


class ResidualController:
    """Tracking-protocol adapter for the frozen BFM + trained residual."""

    def __init__(self, result: "ResidualTrainResult", spec: EmbodimentSpec | None = None):
        if result.arm != "residual":
            raise ValueError("controller requires a residual-arm result")
        self.result = result
        self.spec = spec or default_embodiment()
        self._history: ProprioHistory | None = None

    def begin_episode(self, clip, start, rng) -> None:
        del clip, start, rng
        self._history = None

    def act(self, batch, kin, ref_pose, ref_vel, ref_kin=None) -> np.ndarray:
        del kin
        if self._history is None:
            self._history = ProprioHistory(batch.n)
            self._history.reset(real_proprio(batch))
        else:
            self._history.push(real_proprio(batch))
        goal = build_goal_from_reference(self.spec, batch, ref_pose, ref_vel, ref_kin)
        mask = np.ones((batch.n, MASK_DIM))
        r = self.result
        return residual_act(
            r.bfm, r.ac_spec, r.params, r.norm,
            self._history.flat(), goal, mask,
            delta_max=r.delta_max, spec=self.spec,
        )


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------
@dataclass
class ResidualTrainResult:
    arm: str                        # "residual" | "from_scratch"
    ac_spec: ActorCriticSpec
    params: ParamStore
    norm: RunningNorm
    bfm: BfmModel | None            # None for from_scratch
    delta_max: float
    curves: list[dict]
    env_steps: int
    steps_to_target: int | None     # env steps when mean completion first
                                    # reached the target; None if never


def _zero_output_layer(params: ParamStore, hidden: tuple[int, ...]) -> ParamStore:
    """Zero the policy output layer so the initial residual is exactly a' = a."""
    out = f"pi.l{len(hidden)}"
    rebuilt = {
        name: (np.zeros_like(params[name])
               if name in (f"{out}.w", f"{out}.b") else params[name])
        for name in params.names()
    }
    return ParamStore(rebuilt, check=False)


def train_residual(
    bfm: BfmModel,
    clip: MotionClip,
    config: ResidualConfig | None = None,
    baseline: Literal["residual", "from_scratch"] = "residual",
    seed: int = 0,
    spec: EmbodimentSpec | None = None,
    log_path: str | Path | None = None,
) -> ResidualTrainResult:
    """PPO on the chosen arm over a single clip; emits per-update curves.

    The BFM is read-only throughout (byte-identity checkable by the caller).
    """
    config = config or ResidualConfig()
    spec = spec or default_embodiment()
    if baseline not in ("residual", "from_scratch"):
        raise ValueError(f"unknown baseline {baseline!r}")
    rng = np.random.default_rng(seed)

    sampler = MotionSampler.from_clips([clip], min_horizon=config.min_horizon)
    clip_len = len(clip.frames)
    proxy_cfg = ProxyConfig(
        n_envs=config.n_envs, rollout_steps=config.rollout_steps,
        episode_cap=config.episode_cap, min_horizon=config.min_horizon,
        tolerance=config.curriculum.tolerance(0, 1, clip_len),
        dr=config.dr, reward_weights=config.reward_weights,
    )
    env = _ResidualVecEnv(spec, sampler, proxy_cfg, rng)

    if baseline == "residual":
        ac_spec = config.residual_ac_spec(bfm.spec.latent_dim)
        params = _zero_output_layer(init_actor_critic(ac_spec, rng), config.hidden)
    else:
        ac_spec = config.scratch_ac_spec(bfm.spec.masked_goal_dim)
        params = init_actor_critic(ac_spec, rng)

    norm = RunningNorm.for_dim(ac_spec.obs_dim)
    opt = adam_init(params, lr=config.lr)
    reward_curriculum = CurriculumState(
        start_step=config.reward_curriculum_start, end_step=config.reward_curriculum_end
    )

    def assemble_obs() -> tuple[np.ndarray, np.ndarray | None]:
        hist = env.history.flat()
        if baseline == "residual":
            z = bfm.prior(hist, env.goals()).mean
            return np.concatenate([hist, z], axis=-1), z
        return np.concatenate([hist, env.goals()], axis=-1), None

    steps_per_update = config.n_envs * config.rollout_steps
    n_updates = config.total_env_steps // steps_per_update
    curves: list[dict] = []
    log_file = open(log_path, "w", encoding="utf-8") if log_path is not None else None
    env_steps = 0
    steps_to_target: int | None = None

    try:
        if n_updates == 0:
            # No training: a single deterministic probe records the frozen
            # starting point (for the residual arm, the BFM itself).
            record = _probe_zero_shot(env, bfm, ac_spec, params, norm, config, baseline)
            curves.append(record)
            if log_file is not None:
                log_file.write(json.dumps(record) + "\n")

        for update in range(n_updates):
            tau = config.curriculum.tolerance(update, n_updates, clip_len)
            env.config = replace(env.config, tolerance=tau)
            scale = reward_curriculum.scale(env_steps)

            t_steps = config.rollout_steps
            obs_buf = np.zeros((t_steps, config.n_envs, ac_spec.obs_dim), dtype=np.float32)
            act_buf = np.zeros((t_steps, config.n_envs, 6), dtype=np.float32)
            logp_buf = np.zeros((t_steps, config.n_envs), dtype=np.float32)
            rew_buf = np.zeros((t_steps, config.n_envs), dtype=np.float32)
            val_buf = np.zeros((t_steps, config.n_envs), dtype=np.float32)
            done_buf = np.zeros((t_steps, config.n_envs), dtype=np.float32)
            kp_devs: list[float] = []

            for t in range(t_steps):
                raw_obs, z = assemble_obs()
                norm.update(raw_obs)
                obs = norm.normalize(raw_obs)
                u, logp, value = sample_actions(ac_spec, params, obs, rng)
                if baseline == "residual":
                    base = bfm.decode(env.history.flat(), z)
                    actions = base + residual_delta(config.delta_max, u)
                else:
                    actions = u
                actions = np.clip(actions, spec.joint_lower, spec.joint_upper)

                rewards, terminated, truncated, _ = env.step(actions, scale)
                kin = env._kin
                ref_kin = env.bank.ref_kin(env.clip_idx, env.frame)
                kp_devs.append(float(
                    np.linalg.norm(kin.keypoints - ref_kin.keypoints, axis=-1).mean()
                ))

                if truncated.any():
                    next_raw, _ = assemble_obs()
                    next_value = value_forward(
                        ac_spec, params, norm.normalize(next_raw[truncated])
                    )
                    rewards = rewards.copy()
                    rewards[truncated] += config.gamma * next_value

                obs_buf[t] = obs
                act_buf[t] = u
                logp_buf[t] = logp
                rew_buf[t] = rewards
                val_buf[t] = value
                done_buf[t] = (terminated | truncated).astype(np.float32)
                env.reset_done(terminated | truncated)
                env_steps += config.n_envs

            final_raw, _ = assemble_obs()
            last_values = value_forward(ac_spec, params, norm.normalize(final_raw))
            buffer = RolloutBuffer(
                obs=obs_buf, actions=act_buf, log_probs=logp_buf, rewards=rew_buf,
                values=val_buf, dones=done_buf,
                last_values=last_values.astype(np.float32),
                gamma=config.gamma, lam=config.lam,
            )
            advantages, returns = gae(buffer)
            params, opt, stats = ppo_update(
                ac_spec, params, opt, buffer, advantages, returns, rng,
                clip_eps=config.clip_eps, epochs=config.epochs,
                minibatches=config.minibatches, vf_coef=config.vf_coef,
                ent_coef=config.ent_coef,
            )

            lens = env.finished_lengths[-100:]
            comps = env.finished_completions[-100:]
            mean_completion = float(np.mean(comps)) if comps else 0.0
            if steps_to_target is None and comps and mean_completion >= config.target_completion:
                steps_to_target = env_steps

            record = {
                "step": env_steps,
                "update": update + 1,
                "arm": baseline,
                "tolerance": round(tau, 6),
                "mean_kp_dev": round(float(np.mean(kp_devs)), 6),
                "mean_episode_len": round(float(np.mean(lens)), 2) if lens else 0.0,
                "mean_completion": round(mean_completion, 4),
                "mean_reward": round(float(np.mean(env.finished_rewards[-100:])), 4)
                if env.finished_rewards else 0.0,
                "policy_loss": round(stats.policy_loss, 6),
                "value_loss": round(stats.value_loss, 6),
            }
            curves.append(record)
            if log_file is not None:
                log_file.write(json.dumps(record) + "\n")
                log_file.flush()
    finally:
        if log_file is not None:
            log_file.close()

    norm.freeze()
    return ResidualTrainResult(
        arm=baseline, ac_spec=ac_spec, params=params, norm=norm,
        bfm=bfm if baseline == "residual" else None,
        delta_max=config.delta_max, curves=curves,
        env_steps=env_steps, steps_to_target=steps_to_target,
    )


def _probe_zero_shot(env, bfm, ac_spec, params, norm, config, baseline) -> dict:
    """One deterministic rollout pass recording the untrained behavior."""
    spec = env.spec
    devs: list[float] = []
    steps = 0
    done = np.zeros(config.n_envs, dtype=bool)
    while steps < env.bank.lengths.max() and not done.all():
        hist = env.history.flat()
        if baseline == "residual":
            z = bfm.prior(hist, env.goals()).mean
            raw_obs = np.concatenate([hist, z], axis=-1)
        else:
            z = None
            raw_obs = np.concatenate([hist, env.goals()], axis=-1)
        obs = norm.normalize(raw_obs)
        u = policy_dist(ac_spec, params, obs).mean
        if baseline == "residual":
            actions = bfm.decode(hist, z) + residual_delta(config.delta_max, u)
        else:
            actions = u
        actions = np.clip(actions, spec.joint_lower, spec.joint_upper)
        _, terminated, truncated, _ = env.step(actions, 1.0)
        ref_kin = env.bank.ref_kin(env.clip_idx, env.frame)
        devs.append(float(
            np.linalg.norm(env._kin.keypoints - ref_kin.keypoints, axis=-1).mean()
        ))
        done |= terminated | truncated
        steps += 1
    lens = [int(s) for s in env.ep_steps]
    return {
        "step": 0, "update": 0, "arm": baseline,
        "tolerance": round(float(env.config.tolerance), 6),
        "mean_kp_dev": round(float(np.mean(devs)), 6),
        "mean_episode_len": round(float(np.mean(lens)), 2),
        "mean_completion": round(float(np.mean(
            np.array(lens) / np.maximum(1, env.ep_horizon)
        )), 4),
        "mean_reward": 0.0, "policy_loss": 0.0, "value_loss": 0.0,
    }
