"""PPO motion-imitation trainer: the privileged proxy teacher.

A vectorized fleet of planar humanoids tracks reference clips drawn by the
mining sampler.  Each environment runs one episode per clip draw:

- reset from a randomly sampled reference frame (RSI), with a fresh domain
  randomization draw and push schedule;
- observations are the privileged 87-float proxy vector (54 proprio + 33
  goal toward the *next* reference frame), passed through a running
  normalizer;
- the policy emits PD joint targets; reward is the weighted 20-term imitation
  objective evaluated against the frame just reached;
- the episode terminates early when the mean keypoint distance exceeds the
  tolerance (same criterion as :func:`planarbfm.sim.check_termination`), and
  truncates at the clip end or the step cap.  Truncation bootstraps the value
  of the next state into the final reward so PPO does not mistake running out
  of reference for failure.

Clip mining runs on deterministic evaluation rollouts (nominal dynamics, no
pushes) at a fixed cadence: per-clip success reweights the sampler, and the
plateau filter retires clips the policy has stopped improving on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .embodiment import EmbodimentSpec, default_embodiment
from .metrics import EvalReport, eval_policy
from .motions import MotionClip
from .nets import ParamStore, adam_init
from .normalization import RunningNorm
from .obs import PROXY_OBS_DIM, batch_kin_with_velocities, proxy_observation
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
from .rewards import (
    CurriculumState,
    RewardWeights,
    build_reward_inputs,
    compute_reward,
)
from .sampler import MotionSampler
from .sim import (
    POSE_DIM,
    DomainBatch,
    DomainRandomizationConfig,
    Kinematics,
    PushBatch,
    PushSchedule,
    SimBatch,
    StepInfo,
    kinematics,
    randomize_domain,
    reset_batch_from_poses,
    step_batch,
)

__all__ = [
    "ProxyConfig",
    "ProxyController",
    "ProxyTrainResult",
    "ClipBank",
    "TrackingVecEnv",
    "train_proxy",
    "evaluate_proxy",
]


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ProxyConfig:
    """Hyper-parameters for proxy-teacher training."""

    total_env_steps: int = 2_000_000
    n_envs: int = 256
    rollout_steps: int = 32
    hidden: tuple[int, ...] = (128, 128)
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

    tolerance: float = 0.25
    episode_cap: int = 500          # hard step cap per episode (truncation)
    min_horizon: int = 50           # RSI leaves at least this many frames

    curriculum_start: int = 0
    curriculum_end: int = 300_000   # env steps until penalties reach full scale

    eval_every_updates: int = 40    # mining/eval cadence, in PPO updates
    eval_seeds: tuple[int, ...] = (0,)
    filter_window: int = 10
    filter_min_delta: float = 0.01
    filter_fail_threshold: float = 0.2

    dr: DomainRandomizationConfig = field(default_factory=DomainRandomizationConfig)
    reward_weights: RewardWeights = field(default_factory=RewardWeights)

    def actor_critic_spec(self) -> ActorCriticSpec:
        return ActorCriticSpec(
            obs_dim=PROXY_OBS_DIM,
            act_dim=6,
            hidden=tuple(self.hidden),
            activation=self.activation,
            init_log_std=self.init_log_std,
        )


# ---------------------------------------------------------------------------
# clip bank: padded reference arrays for vectorized frame gathers
# ---------------------------------------------------------------------------
class ClipBank:
    """Stacked clip frames/velocities, indexable by (clip index, frame index).

    Reference forward kinematics are precomputed for every frame so the
    per-step reward and goal assembly only gather rows.
    """

    def __init__(self, clips: Sequence[MotionClip], spec: EmbodimentSpec | None = None):
        if not clips:
            raise ValueError("ClipBank requires at least one clip")
        spec = spec or default_embodiment()
        self.names = [c.name for c in clips]
        self.index = {name: i for i, name in enumerate(self.names)}
        self.lengths = np.array([len(c.frames) for c in clips], dtype=np.int64)
        l_max = int(self.lengths.max())
        n = len(clips)
        self.frames = np.zeros((n, l_max, POSE_DIM))
        self.velocities = np.zeros((n, l_max, POSE_DIM))
        for i, c in enumerate(clips):
            self.frames[i, : self.lengths[i]] = c.frames
            self.velocities[i, : self.lengths[i]] = c.frame_velocities
        flat = self.frames.reshape(n * l_max, POSE_DIM)
        self._kin = kinematics(spec, flat[:, 0:2], flat[:, 2], flat[:, 3:9])
        self._l_max = l_max

    def _clamp(self, clip_idx: np.ndarray, frame_idx: np.ndarray) -> np.ndarray:
        return np.minimum(frame_idx, self.lengths[clip_idx] - 1)

    def ref(self, clip_idx: np.ndarray, frame_idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Reference (poses, velocities), with frames clamped to clip length."""
        f = self._clamp(clip_idx, frame_idx)
        return self.frames[clip_idx, f], self.velocities[clip_idx, f]

    def ref_kin(self, clip_idx: np.ndarray, frame_idx: np.ndarray) -> Kinematics:
        """Row-gathered reference kinematics (pose-only fields)."""
        rows = clip_idx * self._l_max + self._clamp(clip_idx, frame_idx)
        k = self._kin
        return Kinematics(
            keypoints=k.keypoints[rows], heel=k.heel[rows],
            contact_pos=k.contact_pos[rows], link_com=k.link_com[rows],
            link_pitch=k.link_pitch[rows], joint_anchor=k.joint_anchor[rows],
        )


# ---------------------------------------------------------------------------
# vectorized tracking environment
# ---------------------------------------------------------------------------
class TrackingVecEnv:
    """N parallel imitation episodes over a shared clip bank.

    The step/reset split is deliberate: :meth:`step` advances physics and
    reports rewards and termination flags but leaves finished environments in
    their final state, so the trainer can evaluate bootstrap values before
    calling :meth:`reset_done`.
    """

    def __init__(
        self,
        spec: EmbodimentSpec,
        sampler: MotionSampler,
        config: ProxyConfig,
        rng: np.random.Generator,
    ):
        self.spec = spec
        self.sampler = sampler
        self.config = config
        self.rng = rng
        self.bank = ClipBank([e.clip for e in sampler.entries.values()], spec)

        n = config.n_envs
        self.batch = SimBatch.zeros(n)
        self.dom = DomainBatch.nominal(spec, n)
        self.pushes = PushBatch.from_schedules([PushSchedule.empty()] * n)
        self.clip_idx = np.zeros(n, dtype=np.int64)
        self.frame = np.zeros(n, dtype=np.int64)
        self.ep_steps = np.zeros(n, dtype=np.int64)
        self.ep_reward = np.zeros(n)
        self.finished_lengths: list[int] = []
        self.finished_rewards: list[float] = []
        self._kin = None  # cached kinematics for the current state
        for i in range(n):
            self._reset_env(i)

    # -- resets ------------------------------------------------------------
    def _reset_env(self, i: int) -> None:
        clip, start = self.sampler.sample(self.rng)
        ci = self.bank.index[clip.name]
        fresh = reset_batch_from_poses(
            clip.frames[start][None, :], clip.frame_velocities[start][None, :], self.spec
        )
        self.batch.set_from(i, fresh, 0)
        self.clip_idx[i] = ci
        self.frame[i] = start
        self.ep_steps[i] = 0
        self.ep_reward[i] = 0.0

        params = randomize_domain(self.rng, self.config.dr)
        self.dom.set_from(i, DomainBatch.build(self.spec, [params]), 0)
        duration = (len(clip.frames) - start) / clip.fps
        sched = PushSchedule.sample(self.rng, duration, self.config.dr)
        self.pushes.set_from(i, PushBatch.from_schedules([sched]), 0)

    def reset_done(self, done: np.ndarray) -> None:
        for i in np.flatnonzero(done):
            self.finished_lengths.append(int(self.ep_steps[i]))
            self.finished_rewards.append(float(self.ep_reward[i]))
            self._reset_env(i)
        if done.any():
            self._kin = None

    # -- observations ------------------------------------------------------
    def observe(self) -> np.ndarray:
        """Privileged 87-float observation toward the next reference frame."""
        if self._kin is None:
            self._kin = batch_kin_with_velocities(self.spec, self.batch)
        ref_pose, ref_vel = self.bank.ref(self.clip_idx, self.frame + 1)
        ref_kin = self.bank.ref_kin(self.clip_idx, self.frame + 1)
        return proxy_observation(
            self.spec, self.batch, self._kin, ref_pose, ref_vel, ref_kin
        )

    # -- stepping ----------------------------------------------------------
    def step(
        self, actions: np.ndarray, curriculum_scale: float
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, dict[str, float]]:
        """Advance one control step.

        Returns ``(rewards, terminated, truncated)`` plus the mean per-term
        reward breakdown for logging.  Finished envs are *not* reset here.
        """
        cfg = self.config
        prev_action = self.batch.prev_action.copy()
        push_dv = self.pushes.impulse_between(
            self.batch.time, self.batch.time + self.spec.control_dt
        )
        noise = (
            self.rng.uniform(-1.0, 1.0, size=(self.batch.n, 6)) * self.dom.torque_noise_mag
        )
        info = StepInfo()
        self.batch = step_batch(
            self.batch, actions, self.dom, self.spec,
            torque_noise=noise, push_dv=push_dv, info=info,
        )
        self.frame += 1
        self.ep_steps += 1

        ref_pose, ref_vel = self.bank.ref(self.clip_idx, self.frame)
        ref_kin = self.bank.ref_kin(self.clip_idx, self.frame)
        kin = batch_kin_with_velocities(self.spec, self.batch)
        self._kin = kin

        err = np.linalg.norm(kin.keypoints - ref_kin.keypoints, axis=-1).mean(axis=-1)
        terminated = err > cfg.tolerance
        at_clip_end = self.frame >= self.bank.lengths[self.clip_idx] - 1
        truncated = (~terminated) & (at_clip_end | (self.ep_steps >= cfg.episode_cap))

        inputs = build_reward_inputs(
            self.spec, self.batch, kin, ref_pose, ref_vel, ref_kin,
            info.mean_abs_torque, actions, prev_action, terminated,
        )
        rewards, terms = compute_reward(self.spec, inputs, cfg.reward_weights, curriculum_scale)
        self.ep_reward += rewards
        breakdown = {k: float(v.mean()) for k, v in terms.items()}
        return rewards, terminated, truncated, breakdown


# ---------------------------------------------------------------------------
# deployment adapter
# ---------------------------------------------------------------------------
class ProxyController:
    """Deterministic (mean-action) controller over a trained proxy policy.

    Satisfies the tracking-controller protocol used by the evaluation
    harness; the runtime normalizer is applied frozen.
    """

    def __init__(
        self,
        spec: EmbodimentSpec,
        ac_spec: ActorCriticSpec,
        params: ParamStore,
        norm: RunningNorm,
    ):
        self.spec = spec
        self.ac_spec = ac_spec
        self.params = params
        self.norm = norm.copy()
        self.norm.freeze()

    def begin_episode(self, clip, start: int, rng: np.random.Generator) -> None:
        del clip, start, rng

    def act(self, batch, kin, ref_pose, ref_vel, ref_kin=None) -> np.ndarray:
        obs = proxy_observation(self.spec, batch, kin, ref_pose, ref_vel, ref_kin)
        return policy_dist(self.ac_spec, self.params, self.norm.normalize(obs)).mean


# ---------------------------------------------------------------------------
# evaluation + mining
# ---------------------------------------------------------------------------
def evaluate_proxy(
    controller: ProxyController,
    sampler: MotionSampler,
    config: ProxyConfig,
    spec: EmbodimentSpec,
) -> EvalReport:
    """Deterministic rollouts over the active clip set (nominal dynamics).

    Mining updates are left to the caller so this stays side-effect free.
    """
    clips = [sampler.entries[name].clip for name in sampler.active_names]
    return eval_policy(
        controller, clips, seeds=config.eval_seeds, spec=spec,
        mode="track", tolerance=config.tolerance,
    )


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------
@dataclass
class ProxyTrainResult:
    """Everything needed to deploy, evaluate, or checkpoint the teacher."""

    ac_spec: ActorCriticSpec
    params: ParamStore
    norm: RunningNorm
    sampler: MotionSampler
    log: list[dict]
    env_steps: int

    def controller(self, spec: EmbodimentSpec | None = None) -> ProxyController:
        return ProxyController(
            spec or default_embodiment(), self.ac_spec, self.params, self.norm
        )


def _log_record(
    step: int,
    update: int,
    env: TrackingVecEnv,
    success_rate: float | None,
    curriculum_scale: float,
    breakdown: dict[str, float],
    eval_mpkpe: float | None,
    removed: list[str],
) -> dict:
    window = 200
    lengths = env.finished_lengths[-window:]
    rewards = env.finished_rewards[-window:]
    record = {
        "step": step,
        "update": update,
        "mean_reward": float(np.mean(rewards)) if rewards else 0.0,
        "mean_episode_len": float(np.mean(lengths)) if lengths else 0.0,
        "success_rate": success_rate,
        "curriculum_scale": curriculum_scale,
        "clip_weights": {
            name: round(entry.weight, 6) for name, entry in env.sampler.entries.items()
        },
        "active_clips": env.sampler.active_names,
        "reward_terms": {k: round(v, 6) for k, v in breakdown.items()},
    }
    if eval_mpkpe is not None:
        record["eval_mpkpe_m"] = eval_mpkpe
    if removed:
        record["filtered_clips"] = removed
    return record


def train_proxy(
    clips: Sequence[MotionClip],
    config: ProxyConfig | None = None,
    seed: int = 0,
    spec: EmbodimentSpec | None = None,
    log_path: str | Path | None = None,
) -> ProxyTrainResult:
    """Train the proxy teacher with PPO over the given clip set.

    Deterministic for a fixed ``(clips, config, seed)``: a single generator
    drives sampling, domain draws, policy noise, and minibatch shuffling in a
    fixed order.
    """
    config = config or ProxyConfig()
    spec = spec or default_embodiment()
    rng = np.random.default_rng(seed)

    sampler = MotionSampler.from_clips(clips, min_horizon=config.min_horizon)
    env = TrackingVecEnv(spec, sampler, config, rng)
    ac_spec = config.actor_critic_spec()
    params = init_actor_critic(ac_spec, rng)
    opt = adam_init(params, lr=config.lr)
    norm = RunningNorm.for_dim(PROXY_OBS_DIM)
    curriculum = CurriculumState(start_step=config.curriculum_start, end_step=config.curriculum_end)

    steps_per_update = config.n_envs * config.rollout_steps
    n_updates = config.total_env_steps // steps_per_update
    log: list[dict] = []
    log_file = open(log_path, "w", encoding="utf-8") if log_path is not None else None

    env_steps = 0
    try:
        for update in range(n_updates):
            scale = curriculum.scale(env_steps)
            t_steps = config.rollout_steps
            obs_buf = np.zeros((t_steps, config.n_envs, PROXY_OBS_DIM), dtype=np.float32)
            act_buf = np.zeros((t_steps, config.n_envs, 6), dtype=np.float32)
            logp_buf = np.zeros((t_steps, config.n_envs), dtype=np.float32)
            rew_buf = np.zeros((t_steps, config.n_envs), dtype=np.float32)
            val_buf = np.zeros((t_steps, config.n_envs), dtype=np.float32)
            done_buf = np.zeros((t_steps, config.n_envs), dtype=np.float32)
            breakdown: dict[str, float] = {}

            for t in range(t_steps):
                raw = env.observe()
                norm.update(raw)
                obs = norm.normalize(raw)
                actions, logp, values = sample_actions(ac_spec, params, obs, rng)
                rewards, terminated, truncated, breakdown = env.step(actions, scale)

                if truncated.any():
                    # Truncation is not failure: bootstrap the next state's
                    # value into the reward so the return is unbiased.
                    next_obs = norm.normalize(env.observe()[truncated])
                    v_next = value_forward(ac_spec, params, next_obs)
                    rewards = rewards.copy()
                    rewards[truncated] += config.gamma * v_next

                obs_buf[t] = obs
                act_buf[t] = actions
                logp_buf[t] = logp
                rew_buf[t] = rewards
                val_buf[t] = values
                done_buf[t] = (terminated | truncated).astype(np.float32)
                env.reset_done(terminated | truncated)
                env_steps += config.n_envs

            last_values = value_forward(ac_spec, params, norm.normalize(env.observe()))
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

            is_last = update == n_updates - 1
            if (update + 1) % config.eval_every_updates == 0 or is_last:
                controller = ProxyController(spec, ac_spec, params, norm)
                report = evaluate_proxy(controller, sampler, config, spec)
                success_rate = report.success_rate
                mpkpe = report.mean("mpkpe")
                for r in report.results:
                    sampler.update_mining(r.clip, r.success)
                sampler.record_global_success(success_rate)
                removed = sampler.filter_plateaued(
                    window=config.filter_window,
                    min_delta=config.filter_min_delta,
                    fail_threshold=config.filter_fail_threshold,
                )
                record = _log_record(
                    env_steps, update + 1, env, success_rate, scale,
                    breakdown, mpkpe, removed,
                )
            else:
                record = _log_record(
                    env_steps, update + 1, env, None, scale, breakdown, None, [],
                )
            record["policy_loss"] = round(stats.policy_loss, 6)
            record["value_loss"] = round(stats.value_loss, 6)
            record["approx_kl"] = round(stats.approx_kl, 6)
            log.append(record)
            if log_file is not None:
                log_file.write(json.dumps(record) + "\n")
                log_file.flush()
    finally:
        if log_file is not None:
            log_file.close()

    norm.freeze()
    return ProxyTrainResult(
        ac_spec=ac_spec, params=params, norm=norm,
        sampler=sampler, log=log, env_steps=env_steps,
    )
