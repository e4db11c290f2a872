"""Masked online DAgger: distill the proxy teacher into the CVAE student.

The student drives its own rollouts (so the training-state distribution is
its own, per DAgger) while the frozen teacher relabels every visited state
with the action it would have taken:

- episodes start with RSI from the mining sampler, a fresh domain draw, a
  fresh push schedule, and a mask sampled Bernoulli(p_keep);
- the student acts through its training path — z sampled from the encoder
  posterior, decoded against the real-proprioception history;
- the teacher is queried on the privileged observation for the label â;
- between rollouts, minibatch gradient steps minimize
  ‖â − a‖² + λ_KL · KL(q ‖ ρ) with fresh reparameterization noise;
- the mask curriculum decays p_keep from 1.0 toward 0.5 once the average
  episode, as a fraction of its available horizon scaled to the canonical
  200-frame horizon, clears the length threshold — easing the student from
  fully specified goals into sparse ones;
- evaluation, mining, and plateau filtering mirror proxy training, with the
  student evaluated under the all-ones mask;
- the first ``holdout_envs`` environments keep all-ones masks for the whole
  run and are excluded from every minibatch: their transitions form the
  held-out validation stream for the teacher-student action MSE.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .control import (
    CURRICULUM_HORIZON,
    MASK_DIM,
    MaskCurriculumState,
    ProprioHistory,
    apply_mask,
    build_goal_from_reference,
    curriculum_update,
    preset_mask,
    real_proprio,
    sample_mask,
)
from .cvae import BfmModel, BfmSpec, dagger_loss_and_grads, decode, encode, prior
from .embodiment import EmbodimentSpec, default_embodiment
from .metrics import EvalReport, eval_policy
from .motions import MotionClip
from .nets import adam_init, adam_step
from .obs import proxy_observation
from .ppo import policy_dist
from .proxy import ClipBank, ProxyController
from .sampler import MotionSampler
from .sim import (
    DomainBatch,
    DomainRandomizationConfig,
    PushBatch,
    PushSchedule,
    SimBatch,
    StepInfo,
    batch_kinematics,
    kinematics,
    randomize_domain,
    reset_batch_from_poses,
    step_batch,
)

__all__ = [
    "DistillConfig",
    "DistillResult",
    "StudentController",
    "distill",
    "evaluate_student",
    "held_out_action_mse",
]


@dataclass(frozen=True)
class DistillConfig:
    """Hyper-parameters for the distillation loop."""

    total_env_steps: int = 2_000_000
    n_envs: int = 256
    rollout_steps: int = 32
    lr: float = 1e-3
    lam_kl: float = 1e-3
    epochs: int = 2
    minibatches: int = 4

    tolerance: float = 0.25
    episode_cap: int = 500
    min_horizon: int = 50

    mask_curriculum: MaskCurriculumState = field(default_factory=MaskCurriculumState)

    eval_every_updates: int = 40
    eval_seeds: tuple[int, ...] = (0,)
    filter_window: int = 10
    filter_min_delta: float = 0.01
    filter_fail_threshold: float = 0.2

    # Validation envs: permanently all-ones masks, excluded from training
    # minibatches; their recent transitions yield the held-out action MSE.
    holdout_envs: int = 4
    holdout_window: int = 10

    dr: DomainRandomizationConfig = field(default_factory=DomainRandomizationConfig)


# ---------------------------------------------------------------------------
# student-driven vectorized env
# ---------------------------------------------------------------------------
class _StudentVecEnv:
    """N student-driven imitation episodes with per-env masks and histories."""

    def __init__(
        self,
        spec: EmbodimentSpec,
        sampler: MotionSampler,
        config: DistillConfig,
        rng: np.random.Generator,
    ):
        self.spec = spec
        self.sampler = sampler
        self.config = config
        self.rng = rng
        self.bank = ClipBank([e.clip for e in sampler.entries.values()], spec)
        self.p_keep = config.mask_curriculum.p_keep

        n = config.n_envs
        self.batch = SimBatch.zeros(n)
        self.dom = DomainBatch.nominal(spec, n)
        self.pushes = PushBatch.from_schedules([PushSchedule.empty()] * n)
        self.clip_idx = np.zeros(n, dtype=np.int64)
        self.frame = np.zeros(n, dtype=np.int64)
        self.ep_steps = np.zeros(n, dtype=np.int64)
        self.ep_horizon = np.zeros(n, dtype=np.int64)
        self.mask = np.ones((n, MASK_DIM))
        self.history = ProprioHistory(n)
        self.finished_lengths: list[int] = []
        self.finished_completions: list[float] = []
        for i in range(n):
            self._reset_env(i)

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
        self.ep_horizon[i] = min(len(clip.frames) - 1 - start, self.config.episode_cap)
        if i < self.config.holdout_envs:
            self.mask[i] = np.ones(MASK_DIM)
        else:
            self.mask[i] = sample_mask(self.rng, self.p_keep)

        params = randomize_domain(self.rng, self.config.dr)
        self.dom.set_from(i, DomainBatch.build(self.spec, [params]), 0)
        duration = (len(clip.frames) - start) / clip.fps
        sched = PushSchedule.sample(self.rng, duration, self.config.dr)
        self.pushes.set_from(i, PushBatch.from_schedules([sched]), 0)

        rows = np.array([i])
        self.history.reset(real_proprio(self.batch)[rows], rows=rows)

    def reset_done(self, done: np.ndarray) -> None:
        for i in np.flatnonzero(done):
            self.finished_lengths.append(int(self.ep_steps[i]))
            self.finished_completions.append(
                float(self.ep_steps[i]) / max(1.0, float(self.ep_horizon[i]))
            )
            self._reset_env(i)

    def targets(self) -> tuple[np.ndarray, np.ndarray, "object"]:
        """Next-frame reference rows (pose, vel, kinematics)."""
        ref_pose, ref_vel = self.bank.ref(self.clip_idx, self.frame + 1)
        ref_kin = self.bank.ref_kin(self.clip_idx, self.frame + 1)
        return ref_pose, ref_vel, ref_kin

    def step(self, actions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Advance physics; returns (terminated, truncated); no resets here."""
        cfg = self.config
        push_dv = self.pushes.impulse_between(
            self.batch.time, self.batch.time + self.spec.control_dt
        )
        noise = self.rng.uniform(-1.0, 1.0, size=(self.batch.n, 6)) * self.dom.torque_noise_mag
        self.batch = step_batch(
            self.batch, actions, self.dom, self.spec,
            torque_noise=noise, push_dv=push_dv, info=StepInfo(),
        )
        self.frame += 1
        self.ep_steps += 1
        self.history.push(real_proprio(self.batch))

        ref_kin = self.bank.ref_kin(self.clip_idx, self.frame)
        kin = batch_kinematics(self.batch, self.spec)
        err = np.linalg.norm(kin.keypoints - ref_kin.keypoints, axis=-1).mean(axis=-1)
        terminated = err > cfg.tolerance
        at_clip_end = self.frame >= self.bank.lengths[self.clip_idx] - 1
        truncated = (~terminated) & (at_clip_end | (self.ep_steps >= cfg.episode_cap))
        return terminated, truncated


# ---------------------------------------------------------------------------
# deployment adapter for evaluation
# ---------------------------------------------------------------------------
class StudentController:
    """Tracking-protocol adapter: drives the BFM through its deployment path.

    Builds the goal from the reference each step, applies a fixed mask
    (default: all-ones TRACK), and maintains the proprioception history.
    """

    def __init__(self, model: BfmModel, spec: EmbodimentSpec | None = None,
                 mask: np.ndarray | None = None):
        self.model = model
        self.spec = spec or default_embodiment()
        self.mask = preset_mask("TRACK") if mask is None else np.asarray(mask, dtype=float)
        self._history: ProprioHistory | None = None

    def begin_episode(self, clip, start: int, rng: np.random.Generator) -> None:
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
        mask = np.broadcast_to(self.mask, (batch.n, MASK_DIM))
        return self.model.act_deploy(self._history.flat(), goal, mask)


def evaluate_student(
    model: BfmModel,
    sampler: MotionSampler,
    config: DistillConfig,
    spec: EmbodimentSpec,
) -> EvalReport:
    """Deterministic all-ones-mask rollouts over the active clip set."""
    clips = [sampler.entries[name].clip for name in sampler.active_names]
    controller = StudentController(model, spec)
    return eval_policy(
        controller, clips, seeds=config.eval_seeds, spec=spec,
        mode="track", tolerance=config.tolerance,
    )


def held_out_action_mse(
    model: BfmModel,
    teacher: ProxyController,
    clips: Sequence[MotionClip],
    spec: EmbodimentSpec | None = None,
    tolerance: float = 0.25,
) -> float:
    """Mean ‖â − a‖² along fresh student-driven rollouts (rad²).

    The student runs its deployment path (all-ones mask); at every visited
    state the teacher is queried on the privileged observation.  States the
    training loop never stored make this a held-out measurement.
    """
    spec = spec or default_embodiment()
    controller = StudentController(model, spec)
    errors: list[float] = []
    for clip in clips:
        state = reset_batch_from_poses(clip.frames[0][None], clip.frame_velocities[0][None], spec)
        batch = state
        dom = DomainBatch.nominal(spec, 1)
        controller.begin_episode(clip, 0, np.random.default_rng(0))
        frame = 0
        while frame + 1 < len(clip.frames):
            kin = kinematics(
                spec, batch.base_pos, batch.base_pitch, batch.q,
                base_vel=batch.base_vel, base_angvel=batch.base_angvel, dq=batch.dq,
            )
            ref_pose = clip.frames[frame + 1][None]
            ref_vel = clip.frame_velocities[frame + 1][None]
            ref_kin = kinematics(spec, ref_pose[:, 0:2], ref_pose[:, 2], ref_pose[:, 3:9])
            student_a = controller.act(batch, kin, ref_pose, ref_vel, ref_kin)
            teacher_a = teacher.act(batch, kin, ref_pose, ref_vel, ref_kin)
            errors.append(float(((student_a - teacher_a) ** 2).sum()))
            batch = step_batch(batch, student_a, dom, spec)
            frame += 1
            new_kin = kinematics(spec, batch.base_pos, batch.base_pitch, batch.q)
            if np.linalg.norm(new_kin.keypoints - ref_kin.keypoints, axis=2).mean() > tolerance:
                break
    if not errors:
        raise ValueError("no rollout steps recorded for action MSE")
    return float(np.mean(errors))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------
def _validation_mse(
    bspec: BfmSpec,
    params,
    hist: np.ndarray,
    mg: np.ndarray,
    priv: np.ndarray,
    mask: np.ndarray,
    label: np.ndarray,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Action MSE on stored transitions: (training path z ~ q, prior-mean path)."""
    p = prior(bspec, params, hist, mg)
    q = encode(bspec, params, priv, mask, p)
    noise = rng.standard_normal(q.mean.shape).astype(np.float32)
    a_train = decode(bspec, params, hist, q.mean + q.std * noise)
    a_deploy = decode(bspec, params, hist, p.mean)
    mse = lambda a: float(((a - label) ** 2).sum(axis=-1).mean())
    return mse(a_train), mse(a_deploy)


@dataclass
class DistillResult:
    model: BfmModel
    sampler: MotionSampler
    mask_curriculum: MaskCurriculumState
    log: list[dict]
    env_steps: int
    # Final-model action MSE on the held-out all-ones validation stream
    # (last ``holdout_window`` updates):  ``holdout_mse`` through the
    # training path (z ~ encoder posterior), ``holdout_deploy_mse`` through
    # the deployment path (z = prior mean).  None when no holdout envs ran.
    holdout_mse: float | None = None
    holdout_deploy_mse: float | None = None


def distill(
    teacher: ProxyController,
    clips: Sequence[MotionClip],
    config: DistillConfig | None = None,
    seed: int = 0,
    spec: EmbodimentSpec | None = None,
    bfm_spec: BfmSpec | None = None,
    log_path: str | Path | None = None,
) -> DistillResult:
    """Run masked online DAgger against the frozen teacher.

    Deterministic for fixed (teacher, clips, config, seed).
    """
    config = config or DistillConfig()
    spec = spec or default_embodiment()
    if not 0 <= config.holdout_envs < config.n_envs:
        raise ValueError(
            f"holdout_envs must be in [0, n_envs); got {config.holdout_envs} "
            f"with n_envs={config.n_envs}"
        )
    if config.holdout_window < 1:
        raise ValueError(f"holdout_window must be >= 1, got {config.holdout_window}")
    rng = np.random.default_rng(seed)

    sampler = MotionSampler.from_clips(clips, min_horizon=config.min_horizon)
    env = _StudentVecEnv(spec, sampler, config, rng)
    model = BfmModel.init(rng, bfm_spec)
    bspec = model.spec
    opt = adam_init(model.params, lr=config.lr)
    curriculum = config.mask_curriculum

    steps_per_update = config.n_envs * config.rollout_steps
    n_updates = config.total_env_steps // steps_per_update
    n_hold = config.holdout_envs
    rows = config.rollout_steps * (config.n_envs - n_hold)
    # (hist, masked_goal, priv, mask, label) rows from the holdout envs for
    # the most recent ``holdout_window`` updates.
    holdout: deque[tuple[np.ndarray, ...]] = deque(maxlen=config.holdout_window)
    log: list[dict] = []
    log_file = open(log_path, "w", encoding="utf-8") if log_path is not None else None

    env_steps = 0
    try:
        for update in range(n_updates):
            t_steps = config.rollout_steps
            hist_buf = np.zeros((t_steps, config.n_envs, bspec.history_dim), dtype=np.float32)
            mg_buf = np.zeros((t_steps, config.n_envs, bspec.masked_goal_dim), dtype=np.float32)
            priv_buf = np.zeros((t_steps, config.n_envs, bspec.priv_obs_dim), dtype=np.float32)
            mask_buf = np.zeros((t_steps, config.n_envs, MASK_DIM), dtype=np.float32)
            label_buf = np.zeros((t_steps, config.n_envs, 6), dtype=np.float32)

            for t in range(t_steps):
                ref_pose, ref_vel, ref_kin = env.targets()
                kin = kinematics(
                    spec, env.batch.base_pos, env.batch.base_pitch, env.batch.q,
                    base_vel=env.batch.base_vel, base_angvel=env.batch.base_angvel,
                    dq=env.batch.dq,
                )
                raw87 = proxy_observation(spec, env.batch, kin, ref_pose, ref_vel, ref_kin)
                priv = teacher.norm.normalize(raw87)
                teacher_a = policy_dist(teacher.ac_spec, teacher.params, priv).mean

                model.norm.update(real_proprio(env.batch))
                hist = model.normalize_history(env.history.flat())
                goal = build_goal_from_reference(spec, env.batch, ref_pose, ref_vel, ref_kin)
                masked_goal = apply_mask(goal, env.mask)

                p = prior(bspec, model.params, hist, masked_goal)
                q = encode(bspec, model.params, priv, env.mask, p)
                z = q.mean + q.std * rng.standard_normal(q.mean.shape)
                actions = decode(bspec, model.params, hist, z)

                hist_buf[t] = hist
                mg_buf[t] = masked_goal
                priv_buf[t] = priv
                mask_buf[t] = env.mask
                label_buf[t] = teacher_a

                terminated, truncated = env.step(actions)
                env.reset_done(terminated | truncated)
                env_steps += config.n_envs

            flat = lambda a: a[:, n_hold:, :].reshape(rows, a.shape[-1])
            hist_f, mg_f = flat(hist_buf), flat(mg_buf)
            priv_f, mask_f, label_f = flat(priv_buf), flat(mask_buf), flat(label_buf)

            last_loss, last_parts = 0.0, {}
            for _ in range(config.epochs):
                order = rng.permutation(rows)
                for chunk in np.array_split(order, config.minibatches):
                    # f32 noise keeps gradients (and thus Adam-updated params)
                    # in f32, matching the checkpoint tensor table.
                    noise = rng.standard_normal(
                        (chunk.size, bspec.latent_dim)).astype(np.float32)
                    loss, parts, grads = dagger_loss_and_grads(
                        bspec, model.params, hist_f[chunk], mg_f[chunk],
                        priv_f[chunk], mask_f[chunk], label_f[chunk],
                        noise, config.lam_kl,
                    )
                    new_params, opt = adam_step(model.params, grads, opt)
                    model.params = new_params
                    last_loss, last_parts = loss, parts

            val_mse = None
            if n_hold:
                hold_rows = tuple(
                    a[:, :n_hold, :].reshape(t_steps * n_hold, a.shape[-1])
                    for a in (hist_buf, mg_buf, priv_buf, mask_buf, label_buf)
                )
                holdout.append(hold_rows)
                val_mse, _ = _validation_mse(bspec, model.params, *hold_rows, rng=rng)

            window = env.finished_lengths[-200:]
            avg_len = float(np.mean(window)) if window else 0.0
            cwindow = env.finished_completions[-200:]
            avg_completion = float(np.mean(cwindow)) if cwindow else 0.0
            curriculum = curriculum_update(
                curriculum, avg_completion * CURRICULUM_HORIZON
            )
            env.p_keep = curriculum.p_keep

            record = {
                "step": env_steps,
                "update": update + 1,
                "loss": round(last_loss, 6),
                "dagger_loss": round(last_parts.get("dagger", 0.0), 6),
                "kl": round(last_parts.get("kl", 0.0), 6),
                "val_mse": None if val_mse is None else round(val_mse, 6),
                "p_keep": round(curriculum.p_keep, 6),
                "mean_episode_len": round(avg_len, 2),
                "mean_completion": round(avg_completion, 4),
                "success_rate": None,
                "clip_weights": {
                    name: round(e.weight, 6) for name, e in sampler.entries.items()
                },
            }

            is_last = update == n_updates - 1
            if (update + 1) % config.eval_every_updates == 0 or is_last:
                report = evaluate_student(model, sampler, config, spec)
                for r in report.results:
                    sampler.update_mining(r.clip, r.success)
                sampler.record_global_success(report.success_rate)
                removed = sampler.filter_plateaued(
                    window=config.filter_window,
                    min_delta=config.filter_min_delta,
                    fail_threshold=config.filter_fail_threshold,
                )
                record["success_rate"] = report.success_rate
                record["eval_mpkpe_m"] = report.mean("mpkpe")
                if removed:
                    record["filtered_clips"] = removed

            log.append(record)
            if log_file is not None:
                log_file.write(json.dumps(record) + "\n")
                log_file.flush()

        model.norm.freeze()
        holdout_mse = holdout_deploy_mse = None
        if holdout:
            cat = tuple(np.concatenate(parts) for parts in zip(*holdout))
            holdout_mse, holdout_deploy_mse = _validation_mse(
                bspec, model.params, *cat, rng=rng
            )
            final = {
                "holdout_rows": int(cat[0].shape[0]),
                "holdout_mse": round(holdout_mse, 6),
                "holdout_deploy_mse": round(holdout_deploy_mse, 6),
            }
            log.append(final)
            if log_file is not None:
                log_file.write(json.dumps(final) + "\n")
    finally:
        if log_file is not None:
            log_file.close()

    return DistillResult(
        model=model, sampler=sampler, mask_curriculum=curriculum,
        log=log, env_steps=env_steps,
        holdout_mse=holdout_mse, holdout_deploy_mse=holdout_deploy_mse,
    )
