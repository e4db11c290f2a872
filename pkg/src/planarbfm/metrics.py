"""Evaluation: tracking rollouts, the metric set (MPJPE, MPKPE, velocity
errors), and aggregated reports.

Keypoint errors are reported in meters (this embodiment is ~1 m tall, so
meters, not millimeters, are the natural unit).  Success means the episode
reached the end of the clip without tripping the tracking termination.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .embodiment import EmbodimentSpec, default_embodiment
from .motions import MotionClip
from .sim import (
    DomainBatch,
    Kinematics,
    SimBatch,
    kinematics,
    reset_from_reference,
    step_batch,
)


class MetricsError(ValueError):
    pass


@dataclass
class BehaviorTrajectory:
    """Realized states and actions of one episode, aligned to clip frames
    start+1 .. start+len (the RSI frame itself is excluded — it is the
    reference by construction)."""

    poses: np.ndarray        # (T, 9)
    base_vel: np.ndarray     # (T, 2)
    base_angvel: np.ndarray  # (T,)
    actions: np.ndarray      # (T, 6)
    clip_name: str
    start_frame: int
    seed: int
    termination: str         # "completed" | "tracking"

    def __post_init__(self):
        t = self.poses.shape[0]
        if t == 0:
            raise MetricsError("empty trajectory")
        for name in ("base_vel", "base_angvel", "actions"):
            if getattr(self, name).shape[0] != t:
                raise MetricsError(f"{name} length != poses length {t}")

    def __len__(self) -> int:
        return self.poses.shape[0]

    @property
    def success(self) -> bool:
        return self.termination == "completed"


def _aligned_frames(traj: BehaviorTrajectory, clip: MotionClip) -> np.ndarray:
    idx = traj.start_frame + 1 + np.arange(len(traj))
    if idx[-1] >= len(clip):
        raise MetricsError(
            f"trajectory of {len(traj)} steps from frame {traj.start_frame} "
            f"overruns clip {clip.name!r} ({len(clip)} frames)"
        )
    return idx


def mpjpe(traj: BehaviorTrajectory, clip: MotionClip) -> float:
    """Mean per-joint absolute error, rad."""
    ref = clip.frames[_aligned_frames(traj, clip)]
    return float(np.abs(traj.poses[:, 3:9] - ref[:, 3:9]).mean())


def mpkpe(traj: BehaviorTrajectory, clip: MotionClip,
          spec: EmbodimentSpec | None = None) -> float:
    """Mean per-keypoint Euclidean error, m."""
    spec = spec or default_embodiment()
    ref = clip.frames[_aligned_frames(traj, clip)]
    kp = kinematics(spec, traj.poses[:, 0:2], traj.poses[:, 2],
                    traj.poses[:, 3:9]).keypoints
    kp_ref = kinematics(spec, ref[:, 0:2], ref[:, 2], ref[:, 3:9]).keypoints
    return float(np.linalg.norm(kp - kp_ref, axis=2).mean())


def e_lin(traj: BehaviorTrajectory, clip: MotionClip) -> float:
    """Mean root linear-velocity error, m/s."""
    ref = clip.frame_velocities[_aligned_frames(traj, clip)]
    return float(np.linalg.norm(traj.base_vel - ref[:, 0:2], axis=1).mean())


def e_ang(traj: BehaviorTrajectory, clip: MotionClip) -> float:
    """Mean root angular-velocity error, rad/s."""
    ref = clip.frame_velocities[_aligned_frames(traj, clip)]
    return float(np.abs(traj.base_angvel - ref[:, 2]).mean())


def e_lin_x(traj: BehaviorTrajectory, clip: MotionClip,
            command_vx: float | None = None) -> float:
    """Mean forward-velocity error, m/s — against the reference, or against
    a commanded velocity for locomotion-mode evaluation."""
    if command_vx is None:
        target = clip.frame_velocities[_aligned_frames(traj, clip)][:, 0]
    else:
        target = command_vx
    return float(np.abs(traj.base_vel[:, 0] - target).mean())


class TrackingController(Protocol):
    """Anything that can drive the robot along a reference clip."""

    def begin_episode(self, clip: MotionClip, start: int,
                      rng: np.random.Generator) -> None: ...

    def act(self, batch: SimBatch, kin: Kinematics, ref_pose: np.ndarray,
            ref_vel: np.ndarray, ref_kin: Kinematics) -> np.ndarray: ...


def rollout_tracking(
    controller: TrackingController,
    clip: MotionClip,
    spec: EmbodimentSpec | None = None,
    start: int = 0,
    seed: int = 0,
    tolerance: float = 0.25,
    max_steps: int | None = None,
) -> BehaviorTrajectory:
    """Roll one episode from clip frame `start` under nominal dynamics
    (evaluation is unrandomized and push-free by design)."""
    spec = spec or default_embodiment()
    state = reset_from_reference(clip, start, spec=spec)
    batch = SimBatch.from_states([state])
    dom = DomainBatch.nominal(spec, 1)
    rng = np.random.default_rng(seed)
    controller.begin_episode(clip, start, rng)

    poses, vels, angs, acts = [], [], [], []
    frame = start
    termination = "completed"
    steps = 0
    while frame + 1 < len(clip):
        if max_steps is not None and steps >= max_steps:
            break
        kin = kinematics(
            spec, batch.base_pos, batch.base_pitch, batch.q,
            base_vel=batch.base_vel, base_angvel=batch.base_angvel, dq=batch.dq)
        target = frame + 1
        ref_pose = clip.frames[target][None]
        ref_vel = clip.frame_velocities[target][None]
        ref_kin = kinematics(spec, ref_pose[:, 0:2], ref_pose[:, 2], ref_pose[:, 3:9])
        action = controller.act(batch, kin, ref_pose, ref_vel, ref_kin)
        batch = step_batch(batch, action, dom, spec)
        frame += 1
        steps += 1

        poses.append(np.concatenate(
            [batch.base_pos[0], [batch.base_pitch[0]], batch.q[0]]))
        vels.append(batch.base_vel[0].copy())
        angs.append(batch.base_angvel[0])
        acts.append(np.asarray(action[0], dtype=float).copy())

        new_kin = kinematics(spec, batch.base_pos, batch.base_pitch, batch.q)
        err = np.linalg.norm(
            new_kin.keypoints - ref_kin.keypoints, axis=2).mean()
        if err > tolerance:
            termination = "tracking"
            break

    return BehaviorTrajectory(
        poses=np.array(poses),
        base_vel=np.array(vels),
        base_angvel=np.array(angs),
        actions=np.array(acts),
        clip_name=clip.name,
        start_frame=start,
        seed=seed,
        termination=termination,
    )


@dataclass
class ClipResult:
    clip: str
    seed: int
    mpjpe: float
    mpkpe: float
    e_lin: float
    e_ang: float
    e_lin_x: float
    success: bool
    length: int

    def to_dict(self) -> dict:
        return {
            "clip": self.clip, "seed": self.seed,
            "mpjpe_rad": self.mpjpe, "mpkpe_m": self.mpkpe,
            "e_lin_mps": self.e_lin, "e_ang_radps": self.e_ang,
            "e_lin_x_mps": self.e_lin_x,
            "success": self.success, "length": self.length,
        }


@dataclass
class EvalReport:
    mode: str
    tolerance: float
    results: list[ClipResult] = field(default_factory=list)

    @property
    def success_rate(self) -> float:
        return float(np.mean([r.success for r in self.results]))

    def mean(self, attr: str) -> float:
        return float(np.mean([getattr(r, attr) for r in self.results]))

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "tolerance_m": self.tolerance,
            "units": {"mpjpe": "rad", "mpkpe": "m", "e_lin": "m/s",
                      "e_ang": "rad/s", "e_lin_x": "m/s"},
            "results": [r.to_dict() for r in self.results],
            "aggregates": {
                "success_rate": self.success_rate,
                "mpjpe_rad": self.mean("mpjpe"),
                "mpkpe_m": self.mean("mpkpe"),
                "e_lin_mps": self.mean("e_lin"),
                "e_ang_radps": self.mean("e_ang"),
                "e_lin_x_mps": self.mean("e_lin_x"),
            },
        }


def eval_policy(
    controller: TrackingController,
    clips: list[MotionClip],
    seeds: list[int] | tuple[int, ...] = (0,),
    spec: EmbodimentSpec | None = None,
    mode: str = "track",
    tolerance: float = 0.25,
) -> EvalReport:
    """RSI at frame 0 for every (clip, seed); metrics per episode."""
    if not clips:
        raise MetricsError("empty clip set")
    spec = spec or default_embodiment()
    report = EvalReport(mode=mode, tolerance=tolerance)
    for clip in clips:
        for seed in seeds:
            traj = rollout_tracking(
                controller, clip, spec=spec, seed=seed, tolerance=tolerance)
            report.results.append(ClipResult(
                clip=clip.name,
                seed=seed,
                mpjpe=mpjpe(traj, clip),
                mpkpe=mpkpe(traj, clip, spec),
                e_lin=e_lin(traj, clip),
                e_ang=e_ang(traj, clip),
                e_lin_x=e_lin_x(traj, clip),
                success=traj.success,
                length=len(traj),
            ))
    return report
