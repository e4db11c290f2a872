import numpy as np
import pytest

from planarbfm.embodiment import default_embodiment
from planarbfm.metrics import (
    BehaviorTrajectory,
    EvalReport,
    MetricsError,
    e_ang,
    e_lin,
    e_lin_x,
    eval_policy,
    mpjpe,
    mpkpe,
    rollout_tracking,
)
from planarbfm.motions import MotionClip, generate_stand, generate_walk

SPEC = default_embodiment()


def traj_from_frames(clip, start=0, n=5, pose_offset=None, vel_override=None):
    idx = np.arange(start + 1, start + 1 + n)
    poses = clip.frames[idx].copy()
    if pose_offset is not None:
        poses = poses + pose_offset
    vels = clip.frame_velocities[idx]
    base_vel = vels[:, 0:2].copy() if vel_override is None else vel_override
    return BehaviorTrajectory(
        poses=poses,
        base_vel=base_vel,
        base_angvel=vels[:, 2].copy(),
        actions=np.zeros((n, 6)),
        clip_name=clip.name,
        start_frame=start,
        seed=0,
        termination="completed",
    )


class TestMetricMath:
    def test_perfect_tracking_all_zero(self):
        clip = generate_walk(0.6)
        traj = traj_from_frames(clip, start=3, n=20)
        assert mpjpe(traj, clip) == 0.0
        assert mpkpe(traj, clip, SPEC) == 0.0
        assert e_lin(traj, clip) == 0.0
        assert e_ang(traj, clip) == 0.0
        assert e_lin_x(traj, clip) == 0.0

    def test_constant_joint_offset(self):
        clip = generate_stand()
        off = np.zeros(9)
        off[3:9] = 0.1
        traj = traj_from_frames(clip, n=7, pose_offset=off)
        assert mpjpe(traj, clip) == pytest.approx(0.1, abs=1e-12)

    def test_rigid_shift_moves_every_keypoint(self):
        clip = generate_stand()
        off = np.zeros(9)
        off[0], off[1] = 0.03, -0.04
        traj = traj_from_frames(clip, n=5, pose_offset=off)
        assert mpkpe(traj, clip, SPEC) == pytest.approx(0.05, abs=1e-9)

    def test_five_step_hand_oracle(self):
        # fully hand-computed spreadsheet: stand clip, per-step joint and
        # velocity offsets chosen small and explicit
        clip = generate_stand()
        n = 5
        joint_off = np.array([0.0, 0.01, -0.02, 0.03, -0.04])
        traj = traj_from_frames(clip, n=n)
        traj.poses[:, 3] += joint_off          # only hip_l deviates
        traj.base_vel[:, 0] = [0.1, -0.1, 0.2, 0.0, 0.3]
        traj.base_angvel[:] = [0.0, 0.5, -0.5, 0.25, 0.0]
        # mpjpe: mean over 5 steps x 6 joints of |dq|
        want_mpjpe = np.abs(joint_off).sum() / (n * 6)
        assert mpjpe(traj, clip) == pytest.approx(want_mpjpe, abs=1e-12)
        # e_lin: reference velocity is zero for stand
        want_elin = np.mean(np.abs(traj.base_vel[:, 0]))
        assert e_lin(traj, clip) == pytest.approx(want_elin, abs=1e-12)
        assert e_lin_x(traj, clip) == pytest.approx(want_elin, abs=1e-12)
        want_eang = np.mean([0.0, 0.5, 0.5, 0.25, 0.0])
        assert e_ang(traj, clip) == pytest.approx(want_eang, abs=1e-12)

    def test_e_lin_x_against_command(self):
        clip = generate_stand()
        traj = traj_from_frames(clip, n=4)
        traj.base_vel[:, 0] = 0.45
        assert e_lin_x(traj, clip, command_vx=0.5) == pytest.approx(0.05, abs=1e-12)

    def test_misaligned_lengths_rejected(self):
        clip = MotionClip(name="c", fps=50.0, frames=np.zeros((10, 9)))
        traj = traj_from_frames(generate_stand(), n=30)
        with pytest.raises(MetricsError, match="overruns"):
            mpjpe(traj, clip)

    def test_empty_trajectory_rejected(self):
        with pytest.raises(MetricsError, match="empty"):
            BehaviorTrajectory(
                poses=np.zeros((0, 9)), base_vel=np.zeros((0, 2)),
                base_angvel=np.zeros(0), actions=np.zeros((0, 6)),
                clip_name="x", start_frame=0, seed=0, termination="completed",
            )


class ReferenceJointController:
    """Feeds the reference joint angles straight to the PD loop."""

    def begin_episode(self, clip, start, rng):
        pass

    def act(self, batch, kin, ref_pose, ref_vel, ref_kin):
        return ref_pose[:, 3:9]


class TestRollout:
    def test_stand_rollout_succeeds_full_length(self):
        clip = generate_stand(duration=2.0)
        traj = rollout_tracking(ReferenceJointController(), clip, SPEC)
        assert traj.success
        assert len(traj) == len(clip) - 1
        assert mpkpe(traj, clip, SPEC) < 0.05

    def test_rollout_deterministic(self):
        clip = generate_stand(duration=1.0)
        t1 = rollout_tracking(ReferenceJointController(), clip, SPEC, seed=3)
        t2 = rollout_tracking(ReferenceJointController(), clip, SPEC, seed=3)
        np.testing.assert_array_equal(t1.poses, t2.poses)

    def test_max_steps_cap(self):
        clip = generate_stand(duration=2.0)
        traj = rollout_tracking(ReferenceJointController(), clip, SPEC,
                                max_steps=10)
        assert len(traj) == 10


class TestEvalReport:
    def test_report_aggregates_match_recomputation(self):
        clips = [generate_stand(duration=1.0), generate_stand(duration=1.5)]
        clips[1] = MotionClip("stand2", 50.0, clips[1].frames)
        report = eval_policy(
            ReferenceJointController(), clips, seeds=(0, 1), spec=SPEC)
        d = report.to_dict()
        assert len(d["results"]) == 4
        per = [r["mpkpe_m"] for r in d["results"]]
        assert d["aggregates"]["mpkpe_m"] == pytest.approx(np.mean(per))
        per_s = [r["success"] for r in d["results"]]
        assert d["aggregates"]["success_rate"] == pytest.approx(np.mean(per_s))
        assert d["units"]["mpkpe"] == "m"

    def test_empty_clip_set_rejected(self):
        with pytest.raises(MetricsError, match="empty clip set"):
            eval_policy(ReferenceJointController(), [], spec=SPEC)

    def test_same_seeds_identical_reports(self):
        clips = [generate_stand(duration=1.0)]
        r1 = eval_policy(ReferenceJointController(), clips, seeds=(5,), spec=SPEC)
        r2 = eval_policy(ReferenceJointController(), clips, seeds=(5,), spec=SPEC)
        assert r1.to_dict() == r2.to_dict()
