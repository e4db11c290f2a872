"""Imitation reward: task tracking kernels, penalties, and regularizers,
with a curriculum scale that fades the non-task terms in.

Task terms use exponential kernels r_k = w_k * exp(-alpha_k * err_k^2)
where err_k is a mean error in natural units; alpha defaults are 20 for
positions (m^2), 5 for rotations (rad^2), 2 for velocities.

Planar adaptations of the body-group terms (each documented at its weight):
  - "selected keypoint" = torso_top + toe_L + ankle_R (ankle_R doubles as
    the merged right-foot endpoint in the 7-keypoint set)
  - "feet" keypoints = ankle_L, toe_L, ankle_R
  - body rotation/velocity group uses link pitches and the root velocity
  - "feet heading alignment" = foot pitch alignment to the reference
  - "feet air time" = indicator that both feet are airborne while the
    reference keeps a foot on the ground (anti-hopping discipline)
  - "hip pos" = mean |hip joint angle| deviation from default
  - "close feet distance" = shortfall of |x_L - x_R| below 0.08 m, but only
    below the reference's own feet distance — a planar stand has both feet
    at the same x, so the literal penalty would tax perfect stance tracking
  - the DoF position penalty uses an absolute 0.05 rad margin from the hard
    limits: the knee range (-2.4, 0.05) is so asymmetric that a fractional
    soft range would penalize the straight-knee rest pose itself
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embodiment import EmbodimentSpec
from .sim import Kinematics, SimBatch

# keypoint index groups (see embodiment.KEYPOINT_NAMES)
SELECTED_KEYPOINTS = (0, 4, 6)      # torso_top, toe_l, ankle_r
FEET_KEYPOINTS = (3, 4, 6)          # ankle_l, toe_l, ankle_r
FOOT_LINKS = (5, 6)                 # link indices of foot_l, foot_r
HIP_JOINTS = (0, 3)
CLOSE_FEET_MIN = 0.08               # m
SOFT_LIMIT_MARGIN = 0.05            # rad from the hard joint limits
SOFT_VEL_FRACTION = 0.9
TORQUE_LIMIT_FRACTION = 0.95


@dataclass(frozen=True)
class RewardWeights:
    # task
    body_position: float = 1.0
    body_position_selected: float = 1.6
    body_position_feet: float = 2.1
    body_rotation: float = 0.5
    body_velocity: float = 0.5
    body_angular_velocity: float = 0.5
    dof_position: float = 0.75
    dof_velocity: float = 0.5
    # penalty
    torque_limits: float = -5.0
    dof_position_limit: float = -10.0
    dof_velocity_limit: float = -5.0
    termination: float = -200.0
    # regularization
    torque: float = -1e-6
    action_rate: float = -0.5
    feet_orientation: float = -2.0
    feet_heading_alignment: float = -0.02
    feet_air_time: float = -10.0
    slippage: float = -1.0
    hip_pos: float = -1.0
    close_feet_distance: float = -0.5
    # kernel scales
    alpha_position: float = 20.0
    alpha_rotation: float = 5.0
    alpha_velocity: float = 2.0

    @property
    def task_total(self) -> float:
        return (
            self.body_position + self.body_position_selected
            + self.body_position_feet + self.body_rotation + self.body_velocity
            + self.body_angular_velocity + self.dof_position + self.dof_velocity
        )


@dataclass
class CurriculumState:
    """Linear ramp of the penalty/regularization scale from 0 to 1."""

    start_step: int = 0
    end_step: int = 300_000

    def scale(self, step: int) -> float:
        if self.end_step <= self.start_step:
            return 1.0
        return float(np.clip(
            (step - self.start_step) / (self.end_step - self.start_step), 0.0, 1.0
        ))


@dataclass
class RewardInputs:
    """Everything compute_reward needs, batched over N environments."""

    keypoints: np.ndarray           # (N, 7, 2) current
    ref_keypoints: np.ndarray       # (N, 7, 2)
    link_pitch: np.ndarray          # (N, 7)
    ref_link_pitch: np.ndarray      # (N, 7)
    base_vel: np.ndarray            # (N, 2)
    ref_root_vel: np.ndarray        # (N, 2)
    base_angvel: np.ndarray         # (N,)
    ref_root_angvel: np.ndarray     # (N,)
    q: np.ndarray                   # (N, 6)
    ref_q: np.ndarray               # (N, 6)
    dq: np.ndarray                  # (N, 6)
    ref_dq: np.ndarray              # (N, 6)
    torques: np.ndarray             # (N, 6) mean |tau| over the control step
    action: np.ndarray              # (N, 6)
    prev_action: np.ndarray         # (N, 6)
    foot_contact: np.ndarray        # (N, 2) bool
    contact_pos: np.ndarray         # (N, 4, 2) heel/toe points
    contact_vel: np.ndarray         # (N, 4, 2)
    ref_foot_on_ground: np.ndarray  # (N,) bool
    terminated: np.ndarray          # (N,) bool


def build_reward_inputs(
    spec: EmbodimentSpec,
    batch: SimBatch,
    kin: Kinematics,
    ref_pose: np.ndarray,
    ref_vel: np.ndarray,
    ref_kin: Kinematics,
    torques: np.ndarray,
    action: np.ndarray,
    prev_action: np.ndarray,
    terminated: np.ndarray,
) -> RewardInputs:
    """Assemble RewardInputs from post-step sim state and reference rows.

    `prev_action` must be the action of the step before this one (the
    batch's prev_action is already overwritten by the current action).
    """
    ref_on_ground = (ref_kin.contact_pos[:, :, 1] <= 5e-3).any(axis=1)
    return RewardInputs(
        keypoints=kin.keypoints,
        ref_keypoints=ref_kin.keypoints,
        link_pitch=kin.link_pitch,
        ref_link_pitch=ref_kin.link_pitch,
        base_vel=batch.base_vel,
        ref_root_vel=ref_vel[:, 0:2],
        base_angvel=batch.base_angvel,
        ref_root_angvel=ref_vel[:, 2],
        q=batch.q,
        ref_q=ref_pose[:, 3:9],
        dq=batch.dq,
        ref_dq=ref_vel[:, 3:9],
        torques=torques,
        action=action,
        prev_action=prev_action,
        foot_contact=batch.foot_contact,
        contact_pos=kin.contact_pos,
        contact_vel=kin.contact_vel,
        ref_foot_on_ground=ref_on_ground,
        terminated=terminated,
    )


def _kernel(err, weight, alpha):
    return weight * np.exp(-alpha * np.asarray(err) ** 2)


def compute_reward(
    spec: EmbodimentSpec,
    inp: RewardInputs,
    weights: RewardWeights | None = None,
    curriculum_scale: float = 1.0,
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Per-environment total reward and per-term breakdown.

    Task terms are bounded in (0, w_k]; penalty and regularization terms
    are scaled by curriculum_scale (0 disables them entirely).  The
    termination penalty fires only on terminating steps.
    """
    w = weights or RewardWeights()
    s = curriculum_scale
    terms: dict[str, np.ndarray] = {}

    # --- task -------------------------------------------------------------
    kp_err = np.linalg.norm(inp.keypoints - inp.ref_keypoints, axis=2)
    terms["body_position"] = _kernel(
        kp_err.mean(axis=1), w.body_position, w.alpha_position)
    terms["body_position_selected"] = _kernel(
        kp_err[:, SELECTED_KEYPOINTS].mean(axis=1),
        w.body_position_selected, w.alpha_position)
    terms["body_position_feet"] = _kernel(
        kp_err[:, FEET_KEYPOINTS].mean(axis=1),
        w.body_position_feet, w.alpha_position)
    terms["body_rotation"] = _kernel(
        np.abs(inp.link_pitch - inp.ref_link_pitch).mean(axis=1),
        w.body_rotation, w.alpha_rotation)
    terms["body_velocity"] = _kernel(
        np.linalg.norm(inp.base_vel - inp.ref_root_vel, axis=1),
        w.body_velocity, w.alpha_velocity)
    terms["body_angular_velocity"] = _kernel(
        np.abs(inp.base_angvel - inp.ref_root_angvel),
        w.body_angular_velocity, w.alpha_velocity)
    terms["dof_position"] = _kernel(
        np.abs(inp.q - inp.ref_q).mean(axis=1), w.dof_position, w.alpha_rotation)
    terms["dof_velocity"] = _kernel(
        np.abs(inp.dq - inp.ref_dq).mean(axis=1), w.dof_velocity, w.alpha_velocity)

    # --- penalties (curriculum-scaled) ------------------------------------
    tlim = spec.torque_limits[None, :]
    excess = np.maximum(
        0.0, np.abs(inp.torques) - TORQUE_LIMIT_FRACTION * tlim
    ) / ((1.0 - TORQUE_LIMIT_FRACTION) * tlim)
    terms["torque_limits"] = s * w.torque_limits * excess.mean(axis=1)

    lo, hi = spec.joint_lower[None, :], spec.joint_upper[None, :]
    soft_lo, soft_hi = lo + SOFT_LIMIT_MARGIN, hi - SOFT_LIMIT_MARGIN
    out_of_soft = np.maximum(0.0, inp.q - soft_hi) + np.maximum(0.0, soft_lo - inp.q)
    terms["dof_position_limit"] = s * w.dof_position_limit * out_of_soft.mean(axis=1)

    vlim = spec.vel_limits[None, :]
    vel_excess = np.maximum(0.0, np.abs(inp.dq) - SOFT_VEL_FRACTION * vlim)
    terms["dof_velocity_limit"] = s * w.dof_velocity_limit * vel_excess.mean(axis=1)

    terms["termination"] = s * w.termination * inp.terminated.astype(float)

    # --- regularization (curriculum-scaled) -------------------------------
    terms["torque"] = s * w.torque * (inp.torques**2).sum(axis=1)
    terms["action_rate"] = s * w.action_rate * (
        (inp.action - inp.prev_action) ** 2).mean(axis=1)

    foot_pitch = inp.link_pitch[:, FOOT_LINKS]
    contact = inp.foot_contact.astype(float)
    terms["feet_orientation"] = s * w.feet_orientation * (
        contact * np.abs(foot_pitch)).mean(axis=1)
    terms["feet_heading_alignment"] = s * w.feet_heading_alignment * np.abs(
        foot_pitch - inp.ref_link_pitch[:, FOOT_LINKS]).mean(axis=1)

    airborne = ~inp.foot_contact.any(axis=1)
    terms["feet_air_time"] = s * w.feet_air_time * (
        airborne & inp.ref_foot_on_ground).astype(float)

    point_contact = inp.contact_pos[:, :, 1] <= 1e-3
    slip = np.abs(inp.contact_vel[:, :, 0]) * point_contact
    n_contact = np.maximum(1, point_contact.sum(axis=1))
    terms["slippage"] = s * w.slippage * slip.sum(axis=1) / n_contact

    terms["hip_pos"] = s * w.hip_pos * np.abs(inp.q[:, HIP_JOINTS]).mean(axis=1)

    feet_dx = np.abs(
        inp.keypoints[:, 3, 0] - inp.keypoints[:, 6, 0])  # ankle_l vs ankle_r
    ref_dx = np.abs(inp.ref_keypoints[:, 3, 0] - inp.ref_keypoints[:, 6, 0])
    threshold = np.minimum(CLOSE_FEET_MIN, ref_dx)
    shortfall = np.maximum(0.0, threshold - feet_dx) / CLOSE_FEET_MIN
    terms["close_feet_distance"] = s * w.close_feet_distance * shortfall

    total = np.sum(list(terms.values()), axis=0)
    return total, terms
