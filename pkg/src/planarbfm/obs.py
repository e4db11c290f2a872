"""Privileged observations for the proxy teacher.

Layout (all expressed in the current base frame, float32):

  proprioception s_p (54):
    [ 0:14)  link CoM positions relative to the base, base frame (7 x 2)
    [14:20)  joint positions q (6)
    [20:27)  link pitches relative to base pitch (7)
    [27:41)  link CoM linear velocities, base frame (7 x 2)
    [41:47)  joint velocities dq (6)
    [47:48)  base angular velocity (1)
    [48:54)  previous action (6)

  goal s_g (33), one-frame differences — identically zero under perfect
  tracking:
    [ 0:14)  ref link CoM positions minus current, base frame (7 x 2)
    [14:20)  ref joint positions minus current (6)
    [20:27)  ref link pitches minus current (7)
    [27:29)  ref root linear velocity minus current, base frame (2)
    [29:30)  ref root angular velocity minus current (1)
    [30:32)  ref root position minus current base position, base frame (2)
    [32:33)  ref root pitch minus current base pitch (1)
"""

from __future__ import annotations

import numpy as np

from .embodiment import EmbodimentSpec
from .sim import Kinematics, SimBatch, kinematics

PROPRIO_SIM_DIM = 54
GOAL_SIM_DIM = 33
PROXY_OBS_DIM = PROPRIO_SIM_DIM + GOAL_SIM_DIM

PROPRIO_SLICES = {
    "link_pos": slice(0, 14),
    "q": slice(14, 20),
    "link_pitch": slice(20, 27),
    "link_vel": slice(27, 41),
    "dq": slice(41, 47),
    "base_angvel": slice(47, 48),
    "prev_action": slice(48, 54),
}
GOAL_SLICES = {
    "d_link_pos": slice(0, 14),
    "d_q": slice(14, 20),
    "d_link_pitch": slice(20, 27),
    "d_root_vel": slice(27, 29),
    "d_root_angvel": slice(29, 30),
    "d_root_pos": slice(30, 32),
    "d_root_pitch": slice(32, 33),
}


def rotate_to_base(vec: np.ndarray, base_pitch: np.ndarray) -> np.ndarray:
    """Rotate world-frame planar vectors (..., 2) into the base frame."""
    c = np.cos(base_pitch)
    s = np.sin(base_pitch)
    x, z = vec[..., 0], vec[..., 1]
    return np.stack([c * x + s * z, -s * x + c * z], axis=-1)


def privileged_proprio(batch: SimBatch, kin: Kinematics) -> np.ndarray:
    """s_p for every environment; kin must carry velocities."""
    n = batch.base_pos.shape[0]
    pitch = batch.base_pitch
    rel = kin.link_com - batch.base_pos[:, None, :]
    link_pos = rotate_to_base(rel, pitch[:, None])
    link_vel = rotate_to_base(kin.link_com_vel, pitch[:, None])
    out = np.concatenate(
        [
            link_pos.reshape(n, 14),
            batch.q,
            kin.link_pitch - pitch[:, None],
            link_vel.reshape(n, 14),
            batch.dq,
            batch.base_angvel[:, None],
            batch.prev_action,
        ],
        axis=1,
    )
    return out.astype(np.float32)


def privileged_goal(
    spec: EmbodimentSpec,
    batch: SimBatch,
    kin: Kinematics,
    ref_pose: np.ndarray,
    ref_vel: np.ndarray,
    ref_kin: Kinematics | None = None,
) -> np.ndarray:
    """s_g: one-frame differences to the reference, in the base frame.

    ref_pose/ref_vel are (N, 9) pose rows and their finite-difference rates.
    """
    n = batch.base_pos.shape[0]
    pitch = batch.base_pitch
    if ref_kin is None:
        ref_kin = kinematics(spec, ref_pose[:, 0:2], ref_pose[:, 2], ref_pose[:, 3:9])
    d_link = rotate_to_base(ref_kin.link_com - kin.link_com, pitch[:, None])
    d_root_vel = rotate_to_base(ref_vel[:, 0:2] - batch.base_vel, pitch)
    d_root_pos = rotate_to_base(ref_pose[:, 0:2] - batch.base_pos, pitch)
    out = np.concatenate(
        [
            d_link.reshape(n, 14),
            ref_pose[:, 3:9] - batch.q,
            ref_kin.link_pitch - kin.link_pitch,
            d_root_vel,
            (ref_vel[:, 2] - batch.base_angvel)[:, None],
            d_root_pos,
            (ref_pose[:, 2] - batch.base_pitch)[:, None],
        ],
        axis=1,
    )
    return out.astype(np.float32)


def proxy_observation(
    spec: EmbodimentSpec,
    batch: SimBatch,
    kin: Kinematics,
    ref_pose: np.ndarray,
    ref_vel: np.ndarray,
    ref_kin: Kinematics | None = None,
) -> np.ndarray:
    """Full 87-float proxy observation s_p ++ s_g."""
    return np.concatenate(
        [
            privileged_proprio(batch, kin),
            privileged_goal(spec, batch, kin, ref_pose, ref_vel, ref_kin),
        ],
        axis=1,
    )


def batch_kin_with_velocities(spec: EmbodimentSpec, batch: SimBatch,
                              com_offset: np.ndarray | None = None) -> Kinematics:
    return kinematics(
        spec,
        batch.base_pos,
        batch.base_pitch,
        batch.q,
        base_vel=batch.base_vel,
        base_angvel=batch.base_angvel,
        dq=batch.dq,
        com_offset=com_offset,
    )
