"""The unified control interface: goals, masks, and real proprioception.

Every downstream consumer (distillation, steering, locomotion commands)
speaks one fixed 26-scalar goal layout, activated per semantic unit by a
17-bit mask.  The same goal slots are filled from a reference clip during
training and from sparse user commands at deployment; masked-off slots are
zeroed *and* the mask bits themselves are appended so the networks can tell
"inactive" apart from "genuinely zero".

Goal layout (``GOAL_DIM = 26``)::

    [ 0: 2)  root Δtranslation (x, z), current base frame
    [ 2: 3)  root Δpitch
    [ 3: 5)  target root linear velocity (x, z), current base frame
    [ 5: 6)  target root angular velocity
    [ 6:20)  7 keypoints × (x, z), in the reference root frame
    [20:26)  6 target joint angles

Root translation and pitch are one-frame differences (next reference frame
minus current state); the velocity slots hold absolute targets so that the
same slots serve velocity commands in LOCO mode.

Mask layout (``MASK_DIM = 17``)::

    [ 0]  root translation     -> goal [0:2)
    [ 1]  root pitch           -> goal [2:3)
    [ 2]  root linear velocity -> goal [3:5)
    [ 3]  root angular velocity-> goal [5:6)
    [ 4:11)  keypoints (torso_top, hip, knee_l, ankle_l, toe_l, knee_r,
             ankle_r)          -> goal [6+2k : 8+2k)
    [11:17)  joints (hip_l, knee_l, ankle_l, hip_r, knee_r, ankle_r)
                               -> goal [20+j]

Both tables are exported as data (`GOAL_SLICES`, `MASK_EXPANSION`) and
asserted by a self-test.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .embodiment import EmbodimentSpec, default_embodiment
from .obs import rotate_to_base
from .sim import Kinematics, SimBatch, kinematics

__all__ = [
    "GOAL_DIM",
    "MASK_DIM",
    "MASKED_GOAL_DIM",
    "HISTORY_STEPS",
    "HISTORY_STEP_DIM",
    "HISTORY_DIM",
    "GOAL_SLICES",
    "MASK_EXPANSION",
    "MaskCurriculumState",
    "ProprioHistory",
    "ControlError",
    "expand_mask",
    "apply_mask",
    "sample_mask",
    "preset_mask",
    "curriculum_update",
    "build_goal_from_reference",
    "build_goal_from_command",
    "real_proprio",
]

GOAL_DIM = 26
MASK_DIM = 17
MASKED_GOAL_DIM = GOAL_DIM + MASK_DIM  # 43

HISTORY_STEPS = 25
HISTORY_STEP_DIM = 21  # q 6, dq 6, base angvel 1, projected gravity 2, prev action 6
HISTORY_DIM = HISTORY_STEPS * HISTORY_STEP_DIM  # 525

#: Goal-vector index table (start, stop) per named group.
GOAL_SLICES: dict[str, tuple[int, int]] = {
    "root_dtrans": (0, 2),
    "root_dpitch": (2, 3),
    "root_linvel": (3, 5),
    "root_angvel": (5, 6),
    "keypoints": (6, 20),
    "joints": (20, 26),
}

KEYPOINT_NAMES = ("torso_top", "hip", "knee_l", "ankle_l", "toe_l", "knee_r", "ankle_r")
MASK_BIT_NAMES = (
    "root_translation", "root_pitch", "root_linvel", "root_angvel",
    *(f"kp_{n}" for n in KEYPOINT_NAMES),
    *(f"joint_{n}" for n in ("hip_l", "knee_l", "ankle_l", "hip_r", "knee_r", "ankle_r")),
)


def _build_expansion() -> np.ndarray:
    """(17, 26) 0/1 matrix mapping mask bits to goal multipliers."""
    m = np.zeros((MASK_DIM, GOAL_DIM))
    m[0, 0:2] = 1.0
    m[1, 2] = 1.0
    m[2, 3:5] = 1.0
    m[3, 5] = 1.0
    for k in range(7):
        m[4 + k, 6 + 2 * k : 8 + 2 * k] = 1.0
    for j in range(6):
        m[11 + j, 20 + j] = 1.0
    return m


#: Fixed (17, 26) expansion table; every goal scalar is owned by exactly one bit.
MASK_EXPANSION = _build_expansion()
MASK_EXPANSION.setflags(write=False)


class ControlError(ValueError):
    """Raised for malformed goals, masks, or out-of-range commands."""


# ---------------------------------------------------------------------------
# masks
# ---------------------------------------------------------------------------
def expand_mask(mask: np.ndarray) -> np.ndarray:
    """17 bits -> 26 elementwise multipliers (0/1), batched on the left."""
    mask = np.asarray(mask, dtype=float)
    if mask.shape[-1] != MASK_DIM:
        raise ControlError(f"mask must have {MASK_DIM} bits, got {mask.shape[-1]}")
    return mask @ MASK_EXPANSION


def apply_mask(goal: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Masked goal with the mask bits appended: (..., 43).

    Masked-off goal entries are multiplied to zero, so any two goals that
    agree on the active entries produce identical outputs.
    """
    goal = np.asarray(goal, dtype=float)
    if goal.shape[-1] != GOAL_DIM:
        raise ControlError(f"goal must have {GOAL_DIM} entries, got {goal.shape[-1]}")
    mask = np.asarray(mask, dtype=float)
    mult = expand_mask(mask)
    return np.concatenate([goal * mult, np.broadcast_to(mask, goal.shape[:-1] + (MASK_DIM,))], axis=-1)


def sample_mask(rng: np.random.Generator, p_keep: float, n: int | None = None) -> np.ndarray:
    """17 independent Bernoulli(p_keep) bits; (17,) or (n, 17) float 0/1."""
    if not 0.5 <= p_keep <= 1.0:
        raise ControlError(f"p_keep must be in [0.5, 1], got {p_keep}")
    shape = (MASK_DIM,) if n is None else (n, MASK_DIM)
    return (rng.random(shape) < p_keep).astype(float)


def preset_mask(mode: str) -> np.ndarray:
    """Hand-crafted masks for the named control modes."""
    mask = np.zeros(MASK_DIM)
    mode_upper = mode.upper()
    if mode_upper == "TRACK":
        mask[:] = 1.0
    elif mode_upper == "TELEOP":
        mask[0:4] = 1.0                      # all root sub-groups
        mask[4 + KEYPOINT_NAMES.index("torso_top")] = 1.0
        mask[4 + KEYPOINT_NAMES.index("ankle_l")] = 1.0
        mask[4 + KEYPOINT_NAMES.index("ankle_r")] = 1.0
    elif mode_upper == "LOCO":
        mask[2] = 1.0                        # root linear velocity only
    else:
        raise ControlError(f"unknown control mode {mode!r}; expected TRACK, TELEOP, or LOCO")
    return mask


# ---------------------------------------------------------------------------
# mask curriculum
# ---------------------------------------------------------------------------
# Canonical episode horizon (frames) that episode-length thresholds refer
# to.  Training loops with reference-state-initialized episodes should feed
# curriculum_update a completion-normalized length (fraction-of-available-
# horizon x CURRICULUM_HORIZON) so the 60 % trigger is attainable no matter
# where an episode started inside its clip.
CURRICULUM_HORIZON = 200.0


@dataclass(frozen=True)
class MaskCurriculumState:
    """Keep-probability schedule: anneal 1.0 -> 0.5 once episodes get long."""

    p_keep: float = 1.0
    decay: float = 0.98
    episode_len_threshold: float = 120.0  # 60 % of CURRICULUM_HORIZON

    def __post_init__(self):
        if not 0.5 <= self.p_keep <= 1.0:
            raise ControlError(f"p_keep must be in [0.5, 1], got {self.p_keep}")


def curriculum_update(state: MaskCurriculumState, avg_episode_len: float) -> MaskCurriculumState:
    """Decay p_keep toward the 0.5 floor while episodes exceed the threshold."""
    if avg_episode_len > state.episode_len_threshold:
        return replace(state, p_keep=max(0.5, state.p_keep * state.decay))
    return state


# ---------------------------------------------------------------------------
# goal construction
# ---------------------------------------------------------------------------
def build_goal_from_reference(
    spec: EmbodimentSpec,
    batch: SimBatch,
    ref_pose: np.ndarray,
    ref_vel: np.ndarray,
    ref_kin: Kinematics | None = None,
) -> np.ndarray:
    """Goal rows (N, 26) from the next reference frame.

    Root translation/pitch are differences to the current state (translation
    rotated into the base frame); velocity slots are the reference's own
    rates in the base frame; keypoints are reference-root-relative; joints
    are the reference angles.
    """
    ref_pose = np.asarray(ref_pose, dtype=float)
    ref_vel = np.asarray(ref_vel, dtype=float)
    n = batch.base_pos.shape[0]
    if ref_kin is None:
        ref_kin = kinematics(spec, ref_pose[:, 0:2], ref_pose[:, 2], ref_pose[:, 3:9])

    pitch = batch.base_pitch
    d_trans = rotate_to_base(ref_pose[:, 0:2] - batch.base_pos, pitch)
    d_pitch = (ref_pose[:, 2] - batch.base_pitch)[:, None]
    v_lin = rotate_to_base(ref_vel[:, 0:2], pitch)
    v_ang = ref_vel[:, 2][:, None]
    kp_local = rotate_to_base(
        ref_kin.keypoints - ref_pose[:, None, 0:2], ref_pose[:, 2][:, None]
    ).reshape(n, 14)
    return np.concatenate(
        [d_trans, d_pitch, v_lin, v_ang, kp_local, ref_pose[:, 3:9]], axis=1
    )


def build_goal_from_command(
    vx: float, n: int = 1, max_speed: float = 2.0
) -> np.ndarray:
    """LOCO-style goal rows: target forward velocity only, all else zero."""
    if not np.isfinite(vx) or abs(vx) > max_speed:
        raise ControlError(f"vx command {vx} outside [-{max_speed}, {max_speed}] m/s")
    goal = np.zeros((n, GOAL_DIM))
    goal[:, 3] = vx
    return goal


# ---------------------------------------------------------------------------
# real proprioception history
# ---------------------------------------------------------------------------
def real_proprio(batch: SimBatch) -> np.ndarray:
    """One step of deployable proprioception: (N, 21).

    ``[q, dq, base angvel, projected gravity (base frame), previous action]``
    — nothing that would require world-frame localization.
    """
    phi = batch.base_pitch
    gravity = np.stack([-np.sin(phi), -np.cos(phi)], axis=1)  # unit "down" in base frame
    return np.concatenate(
        [
            batch.q,
            batch.dq,
            batch.base_angvel[:, None],
            gravity,
            batch.prev_action,
        ],
        axis=1,
    )


class ProprioHistory:
    """Batched ring of the last 25 proprioception steps, oldest first.

    Flattened to (N, 525) for the network inputs.  Reset pre-fills every
    slot with the initial observation so short histories degrade gracefully.
    """

    def __init__(self, n: int):
        self.buffer = np.zeros((n, HISTORY_STEPS, HISTORY_STEP_DIM))

    @property
    def n(self) -> int:
        return self.buffer.shape[0]

    def reset(self, obs: np.ndarray, rows: np.ndarray | None = None) -> None:
        """Fill all 25 slots of the given rows (default: all) with `obs`."""
        obs = np.asarray(obs, dtype=float)
        if rows is None:
            self.buffer[:] = obs[:, None, :]
        else:
            self.buffer[rows] = obs[:, None, :]

    def push(self, obs: np.ndarray) -> None:
        """Append the newest step, dropping the oldest."""
        self.buffer[:, :-1] = self.buffer[:, 1:]
        self.buffer[:, -1] = np.asarray(obs, dtype=float)

    def flat(self) -> np.ndarray:
        """(N, 525) flattened history, oldest step first."""
        return self.buffer.reshape(self.n, HISTORY_DIM)

    def copy(self) -> "ProprioHistory":
        out = ProprioHistory(self.n)
        out.buffer = self.buffer.copy()
        return out


def _self_test_layout() -> None:
    """Assert the documented index tables against the expansion matrix."""
    assert MASK_EXPANSION.shape == (MASK_DIM, GOAL_DIM)
    assert MASK_EXPANSION.sum() == GOAL_DIM  # every scalar owned by exactly one bit
    assert (MASK_EXPANSION.sum(axis=0) == 1.0).all()
    for name, (lo, hi) in GOAL_SLICES.items():
        assert 0 <= lo < hi <= GOAL_DIM, name
    assert len(MASK_BIT_NAMES) == MASK_DIM


_self_test_layout()
