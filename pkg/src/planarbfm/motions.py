"""Reference motion clips: file format, procedural generators, and the
sampling state used for RSI, hard negative mining, and plateau filtering.

A clip stores kinematic frames [root_x, root_z, root_pitch, q0..q5] at a
fixed fps; per-frame velocities are always derived by finite differences
(central in the interior, one-sided at the boundaries) and never stored.

Generator time base: frame k of a duration-D clip sits at t = (k + 1)/fps,
so a clip generated for D seconds ends exactly at v*D of root travel.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embodiment import N_JOINTS, EmbodimentSpec, default_embodiment
from .sim import POSE_DIM


class MotionFormatError(ValueError):
    """Schema violation in a clip file; message names the offending field."""


class GenerationError(ValueError):
    """Generator parameters outside what the embodiment can represent."""


def derive_velocities(frames: np.ndarray, fps: float) -> np.ndarray:
    """Finite-difference pose rates: central interior, one-sided boundaries."""
    frames = np.asarray(frames, dtype=float)
    vel = np.empty_like(frames)
    vel[0] = (frames[1] - frames[0]) * fps
    vel[-1] = (frames[-1] - frames[-2]) * fps
    if len(frames) > 2:
        vel[1:-1] = (frames[2:] - frames[:-2]) * (fps / 2.0)
    return vel


@dataclass(frozen=True)
class MotionClip:
    name: str
    fps: float
    frames: np.ndarray                      # (F, 9)
    frame_velocities: np.ndarray = field(init=False, compare=False)

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=float)
        if frames.ndim != 2 or frames.shape[1] != POSE_DIM:
            raise MotionFormatError(
                f"frames: expected shape (F, {POSE_DIM}), got {frames.shape}"
            )
        if frames.shape[0] < 2:
            raise MotionFormatError("frames: need at least 2 frames")
        if self.fps <= 0:
            raise MotionFormatError(f"fps: must be positive, got {self.fps}")
        if not np.all(np.isfinite(frames)):
            raise MotionFormatError("frames: non-finite values")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "frame_velocities", derive_velocities(frames, self.fps))

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.fps

    def pose(self, frame: int) -> np.ndarray:
        return self.frames[frame]


def save_clip(clip: MotionClip, path: str | Path) -> None:
    doc = {
        "name": clip.name,
        "fps": clip.fps,
        "joints": N_JOINTS,
        "frames": clip.frames.tolist(),
    }
    Path(path).write_text(json.dumps(doc))


def load_clip(path: str | Path) -> MotionClip:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise MotionFormatError(f"file: not valid JSON ({e})") from e
    if not isinstance(doc, dict):
        raise MotionFormatError("file: top level must be an object")
    for key in ("name", "fps", "joints", "frames"):
        if key not in doc:
            raise MotionFormatError(f"{key}: missing required field")
    if not isinstance(doc["name"], str):
        raise MotionFormatError("name: must be a string")
    if not isinstance(doc["fps"], (int, float)) or doc["fps"] <= 0:
        raise MotionFormatError(f"fps: must be a positive number, got {doc['fps']!r}")
    if doc["joints"] != N_JOINTS:
        raise MotionFormatError(
            f"joints: embodiment has {N_JOINTS} joints, file says {doc['joints']!r}"
        )
    frames = doc["frames"]
    if not isinstance(frames, list) or len(frames) < 2:
        raise MotionFormatError("frames: need a list of at least 2 frames")
    width = 3 + N_JOINTS
    for i, row in enumerate(frames):
        if not isinstance(row, list) or len(row) != width:
            raise MotionFormatError(
                f"frames[{i}]: expected {width} values "
                f"(root_x, root_z, root_pitch, {N_JOINTS} joints), got "
                f"{len(row) if isinstance(row, list) else type(row).__name__}"
            )
    arr = np.asarray(frames, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise MotionFormatError("frames: non-finite values")
    return MotionClip(name=doc["name"], fps=float(doc["fps"]), frames=arr)


def load_clip_dir(path: str | Path) -> list[MotionClip]:
    clips = [load_clip(p) for p in sorted(Path(path).glob("*.json"))]
    if not clips:
        raise MotionFormatError(f"file: no clip files found in {path}")
    return clips


# ---------------------------------------------------------------------------
# procedural generators
# ---------------------------------------------------------------------------


def _smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def _leg_ik(spec: EmbodimentSpec, rel_x, rel_z, pitch):
    """Hip/knee angles putting the ankle at (rel_x, rel_z) from the hip.

    Knee bends backward (negative), matching the joint limits.  Targets at
    or marginally past full extension (within 5 mm) snap to the straight
    leg; anything further raises GenerationError — generators must stay
    reachable.
    """
    l1 = spec.link("thigh_l").length
    l2 = spec.link("shin_l").length
    rel_x = np.asarray(rel_x, dtype=float)
    rel_z = np.asarray(rel_z, dtype=float)
    r = np.sqrt(rel_x**2 + rel_z**2)
    if np.any(r > l1 + l2 + 5e-3) or np.any(r < abs(l1 - l2) + 0.02):
        raise GenerationError(
            f"ankle target out of reach: distance range [{r.min():.3f}, {r.max():.3f}] "
            f"for leg length {l1 + l2:.3f}"
        )
    beta = np.arctan2(rel_x, -rel_z)          # angle from straight down
    alpha = np.arccos(np.clip(r / (l1 + l2), -1.0, 1.0))
    q_hip = beta + alpha - pitch
    q_knee = -2.0 * alpha
    return q_hip, q_knee


def _flat_foot_ankle(spec: EmbodimentSpec, pitch, q_hip, q_knee):
    """Ankle angle keeping the foot level with the ground."""
    lo = spec.joint("ankle_l").lower
    hi = spec.joint("ankle_l").upper
    return np.clip(-(pitch + q_hip + q_knee), lo, hi)


def _assemble(spec, name, fps, root_x, root_z, pitch, ankles):
    """Build a clip from root trajectories and per-leg ankle targets.

    `ankles` is ((xl, zl), (xr, zr)) in world coordinates.
    """
    qs = []
    for ax, az in ankles:
        q_hip, q_knee = _leg_ik(spec, ax - root_x, az - root_z, pitch)
        q_ankle = _flat_foot_ankle(spec, pitch, q_hip, q_knee)
        qs.extend([q_hip, q_knee, q_ankle])
    frames = np.stack([root_x, root_z, pitch] + qs, axis=1)
    clip = MotionClip(name=name, fps=fps, frames=frames)
    validate_against_limits(clip, spec)
    return clip


def validate_against_limits(clip: MotionClip, spec: EmbodimentSpec) -> None:
    q = clip.frames[:, 3:9]
    lo, hi = spec.joint_lower, spec.joint_upper
    if np.any(q < lo - 1e-9) or np.any(q > hi + 1e-9):
        worst = np.argmax(np.maximum(q - hi, lo - q).max(axis=1))
        raise GenerationError(
            f"clip {clip.name!r}: joint limits violated at frame {worst}: {q[worst]}"
        )


def _times(duration: float, fps: float) -> np.ndarray:
    n = int(round(duration * fps))
    return (np.arange(n) + 1.0) / fps


def generate_stand(duration: float = 4.0, fps: float = 50.0,
                   spec: EmbodimentSpec | None = None) -> MotionClip:
    spec = spec or default_embodiment()
    t = _times(duration, fps)
    h = spec.rest_hip_height()
    zeros = np.zeros_like(t)
    frames = np.stack([zeros, np.full_like(t, h), zeros] + [zeros] * N_JOINTS, axis=1)
    return MotionClip(name="stand", fps=fps, frames=frames)


def generate_walk(
    speed: float,
    duration: float = 4.0,
    fps: float = 50.0,
    spec: EmbodimentSpec | None = None,
    name: str | None = None,
) -> MotionClip:
    """Planar gait: root advances at `speed`; ankles alternate planted stance
    (duty 0.6) and smooth swing with ground clearance; feet stay level."""
    spec = spec or default_embodiment()
    if abs(speed) < 1e-6:
        raise GenerationError("walk speed must be non-zero; use the stand clip")
    if abs(speed) > 1.2:
        raise GenerationError(f"walk speed {speed} beyond supported 1.2 m/s")
    t = _times(duration, fps)
    step_len = min(0.30, 0.25 * abs(speed) + 0.12)  # per step; 2 steps/cycle
    cycle_t = 2.0 * step_len / abs(speed)
    duty = 0.6                                 # stance fraction per leg
    lift = 0.045
    root_z = np.full_like(t, 0.45)
    root_x = speed * t
    pitch = np.zeros_like(t)

    def ankle_traj(phase_offset):
        ph = t / cycle_t + phase_offset
        cyc = np.floor(ph)
        u = ph - cyc
        # plant so the root passes over the foot at mid-stance; the swing
        # carries the ankle one full cycle (2 steps) forward to the next plant
        plant = speed * cycle_t * (cyc + duty / 2.0 - phase_offset)
        stance = u < duty
        su = (u - duty) / (1.0 - duty)        # swing progress 0..1
        x = np.where(
            stance, plant, plant + speed * cycle_t * _smoothstep(su)
        )
        z = np.where(stance, 0.0, lift * np.sin(np.pi * np.clip(su, 0.0, 1.0)))
        return x, z

    xl, zl = ankle_traj(0.0)                  # legs half a cycle apart
    xr, zr = ankle_traj(0.5)
    return _assemble(
        spec, name or f"walk_{speed:+.1f}", fps, root_x, root_z, pitch,
        ((xl, zl), (xr, zr)),
    )


def generate_crouch(duration: float = 3.0, fps: float = 50.0,
                    spec: EmbodimentSpec | None = None) -> MotionClip:
    """Lower from stand height to a hold crouch and stay."""
    spec = spec or default_embodiment()
    t = _times(duration, fps)
    h0, h1, t_move = spec.rest_hip_height(), 0.35, 1.0
    root_z = h0 + (h1 - h0) * _smoothstep(t / t_move)
    zeros = np.zeros_like(t)
    return _assemble(spec, "crouch", fps, zeros, root_z, zeros,
                     ((zeros, zeros), (zeros, zeros)))


def generate_squat_to_stand(duration: float = 3.0, fps: float = 50.0,
                            spec: EmbodimentSpec | None = None) -> MotionClip:
    spec = spec or default_embodiment()
    t = _times(duration, fps)
    h0, h1, t_move = 0.35, spec.rest_hip_height(), 1.5
    root_z = h0 + (h1 - h0) * _smoothstep(t / t_move)
    zeros = np.zeros_like(t)
    return _assemble(spec, "squat_to_stand", fps, zeros, root_z, zeros,
                     ((zeros, zeros), (zeros, zeros)))


def generate_kick(duration: float = 3.0, fps: float = 50.0,
                  spec: EmbodimentSpec | None = None) -> MotionClip:
    """Stand on the left leg and swing the right leg forward."""
    spec = spec or default_embodiment()
    t = _times(duration, fps)
    h = 0.46
    zeros = np.zeros_like(t)
    root_z = np.full_like(t, h)

    # stance leg via IK (ankle pinned under the hip)
    q_hip_l, q_knee_l = _leg_ik(spec, zeros, -root_z, zeros)
    q_ankle_l = _flat_foot_ankle(spec, zeros, q_hip_l, q_knee_l)

    # kick envelope over the middle of the clip
    u = np.clip((t / duration - 0.25) / 0.5, 0.0, 1.0)
    env = np.sin(np.pi * u) ** 2
    q_hip_r = 1.1 * env
    q_knee_r = -1.6 * env * (1.0 - env)       # flex on the way, extend at apex
    q_ankle_r = _flat_foot_ankle(spec, zeros, q_hip_r, q_knee_r)

    frames = np.stack(
        [zeros, root_z, zeros, q_hip_l, q_knee_l, q_ankle_l,
         q_hip_r, q_knee_r, q_ankle_r], axis=1
    )
    clip = MotionClip(name="kick", fps=fps, frames=frames)
    validate_against_limits(clip, spec)
    return clip


def generate_hop(
    duration: float = 4.0,
    fps: float = 50.0,
    flight_time: float = 0.25,
    crouch_depth: float = 0.05,
    spec: EmbodimentSpec | None = None,
    name: str = "hop",
) -> MotionClip:
    """Repeated vertical hops: crouch-dip ground phase, ballistic flight
    with a slight leg tuck."""
    spec = spec or default_embodiment()
    t = _times(duration, fps)
    g = spec.gravity
    ground_time = 0.35
    cycle = ground_time + flight_time
    z_base = 0.47
    v0 = g * flight_time / 2.0

    ph = np.mod(t, cycle)
    in_ground = ph < ground_time
    gu = ph / ground_time
    z_ground = z_base - crouch_depth * np.sin(np.pi * np.clip(gu, 0, 1))
    tau = ph - ground_time
    z_flight = z_base + v0 * tau - 0.5 * g * tau**2
    root_z = np.where(in_ground, z_ground, z_flight)

    # ankles: planted in ground phase, tucked toward the root in flight
    # (never below ground, never at the exact reach limit)
    fu = tau / flight_time
    tuck = 0.005 + 0.06 * np.sin(np.pi * np.clip(fu, 0, 1))
    ankle_z = np.where(
        in_ground, 0.0, np.maximum(0.0, root_z - (spec.leg_length - tuck))
    )
    zeros = np.zeros_like(t)
    clip = _assemble(spec, name, fps, zeros, root_z, zeros,
                     ((zeros, ankle_z), (zeros, ankle_z)))
    return clip


def generate_hop_high(duration: float = 4.0, fps: float = 50.0,
                      spec: EmbodimentSpec | None = None) -> MotionClip:
    """Aggressive hop variant (longer flight, deeper crouch) — deliberately
    near the edge of what the embodiment can track; not in the basic set."""
    return generate_hop(duration, fps, flight_time=0.42, crouch_depth=0.1,
                        spec=spec, name="hop_high")


@dataclass(frozen=True)
class MotionSetParams:
    forward_speeds: tuple[float, ...] = (0.3, 0.6, 1.0)
    backward_speed: float = 0.4
    duration: float = 4.0
    fps: float = 50.0


def generate_basic_set(
    params: MotionSetParams | None = None, spec: EmbodimentSpec | None = None
) -> list[MotionClip]:
    params = params or MotionSetParams()
    spec = spec or default_embodiment()
    d, fps = params.duration, params.fps
    clips = [generate_stand(d, fps, spec)]
    for v in params.forward_speeds:
        clips.append(generate_walk(v, d, fps, spec, name=f"walk_forward_{v:.1f}"))
    clips.append(
        generate_walk(-params.backward_speed, d, fps, spec,
                      name=f"walk_backward_{params.backward_speed:.1f}")
    )
    clips.append(generate_crouch(3.0, fps, spec))
    clips.append(generate_squat_to_stand(3.0, fps, spec))
    clips.append(generate_kick(3.0, fps, spec))
    clips.append(generate_hop(d, fps, spec=spec))
    for clip in clips:
        validate_against_limits(clip, spec)
    return clips
