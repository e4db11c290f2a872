"""Batched planar physics for the P7 humanoid.

The dynamics are deliberately approximate ("diagonal-inertia"): each joint
integrates ``q'' = tau_total / I_eff`` with a constant effective inertia taken
about the rest pose (plus actuator armature), the base pitch integrates the
torso gravity torque and the hip reaction torques, and the base translation
integrates total contact force over total mass.  Off-diagonal inertial
couplings are dropped.  Ground contact is a penalty spring-damper per foot
endpoint (heel and toe) with a Coulomb clamp on the tangential force.

Integration is semi-implicit Euler at ``sim_dt`` with ``decimation`` substeps
per control step; PD torques are recomputed every substep against the held
action target.  All functions are pure: randomness (torque noise, pushes,
domain draws) enters only through explicit arguments, so stepping is
deterministic given its inputs.

Contact force routing: normal (vertical) forces act on base translation, base
pitch (torque about the total CoM), and the leg joints (torque about each
joint anchor).  Tangential friction acts on base translation only — through
the joint levers its effective mass is a fraction of a kilogram, which no
stable damping-based friction can hold at this time step, so the model trades
friction-induced joint bending for a stance foot that actually sticks.

State arrays are float64 internally; observation builders downcast.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .embodiment import (
    FOOT_HEEL_FRACTION,
    N_JOINTS,
    N_KEYPOINTS,
    N_LINKS,
    EmbodimentSpec,
    default_embodiment,
)

# frame layout of a reference pose: root x, root z, root pitch, six joint angles
POSE_DIM = 9

# contact point order: heel_l, toe_l, heel_r, toe_r
CONTACT_NAMES = ("heel_l", "toe_l", "heel_r", "toe_r")

# distal links (link indices) whose gravity loads each joint carries
_DISTAL_LINKS = (
    (1, 2, 3),  # hip_l
    (2, 3),     # knee_l
    (3,),       # ankle_l
    (4, 5, 6),  # hip_r
    (5, 6),     # knee_r
    (6,),       # ankle_r
)

# joints (joint indices) that feel each contact point's torque
_CONTACT_JOINTS = ((0, 1, 2), (0, 1, 2), (3, 4, 5), (3, 4, 5))


class SimulationError(RuntimeError):
    """Raised when integration produces a non-finite state."""


def _down(theta):
    """Unit vector along a leg segment hanging at absolute pitch theta."""
    return np.stack([np.sin(theta), -np.cos(theta)], axis=-1)


def _fwd(theta):
    """Unit vector along a foot at absolute pitch theta (flat at 0)."""
    return np.stack([np.cos(theta), np.sin(theta)], axis=-1)


def _up(phi):
    """Unit vector along the torso at base pitch phi (vertical at 0)."""
    return np.stack([-np.sin(phi), np.cos(phi)], axis=-1)


def _perp(v):
    """Rotate planar vectors 90 degrees counter-clockwise."""
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


# ---------------------------------------------------------------------------
# state containers
# ---------------------------------------------------------------------------


@dataclass
class SimState:
    """Single-environment snapshot."""

    base_pos: np.ndarray          # (2,) x, z of the hip
    base_pitch: float
    base_vel: np.ndarray          # (2,)
    base_angvel: float
    q: np.ndarray                 # (6,)
    dq: np.ndarray                # (6,)
    prev_action: np.ndarray       # (6,) last PD target
    foot_contact: np.ndarray      # (2,) bool, left/right
    time: float = 0.0

    def copy(self) -> "SimState":
        return SimState(
            base_pos=self.base_pos.copy(), base_pitch=float(self.base_pitch),
            base_vel=self.base_vel.copy(), base_angvel=float(self.base_angvel),
            q=self.q.copy(), dq=self.dq.copy(), prev_action=self.prev_action.copy(),
            foot_contact=self.foot_contact.copy(), time=float(self.time),
        )


@dataclass
class SimBatch:
    """Struct-of-arrays state for N environments."""

    base_pos: np.ndarray          # (N, 2)
    base_pitch: np.ndarray        # (N,)
    base_vel: np.ndarray          # (N, 2)
    base_angvel: np.ndarray       # (N,)
    q: np.ndarray                 # (N, 6)
    dq: np.ndarray                # (N, 6)
    prev_action: np.ndarray       # (N, 6)
    foot_contact: np.ndarray      # (N, 2) bool
    time: np.ndarray              # (N,)

    @property
    def n(self) -> int:
        return self.base_pos.shape[0]

    @classmethod
    def zeros(cls, n: int) -> "SimBatch":
        return cls(
            base_pos=np.zeros((n, 2)), base_pitch=np.zeros(n),
            base_vel=np.zeros((n, 2)), base_angvel=np.zeros(n),
            q=np.zeros((n, 6)), dq=np.zeros((n, 6)), prev_action=np.zeros((n, 6)),
            foot_contact=np.zeros((n, 2), dtype=bool), time=np.zeros(n),
        )

    @classmethod
    def from_states(cls, states: list[SimState]) -> "SimBatch":
        return cls(
            base_pos=np.stack([s.base_pos for s in states]).astype(float),
            base_pitch=np.array([s.base_pitch for s in states], dtype=float),
            base_vel=np.stack([s.base_vel for s in states]).astype(float),
            base_angvel=np.array([s.base_angvel for s in states], dtype=float),
            q=np.stack([s.q for s in states]).astype(float),
            dq=np.stack([s.dq for s in states]).astype(float),
            prev_action=np.stack([s.prev_action for s in states]).astype(float),
            foot_contact=np.stack([s.foot_contact for s in states]).astype(bool),
            time=np.array([s.time for s in states], dtype=float),
        )

    def state(self, i: int) -> SimState:
        return SimState(
            base_pos=self.base_pos[i].copy(), base_pitch=float(self.base_pitch[i]),
            base_vel=self.base_vel[i].copy(), base_angvel=float(self.base_angvel[i]),
            q=self.q[i].copy(), dq=self.dq[i].copy(),
            prev_action=self.prev_action[i].copy(),
            foot_contact=self.foot_contact[i].copy(), time=float(self.time[i]),
        )

    def copy(self) -> "SimBatch":
        return SimBatch(
            base_pos=self.base_pos.copy(), base_pitch=self.base_pitch.copy(),
            base_vel=self.base_vel.copy(), base_angvel=self.base_angvel.copy(),
            q=self.q.copy(), dq=self.dq.copy(), prev_action=self.prev_action.copy(),
            foot_contact=self.foot_contact.copy(), time=self.time.copy(),
        )

    def set_from(self, i, other: "SimBatch", j) -> None:
        """In-place copy of rows `j` of `other` into rows `i` of self."""
        self.base_pos[i] = other.base_pos[j]
        self.base_pitch[i] = other.base_pitch[j]
        self.base_vel[i] = other.base_vel[j]
        self.base_angvel[i] = other.base_angvel[j]
        self.q[i] = other.q[j]
        self.dq[i] = other.dq[j]
        self.prev_action[i] = other.prev_action[j]
        self.foot_contact[i] = other.foot_contact[j]
        self.time[i] = other.time[j]


# ---------------------------------------------------------------------------
# kinematics
# ---------------------------------------------------------------------------


@dataclass
class Kinematics:
    """Forward-kinematics products for a batch of poses.

    Velocity fields are None when the pose-only overload was used.
    """

    keypoints: np.ndarray         # (N, 7, 2) torso_top, hip, knee_l, ankle_l, toe_l, knee_r, ankle_r
    heel: np.ndarray              # (N, 2, 2) left, right
    contact_pos: np.ndarray       # (N, 4, 2) heel_l, toe_l, heel_r, toe_r
    link_com: np.ndarray          # (N, 7, 2)
    link_pitch: np.ndarray        # (N, 7)
    joint_anchor: np.ndarray      # (N, 6, 2) hip_l, knee_l, ankle_l, hip_r, knee_r, ankle_r
    contact_vel: np.ndarray | None = None   # (N, 4, 2)
    link_com_vel: np.ndarray | None = None  # (N, 7, 2)
    link_angvel: np.ndarray | None = None   # (N, 7)
    keypoint_vel: np.ndarray | None = None  # (N, 7, 2)


def kinematics(
    spec: EmbodimentSpec,
    base_pos: np.ndarray,
    base_pitch: np.ndarray,
    q: np.ndarray,
    base_vel: np.ndarray | None = None,
    base_angvel: np.ndarray | None = None,
    dq: np.ndarray | None = None,
    com_offset: np.ndarray | None = None,
) -> Kinematics:
    """Batched forward kinematics; inputs have a leading batch axis.

    `com_offset` shifts the torso CoM along the torso-forward axis (domain
    randomization); it affects only `link_com` / `link_com_vel`.
    """
    base_pos = np.asarray(base_pos, dtype=float)
    phi = np.asarray(base_pitch, dtype=float)
    q = np.asarray(q, dtype=float)
    n = base_pos.shape[0]

    l_t = spec.link("torso").length
    l_th = spec.link("thigh_l").length
    l_sh = spec.link("shin_l").length
    l_f = spec.link("foot_l").length
    heel_r = FOOT_HEEL_FRACTION * l_f
    toe_r = (1.0 - FOOT_HEEL_FRACTION) * l_f

    # absolute link pitches; legs ordered left then right
    th_thigh = phi[:, None] + q[:, [0, 3]]
    th_shin = th_thigh + q[:, [1, 4]]
    th_foot = th_shin + q[:, [2, 5]]

    d_thigh = _down(th_thigh)          # (N, 2, 2) leg, xy
    d_shin = _down(th_shin)
    f_foot = _fwd(th_foot)
    u_torso = _up(phi)                 # (N, 2)

    hip = base_pos
    knee = hip[:, None, :] + l_th * d_thigh
    ankle = knee + l_sh * d_shin
    heel = ankle - heel_r * f_foot
    toe = ankle + toe_r * f_foot
    torso_top = hip + l_t * u_torso

    keypoints = np.stack(
        [torso_top, hip, knee[:, 0], ankle[:, 0], toe[:, 0], knee[:, 1], ankle[:, 1]],
        axis=1,
    )
    contact_pos = np.stack([heel[:, 0], toe[:, 0], heel[:, 1], toe[:, 1]], axis=1)
    joint_anchor = np.stack(
        [hip, knee[:, 0], ankle[:, 0], hip, knee[:, 1], ankle[:, 1]], axis=1
    )

    torso_com = hip + 0.5 * l_t * u_torso
    if com_offset is not None:
        fwd_torso = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
        torso_com = torso_com + np.asarray(com_offset, dtype=float)[:, None] * fwd_torso
    thigh_com = hip[:, None, :] + 0.5 * l_th * d_thigh
    shin_com = knee + 0.5 * l_sh * d_shin
    foot_com = ankle + (0.5 - FOOT_HEEL_FRACTION) * l_f * f_foot

    link_com = np.stack(
        [torso_com, thigh_com[:, 0], shin_com[:, 0], foot_com[:, 0],
         thigh_com[:, 1], shin_com[:, 1], foot_com[:, 1]],
        axis=1,
    )
    link_pitch = np.stack(
        [phi, th_thigh[:, 0], th_shin[:, 0], th_foot[:, 0],
         th_thigh[:, 1], th_shin[:, 1], th_foot[:, 1]],
        axis=1,
    )

    kin = Kinematics(
        keypoints=keypoints, heel=heel, contact_pos=contact_pos, link_com=link_com,
        link_pitch=link_pitch, joint_anchor=joint_anchor,
    )
    if base_vel is None:
        return kin

    base_vel = np.asarray(base_vel, dtype=float)
    omega = np.asarray(base_angvel, dtype=float)
    dq = np.asarray(dq, dtype=float)

    w_thigh = omega[:, None] + dq[:, [0, 3]]
    w_shin = w_thigh + dq[:, [1, 4]]
    w_foot = w_shin + dq[:, [2, 5]]

    v_knee = base_vel[:, None, :] + l_th * _perp(d_thigh) * w_thigh[..., None]
    v_ankle = v_knee + l_sh * _perp(d_shin) * w_shin[..., None]
    v_heel = v_ankle - heel_r * _perp(f_foot) * w_foot[..., None]
    v_toe = v_ankle + toe_r * _perp(f_foot) * w_foot[..., None]
    v_top = base_vel + l_t * _perp(u_torso) * omega[:, None]

    v_torso_com = base_vel + 0.5 * l_t * _perp(u_torso) * omega[:, None]
    if com_offset is not None:
        perp_fwd = np.stack([-np.sin(phi), np.cos(phi)], axis=-1)
        off = np.asarray(com_offset, dtype=float)[:, None]
        v_torso_com = v_torso_com + off * perp_fwd * omega[:, None]
    v_thigh_com = base_vel[:, None, :] + 0.5 * l_th * _perp(d_thigh) * w_thigh[..., None]
    v_shin_com = v_knee + 0.5 * l_sh * _perp(d_shin) * w_shin[..., None]
    v_foot_com = v_ankle + (0.5 - FOOT_HEEL_FRACTION) * l_f * _perp(f_foot) * w_foot[..., None]

    kin.contact_vel = np.stack([v_heel[:, 0], v_toe[:, 0], v_heel[:, 1], v_toe[:, 1]], axis=1)
    kin.link_com_vel = np.stack(
        [v_torso_com, v_thigh_com[:, 0], v_shin_com[:, 0], v_foot_com[:, 0],
         v_thigh_com[:, 1], v_shin_com[:, 1], v_foot_com[:, 1]],
        axis=1,
    )
    kin.link_angvel = np.stack(
        [omega, w_thigh[:, 0], w_shin[:, 0], w_foot[:, 0],
         w_thigh[:, 1], w_shin[:, 1], w_foot[:, 1]],
        axis=1,
    )
    kin.keypoint_vel = np.stack(
        [v_top, base_vel, v_knee[:, 0], v_ankle[:, 0], v_toe[:, 0], v_knee[:, 1], v_ankle[:, 1]],
        axis=1,
    )
    return kin


def pose_kinematics(spec: EmbodimentSpec, poses: np.ndarray) -> Kinematics:
    """FK for reference poses shaped (..., 9): [root_x, root_z, root_pitch, q]."""
    poses = np.asarray(poses, dtype=float)
    flat = poses.reshape(-1, POSE_DIM)
    return kinematics(spec, flat[:, 0:2], flat[:, 2], flat[:, 3:9])


def keypoints_of_pose(spec: EmbodimentSpec, poses: np.ndarray) -> np.ndarray:
    """(..., 9) poses -> (..., 7, 2) keypoints."""
    poses = np.asarray(poses, dtype=float)
    kps = pose_kinematics(spec, poses).keypoints
    return kps.reshape(poses.shape[:-1] + (N_KEYPOINTS, 2))


def keypoints_batch(batch: SimBatch, spec: EmbodimentSpec | None = None) -> np.ndarray:
    spec = spec or default_embodiment()
    return kinematics(spec, batch.base_pos, batch.base_pitch, batch.q).keypoints


def keypoints(state: SimState, spec: EmbodimentSpec | None = None) -> np.ndarray:
    """Current (7, 2) keypoint positions in world coordinates."""
    spec = spec or default_embodiment()
    return keypoints_batch(SimBatch.from_states([state]), spec)[0]


def batch_kinematics(
    batch: SimBatch, spec: EmbodimentSpec | None = None,
    com_offset: np.ndarray | None = None,
) -> Kinematics:
    """Full kinematics (with velocities) of a live batch."""
    spec = spec or default_embodiment()
    return kinematics(
        spec, batch.base_pos, batch.base_pitch, batch.q,
        base_vel=batch.base_vel, base_angvel=batch.base_angvel, dq=batch.dq,
        com_offset=com_offset,
    )


def pose_of_state(state: SimState) -> np.ndarray:
    return np.concatenate([state.base_pos, [state.base_pitch], state.q])


def poses_of_batch(batch: SimBatch) -> np.ndarray:
    return np.concatenate(
        [batch.base_pos, batch.base_pitch[:, None], batch.q], axis=1
    )


# ---------------------------------------------------------------------------
# domain randomization and pushes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DomainRandomizationConfig:
    com_offset_range: tuple[float, float] = (-0.1, 0.1)
    link_mass_range: tuple[float, float] = (0.9, 1.1)
    friction_range: tuple[float, float] = (0.5, 1.2)
    kp_scale_range: tuple[float, float] = (0.9, 1.1)
    kd_scale_range: tuple[float, float] = (0.9, 1.1)
    torque_noise_scale: float = 0.05
    push_interval_range: tuple[float, float] = (5.0, 10.0)
    push_max_velocity: float = 1.0

    @classmethod
    def disabled(cls) -> "DomainRandomizationConfig":
        """All ranges collapsed to the nominal values; no noise, no pushes."""
        return cls(
            com_offset_range=(0.0, 0.0), link_mass_range=(1.0, 1.0),
            friction_range=(1.0, 1.0), kp_scale_range=(1.0, 1.0),
            kd_scale_range=(1.0, 1.0), torque_noise_scale=0.0,
            push_interval_range=(5.0, 10.0), push_max_velocity=0.0,
        )


@dataclass(frozen=True)
class DomainParams:
    """One episode's physical perturbations."""

    com_offset: float                 # torso CoM fore-aft shift, m
    link_mass_scale: np.ndarray       # (7,)
    friction: float
    kp_scale: np.ndarray              # (6,)
    kd_scale: np.ndarray              # (6,)
    torque_noise_scale: float         # fraction of each torque limit

    @classmethod
    def nominal(cls) -> "DomainParams":
        return cls(
            com_offset=0.0, link_mass_scale=np.ones(N_LINKS), friction=1.0,
            kp_scale=np.ones(N_JOINTS), kd_scale=np.ones(N_JOINTS),
            torque_noise_scale=0.0,
        )

    def allclose(self, other: "DomainParams", atol: float = 0.0) -> bool:
        return (
            abs(self.com_offset - other.com_offset) <= atol
            and np.allclose(self.link_mass_scale, other.link_mass_scale, atol=atol)
            and abs(self.friction - other.friction) <= atol
            and np.allclose(self.kp_scale, other.kp_scale, atol=atol)
            and np.allclose(self.kd_scale, other.kd_scale, atol=atol)
            and abs(self.torque_noise_scale - other.torque_noise_scale) <= atol
        )


def randomize_domain(
    rng: np.random.Generator, config: DomainRandomizationConfig | None = None
) -> DomainParams:
    config = config or DomainRandomizationConfig()
    u = rng.uniform
    return DomainParams(
        com_offset=float(u(*config.com_offset_range)),
        link_mass_scale=u(*config.link_mass_range, size=N_LINKS),
        friction=float(u(*config.friction_range)),
        kp_scale=u(*config.kp_scale_range, size=N_JOINTS),
        kd_scale=u(*config.kd_scale_range, size=N_JOINTS),
        torque_noise_scale=float(config.torque_noise_scale),
    )


@dataclass(frozen=True)
class PushSchedule:
    """Pre-sampled horizontal velocity impulses for one episode."""

    times: np.ndarray      # (K,) seconds since episode start, ascending
    velocities: np.ndarray  # (K,) delta vx, m/s

    @classmethod
    def empty(cls) -> "PushSchedule":
        return cls(times=np.zeros(0), velocities=np.zeros(0))

    @classmethod
    def sample(
        cls,
        rng: np.random.Generator,
        duration: float,
        config: DomainRandomizationConfig | None = None,
    ) -> "PushSchedule":
        config = config or DomainRandomizationConfig()
        if config.push_max_velocity <= 0:
            return cls.empty()
        lo, hi = config.push_interval_range
        times, t = [], 0.0
        while True:
            t += float(rng.uniform(lo, hi))
            if t >= duration:
                break
            times.append(t)
        if not times:
            return cls.empty()
        vels = rng.uniform(-config.push_max_velocity, config.push_max_velocity, size=len(times))
        return cls(times=np.array(times), velocities=np.asarray(vels, dtype=float))

    @property
    def next_push_time(self) -> float:
        return float(self.times[0]) if self.times.size else float("inf")

    def impulse_between(self, t0: float, t1: float) -> float:
        """Sum of delta-vx for events with t0 <= t < t1."""
        mask = (self.times >= t0) & (self.times < t1)
        return float(self.velocities[mask].sum())


@dataclass
class PushBatch:
    """Padded per-environment push schedules, queryable in one shot."""

    times: np.ndarray       # (N, K), padded with +inf
    velocities: np.ndarray  # (N, K)

    @classmethod
    def from_schedules(cls, schedules: list[PushSchedule]) -> "PushBatch":
        k = max((s.times.size for s in schedules), default=0)
        k = max(k, 1)
        n = len(schedules)
        times = np.full((n, k), np.inf)
        vels = np.zeros((n, k))
        for i, s in enumerate(schedules):
            times[i, : s.times.size] = s.times
            vels[i, : s.times.size] = s.velocities
        return cls(times=times, velocities=vels)

    def impulse_between(self, t0: np.ndarray, t1: np.ndarray) -> np.ndarray:
        mask = (self.times >= t0[:, None]) & (self.times < t1[:, None])
        return (self.velocities * mask).sum(axis=1)

    def set_from(self, i, other: "PushBatch", j) -> None:
        k = max(self.times.shape[1], other.times.shape[1])
        if k > self.times.shape[1]:  # grow padding to fit the incoming rows
            pad = k - self.times.shape[1]
            self.times = np.pad(self.times, ((0, 0), (0, pad)), constant_values=np.inf)
            self.velocities = np.pad(self.velocities, ((0, 0), (0, pad)))
        rows_t = np.full((np.size(i), k), np.inf)
        rows_v = np.zeros((np.size(i), k))
        rows_t[:, : other.times.shape[1]] = other.times[j]
        rows_v[:, : other.times.shape[1]] = other.velocities[j]
        self.times[i] = rows_t
        self.velocities[i] = rows_v


@dataclass
class DomainBatch:
    """Stacked DomainParams plus the derived per-env dynamic constants."""

    com_offset: np.ndarray         # (N,)
    link_mass: np.ndarray          # (N, 7) scaled masses
    total_mass: np.ndarray         # (N,)
    friction: np.ndarray           # (N,)
    kp: np.ndarray                 # (N, 6) scaled gains
    kd: np.ndarray                 # (N, 6)
    torque_noise_mag: np.ndarray   # (N, 6) absolute magnitude
    joint_inertia: np.ndarray      # (N, 6) effective inertia incl. armature
    body_inertia: np.ndarray       # (N,) whole body about the rest total CoM

    @classmethod
    def build(cls, spec: EmbodimentSpec, params: list[DomainParams]) -> "DomainBatch":
        n = len(params)
        mass_scale = np.stack([p.link_mass_scale for p in params]).astype(float)
        com_offset = np.array([p.com_offset for p in params], dtype=float)
        link_mass = spec.link_masses[None, :] * mass_scale

        # rest-pose distances from each joint anchor to each distal link CoM
        rest = np.zeros((1, POSE_DIM))
        rest[0, 1] = spec.rest_hip_height()
        kin = pose_kinematics(spec, rest)
        anchors = kin.joint_anchor[0]          # (6, 2)
        coms = kin.link_com[0]                 # (7, 2)
        inertia = spec.link_inertias

        joint_inertia = np.zeros((n, N_JOINTS))
        for j in range(N_JOINTS):
            for l in _DISTAL_LINKS[j]:
                d2 = float(np.sum((coms[l] - anchors[j]) ** 2))
                joint_inertia[:, j] += mass_scale[:, l] * (inertia[l] + spec.link_masses[l] * d2)
        joint_inertia += spec.armature[None, :]

        # whole-body rotational inertia about the rest-pose total CoM, used by
        # the rigid-body pitch equation
        com_link = np.broadcast_to(coms[None, :, :], (n, N_LINKS, 2)).copy()
        com_link[:, 0, 0] += com_offset  # domain CoM shift, torso-forward at rest
        com_tot = (link_mass[..., None] * com_link).sum(axis=1) / link_mass.sum(axis=1)[:, None]
        d2 = np.sum((com_link - com_tot[:, None, :]) ** 2, axis=-1)
        body_inertia = (mass_scale * inertia[None, :] + link_mass * d2).sum(axis=1)

        return cls(
            com_offset=com_offset,
            link_mass=link_mass,
            total_mass=link_mass.sum(axis=1),
            friction=np.array([p.friction for p in params], dtype=float),
            kp=spec.kp[None, :] * np.stack([p.kp_scale for p in params]),
            kd=spec.kd[None, :] * np.stack([p.kd_scale for p in params]),
            torque_noise_mag=spec.torque_limits[None, :]
            * np.array([p.torque_noise_scale for p in params], dtype=float)[:, None],
            joint_inertia=joint_inertia,
            body_inertia=body_inertia,
        )

    @classmethod
    def nominal(cls, spec: EmbodimentSpec, n: int) -> "DomainBatch":
        return cls.build(spec, [DomainParams.nominal()] * n)

    def set_from(self, i, other: "DomainBatch", j) -> None:
        for name in (
            "com_offset", "link_mass", "total_mass", "friction", "kp", "kd",
            "torque_noise_mag", "joint_inertia", "body_inertia",
        ):
            getattr(self, name)[i] = getattr(other, name)[j]


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------


def _contact_forces(spec, dom, kin):
    """Spring-damper normal force and Coulomb-clamped tangential force.

    Returns (forces (N, 4, 2), active (N, 4))."""
    pos = kin.contact_pos
    vel = kin.contact_vel
    pen = -pos[..., 1]
    active = pen > 0.0
    fz = np.maximum(0.0, spec.contact.stiffness * pen - spec.contact.damping * vel[..., 1])
    fz = np.where(active, fz, 0.0)
    ft_max = spec.contact.friction * dom.friction[:, None] * fz
    fx = np.clip(-spec.contact.tangential_damping * vel[..., 0], -ft_max, ft_max)
    fx = np.where(active, fx, 0.0)
    return np.stack([fx, fz], axis=-1), active


def _pd_torque(spec, dom, q, dq, action, torque_noise):
    tau = dom.kp * (action - q) - dom.kd * dq
    if torque_noise is not None:
        tau = tau + torque_noise
    lim = spec.torque_limits[None, :]
    return np.clip(tau, -lim, lim)


@dataclass
class StepInfo:
    """Optional per-control-step diagnostics filled in by step_batch."""

    mean_abs_torque: np.ndarray | None = None   # (N, 6), mean over substeps


def step_batch(
    batch: SimBatch,
    actions: np.ndarray,
    dom: DomainBatch,
    spec: EmbodimentSpec | None = None,
    torque_noise: np.ndarray | None = None,
    push_dv: np.ndarray | None = None,
    info: StepInfo | None = None,
) -> SimBatch:
    """Advance every environment one control step (`decimation` substeps).

    `torque_noise` (N, 6) is held constant across the substeps; `push_dv`
    (N,) is added to the horizontal base velocity before integrating.
    """
    spec = spec or default_embodiment()
    actions = np.asarray(actions, dtype=float)
    out = batch.copy()
    if push_dv is not None:
        out.base_vel[:, 0] += push_dv

    dt = spec.sim_dt
    g = spec.gravity
    lo, hi = spec.joint_lower[None, :], spec.joint_upper[None, :]
    vlim = spec.vel_limits[None, :]
    mass = dom.link_mass
    active = np.zeros((out.n, 4), dtype=bool)
    tau_abs_sum = np.zeros((out.n, N_JOINTS))

    for _ in range(spec.decimation):
        kin = kinematics(
            spec, out.base_pos, out.base_pitch, out.q,
            base_vel=out.base_vel, base_angvel=out.base_angvel, dq=out.dq,
            com_offset=dom.com_offset,
        )
        forces, active = _contact_forces(spec, dom, kin)
        tau_pd = _pd_torque(spec, dom, out.q, out.dq, actions, torque_noise)
        tau_abs_sum += np.abs(tau_pd)

        # gravity torque about each joint from its distal links
        tau = tau_pd.copy()
        for j in range(N_JOINTS):
            for l in _DISTAL_LINKS[j]:
                rx = kin.link_com[:, l, 0] - kin.joint_anchor[:, j, 0]
                tau[:, j] -= mass[:, l] * g * rx
        # normal-force contact torque about each joint on the same leg
        for c, joints in enumerate(_CONTACT_JOINTS):
            r = kin.contact_pos[:, c, :][:, None, :] - kin.joint_anchor[:, joints, :]
            tau[:, joints] += r[..., 0] * forces[:, c, 1][:, None]

        ddq = tau / dom.joint_inertia

        # base pitch as rigid-body tipping: normal-force torque about the
        # total CoM (gravity contributes none about the CoM, so flight
        # conserves pitch rate)
        com_tot = (mass[..., None] * kin.link_com).sum(axis=1) / dom.total_mass[:, None]
        r_c = kin.contact_pos - com_tot[:, None, :]
        tau_base = (r_c[..., 0] * forces[..., 1]).sum(axis=1)
        domega = tau_base / dom.body_inertia

        # base translation: total contact force over total mass, plus gravity
        acc = forces.sum(axis=1) / dom.total_mass[:, None]
        acc[:, 1] -= g

        # semi-implicit Euler with limit handling
        out.dq = np.clip(out.dq + ddq * dt, -vlim, vlim)
        out.q = out.q + out.dq * dt
        at_lo = out.q < lo
        at_hi = out.q > hi
        out.q = np.clip(out.q, lo, hi)
        out.dq = np.where(at_lo & (out.dq < 0), 0.0, out.dq)
        out.dq = np.where(at_hi & (out.dq > 0), 0.0, out.dq)

        out.base_angvel = out.base_angvel + domega * dt
        out.base_pitch = out.base_pitch + out.base_angvel * dt
        out.base_vel = out.base_vel + acc * dt
        out.base_pos = out.base_pos + out.base_vel * dt
        out.time = out.time + dt

    out.foot_contact = np.stack([active[:, 0] | active[:, 1], active[:, 2] | active[:, 3]], axis=1)
    out.prev_action = actions.copy()
    if info is not None:
        info.mean_abs_torque = tau_abs_sum / spec.decimation

    finite = (
        np.isfinite(out.q).all(axis=1)
        & np.isfinite(out.dq).all(axis=1)
        & np.isfinite(out.base_pos).all(axis=1)
        & np.isfinite(out.base_vel).all(axis=1)
        & np.isfinite(out.base_pitch)
        & np.isfinite(out.base_angvel)
    )
    if not finite.all():
        bad = np.flatnonzero(~finite)
        raise SimulationError(
            f"non-finite state after step in environment(s) {bad.tolist()} "
            f"at t={out.time[bad[0]]:.3f}s"
        )
    return out


def step(
    state: SimState,
    action: np.ndarray,
    domain: DomainParams | None = None,
    pushes: PushSchedule | None = None,
    spec: EmbodimentSpec | None = None,
    torque_noise: np.ndarray | None = None,
) -> SimState:
    """Single-environment control step; wraps `step_batch`."""
    spec = spec or default_embodiment()
    domain = domain or DomainParams.nominal()
    dv = None
    if pushes is not None:
        dv = np.array([pushes.impulse_between(state.time, state.time + spec.control_dt)])
    batch = SimBatch.from_states([state])
    dom = DomainBatch.build(spec, [domain])
    noise = None if torque_noise is None else np.asarray(torque_noise, dtype=float)[None, :]
    return step_batch(
        batch, np.asarray(action, dtype=float)[None, :], dom, spec,
        torque_noise=noise, push_dv=dv,
    ).state(0)


# ---------------------------------------------------------------------------
# resets and termination
# ---------------------------------------------------------------------------


def reset_batch_from_poses(
    poses: np.ndarray,
    velocities: np.ndarray,
    spec: EmbodimentSpec | None = None,
) -> SimBatch:
    """Build a batch from (N, 9) poses and (N, 9) pose-rate vectors."""
    spec = spec or default_embodiment()
    poses = np.asarray(poses, dtype=float)
    velocities = np.asarray(velocities, dtype=float)
    n = poses.shape[0]
    batch = SimBatch(
        base_pos=poses[:, 0:2].copy(), base_pitch=poses[:, 2].copy(),
        base_vel=velocities[:, 0:2].copy(), base_angvel=velocities[:, 2].copy(),
        q=poses[:, 3:9].copy(), dq=velocities[:, 3:9].copy(),
        prev_action=poses[:, 3:9].copy(),
        foot_contact=np.zeros((n, 2), dtype=bool), time=np.zeros(n),
    )
    contact = pose_kinematics(spec, poses).contact_pos[..., 1] <= 0.0
    batch.foot_contact = np.stack(
        [contact[:, 0] | contact[:, 1], contact[:, 2] | contact[:, 3]], axis=1
    )
    return batch


def reset_from_reference(
    clip,
    frame: int,
    domain: DomainParams | None = None,
    spec: EmbodimentSpec | None = None,
) -> SimState:
    """Initialize the state from a reference clip frame (RSI).

    Pose and velocities are copied from the clip (velocities are the clip's
    finite-difference rates); contact flags are recomputed; time starts at 0.
    The domain draw does not alter the initial state but is accepted so call
    sites can treat reset and randomization as one event.
    """
    del domain
    batch = reset_batch_from_poses(
        clip.frames[frame][None, :], clip.frame_velocities[frame][None, :], spec
    )
    return batch.state(0)


def tracking_error_batch(
    batch: SimBatch, ref_poses: np.ndarray, spec: EmbodimentSpec | None = None
) -> np.ndarray:
    """Mean keypoint distance (N,) between the live batch and reference poses."""
    spec = spec or default_embodiment()
    kps = keypoints_batch(batch, spec)
    ref = keypoints_of_pose(spec, np.asarray(ref_poses, dtype=float))
    return np.linalg.norm(kps - ref, axis=-1).mean(axis=-1)


def check_termination(
    state: SimState,
    ref_pose: np.ndarray,
    tolerance: float = 0.25,
    spec: EmbodimentSpec | None = None,
) -> bool:
    """True when the mean keypoint distance to the reference exceeds tolerance."""
    err = tracking_error_batch(
        SimBatch.from_states([state]), np.asarray(ref_pose, dtype=float)[None, :], spec
    )[0]
    return bool(err > tolerance)
