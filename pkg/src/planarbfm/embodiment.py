"""Planar 7-link humanoid description ("P7") and its derived constants.

Geometry conventions (x right, z up, angles counter-clockwise):
  * the base origin sits at the shared hip point; base pitch 0 means torso
    vertical;
  * joint angle 0 per leg means thigh and shin straight down, foot flat;
  * the foot link spans heel to toe with the ankle at mid-span.  (An off-center
    ankle is unstable under the diagonal-inertia approximation: the flat-foot
    load imbalance spins the lightweight foot toe-up instead of being carried
    by the body, collapsing support onto the heels.)

Link order:  torso, thigh_l, shin_l, foot_l, thigh_r, shin_r, foot_r.
Joint order: hip_l, knee_l, ankle_l, hip_r, knee_r, ankle_r.
Keypoint order (published and stable):
  torso_top, hip, knee_l, ankle_l, toe_l, knee_r, ankle_r.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

LINK_NAMES = ("torso", "thigh_l", "shin_l", "foot_l", "thigh_r", "shin_r", "foot_r")
JOINT_NAMES = ("hip_l", "knee_l", "ankle_l", "hip_r", "knee_r", "ankle_r")
KEYPOINT_NAMES = ("torso_top", "hip", "knee_l", "ankle_l", "toe_l", "knee_r", "ankle_r")

N_LINKS = len(LINK_NAMES)
N_JOINTS = len(JOINT_NAMES)
N_KEYPOINTS = len(KEYPOINT_NAMES)

# fraction of the foot span behind the ankle
FOOT_HEEL_FRACTION = 0.5


class EmbodimentError(ValueError):
    pass


@dataclass(frozen=True)
class LinkSpec:
    length: float
    mass: float
    inertia: float  # about the link CoM, kg m^2

    def validate(self, name: str) -> None:
        if self.length <= 0 or self.mass <= 0 or self.inertia <= 0:
            raise EmbodimentError(f"link {name!r}: length/mass/inertia must be positive")


@dataclass(frozen=True)
class JointSpec:
    lower: float
    upper: float
    vel_limit: float
    torque_limit: float
    kp: float
    kd: float
    armature: float = 0.02  # reflected actuator inertia, kg m^2

    def validate(self, name: str) -> None:
        if self.lower >= self.upper:
            raise EmbodimentError(f"joint {name!r}: lower limit must be below upper")
        if self.vel_limit <= 0 or self.torque_limit <= 0:
            raise EmbodimentError(f"joint {name!r}: velocity/torque limits must be positive")
        if self.kp < 0 or self.kd < 0:
            raise EmbodimentError(f"joint {name!r}: gains must be non-negative")


@dataclass(frozen=True)
class ContactParams:
    stiffness: float = 2.0e4      # N/m, vertical spring
    damping: float = 200.0        # N s/m, vertical
    tangential_damping: float = 1500.0  # N s/m, Coulomb-clamped
    friction: float = 1.0         # nominal coefficient; randomized per episode


@dataclass(frozen=True)
class EmbodimentSpec:
    links: tuple[LinkSpec, ...]
    joints: tuple[JointSpec, ...]
    contact: ContactParams = ContactParams()
    gravity: float = 9.81
    sim_dt: float = 1.0 / 200.0
    decimation: int = 4

    def __post_init__(self):
        if len(self.links) != N_LINKS:
            raise EmbodimentError(f"need {N_LINKS} links, got {len(self.links)}")
        if len(self.joints) != N_JOINTS:
            raise EmbodimentError(f"need {N_JOINTS} joints, got {len(self.joints)}")
        for name, link in zip(LINK_NAMES, self.links):
            link.validate(name)
        for name, joint in zip(JOINT_NAMES, self.joints):
            joint.validate(name)
        if self.sim_dt <= 0 or self.decimation < 1:
            raise EmbodimentError("sim_dt must be positive and decimation >= 1")

    # -- convenience views -------------------------------------------------

    @property
    def control_dt(self) -> float:
        return self.sim_dt * self.decimation

    def link(self, name: str) -> LinkSpec:
        return self.links[LINK_NAMES.index(name)]

    def joint(self, name: str) -> JointSpec:
        return self.joints[JOINT_NAMES.index(name)]

    @property
    def link_masses(self) -> np.ndarray:
        return np.array([l.mass for l in self.links])

    @property
    def link_inertias(self) -> np.ndarray:
        return np.array([l.inertia for l in self.links])

    @property
    def total_mass(self) -> float:
        return float(self.link_masses.sum())

    @property
    def joint_lower(self) -> np.ndarray:
        return np.array([j.lower for j in self.joints])

    @property
    def joint_upper(self) -> np.ndarray:
        return np.array([j.upper for j in self.joints])

    @property
    def vel_limits(self) -> np.ndarray:
        return np.array([j.vel_limit for j in self.joints])

    @property
    def torque_limits(self) -> np.ndarray:
        return np.array([j.torque_limit for j in self.joints])

    @property
    def kp(self) -> np.ndarray:
        return np.array([j.kp for j in self.joints])

    @property
    def kd(self) -> np.ndarray:
        return np.array([j.kd for j in self.joints])

    @property
    def armature(self) -> np.ndarray:
        return np.array([j.armature for j in self.joints])

    @property
    def leg_length(self) -> float:
        return self.link("thigh_l").length + self.link("shin_l").length

    def rest_hip_height(self) -> float:
        """Hip height with straight legs and flat feet on the ground."""
        return self.leg_length

    # -- identity ----------------------------------------------------------

    def canonical_dict(self) -> dict:
        return {
            "links": {
                name: {"length": l.length, "mass": l.mass, "inertia": l.inertia}
                for name, l in zip(LINK_NAMES, self.links)
            },
            "joints": {
                name: {
                    "lower": j.lower, "upper": j.upper, "vel_limit": j.vel_limit,
                    "torque_limit": j.torque_limit, "kp": j.kp, "kd": j.kd,
                    "armature": j.armature,
                }
                for name, j in zip(JOINT_NAMES, self.joints)
            },
            "contact": {
                "stiffness": self.contact.stiffness,
                "damping": self.contact.damping,
                "tangential_damping": self.contact.tangential_damping,
                "friction": self.contact.friction,
            },
            "gravity": self.gravity,
            "sim_dt": self.sim_dt,
            "decimation": self.decimation,
        }

    def hash(self) -> str:
        blob = json.dumps(self.canonical_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def default_embodiment() -> EmbodimentSpec:
    def rod_inertia(mass, length):
        return mass * length * length / 12.0

    links = (
        LinkSpec(0.50, 6.0, rod_inertia(6.0, 0.50)),   # torso
        LinkSpec(0.25, 1.2, rod_inertia(1.2, 0.25)),   # thigh_l
        LinkSpec(0.25, 0.8, rod_inertia(0.8, 0.25)),   # shin_l
        LinkSpec(0.12, 0.3, rod_inertia(0.3, 0.12)),   # foot_l
        LinkSpec(0.25, 1.2, rod_inertia(1.2, 0.25)),   # thigh_r
        LinkSpec(0.25, 0.8, rod_inertia(0.8, 0.25)),   # shin_r
        LinkSpec(0.12, 0.3, rod_inertia(0.3, 0.12)),   # foot_r
    )
    hip = JointSpec(lower=-2.0, upper=2.0, vel_limit=20.0, torque_limit=60.0, kp=100.0, kd=3.0)
    knee = JointSpec(lower=-2.4, upper=0.05, vel_limit=20.0, torque_limit=60.0, kp=100.0, kd=3.0)
    ankle = JointSpec(lower=-1.0, upper=1.0, vel_limit=20.0, torque_limit=30.0, kp=40.0, kd=1.5)
    return EmbodimentSpec(links=links, joints=(hip, knee, ankle, hip, knee, ankle))


_LINK_FIELDS = ("length", "mass", "inertia")
_JOINT_FIELDS = ("lower", "upper", "vel_limit", "torque_limit", "kp", "kd", "armature")
_CONTACT_FIELDS = ("stiffness", "damping", "tangential_damping", "friction")


def embodiment_from_config(values: dict) -> EmbodimentSpec:
    """Apply dotted-key overrides (e.g. ``env.link.torso.mass``) to the default.

    `values` holds the nested mapping under the ``env`` prefix.
    """
    spec = default_embodiment()
    links = list(spec.links)
    joints = list(spec.joints)
    contact = spec.contact
    scalars: dict = {}

    for key, sub in values.items():
        if key == "link":
            for name, overrides in sub.items():
                if name not in LINK_NAMES:
                    raise EmbodimentError(f"unknown link {name!r}")
                idx = LINK_NAMES.index(name)
                bad = set(overrides) - set(_LINK_FIELDS)
                if bad:
                    raise EmbodimentError(f"unknown link field(s) {sorted(bad)} for {name!r}")
                links[idx] = replace(links[idx], **{k: float(v) for k, v in overrides.items()})
        elif key == "joint":
            for name, overrides in sub.items():
                if name not in JOINT_NAMES:
                    raise EmbodimentError(f"unknown joint {name!r}")
                idx = JOINT_NAMES.index(name)
                bad = set(overrides) - set(_JOINT_FIELDS)
                if bad:
                    raise EmbodimentError(f"unknown joint field(s) {sorted(bad)} for {name!r}")
                joints[idx] = replace(joints[idx], **{k: float(v) for k, v in overrides.items()})
        elif key == "contact":
            bad = set(sub) - set(_CONTACT_FIELDS)
            if bad:
                raise EmbodimentError(f"unknown contact field(s) {sorted(bad)}")
            contact = replace(contact, **{k: float(v) for k, v in sub.items()})
        elif key in ("gravity", "sim_dt", "decimation"):
            scalars[key] = int(sub) if key == "decimation" else float(sub)
        else:
            raise EmbodimentError(f"unknown embodiment key {key!r}")

    return EmbodimentSpec(links=tuple(links), joints=tuple(joints), contact=contact, **scalars)
