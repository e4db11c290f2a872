"""Latent-space behavior arithmetic and structure analysis.

Three tools over the trained BFM's latent space:

- ``compose``: linear interpolation between two latents, used to blend the
  intentions expressed by two different goal/mask pairs;
- ``modulate``: classifier-free-guidance-style extrapolation
  ``z = (1 + λ)·μ_g − λ·μ_∅`` away from the unconditioned prior mean,
  strengthening goal adherence for λ > 0;
- ``collect_latents`` + ``project_2d``: roll out motion tracking recording
  the prior mean each step, then PCA-project the latent cloud to 2-D with
  explained-variance ratios.

The null condition ∅ is the all-zero mask with a zero goal vector: no goal
channel active.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .control import GOAL_DIM, MASK_DIM, apply_mask, build_goal_from_reference, preset_mask, real_proprio
from .cvae import BfmModel
from .embodiment import EmbodimentSpec, default_embodiment
from .motions import MotionClip
from .sim import DomainBatch, batch_kinematics, kinematics, reset_batch_from_poses, step_batch
from .control import ProprioHistory

__all__ = [
    "LatentTrace",
    "Projection",
    "collect_latents",
    "compose",
    "modulate",
    "null_latent",
    "project_2d",
    "projection_to_csv",
    "trace_to_csv",
]


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------
def compose(z_a: np.ndarray, z_b: np.ndarray, alpha: float) -> np.ndarray:
    """Linear interpolation (1 − α)·z_a + α·z_b."""
    z_a = np.asarray(z_a, dtype=float)
    z_b = np.asarray(z_b, dtype=float)
    if z_a.shape != z_b.shape:
        raise ValueError(f"latent shape mismatch: {z_a.shape} vs {z_b.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return (1.0 - alpha) * z_a + alpha * z_b


def null_latent(model: BfmModel, history: np.ndarray) -> np.ndarray:
    """Prior mean under the null condition ∅ (zero mask, zero goal)."""
    history = np.asarray(history, dtype=float)
    n = history.shape[0] if history.ndim == 2 else 1
    goal = np.zeros((n, GOAL_DIM))
    mask = np.zeros((n, MASK_DIM))
    masked = apply_mask(goal, mask)
    if history.ndim == 1:
        masked = masked[0]
    return model.prior(history, masked).mean


def modulate(
    model: BfmModel,
    history: np.ndarray,
    goal: np.ndarray,
    mask: np.ndarray,
    lam: float,
) -> np.ndarray:
    """Extrapolated latent z = (1 + λ)·μ_g − λ·μ_∅.

    λ = 0 returns the conditioned prior mean exactly; larger λ pushes the
    latent further from the unconditioned mean along the goal direction.
    """
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    mu_g = model.prior(history, apply_mask(goal, mask)).mean
    if lam == 0.0:
        return mu_g
    mu_null = null_latent(model, history)
    return (1.0 + lam) * mu_g - lam * mu_null


# ---------------------------------------------------------------------------
# latent collection
# ---------------------------------------------------------------------------
@dataclass
class LatentTrace:
    """Per-step prior means recorded along one tracking rollout."""

    clip: str
    mask_label: str
    mask: np.ndarray            # (17,)
    timesteps: np.ndarray       # (T,) control-step indices
    latents: np.ndarray         # (T, latent_dim)
    failed: bool                # rollout terminated before the clip ended

    def __len__(self) -> int:
        return len(self.timesteps)


def collect_latents(
    model: BfmModel,
    clip: MotionClip,
    mask: np.ndarray | None = None,
    mask_label: str = "TRACK",
    spec: EmbodimentSpec | None = None,
    tolerance: float = 0.25,
) -> LatentTrace:
    """Roll out deployment-path tracking, recording the prior mean each step.

    Deterministic: mean actions throughout, nominal dynamics.  If tracking
    error exceeds the tolerance the partial trace is returned with
    ``failed=True``.
    """
    spec = spec or default_embodiment()
    if mask is None:
        mask = preset_mask("TRACK")
    mask = np.asarray(mask, dtype=float)

    batch = reset_batch_from_poses(clip.frames[0][None], clip.frame_velocities[0][None], spec)
    dom = DomainBatch.nominal(spec, 1)
    history = ProprioHistory(1)
    history.reset(real_proprio(batch))

    latents: list[np.ndarray] = []
    steps: list[int] = []
    failed = False
    frame = 0
    while frame + 1 < len(clip.frames):
        ref_pose = clip.frames[frame + 1][None]
        ref_vel = clip.frame_velocities[frame + 1][None]
        ref_kin = kinematics(spec, ref_pose[:, 0:2], ref_pose[:, 2], ref_pose[:, 3:9])
        goal = build_goal_from_reference(spec, batch, ref_pose, ref_vel, ref_kin)

        hist = history.flat()
        p = model.prior(hist, apply_mask(goal, mask[None]))
        z = p.mean
        latents.append(z[0])
        steps.append(frame)

        action = model.decode(hist, z)
        batch = step_batch(batch, action, dom, spec)
        frame += 1
        history.push(real_proprio(batch))

        kin = batch_kinematics(batch, spec)
        err = np.linalg.norm(kin.keypoints - ref_kin.keypoints, axis=-1).mean()
        if err > tolerance:
            failed = True
            break

    return LatentTrace(
        clip=clip.name,
        mask_label=mask_label,
        mask=mask,
        timesteps=np.asarray(steps, dtype=np.int64),
        latents=np.asarray(latents, dtype=float),
        failed=failed,
    )


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------
@dataclass
class Projection:
    points: np.ndarray               # (N, 2)
    explained_variance: np.ndarray   # (2,) ratios in [0, 1]


def project_2d(latents: np.ndarray | list[LatentTrace]) -> Projection:
    """Top-2 PCA of a latent cloud, centered; reports variance ratios."""
    if isinstance(latents, list):
        if not latents:
            raise ValueError("need at least one trace")
        data = np.concatenate([t.latents for t in latents], axis=0)
    else:
        data = np.asarray(latents, dtype=float)
    if data.ndim != 2:
        raise ValueError(f"expected (n, dim) latents, got shape {data.shape}")
    if data.shape[0] < 3:
        raise ValueError(f"need >= 3 latents for a 2-D projection, got {data.shape[0]}")

    centered = data - data.mean(axis=0)
    total = float((centered ** 2).sum())
    if total == 0.0:
        raise ValueError("degenerate input: all latents identical")
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    points = centered @ vt[:2].T
    ratios = (s[:2] ** 2) / total
    return Projection(points=points, explained_variance=ratios)


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------
def trace_to_csv(trace: LatentTrace, path: str | Path) -> None:
    """Columns: clip, mask_label, timestep, z0..z{d-1}."""
    d = trace.latents.shape[1] if len(trace) else 0
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["clip", "mask_label", "timestep"] + [f"z{i}" for i in range(d)])
        for t, z in zip(trace.timesteps, trace.latents):
            writer.writerow([trace.clip, trace.mask_label, int(t)] + [repr(float(v)) for v in z])


def projection_to_csv(proj: Projection, path: str | Path,
                      labels: list[str] | None = None) -> None:
    """Columns: index, label, pc1, pc2 (header carries variance ratios)."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow([
            "index", "label",
            f"pc1 (evr={proj.explained_variance[0]:.6f})",
            f"pc2 (evr={proj.explained_variance[1]:.6f})",
        ])
        for i, (x, y) in enumerate(proj.points):
            label = labels[i] if labels is not None else ""
            writer.writerow([i, label, repr(float(x)), repr(float(y))])
