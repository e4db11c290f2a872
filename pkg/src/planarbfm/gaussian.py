"""Diagonal Gaussians: reparameterized sampling, closed-form KL, log-density."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nets import ShapeError


@dataclass(frozen=True)
class DiagGaussian:
    """Mean and strictly positive std, elementwise.  1-D, or 2-D for a batch."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean)
        std = np.asarray(self.std)
        if mean.shape != std.shape:
            raise ShapeError(f"mean shape {mean.shape} != std shape {std.shape}")
        if not np.all(np.isfinite(mean)) or not np.all(np.isfinite(std)):
            raise ValueError("non-finite Gaussian parameters")
        if not np.all(std > 0.0):
            raise ValueError("std must be strictly positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]


def gaussian_sample(g: DiagGaussian, noise: np.ndarray) -> np.ndarray:
    """mean + std * noise; gradients flow through both mean and std."""
    noise = np.asarray(noise)
    if noise.shape[-1] != g.dim:
        raise ShapeError(f"noise dim {noise.shape[-1]} != gaussian dim {g.dim}")
    return g.mean + g.std * noise


def gaussian_kl(q: DiagGaussian, p: DiagGaussian) -> np.ndarray:
    """KL(q || p) summed over dimensions; per-row for batched inputs."""
    if q.dim != p.dim:
        raise ShapeError(f"dimension mismatch: {q.dim} vs {p.dim}")
    var_p = p.std * p.std
    t = np.log(p.std) - np.log(q.std) + (q.std * q.std + (q.mean - p.mean) ** 2) / (2.0 * var_p) - 0.5
    return t.sum(axis=-1)


def gaussian_kl_grads(q: DiagGaussian, p: DiagGaussian):
    """Partials of gaussian_kl w.r.t. (q.mean, q.std, p.mean, p.std)."""
    var_p = p.std * p.std
    dmean_q = (q.mean - p.mean) / var_p
    dstd_q = -1.0 / q.std + q.std / var_p
    dmean_p = -dmean_q
    dstd_p = 1.0 / p.std - (q.std * q.std + (q.mean - p.mean) ** 2) / (var_p * p.std)
    return dmean_q, dstd_q, dmean_p, dstd_p


def gaussian_log_prob(g: DiagGaussian, x: np.ndarray) -> np.ndarray:
    """Log density, summed over dimensions; per-row for batched inputs."""
    x = np.asarray(x)
    if x.shape[-1] != g.dim:
        raise ShapeError(f"x dim {x.shape[-1]} != gaussian dim {g.dim}")
    z = (x - g.mean) / g.std
    per_dim = -0.5 * z * z - np.log(g.std) - 0.5 * np.log(2.0 * np.pi)
    return per_dim.sum(axis=-1)


def gaussian_entropy(g: DiagGaussian) -> np.ndarray:
    per_dim = 0.5 * (1.0 + np.log(2.0 * np.pi)) + np.log(g.std)
    return per_dim.sum(axis=-1)
