"""Running mean/std normalization (Welford) for observation streams.

Stats update during training rollouts and freeze for evaluation/deployment;
frozen stats are stored in checkpoints as plain arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CLIP_RANGE = 10.0


@dataclass
class RunningNorm:
    mean: np.ndarray
    m2: np.ndarray
    count: float = 0.0
    frozen: bool = False

    @classmethod
    def for_dim(cls, dim: int) -> "RunningNorm":
        return cls(mean=np.zeros(dim), m2=np.zeros(dim))

    @classmethod
    def identity(cls, dim: int) -> "RunningNorm":
        """A frozen no-op normalizer (mean 0, var 1)."""
        n = cls(mean=np.zeros(dim), m2=np.ones(dim), count=1.0, frozen=True)
        return n

    @property
    def var(self) -> np.ndarray:
        if self.count < 2:
            return np.ones_like(self.mean)
        return self.m2 / self.count

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.var + 1e-8)

    def update(self, batch: np.ndarray) -> None:
        """Fold a (N, dim) batch into the running stats (no-op when frozen)."""
        if self.frozen:
            return
        batch = np.asarray(batch, dtype=float)
        if batch.ndim == 1:
            batch = batch[None, :]
        n_b = batch.shape[0]
        mean_b = batch.mean(axis=0)
        m2_b = ((batch - mean_b) ** 2).sum(axis=0)
        if self.count == 0:
            self.mean, self.m2, self.count = mean_b, m2_b, float(n_b)
            return
        total = self.count + n_b
        delta = mean_b - self.mean
        self.mean = self.mean + delta * (n_b / total)
        self.m2 = self.m2 + m2_b + delta**2 * (self.count * n_b / total)
        self.count = total

    def normalize(self, x: np.ndarray) -> np.ndarray:
        out = (np.asarray(x) - self.mean) / self.std
        return np.clip(out, -CLIP_RANGE, CLIP_RANGE).astype(np.float32)

    def freeze(self) -> "RunningNorm":
        self.frozen = True
        return self

    def copy(self) -> "RunningNorm":
        return RunningNorm(self.mean.copy(), self.m2.copy(), self.count, self.frozen)

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Flat arrays for checkpoint storage."""
        return {
            "norm.mean": self.mean.astype(np.float32),
            "norm.m2": self.m2.astype(np.float32),
            "norm.count": np.array([self.count], dtype=np.float32),
        }

    @classmethod
    def from_state_arrays(cls, arrays: dict[str, np.ndarray]) -> "RunningNorm":
        return cls(
            mean=np.asarray(arrays["norm.mean"], dtype=float),
            m2=np.asarray(arrays["norm.m2"], dtype=float),
            count=float(np.asarray(arrays["norm.count"]).ravel()[0]),
            frozen=True,
        )
