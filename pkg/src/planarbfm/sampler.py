"""Clip sampling for reference state initialization, with hard negative
mining (failed clips get sampled more) and plateau-based filtering of
clips that stay unlearnable after progress has stalled.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .motions import MotionClip

MINING_FAIL_FACTOR = 1.5
MINING_SUCCESS_FACTOR = 0.9
MINING_CLAMP = (0.1, 10.0)        # relative to the initial weight
OUTCOME_WINDOW = 20               # per-clip ring buffer of recent outcomes


@dataclass
class ClipEntry:
    clip: MotionClip
    weight: float
    initial_weight: float
    active: bool = True
    outcomes: deque = field(default_factory=lambda: deque(maxlen=OUTCOME_WINDOW))

    @property
    def success_rate(self) -> float | None:
        if not self.outcomes:
            return None
        return float(np.mean(self.outcomes))


@dataclass
class MotionSampler:
    """Weighted clip sampler; weights drift with per-episode outcomes."""

    entries: dict[str, ClipEntry]
    min_horizon: int = 50         # frames kept free after the start frame
    success_history: list[float] = field(default_factory=list)

    @classmethod
    def from_clips(
        cls,
        clips: list[MotionClip],
        weights: dict[str, float] | None = None,
        min_horizon: int = 50,
    ) -> "MotionSampler":
        entries = {}
        for clip in clips:
            if clip.name in entries:
                raise ValueError(f"duplicate clip name {clip.name!r}")
            w = float(weights.get(clip.name, 1.0)) if weights else 1.0
            if w <= 0:
                raise ValueError(f"clip {clip.name!r}: weight must be positive")
            entries[clip.name] = ClipEntry(clip=clip, weight=w, initial_weight=w)
        if not entries:
            raise ValueError("need at least one clip")
        return cls(entries=entries, min_horizon=min_horizon)

    @property
    def active_names(self) -> list[str]:
        return [n for n, e in self.entries.items() if e.active]

    def sample(self, rng: np.random.Generator) -> tuple[MotionClip, int]:
        """Draw a clip (weight-proportional over active clips) and a uniform
        start frame leaving at least min_horizon frames of reference."""
        names = self.active_names
        if not names:
            raise ValueError("no active clips left to sample")
        w = np.array([self.entries[n].weight for n in names])
        name = names[rng.choice(len(names), p=w / w.sum())]
        clip = self.entries[name].clip
        hi = max(1, len(clip) - self.min_horizon)
        start = int(rng.integers(0, hi))
        return clip, start

    def update_mining(self, clip_name: str, success: bool) -> float:
        """Episode outcome: failures upweight the clip, successes decay it,
        clamped to [0.1, 10] x the initial weight.  Returns the new weight."""
        e = self.entries[clip_name]
        factor = MINING_SUCCESS_FACTOR if success else MINING_FAIL_FACTOR
        lo, hi = MINING_CLAMP
        e.weight = float(
            np.clip(e.weight * factor, lo * e.initial_weight, hi * e.initial_weight)
        )
        e.outcomes.append(1.0 if success else 0.0)
        return e.weight

    def record_global_success(self, rate: float) -> None:
        self.success_history.append(float(rate))

    def filter_plateaued(
        self,
        window: int = 5,
        min_delta: float = 0.01,
        fail_threshold: float = 0.2,
        min_outcomes: int | None = None,
    ) -> list[str]:
        """If global success has improved less than min_delta over the last
        `window` recorded evaluations, deactivate clips whose recent success
        rate sits below fail_threshold.  Returns the deactivated names.

        A clip is only judged once its outcome ring holds at least
        `min_outcomes` results (default: `window`), so a clip cannot be
        dropped before it has been failing across the whole plateau window.
        Clips with no recorded outcomes are never deactivated, and the last
        active clip is always kept so sampling stays possible.
        """
        if min_outcomes is None:
            min_outcomes = window
        h = self.success_history
        if len(h) < window or (h[-1] - h[-window]) >= min_delta:
            return []
        removed = []
        for name, e in self.entries.items():
            if not e.active:
                continue
            rate = e.success_rate
            if rate is not None and len(e.outcomes) >= min_outcomes and rate < fail_threshold:
                if len(self.active_names) <= 1:
                    break
                e.active = False
                removed.append(name)
        return removed
