"""The CVAE student: prior, residual encoder, fixed-variance decoder.

Three MLPs over one latent space (dim 32):

- **prior** ``ρ(history 525 ⊕ masked goal 43) -> N(μ_ρ, σ_ρ)`` — the
  deployable half: it sees only signals available on a real robot.
- **encoder** ``ε(privileged obs 87 ⊕ mask 17) -> N(μ_ρ + Δμ, σ_ε)`` — the
  training-time posterior; its mean is a *residual* on the prior mean so the
  KL term only has to explain what privileged state adds.
- **decoder** ``D(history 525 ⊕ z 32) -> action 6`` with fixed output std —
  deliberately blind to the goal, so every behavioral bit must flow through z.

The mask bits ride along on both the prior and encoder inputs: with
multiply-only masking, "inactive" and "genuinely zero" goal entries would
otherwise be indistinguishable.

Histories are stored raw and normalized per 21-float step by the model's
running normalizer at the network boundary; goal and mask entries pass
through unnormalized (they are bounded by construction).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .control import GOAL_DIM, HISTORY_DIM, HISTORY_STEP_DIM, MASK_DIM, MASKED_GOAL_DIM, apply_mask
from .gaussian import DiagGaussian, gaussian_kl, gaussian_kl_grads
from .nets import (
    MlpSpec,
    ParamStore,
    init_mlp_params,
    merge_stores,
    mlp_backward_from_cache,
    mlp_forward,
    mlp_forward_cached,
)
from .normalization import RunningNorm
from .obs import PROXY_OBS_DIM

__all__ = [
    "LATENT_DIM",
    "LOG_STD_RANGE",
    "BfmSpec",
    "BfmModel",
    "init_bfm",
    "prior",
    "encode",
    "decode",
    "act_deploy",
    "dagger_loss",
    "dagger_loss_and_grads",
]

LATENT_DIM = 32
LOG_STD_RANGE = (-5.0, 2.0)


@dataclass(frozen=True)
class BfmSpec:
    """Architecture of the three heads; dims must agree across them."""

    latent_dim: int = LATENT_DIM
    hidden: tuple[int, ...] = (256, 256, 256)
    activation: str = "elu"
    sigma_fixed: float = 0.1
    history_dim: int = HISTORY_DIM
    masked_goal_dim: int = MASKED_GOAL_DIM
    priv_obs_dim: int = PROXY_OBS_DIM
    mask_dim: int = MASK_DIM

    def __post_init__(self):
        if self.sigma_fixed <= 0:
            raise ValueError(f"sigma_fixed must be positive, got {self.sigma_fixed}")

    @property
    def prior_in(self) -> int:
        return self.history_dim + self.masked_goal_dim

    @property
    def encoder_in(self) -> int:
        return self.priv_obs_dim + self.mask_dim

    @property
    def decoder_in(self) -> int:
        return self.history_dim + self.latent_dim

    @property
    def prior_spec(self) -> MlpSpec:
        return MlpSpec((self.prior_in, *self.hidden, 2 * self.latent_dim), self.activation)

    @property
    def encoder_spec(self) -> MlpSpec:
        return MlpSpec((self.encoder_in, *self.hidden, 2 * self.latent_dim), self.activation)

    @property
    def decoder_spec(self) -> MlpSpec:
        return MlpSpec((self.decoder_in, *self.hidden, 6), self.activation)


def init_bfm(spec: BfmSpec, rng: np.random.Generator, dtype=np.float32) -> ParamStore:
    """All three nets in one store under prefixes prior./enc./dec.

    Output layers start small so the initial prior is near N(0, 1), the
    encoder residual near zero (KL ≈ 0), and actions near neutral.
    """
    return merge_stores(
        init_mlp_params(spec.prior_spec, rng, dtype, output_gain=0.01, prefix="prior."),
        init_mlp_params(spec.encoder_spec, rng, dtype, output_gain=0.01, prefix="enc."),
        init_mlp_params(spec.decoder_spec, rng, dtype, output_gain=0.01, prefix="dec."),
    )


def _split_heads(out: np.ndarray, latent_dim: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(mean, std, clamp mask) from a 2·latent network output."""
    mean = out[..., :latent_dim]
    log_std = np.clip(out[..., latent_dim:], *LOG_STD_RANGE)
    active = (out[..., latent_dim:] > LOG_STD_RANGE[0]) & (out[..., latent_dim:] < LOG_STD_RANGE[1])
    return mean, np.exp(log_std), active


# ---------------------------------------------------------------------------
# heads (pure functions over raw network inputs)
# ---------------------------------------------------------------------------
def prior(spec: BfmSpec, params: ParamStore, history: np.ndarray, masked_goal: np.ndarray) -> DiagGaussian:
    """P(z | deployable state): Gaussian over the latent."""
    x = np.concatenate([history, masked_goal], axis=-1)
    out = mlp_forward(spec.prior_spec, params, x, prefix="prior.")
    mean, std, _ = _split_heads(out, spec.latent_dim)
    return DiagGaussian(mean, std)


def encode(
    spec: BfmSpec,
    params: ParamStore,
    priv_obs: np.ndarray,
    mask: np.ndarray,
    prior_dist: DiagGaussian,
) -> DiagGaussian:
    """Q(z | privileged state): mean residual to the prior, own std."""
    x = np.concatenate([priv_obs, mask], axis=-1)
    out = mlp_forward(spec.encoder_spec, params, x, prefix="enc.")
    res, std, _ = _split_heads(out, spec.latent_dim)
    return DiagGaussian(prior_dist.mean + res, std)


def decode(spec: BfmSpec, params: ParamStore, history: np.ndarray, z: np.ndarray) -> np.ndarray:
    """μ^D: mean action (PD joint targets); the goal is deliberately absent."""
    x = np.concatenate([history, z], axis=-1)
    return mlp_forward(spec.decoder_spec, params, x, prefix="dec.")


def act_deploy(
    spec: BfmSpec,
    params: ParamStore,
    history: np.ndarray,
    goal: np.ndarray,
    mask: np.ndarray,
    mode: str = "mean",
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Deployment path: goal+mask -> prior -> z -> action.

    Privileged state has no parameter here by construction.
    """
    p = prior(spec, params, history, apply_mask(goal, mask))
    if mode == "mean":
        z = p.mean
    elif mode == "sample":
        if rng is None:
            raise ValueError("mode='sample' requires an rng")
        z = p.mean + p.std * rng.standard_normal(p.mean.shape)
    else:
        raise ValueError(f"unknown act mode {mode!r}; expected 'mean' or 'sample'")
    return decode(spec, params, history, z)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------
def dagger_loss(
    teacher_action: np.ndarray,
    student_action: np.ndarray,
    q: DiagGaussian,
    p: DiagGaussian,
    lam_kl: float,
) -> tuple[float, dict[str, float]]:
    """Batch-mean squared L2 action error plus λ_KL · KL(q ‖ p)."""
    err = np.asarray(student_action, dtype=float) - np.asarray(teacher_action, dtype=float)
    rec = float((err * err).sum(axis=-1).mean())
    kl = float(gaussian_kl(q, p).mean())
    return rec + lam_kl * kl, {"dagger": rec, "kl": kl}


def dagger_loss_and_grads(
    spec: BfmSpec,
    params: ParamStore,
    history: np.ndarray,
    masked_goal: np.ndarray,
    priv_obs: np.ndarray,
    mask: np.ndarray,
    teacher_actions: np.ndarray,
    z_noise: np.ndarray,
    lam_kl: float,
) -> tuple[float, dict[str, float], ParamStore]:
    """One supervised step through all three nets with exact gradients.

    The decoder is driven by the reparameterized posterior sample
    ``z = μ_q + σ_q ⊙ z_noise`` so reconstruction gradients flow into both
    the encoder and (through the residual mean) the prior.
    """
    b = history.shape[0]
    ld = spec.latent_dim

    prior_x = np.concatenate([history, masked_goal], axis=-1)
    prior_out, prior_acts = mlp_forward_cached(spec.prior_spec, params, prior_x, prefix="prior.")
    mu_p, std_p, act_p = _split_heads(prior_out, ld)
    p = DiagGaussian(mu_p, std_p)

    enc_x = np.concatenate([priv_obs, mask], axis=-1)
    enc_out, enc_acts = mlp_forward_cached(spec.encoder_spec, params, enc_x, prefix="enc.")
    res, std_q, act_q = _split_heads(enc_out, ld)
    mu_q = mu_p + res
    q = DiagGaussian(mu_q, std_q)

    z = mu_q + std_q * z_noise
    dec_x = np.concatenate([history, z], axis=-1)
    actions, dec_acts = mlp_forward_cached(spec.decoder_spec, params, dec_x, prefix="dec.")

    loss, breakdown = dagger_loss(teacher_actions, actions, q, p, lam_kl)
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite distillation loss")

    # reconstruction path: decoder, then into z
    d_actions = 2.0 * (actions - teacher_actions) / b
    dec_grads, d_dec_in = mlp_backward_from_cache(
        spec.decoder_spec, params, dec_acts, d_actions, prefix="dec."
    )
    d_z = d_dec_in[..., spec.history_dim :]

    # KL path (λ/b per element, KL already sums over dims)
    d_mu_q_kl, d_std_q_kl, d_mu_p_kl, d_std_p_kl = gaussian_kl_grads(q, p)
    scale = lam_kl / b
    d_mu_q = d_z + scale * d_mu_q_kl
    d_std_q = d_z * z_noise + scale * d_std_q_kl

    # encoder heads: mean is the residual; std via exp with clamp mask
    d_enc_out = np.concatenate([d_mu_q, d_std_q * std_q * act_q], axis=-1)
    enc_grads, _ = mlp_backward_from_cache(
        spec.encoder_spec, params, enc_acts, d_enc_out, prefix="enc."
    )

    # prior heads: residual mean feeds μ_q too
    d_mu_p = d_mu_q + scale * d_mu_p_kl
    d_std_p = scale * d_std_p_kl
    d_prior_out = np.concatenate([d_mu_p, d_std_p * std_p * act_p], axis=-1)
    prior_grads, _ = mlp_backward_from_cache(
        spec.prior_spec, params, prior_acts, d_prior_out, prefix="prior."
    )

    return loss, breakdown, merge_stores(prior_grads, enc_grads, dec_grads)


# ---------------------------------------------------------------------------
# deployable bundle
# ---------------------------------------------------------------------------
@dataclass
class BfmModel:
    """Networks plus the per-step proprioception normalizer.

    This is the unit that checkpoints and every consumer (distiller,
    steering service, residual training, latent analysis) pass around.
    """

    spec: BfmSpec
    params: ParamStore
    norm: RunningNorm = field(default_factory=lambda: RunningNorm.for_dim(HISTORY_STEP_DIM))

    @classmethod
    def init(cls, rng: np.random.Generator, spec: BfmSpec | None = None) -> "BfmModel":
        spec = spec or BfmSpec()
        return cls(spec=spec, params=init_bfm(spec, rng))

    def normalize_history(self, history: np.ndarray) -> np.ndarray:
        """Apply the 21-float step normalizer across all 25 slots."""
        history = np.asarray(history, dtype=float)
        steps = history.reshape(*history.shape[:-1], -1, HISTORY_STEP_DIM)
        return self.norm.normalize(steps).reshape(history.shape).astype(np.float32)

    def prior(self, history: np.ndarray, masked_goal: np.ndarray) -> DiagGaussian:
        return prior(self.spec, self.params, self.normalize_history(history), masked_goal)

    def encode(self, priv_obs, mask, prior_dist) -> DiagGaussian:
        return encode(self.spec, self.params, priv_obs, mask, prior_dist)

    def decode(self, history: np.ndarray, z: np.ndarray) -> np.ndarray:
        return decode(self.spec, self.params, self.normalize_history(history), z)

    def act_deploy(self, history, goal, mask, mode: str = "mean", rng=None) -> np.ndarray:
        return act_deploy(
            self.spec, self.params, self.normalize_history(history), goal, mask,
            mode=mode, rng=rng,
        )

    def copy(self) -> "BfmModel":
        return BfmModel(spec=self.spec, params=self.params.copy(), norm=self.norm.copy())
