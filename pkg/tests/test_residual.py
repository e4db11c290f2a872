"""Tests for the residual adapter and its from-scratch baseline."""

import json

import numpy as np
import pytest

from planarbfm.control import GOAL_DIM, MASK_DIM, preset_mask
from planarbfm.cvae import BfmModel
from planarbfm.embodiment import default_embodiment
from planarbfm.metrics import rollout_tracking
from planarbfm.motions import generate_hop, generate_stand
from planarbfm.nets import init_mlp_params
from planarbfm.residual import (
    ResidualConfig,
    ResidualController,
    TerminationCurriculum,
    _zero_output_layer,
    residual_act,
    residual_delta,
    train_residual,
)
from planarbfm.ppo import init_actor_critic

SPEC = default_embodiment()


@pytest.fixture(scope="module")
def bfm():
    model = BfmModel.init(np.random.default_rng(0))
    model.norm.update(np.random.default_rng(1).normal(size=(64, 21)))
    model.norm.freeze()
    return model


def tiny_config(**overrides) -> ResidualConfig:
    base = dict(total_env_steps=1024, n_envs=4, rollout_steps=8, min_horizon=20)
    base.update(overrides)
    return ResidualConfig(**base)


@pytest.fixture(scope="module")
def tiny_residual(bfm):
    return train_residual(bfm, generate_hop(), tiny_config(), baseline="residual", seed=0)


@pytest.fixture(scope="module")
def tiny_scratch(bfm):
    return train_residual(bfm, generate_hop(), tiny_config(), baseline="from_scratch", seed=0)


# -- termination curriculum -------------------------------------------------
def test_curriculum_endpoints():
    tc = TerminationCurriculum()
    assert tc.tolerance(0, 100, 200) == pytest.approx(0.5)
    assert tc.tolerance(40, 100, 200) == pytest.approx(0.2)
    assert tc.tolerance(100, 100, 200) == pytest.approx(0.2)


def test_curriculum_monotone_nonincreasing():
    tc = TerminationCurriculum()
    taus = [tc.tolerance(k, 50, 200) for k in range(51)]
    assert all(b <= a for a, b in zip(taus, taus[1:]))
    assert all(t > 0 for t in taus)


def test_curriculum_clip_length_scaling():
    tc = TerminationCurriculum()
    assert tc.tolerance(0, 100, 100) == pytest.approx(0.25)  # half-length clip
    assert tc.tolerance(40, 100, 300) == pytest.approx(0.3)  # 1.5x clip


def test_curriculum_validation():
    with pytest.raises(ValueError):
        TerminationCurriculum(tau_start=0.2, tau_end=0.5)
    with pytest.raises(ValueError):
        TerminationCurriculum(tau_end=0.0)
    with pytest.raises(ValueError):
        TerminationCurriculum(frac=0.0)


# -- residual action composition --------------------------------------------
def test_zero_weight_residual_is_identity(bfm):
    cfg = ResidualConfig()
    ac_spec = cfg.residual_ac_spec(bfm.spec.latent_dim)
    params = _zero_output_layer(init_actor_critic(ac_spec, np.random.default_rng(2)), cfg.hidden)
    from planarbfm.normalization import RunningNorm

    norm = RunningNorm.for_dim(ac_spec.obs_dim)
    rng = np.random.default_rng(3)
    history = rng.normal(size=(2, 525))
    goal = rng.normal(size=(2, GOAL_DIM)) * 0.1
    mask = np.ones((2, MASK_DIM))

    a_prime = residual_act(bfm, ac_spec, params, norm, history, goal, mask)
    from planarbfm.control import apply_mask

    base = bfm.decode(history, bfm.prior(history, apply_mask(goal, mask)).mean)
    np.testing.assert_array_equal(a_prime, np.clip(base, SPEC.joint_lower, SPEC.joint_upper))


def test_delta_bounded_and_saturating():
    rng = np.random.default_rng(4)
    u = rng.normal(size=(100, 6)) * 50.0
    delta = residual_delta(0.3, u)
    assert np.all(np.abs(delta) <= 0.3 + 1e-12)
    np.testing.assert_allclose(residual_delta(0.3, np.full(6, 100.0)), 0.3, atol=1e-9)
    np.testing.assert_allclose(residual_delta(0.3, np.full(6, -100.0)), -0.3, atol=1e-9)


def test_residual_controller_deterministic(tiny_residual):
    controller = ResidualController(tiny_residual, SPEC)
    clip = generate_stand()
    a = rollout_tracking(controller, clip, SPEC, seed=0)
    b = rollout_tracking(controller, clip, SPEC, seed=0)
    assert a.termination == b.termination
    np.testing.assert_array_equal(a.poses, b.poses)
    np.testing.assert_array_equal(a.actions, b.actions)


def test_residual_controller_rejects_scratch(tiny_scratch):
    with pytest.raises(ValueError, match="residual"):
        ResidualController(tiny_scratch, SPEC)


# -- training ---------------------------------------------------------------
def test_bfm_bytes_unchanged(bfm, tiny_residual):
    fresh = BfmModel.init(np.random.default_rng(0))
    for name in fresh.params.names():
        assert bfm.params[name].tobytes() == fresh.params[name].tobytes()


def test_curves_and_accounting(tiny_residual):
    assert tiny_residual.env_steps == 1024
    assert len(tiny_residual.curves) == 32
    taus = [c["tolerance"] for c in tiny_residual.curves]
    assert all(b <= a for a, b in zip(taus, taus[1:]))
    for c in tiny_residual.curves:
        assert 0.0 <= c["mean_completion"] <= 1.0 + 1e-9
        assert np.isfinite(c["mean_kp_dev"])


def test_params_move(tiny_residual, bfm):
    cfg = tiny_config()
    ac_spec = cfg.residual_ac_spec(bfm.spec.latent_dim)
    out = f"pi.l{len(cfg.hidden)}.w"
    assert not np.all(tiny_residual.params[out] == 0.0)


def test_seed_determinism(bfm):
    a = train_residual(bfm, generate_hop(), tiny_config(), baseline="residual", seed=7)
    b = train_residual(bfm, generate_hop(), tiny_config(), baseline="residual", seed=7)
    assert a.curves == b.curves
    for name in a.params.names():
        np.testing.assert_array_equal(a.params[name], b.params[name])


def test_arms_use_expected_capacity(bfm, tiny_residual, tiny_scratch):
    def count(params, prefix):
        return sum(params[n].size for n in params.names() if n.startswith(prefix))

    residual_pi = count(tiny_residual.params, "pi.")
    scratch_pi = count(tiny_scratch.params, "pi.")
    decoder = sum(
        bfm.params[n].size for n in bfm.params.names() if n.startswith("dec.")
    )
    # The scratch baseline must not be capacity-handicapped relative to the
    # frozen decoder plus the residual head it is compared against.
    assert scratch_pi >= residual_pi + decoder
    assert tiny_scratch.ac_spec.obs_dim == 525 + bfm.spec.masked_goal_dim
    assert tiny_residual.ac_spec.obs_dim == 525 + bfm.spec.latent_dim


def test_zero_updates_probe(bfm):
    res = train_residual(
        bfm, generate_stand(), tiny_config(total_env_steps=0), baseline="residual", seed=0
    )
    assert res.env_steps == 0
    assert len(res.curves) == 1
    assert res.curves[0]["update"] == 0
    assert np.isfinite(res.curves[0]["mean_kp_dev"])
    assert res.steps_to_target is None


def test_ndjson_log(bfm, tmp_path):
    path = tmp_path / "residual.ndjson"
    res = train_residual(
        bfm, generate_hop(), tiny_config(total_env_steps=256),
        baseline="residual", seed=0, log_path=path,
    )
    lines = path.read_text().strip().splitlines()
    assert len(lines) == len(res.curves)
    rec = json.loads(lines[-1])
    for key in ("step", "arm", "tolerance", "mean_kp_dev",
                "mean_episode_len", "mean_completion"):
        assert key in rec
    assert rec["arm"] == "residual"


def test_invalid_baseline(bfm):
    with pytest.raises(ValueError, match="baseline"):
        train_residual(bfm, generate_hop(), tiny_config(), baseline="nonsense")
