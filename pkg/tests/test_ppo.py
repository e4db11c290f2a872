import numpy as np
import pytest

from planarbfm.nets import adam_init, adam_step
from planarbfm.ppo import (
    ActorCriticSpec,
    PpoStats,
    RolloutBuffer,
    TrainingError,
    gae,
    init_actor_critic,
    policy_dist,
    ppo_loss_and_grads,
    ppo_update,
    sample_actions,
    value_forward,
)

SMALL = ActorCriticSpec(obs_dim=5, act_dim=2, hidden=(8,), activation="elu")


def make_buffer(rewards, values=None, dones=None, last_values=None,
                gamma=0.99, lam=0.95, obs_dim=3, act_dim=2):
    rewards = np.asarray(rewards, dtype=float)
    t, n = rewards.shape
    return RolloutBuffer(
        obs=np.zeros((t, n, obs_dim)),
        actions=np.zeros((t, n, act_dim)),
        log_probs=np.zeros((t, n)),
        rewards=rewards,
        values=np.zeros((t, n)) if values is None else np.asarray(values, float),
        dones=np.zeros((t, n), bool) if dones is None else np.asarray(dones, bool),
        last_values=np.zeros(n) if last_values is None else np.asarray(last_values, float),
        gamma=gamma,
        lam=lam,
    )


class TestGae:
    def test_telescoping_suffix_sum_oracle(self):
        # gamma = lam = 1, zero values -> advantage_t = sum of future rewards
        rng = np.random.default_rng(0)
        r = rng.normal(size=(8, 3))
        buf = make_buffer(r, gamma=1.0, lam=1.0)
        adv, ret = gae(buf, normalize=False)
        suffix = np.cumsum(r[::-1], axis=0)[::-1]
        np.testing.assert_allclose(adv, suffix, atol=1e-12)
        np.testing.assert_allclose(ret, suffix, atol=1e-12)  # values are 0

    def test_single_step_done(self):
        buf = make_buffer([[1.0]], dones=[[True]])
        adv, ret = gae(buf, normalize=False)
        assert adv[0, 0] == pytest.approx(1.0)
        assert ret[0, 0] == pytest.approx(1.0)

    def test_exact_values_give_zero_advantage(self):
        # constant reward, values equal to true suffix sums, final done
        t = 6
        r = np.full((t, 1), 2.0)
        values = 2.0 * np.arange(t, 0, -1, dtype=float)[:, None]
        dones = np.zeros((t, 1), bool)
        dones[-1] = True
        buf = make_buffer(r, values=values, dones=dones, gamma=1.0, lam=1.0)
        adv, _ = gae(buf, normalize=False)
        np.testing.assert_allclose(adv, 0.0, atol=1e-12)

    def test_done_cuts_credit_assignment(self):
        # two episodes in one buffer match two separate buffers
        r = np.array([[1.0], [2.0], [3.0], [4.0]])
        dones = np.array([[False], [True], [False], [False]])
        lv = np.array([0.5])
        joint, _ = gae(make_buffer(r, dones=dones, last_values=lv), normalize=False)
        ep1, _ = gae(
            make_buffer(r[:2], dones=[[False], [True]]), normalize=False)
        ep2, _ = gae(make_buffer(r[2:], last_values=lv), normalize=False)
        np.testing.assert_allclose(joint[:2], ep1, atol=1e-12)
        np.testing.assert_allclose(joint[2:], ep2, atol=1e-12)

    def test_bootstrap_from_last_values(self):
        buf = make_buffer([[1.0]], values=[[0.3]], last_values=[2.0],
                          gamma=0.9, lam=0.95)
        adv, _ = gae(buf, normalize=False)
        assert adv[0, 0] == pytest.approx(1.0 + 0.9 * 2.0 - 0.3)

    def test_normalization(self):
        rng = np.random.default_rng(1)
        buf = make_buffer(rng.normal(size=(16, 8)))
        adv, _ = gae(buf)
        assert abs(adv.mean()) < 1e-9
        assert adv.std() == pytest.approx(1.0, abs=1e-6)

    def test_validation(self):
        with pytest.raises(ValueError, match="empty"):
            make_buffer(np.zeros((0, 2)))
        with pytest.raises(ValueError, match="gamma"):
            make_buffer([[1.0]], gamma=0.0)
        with pytest.raises(ValueError, match="last_values"):
            make_buffer([[1.0]], last_values=np.zeros(3))


class TestPolicy:
    def test_init_contents(self):
        params = init_actor_critic(SMALL, np.random.default_rng(0))
        assert "pi.l0.w" in params and "vf.l0.w" in params
        np.testing.assert_array_equal(params["pi.log_std"],
                                      np.full(2, -1.0, dtype=np.float32))

    def test_dist_and_value_shapes(self):
        params = init_actor_critic(SMALL, np.random.default_rng(0))
        obs = np.random.default_rng(1).normal(size=(7, 5)).astype(np.float32)
        dist = policy_dist(SMALL, params, obs)
        assert dist.mean.shape == (7, 2)
        np.testing.assert_allclose(dist.std, np.exp(-1.0), rtol=1e-6)
        assert value_forward(SMALL, params, obs).shape == (7,)

    def test_sampling_deterministic_per_seed(self):
        params = init_actor_critic(SMALL, np.random.default_rng(0))
        obs = np.ones((4, 5), dtype=np.float32)
        a1, lp1, v1 = sample_actions(SMALL, params, obs, np.random.default_rng(9))
        a2, lp2, v2 = sample_actions(SMALL, params, obs, np.random.default_rng(9))
        np.testing.assert_array_equal(a1, a2)
        np.testing.assert_array_equal(lp1, lp2)
        np.testing.assert_array_equal(v1, v2)


def loss_inputs(rng, n=6, spec=SMALL):
    params = init_actor_critic(spec, rng, dtype=np.float64)
    obs = rng.normal(size=(n, spec.obs_dim))
    actions = rng.normal(size=(n, spec.act_dim)) * 0.5
    dist = policy_dist(spec, params, obs)
    z = (actions - dist.mean) / dist.std
    logp = (-0.5 * z * z - np.log(dist.std) - 0.5 * np.log(2 * np.pi)).sum(axis=1)
    logp_old = logp + rng.normal(size=n) * 0.05
    adv = rng.normal(size=n)
    ret = rng.normal(size=n)
    return params, obs, actions, logp_old, adv, ret


class TestLossAndGrads:
    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(3)
        params, obs, actions, logp_old, adv, ret = loss_inputs(rng)

        def loss_of(p):
            return ppo_loss_and_grads(
                SMALL, p, obs, actions, logp_old, adv, ret,
                clip_eps=0.2, vf_coef=0.5, ent_coef=0.01)[0]

        _, _, grads = ppo_loss_and_grads(
            SMALL, params, obs, actions, logp_old, adv, ret,
            clip_eps=0.2, vf_coef=0.5, ent_coef=0.01)

        h = 1e-6
        for name in params.names():
            base = params[name]
            for idx in np.ndindex(base.shape):
                bumped = params.copy()
                bumped[name][idx] = base[idx] + h
                up = loss_of(bumped)
                bumped[name][idx] = base[idx] - h
                down = loss_of(bumped)
                fd = (up - down) / (2 * h)
                got = grads[name][idx]
                denom = max(abs(fd), abs(got), 1e-8)
                assert abs(fd - got) / denom < 1e-4, (name, idx, fd, got)

    def test_ratio_one_equals_unclipped(self):
        rng = np.random.default_rng(4)
        params, obs, actions, _, adv, ret = loss_inputs(rng)
        dist = policy_dist(SMALL, params, obs)
        z = (actions - dist.mean) / dist.std
        logp = (-0.5 * z * z - np.log(dist.std) - 0.5 * np.log(2 * np.pi)).sum(axis=1)
        _, stats, _ = ppo_loss_and_grads(
            SMALL, params, obs, actions, logp, adv, ret, vf_coef=0.0)
        assert stats.policy_loss == pytest.approx(-adv.mean(), abs=1e-12)
        assert stats.clip_fraction == 0.0
        assert stats.approx_kl == pytest.approx(0.0, abs=1e-12)

    def test_clipped_sample_has_zero_policy_gradient(self):
        rng = np.random.default_rng(5)
        params, obs, actions, _, _, ret = loss_inputs(rng, n=1)
        dist = policy_dist(SMALL, params, obs)
        z = (actions - dist.mean) / dist.std
        logp = (-0.5 * z * z - np.log(dist.std) - 0.5 * np.log(2 * np.pi)).sum(axis=1)
        eps = 0.2
        logp_old = logp - np.log(1 + 2 * eps)  # ratio = 1 + 2 eps > clip
        adv = np.array([1.0])                  # positive advantage
        _, _, grads = ppo_loss_and_grads(
            SMALL, params, obs, actions, logp_old, adv, ret,
            clip_eps=eps, vf_coef=0.0, ent_coef=0.0)
        for name in grads.names():
            if name.startswith("pi."):
                np.testing.assert_allclose(grads[name], 0.0, atol=1e-15)

    def test_update_step_reduces_loss(self):
        rng = np.random.default_rng(6)
        params, obs, actions, logp_old, adv, ret = loss_inputs(rng, n=32)
        loss0, _, grads = ppo_loss_and_grads(
            SMALL, params, obs, actions, logp_old, adv, ret)
        adam = adam_init(params, lr=1e-3)
        p = params
        for _ in range(5):
            loss, _, grads = ppo_loss_and_grads(
                SMALL, p, obs, actions, logp_old, adv, ret)
            p, adam = adam_step(p, grads, adam)
        final, _, _ = ppo_loss_and_grads(
            SMALL, p, obs, actions, logp_old, adv, ret)
        assert final < loss0

    def test_non_finite_loss_raises_with_diagnostics(self):
        rng = np.random.default_rng(7)
        params, obs, actions, logp_old, adv, ret = loss_inputs(rng)
        adv = adv.copy()
        adv[0] = np.inf
        with pytest.raises(TrainingError, match="ratio range"):
            ppo_loss_and_grads(SMALL, params, obs, actions, logp_old, adv, ret)


class TestPpoUpdate:
    def test_full_update_runs_and_is_deterministic(self):
        rng = np.random.default_rng(8)
        spec = SMALL
        t, n = 8, 4
        params = init_actor_critic(spec, np.random.default_rng(0))
        buf = RolloutBuffer(
            obs=rng.normal(size=(t, n, spec.obs_dim)).astype(np.float32),
            actions=rng.normal(size=(t, n, spec.act_dim)).astype(np.float32),
            log_probs=rng.normal(size=(t, n)) * 0.1,
            rewards=rng.normal(size=(t, n)),
            values=rng.normal(size=(t, n)),
            dones=np.zeros((t, n), bool),
            last_values=np.zeros(n),
        )
        adv, ret = gae(buf)

        def run():
            adam = adam_init(params, lr=1e-3)
            p, _, stats = ppo_update(
                spec, params, adam, buf, adv, ret,
                rng=np.random.default_rng(42), epochs=2, minibatches=2)
            return p, stats

        p1, s1 = run()
        p2, s2 = run()
        assert isinstance(s1, PpoStats)
        assert p1.allclose(p2)
        assert s1.total_loss == s2.total_loss
        # parameters actually moved
        assert not p1.allclose(params)
