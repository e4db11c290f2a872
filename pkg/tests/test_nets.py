import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from planarbfm.nets import (
    AdamState,
    MlpSpec,
    ParamStore,
    ShapeError,
    adam_init,
    adam_step,
    init_mlp_params,
    mlp_backward,
    mlp_forward,
)


def naive_forward(spec, params, x):
    """Independent oracle: explicit per-layer matmul loop."""
    h = np.asarray(x, dtype=np.float64)
    n = len(spec.layer_sizes) - 1
    for i in range(n):
        w = np.asarray(params[spec.weight_name(i)], dtype=np.float64)
        b = np.asarray(params[spec.bias_name(i)], dtype=np.float64)
        z = h @ w + b
        if i < n - 1:
            if spec.activation == "tanh":
                h = np.tanh(z)
            elif spec.activation == "relu":
                h = np.maximum(z, 0.0)
            else:
                h = np.where(z > 0, z, np.exp(z) - 1.0)
        else:
            h = z
    return h


def finite_difference_grads(spec, params, x, upstream, h=1e-4):
    """Central finite differences of sum(upstream * output) in float64."""
    grads = {}
    for name in params:
        base = params[name]
        g = np.zeros(base.shape)
        for idx in np.ndindex(base.shape):
            for sign in (+1.0, -1.0):
                bumped = {k: params[k].copy() for k in params}
                bumped[name][idx] += sign * h
                out = naive_forward(spec, ParamStore(bumped, check=False), x)
                g[idx] += sign * float(np.sum(upstream * out)) / (2.0 * h)
        grads[name] = g
    return grads


class TestForward:
    def test_zero_weights_give_bias(self, rng):
        spec = MlpSpec((3, 5, 2), "tanh")
        params = init_mlp_params(spec, rng)
        zeroed = {k: np.zeros_like(v) for k, v in params.items()}
        zeroed["l1.b"] = np.array([0.3, -0.7], dtype=np.float32)
        out = mlp_forward(spec, ParamStore(zeroed), rng.standard_normal(3).astype(np.float32))
        np.testing.assert_array_equal(out, np.array([0.3, -0.7], dtype=np.float32))

    def test_affine_1to1(self):
        spec = MlpSpec((1, 1))
        params = ParamStore({"l0.w": np.array([[2.0]]), "l0.b": np.array([1.0])})
        out = mlp_forward(spec, params, np.array([3.0]))
        assert out.shape == (1,)
        assert out[0] == pytest.approx(7.0)

    def test_matches_naive_matmul_oracle(self, rng):
        spec = MlpSpec((4, 8, 3), "tanh")
        params = init_mlp_params(spec, rng, dtype=np.float64)
        x = rng.standard_normal(4)
        got = mlp_forward(spec, params, x)
        want = naive_forward(spec, params, x)
        assert np.max(np.abs(got - want)) < 1e-6

    def test_batched_rows_match_single(self, rng):
        spec = MlpSpec((4, 6, 2), "elu")
        params = init_mlp_params(spec, rng)
        xs = rng.standard_normal((5, 4)).astype(np.float32)
        batch = mlp_forward(spec, params, xs)
        # gemm vs gemv reduction order: equal to float tolerance, not bitwise
        for i in range(5):
            np.testing.assert_allclose(batch[i], mlp_forward(spec, params, xs[i]), atol=1e-6)

    def test_dimension_mismatch_names_layer(self, rng):
        spec = MlpSpec((4, 3))
        params = init_mlp_params(spec, rng)
        with pytest.raises(ShapeError, match="layer 0"):
            mlp_forward(spec, params, np.zeros(5, dtype=np.float32))

    def test_spec_validation(self):
        with pytest.raises(ShapeError):
            MlpSpec((4,))
        with pytest.raises(ShapeError):
            MlpSpec((4, 0))
        with pytest.raises(ShapeError):
            MlpSpec((4, 3), "sigmoid")


class TestBackward:
    def test_linear_chain_rule(self):
        spec = MlpSpec((1, 1))
        params = ParamStore({"l0.w": np.array([[2.0]]), "l0.b": np.array([1.0])})
        x = np.array([3.0])
        grads, dx = mlp_backward(spec, params, x, np.array([1.0]))
        assert grads["l0.w"][0, 0] == pytest.approx(3.0)
        assert grads["l0.b"][0] == pytest.approx(1.0)
        assert dx[0] == pytest.approx(2.0)

    def test_zero_upstream_gives_zero_grads(self, rng):
        spec = MlpSpec((3, 4, 2), "relu")
        params = init_mlp_params(spec, rng)
        grads, dx = mlp_backward(spec, params, rng.standard_normal(3).astype(np.float32),
                                 np.zeros(2, dtype=np.float32))
        for name in grads:
            assert not grads[name].any()
        assert not dx.any()

    def test_non_finite_upstream_rejected(self, rng):
        spec = MlpSpec((2, 2))
        params = init_mlp_params(spec, rng)
        with pytest.raises(ValueError, match="upstream"):
            mlp_backward(spec, params, np.zeros(2), np.array([np.nan, 0.0]))

    @settings(max_examples=15, deadline=None)
    @given(
        seed=st.integers(0, 10_000),
        hidden=st.lists(st.integers(1, 32), min_size=0, max_size=3),
        act=st.sampled_from(["tanh", "relu", "elu"]),
    )
    def test_gradients_match_finite_differences(self, seed, hidden, act):
        rng = np.random.default_rng(seed)
        sizes = (3, *hidden, 2)
        spec = MlpSpec(sizes, act)
        params = init_mlp_params(spec, rng, dtype=np.float64)
        x = rng.standard_normal(3)
        upstream = rng.standard_normal(2)
        analytic, _ = mlp_backward(spec, params, x, upstream)
        numeric = finite_difference_grads(spec, params, x, upstream)
        for name in params:
            denom = np.maximum(np.abs(numeric[name]), 1.0)
            rel = np.max(np.abs(analytic[name] - numeric[name]) / denom)
            assert rel < 1e-4, f"{name}: rel err {rel}"

    def test_batched_grads_sum_rows(self, rng):
        spec = MlpSpec((3, 5, 2), "tanh")
        params = init_mlp_params(spec, rng, dtype=np.float64)
        xs = rng.standard_normal((4, 3))
        ups = rng.standard_normal((4, 2))
        batched, _ = mlp_backward(spec, params, xs, ups)
        summed = params.zeros_like()
        acc = {k: np.zeros_like(params[k]) for k in params}
        for i in range(4):
            g, _ = mlp_backward(spec, params, xs[i], ups[i])
            for k in params:
                acc[k] += g[k]
        for k in params:
            np.testing.assert_allclose(batched[k], acc[k], rtol=1e-12, atol=1e-12)
        assert summed.n_values() == params.n_values()


class TestAdam:
    def test_zero_grads_leave_params(self, rng):
        spec = MlpSpec((2, 3))
        params = init_mlp_params(spec, rng)
        state = adam_init(params, lr=0.1)
        new_params, new_state = adam_step(params, params.zeros_like(), state)
        assert new_params.allclose(params)
        assert new_state.step == 1

    def test_first_step_magnitude_is_lr(self):
        # Hand evaluation at t=1: m_hat = g, v_hat = g^2, delta = lr * g/(|g|+eps).
        params = ParamStore({"w": np.array([0.5])})
        state = adam_init(params, lr=0.1)
        new_params, _ = adam_step(params, ParamStore({"w": np.array([1.0])}), state)
        assert new_params["w"][0] == pytest.approx(0.4, abs=1e-6)

    def test_deterministic(self, rng):
        spec = MlpSpec((3, 3))
        params = init_mlp_params(spec, rng)
        grads = init_mlp_params(spec, np.random.default_rng(7))
        state = adam_init(params, lr=0.01)
        a_params, a_state = adam_step(params, grads, state)
        b_params, b_state = adam_step(params, grads, state)
        for k in a_params:
            np.testing.assert_array_equal(a_params[k], b_params[k])
            np.testing.assert_array_equal(a_state.m[k], b_state.m[k])
        assert a_state.step == b_state.step == 1

    def test_shape_mismatch_rejected(self, rng):
        spec = MlpSpec((2, 2))
        params = init_mlp_params(spec, rng)
        bad = ParamStore({"l0.w": np.zeros((3, 3)), "l0.b": np.zeros(2)})
        with pytest.raises(ShapeError):
            adam_step(params, bad, adam_init(params))


class TestParamStore:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="q"):
            ParamStore({"q": np.array([1.0, np.inf])})

    def test_n_values(self):
        store = ParamStore({"a": np.zeros((2, 3)), "b": np.zeros(4)})
        assert store.n_values() == 10
