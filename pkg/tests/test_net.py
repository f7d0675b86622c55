import numpy as np
import pytest

from vbop.net import LayerSpec, NetSpec, backward, forward, param_count, param_views


def random_net(rng, depth, max_dim=10):
    dims = rng.integers(2, max_dim + 1, size=depth + 1)
    layers = []
    for i in range(depth):
        act = "relu" if i < depth - 1 else rng.choice(["relu", "linear"])
        layers.append(LayerSpec(int(dims[i]), int(dims[i + 1]), str(act)))
    spec = NetSpec(tuple(layers))
    params = rng.normal(0, 0.8, param_count(spec))
    return spec, params


class TestSpecs:
    def test_single_layer_count(self):
        assert param_count(NetSpec((LayerSpec(100, 30, "relu"),))) == 3030

    def test_three_block_stack_count(self):
        spec = NetSpec.dense(100, [30, 30, 30], "relu")
        assert param_count(spec) == 3030 + 930 + 930

    def test_empty_spec(self):
        assert param_count(NetSpec(())) == 0

    def test_dims_must_chain(self):
        with pytest.raises(ValueError):
            NetSpec((LayerSpec(3, 4), LayerSpec(5, 2)))

    def test_rejects_zero_dim(self):
        with pytest.raises(ValueError):
            LayerSpec(0, 3)

    def test_rejects_unknown_activation(self):
        with pytest.raises(ValueError):
            LayerSpec(3, 3, "tanh")

    def test_layout_covers_vector(self):
        spec = NetSpec.dense(4, [3, 2], "relu")
        params = np.arange(param_count(spec), dtype=float)
        seen = np.concatenate([np.concatenate([W.ravel(), b])
                               for W, b in param_views(spec, params)])
        np.testing.assert_array_equal(seen, params)


class TestForward:
    def test_zero_params_linear_net(self):
        spec = NetSpec.dense(4, [3, 2], "linear", final_activation="linear")
        out, _ = forward(spec, np.zeros(param_count(spec)), np.ones(4))
        np.testing.assert_array_equal(out, np.zeros(2))

    def test_identity_layer(self):
        spec = NetSpec((LayerSpec(3, 3, "linear"),))
        params = np.zeros(param_count(spec))
        param_views(spec, params)[0][0][:] = np.eye(3)
        x = np.array([0.3, -1.2, 2.0])
        out, _ = forward(spec, params, x)
        np.testing.assert_array_equal(out, x)

    def test_relu_blocks_negative_preactivation(self):
        spec = NetSpec((LayerSpec(1, 1, "relu"), LayerSpec(1, 1, "linear")))
        params = np.zeros(param_count(spec))
        views = param_views(spec, params)
        views[0][0][:] = 1.0   # first layer passes input through
        views[1][0][:] = 5.0   # visible only if the relu lets anything out
        out, _ = forward(spec, params, np.array([-1.0]))
        assert out[0] == 0.0

    def test_pure_function(self):
        rng = np.random.default_rng(5)
        spec, params = random_net(rng, 3)
        x = rng.normal(size=(7, spec.in_dim))
        a, _ = forward(spec, params, x)
        b, _ = forward(spec, params, x)
        assert np.array_equal(a, b)

    def test_dimension_mismatch(self):
        spec = NetSpec.dense(4, [3], "relu")
        with pytest.raises(ValueError):
            forward(spec, np.zeros(param_count(spec)), np.ones(5))


def fd_param_gradient(spec, params, x, upstream, h=1e-5):
    g = np.zeros_like(params)
    for i in range(params.size):
        p = params.copy()
        p[i] += h
        lp = np.sum(upstream * forward(spec, p, x)[0])
        p[i] -= 2 * h
        lm = np.sum(upstream * forward(spec, p, x)[0])
        g[i] = (lp - lm) / (2 * h)
    return g


class TestBackward:
    """Gradients are checked against central finite differences of the
    scalar loss sum(upstream * forward(x))."""

    @pytest.mark.parametrize("depth,seed", [(1, 0), (2, 1), (3, 2), (3, 3)])
    def test_parameter_gradients_match_fd(self, depth, seed):
        rng = np.random.default_rng(seed)
        spec, params = random_net(rng, depth)
        x = rng.normal(size=(4, spec.in_dim))
        upstream = rng.normal(size=(4, spec.out_dim))
        _, cache = forward(spec, params, x)
        grad, _ = backward(spec, params, cache, upstream)
        fd = fd_param_gradient(spec, params, x, upstream)
        rel = np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-6)
        assert np.max(rel) < 1e-4

    def test_input_gradient_matches_fd(self):
        rng = np.random.default_rng(11)
        spec, params = random_net(rng, 2)
        x = rng.normal(size=spec.in_dim)
        upstream = rng.normal(size=spec.out_dim)
        _, cache = forward(spec, params, x)
        _, gx = backward(spec, params, cache, upstream)
        h = 1e-5
        fd = np.zeros_like(x)
        for i in range(x.size):
            xp = x.copy(); xp[i] += h
            xm = x.copy(); xm[i] -= h
            fd[i] = (np.sum(upstream * forward(spec, params, xp)[0])
                     - np.sum(upstream * forward(spec, params, xm)[0])) / (2 * h)
        rel = np.abs(gx - fd) / np.maximum(np.abs(fd), 1e-6)
        assert np.max(rel) < 1e-4

    def test_zero_upstream_gives_zero_gradient(self):
        rng = np.random.default_rng(7)
        spec, params = random_net(rng, 2)
        x = rng.normal(size=(3, spec.in_dim))
        _, cache = forward(spec, params, x)
        grad, gx = backward(spec, params, cache, np.zeros((3, spec.out_dim)))
        assert not np.any(grad) and not np.any(gx)

    def test_gradient_linear_in_upstream(self):
        rng = np.random.default_rng(8)
        spec, params = random_net(rng, 2)
        x = rng.normal(size=(3, spec.in_dim))
        upstream = rng.normal(size=(3, spec.out_dim))
        _, cache = forward(spec, params, x)
        g1, _ = backward(spec, params, cache, upstream)
        g2, _ = backward(spec, params, cache, 2.0 * upstream)
        np.testing.assert_allclose(g2, 2.0 * g1, rtol=1e-13)

    def test_cache_spec_mismatch(self):
        rng = np.random.default_rng(9)
        spec, params = random_net(rng, 2)
        other = NetSpec.dense(spec.in_dim, [spec.out_dim], "linear")
        x = rng.normal(size=(3, spec.in_dim))
        _, cache = forward(spec, params, x)
        with pytest.raises(ValueError):
            backward(other, params[:len(params)], cache, np.ones((3, spec.out_dim)))
