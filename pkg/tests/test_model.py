import numpy as np
import pytest
from scipy.integrate import quad

from vbop import net
from vbop.errors import DivergenceError
from vbop.model import (DeepONetSpec, GaussianOutput, build_spec, elbo_loss,
                        forward_batch, gaussian_nll, model_forward)
from vbop.net import LayerSpec, NetSpec
from vbop.variational import (VariationalParams, draw_noise, sample_params,
                              softplus, zero_noise)

HALF_LOG_2PI = 0.9189385332046727


def tiny_spec(width=1):
    return build_spec(sensors=1, y_dim=1, width=width, depth=1)


def random_vp(spec, seed=0, mu_scale=0.5, delta_center=-1.5):
    rng = np.random.default_rng(seed)
    P = spec.param_count()
    return VariationalParams(rng.normal(0, mu_scale, P),
                             rng.normal(delta_center, 0.3, P))


class TestSpec:
    def test_merge_dims_must_agree(self):
        branch = NetSpec.dense(5, [4], "relu")
        trunk = NetSpec.dense(1, [3], "relu")
        with pytest.raises(ValueError):
            DeepONetSpec(branch=branch, trunk=trunk, head=LayerSpec(4, 2, "linear"))

    def test_head_must_be_two_output_linear(self):
        branch = NetSpec.dense(5, [4], "relu")
        trunk = NetSpec.dense(1, [4], "relu")
        with pytest.raises(ValueError):
            DeepONetSpec(branch=branch, trunk=trunk, head=LayerSpec(4, 1, "linear"))
        with pytest.raises(ValueError):
            DeepONetSpec(branch=branch, trunk=trunk, head=LayerSpec(4, 2, "relu"))

    def test_scalar_merge_head_width(self):
        spec = build_spec(5, 1, width=4, depth=2, merge="scalar")
        assert spec.head.in_dim == 1

    def test_param_slices_partition(self):
        spec = build_spec(5, 1, width=4, depth=2)
        sb, st, sh = spec.param_slices()
        assert sb.start == 0 and sh.stop == spec.param_count()
        assert sb.stop == st.start and st.stop == sh.start


class TestForward:
    def test_head_with_ones_row_reproduces_dot_product(self):
        """The merge-plus-head collapses to the plain branch/trunk dot product
        when the mean row of the head is all ones with zero bias."""
        spec = build_spec(sensors=6, y_dim=1, width=5, depth=2)
        rng = np.random.default_rng(4)
        params = rng.normal(0, 0.6, spec.param_count())
        sb, st, sh = spec.param_slices()
        head = params[sh]
        W, b = net.param_views(spec.head_spec, head)[0]
        W[:, 0] = 1.0
        b[0] = 0.0
        U = rng.normal(size=(7, 6))
        Y = rng.uniform(size=(7, 1))
        mu, _, _ = forward_batch(spec, params, U, Y)
        B, _ = net.forward(spec.branch, params[sb], U)
        T, _ = net.forward(spec.trunk, params[st], Y)
        np.testing.assert_allclose(mu, np.sum(B * T, axis=1), rtol=1e-13)

    def test_zero_branch_params_ignore_input(self):
        spec = build_spec(sensors=6, y_dim=1, width=4, depth=1)
        rng = np.random.default_rng(5)
        params = rng.normal(0, 0.5, spec.param_count())
        sb, _, _ = spec.param_slices()
        params[sb] = 0.0
        out1, _ = model_forward(spec, params, rng.normal(size=6), [0.3])
        out2, _ = model_forward(spec, params, rng.normal(size=6), [0.3])
        assert out1.mu == out2.mu

    def test_sigma_floor_clamp(self):
        spec = build_spec(sensors=3, y_dim=1, width=2, depth=1, sigma_floor=1e-6)
        params = np.zeros(spec.param_count())
        _, _, sh = spec.param_slices()
        head = params[sh]
        W, b = net.param_views(spec.head_spec, head)[0]
        b[1] = -1e4  # adversarially negative raw-scale output
        out, _ = model_forward(spec, params, np.ones(3), [0.5])
        assert out.sigma == 1e-6

    def test_scalar_merge_equals_dot_into_head(self):
        spec = build_spec(sensors=4, y_dim=1, width=3, depth=1, merge="scalar")
        rng = np.random.default_rng(6)
        params = rng.normal(0, 0.6, spec.param_count())
        sb, st, sh = spec.param_slices()
        U = rng.normal(size=(5, 4))
        Y = rng.uniform(size=(5, 1))
        mu, _, _ = forward_batch(spec, params, U, Y)
        B, _ = net.forward(spec.branch, params[sb], U)
        T, _ = net.forward(spec.trunk, params[st], Y)
        dot = np.sum(B * T, axis=1, keepdims=True)
        H, _ = net.forward(spec.head_spec, params[sh], dot)
        np.testing.assert_allclose(mu, H[:, 0], rtol=1e-13)


class TestGaussianNll:
    def test_at_the_mode(self):
        np.testing.assert_allclose(gaussian_nll(GaussianOutput(2.0, 1.0), 2.0),
                                   HALF_LOG_2PI, rtol=1e-14)

    def test_one_sigma_offset(self):
        base = gaussian_nll(GaussianOutput(2.0, 0.7), 2.0)
        off = gaussian_nll(GaussianOutput(2.0, 0.7), 2.7)
        np.testing.assert_allclose(off - base, 0.5, rtol=1e-12)

    def test_density_normalizes_by_quadrature(self):
        out = GaussianOutput(mu=0.8, sigma=0.37)
        total, err = quad(lambda s: np.exp(-gaussian_nll(out, s)),
                          out.mu - 12 * out.sigma, out.mu + 12 * out.sigma)
        assert abs(total - 1.0) < 1e-6 and err < 1e-8


class TestElboLoss:
    def test_manual_composition_single_draw(self):
        """Hand-composed arithmetic for a width-1 model on a 2-row batch."""
        spec = tiny_spec()
        P = spec.param_count()  # branch (w,b), trunk (w,b), head (2 w, 2 b)
        assert P == 8
        vp = VariationalParams(
            np.array([0.5, -0.2, 0.8, 0.1, 1.1, -0.3, 0.05, -0.5]),
            np.full(8, -1.0))
        noise = draw_noise(8, seed=9, index=0)
        U = np.array([[0.4], [-1.0]])
        Y = np.array([[0.2], [0.9]])
        s = np.array([0.3, -0.1])
        res = elbo_loss(spec, vp, U, Y, s, [noise], want_grads=False)

        theta = vp.mu + np.log1p(np.exp(vp.delta)) * noise.kappa
        wb, bb, wt, bt, wm, wd, bm, bd = theta
        expected_nll = 0.0
        for (u,), (y,), target in zip(U, Y, s):
            B = max(wb * u + bb, 0.0)
            T = max(wt * y + bt, 0.0)
            m = B * T
            mu_out = wm * m + bm
            sigma = max(np.log1p(np.exp(wd * m + bd)), spec.sigma_floor)
            expected_nll += (0.5 * np.log(2 * np.pi * sigma ** 2)
                             + (target - mu_out) ** 2 / (2 * sigma ** 2))
        sig_v = np.log1p(np.exp(vp.delta))
        expected_kl = 0.5 * np.sum(sig_v ** 2 + vp.mu ** 2 - 1 - np.log(sig_v ** 2))
        np.testing.assert_allclose(res.nll, expected_nll, rtol=1e-12)
        np.testing.assert_allclose(res.kl, expected_kl, rtol=1e-12)
        np.testing.assert_allclose(res.loss, expected_kl + expected_nll, rtol=1e-12)

    def test_collapsed_scales_make_draws_identical(self):
        spec = build_spec(sensors=3, y_dim=1, width=3, depth=1)
        P = spec.param_count()
        rng = np.random.default_rng(10)
        vp = VariationalParams(rng.normal(0, 0.5, P), np.full(P, -50.0))
        U = rng.normal(size=(4, 3))
        Y = rng.uniform(size=(4, 1))
        s = rng.normal(size=4)
        values = [elbo_loss(spec, vp, U, Y, s, [draw_noise(P, 1, i)],
                            want_grads=False).nll for i in range(4)]
        assert all(v == values[0] for v in values)

    def test_residual_shift_identity(self):
        """Shifting every target by d changes the likelihood cost by exactly
        sum(2 d (s - mu) + d^2) / (2 sigma^2) with (mu, sigma) fixed."""
        spec = build_spec(sensors=3, y_dim=1, width=3, depth=1)
        P = spec.param_count()
        rng = np.random.default_rng(12)
        vp = random_vp(spec, seed=12)
        noise = draw_noise(P, 2, 0)
        U = rng.normal(size=(5, 3))
        Y = rng.uniform(size=(5, 1))
        s = rng.normal(size=5)
        d = 0.37
        theta = sample_params(vp, noise)
        mu, sigma, _ = forward_batch(spec, theta, U, Y, need_cache=False)
        base = elbo_loss(spec, vp, U, Y, s, [noise], want_grads=False)
        shifted = elbo_loss(spec, vp, U, Y, s + d, [noise], want_grads=False)
        expected = np.sum((2 * d * (s - mu) + d * d) / (2 * sigma ** 2))
        np.testing.assert_allclose(shifted.nll - base.nll, expected, rtol=1e-10)

    def test_gradients_match_fd_end_to_end(self):
        spec = build_spec(sensors=4, y_dim=1, width=3, depth=2)
        P = spec.param_count()
        rng = np.random.default_rng(14)
        vp = random_vp(spec, seed=14)
        draws = [draw_noise(P, 3, l) for l in range(2)]
        U = rng.normal(size=(5, 4))
        Y = rng.uniform(size=(5, 1))
        s = rng.normal(size=5)
        res = elbo_loss(spec, vp, U, Y, s, draws)

        def loss(mu, delta):
            return elbo_loss(spec, VariationalParams(mu, delta), U, Y, s,
                             draws, want_grads=False).loss

        h = 1e-5
        for i in range(P):
            mu_p = vp.mu.copy(); mu_p[i] += h
            mu_m = vp.mu.copy(); mu_m[i] -= h
            fd = (loss(mu_p, vp.delta) - loss(mu_m, vp.delta)) / (2 * h)
            assert abs(res.grad_mu[i] - fd) / max(abs(fd), 1e-6) < 1e-4
            de_p = vp.delta.copy(); de_p[i] += h
            de_m = vp.delta.copy(); de_m[i] -= h
            fd = (loss(vp.mu, de_p) - loss(vp.mu, de_m)) / (2 * h)
            assert abs(res.grad_delta[i] - fd) / max(abs(fd), 1e-6) < 1e-4

    def test_frozen_noise_is_deterministic(self):
        spec = build_spec(sensors=3, y_dim=1, width=3, depth=1)
        P = spec.param_count()
        rng = np.random.default_rng(15)
        vp = random_vp(spec, seed=15)
        draws = [draw_noise(P, 4, l) for l in range(3)]
        U = rng.normal(size=(4, 3)); Y = rng.uniform(size=(4, 1)); s = rng.normal(size=4)
        a = elbo_loss(spec, vp, U, Y, s, draws, want_grads=False).loss
        b = elbo_loss(spec, vp, U, Y, s, draws, want_grads=False).loss
        assert a == b

    def test_divergence_names_the_draw(self):
        spec = build_spec(sensors=3, y_dim=1, width=3, depth=1)
        P = spec.param_count()
        vp = VariationalParams(np.full(P, 1e200), np.zeros(P))
        U = np.ones((2, 3)); Y = np.ones((2, 1)); s = np.zeros(2)
        with pytest.raises(DivergenceError, match="draw 0"):
            elbo_loss(spec, vp, U, Y, s, [zero_noise(P)])

    def test_baseline_sigma_fixed(self):
        spec = build_spec(sensors=3, y_dim=1, width=3, depth=1)
        vp = random_vp(spec, seed=16)
        U = np.ones((2, 3)); Y = np.full((2, 1), 0.5); s = np.zeros(2)
        res = elbo_loss(spec, vp, U, Y, s, [zero_noise(spec.param_count())],
                        kl_scale=0.0, baseline_sigma=1.0)
        mu, sigma, _ = forward_batch(spec, vp.mu, U, Y, need_cache=False,
                                     baseline_sigma=1.0)
        expected = np.sum(0.5 * np.log(2 * np.pi) + 0.5 * (s - mu) ** 2)
        np.testing.assert_allclose(res.loss, expected, rtol=1e-12)
