import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import max_rel_error, naive_conv2d, norm_rel_error, numerical_grad
from qusseg.errors import BatchError, ConfigError, ParameterError, ShapeError, WeightImportError
from qusseg.nn import layers as L
from qusseg.nn import (AttentionUNet, NetworkConfig, PlateauSchedule, TrainConfig, adam_step,
                       import_weights, init_params, load_weights, save_weights, train, unet_forward)

TOL = 1e-4


def check_grads(forward, backward_grads, arrays, rng, tol=TOL):
    """Compare analytic gradients of ``sum(forward() * r)`` against central differences.

    ``backward_grads(r)`` returns gradients in the same order as ``arrays``.
    """
    r = rng.standard_normal(forward().shape)
    analytic = backward_grads(r)

    def f():
        return float(np.sum(forward() * r))

    for arr, g in zip(arrays, analytic):
        num = numerical_grad(f, arr, eps=1e-5)
        assert max_rel_error(g, num) < tol


class TestConv:
    def test_identity_kernel(self, rng):
        x = rng.standard_normal((2, 3, 5, 5))
        w = np.zeros((3, 3, 1, 1))
        w[[0, 1, 2], [0, 1, 2]] = 1.0
        out, _ = L.conv2d_forward(x, w, np.zeros(3))
        assert np.array_equal(out, x)

    @pytest.mark.parametrize("stride,pad", [(1, 1), (1, 0), (2, 1)])
    def test_matches_naive_oracle(self, rng, stride, pad):
        x = rng.standard_normal((2, 3, 5, 5))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        out, _ = L.conv2d_forward(x, w, b, stride, pad)
        np.testing.assert_allclose(out, naive_conv2d(x, w, b, stride, pad), atol=1e-10)

    def test_gradients(self, rng):
        x = rng.standard_normal((2, 3, 5, 5))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        fwd = lambda: L.conv2d_forward(x, w, b, 1, 1)[0]  # noqa: E731
        check_grads(fwd, lambda r: L.conv2d_backward(r, L.conv2d_forward(x, w, b, 1, 1)[1]),
                    [x, w, b], rng)

    def test_strided_gradients(self, rng):
        x = rng.standard_normal((1, 2, 6, 6))
        w = rng.standard_normal((3, 2, 1, 1))
        b = rng.standard_normal(3)
        fwd = lambda: L.conv2d_forward(x, w, b, 2, 0)[0]  # noqa: E731
        check_grads(fwd, lambda r: L.conv2d_backward(r, L.conv2d_forward(x, w, b, 2, 0)[1]),
                    [x, w, b], rng)

    def test_shape_errors(self, rng):
        with pytest.raises(ShapeError):
            L.conv2d_forward(rng.standard_normal((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)), np.zeros(1))
        with pytest.raises(ShapeError):
            L.conv2d_forward(rng.standard_normal((2, 4, 4)), np.zeros((1, 2, 3, 3)), np.zeros(1))


class TestTransposedConv:
    def test_ones_kernel(self):
        out, _ = L.transposed_conv2d_forward(np.array([[[[2.5]]]]), np.ones((1, 1, 2, 2)), np.zeros(1))
        assert out.shape == (1, 1, 2, 2)
        assert np.all(out == 2.5)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 4), st.integers(1, 7), st.integers(1, 7))
    def test_doubles_spatial_dims(self, n, ci, co, h, w):
        x = np.ones((n, ci, h, w))
        out, _ = L.transposed_conv2d_forward(x, np.ones((ci, co, 2, 2)), np.zeros(co))
        assert out.shape == (n, co, 2 * h, 2 * w)

    def test_gradients(self, rng):
        x = rng.standard_normal((2, 3, 3, 4))
        w = rng.standard_normal((3, 2, 2, 2))
        b = rng.standard_normal(2)
        fwd = lambda: L.transposed_conv2d_forward(x, w, b)[0]  # noqa: E731
        check_grads(fwd, lambda r: L.transposed_conv2d_backward(r, L.transposed_conv2d_forward(x, w, b)[1]),
                    [x, w, b], rng)

    def test_shape_error(self, rng):
        with pytest.raises(ShapeError):
            L.transposed_conv2d_forward(rng.standard_normal((1, 2, 3, 3)), np.ones((3, 1, 2, 2)), np.zeros(1))


class TestMaxPool:
    def test_single_window(self):
        out, _ = L.maxpool2x2_forward(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
        assert out.tolist() == [[[[4.0]]]]

    def test_constant_routes_to_argmax_only(self):
        x = np.full((1, 1, 4, 4), 7.0)
        out, cache = L.maxpool2x2_forward(x)
        assert np.all(out == 7.0)
        dx = L.maxpool2x2_backward(np.ones_like(out), cache)
        assert dx.sum() == 4
        for i in range(2):
            for j in range(2):
                assert dx[0, 0, 2 * i:2 * i + 2, 2 * j:2 * j + 2].sum() == 1

    def test_gradients(self, rng):
        x = rng.standard_normal((2, 2, 4, 6))
        check_grads(lambda: L.maxpool2x2_forward(x)[0],
                    lambda r: [L.maxpool2x2_backward(r, L.maxpool2x2_forward(x)[1])], [x], rng)

    def test_odd_dims(self):
        with pytest.raises(ShapeError):
            L.maxpool2x2_forward(np.zeros((1, 1, 3, 4)))


class TestBatchNorm:
    def test_normalises(self, rng):
        x = rng.standard_normal((4, 3, 5, 5)) * 10 + 7
        out, _ = L.batchnorm_forward(x, np.ones(3), np.zeros(3))
        np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-6)
        np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1, atol=1e-6)

    def test_affine(self, rng):
        x = rng.standard_normal((4, 2, 6, 6)) * 10
        out, _ = L.batchnorm_forward(x, np.full(2, 2.0), np.full(2, 3.0))
        np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 3, atol=1e-6)
        np.testing.assert_allclose(out.std(axis=(0, 2, 3)), 2, atol=1e-6)

    def test_running_stats(self, rng):
        x = rng.standard_normal((8, 2, 4, 4)) + 5
        running = {"mean": np.zeros(2), "var": np.ones(2)}
        L.batchnorm_forward(x, np.ones(2), np.zeros(2), running, training=True)
        np.testing.assert_allclose(running["mean"], 0.1 * x.mean(axis=(0, 2, 3)))
        np.testing.assert_allclose(running["var"], 0.9 + 0.1 * x.var(axis=(0, 2, 3)))
        out, _ = L.batchnorm_forward(x, np.ones(2), np.zeros(2), running, training=False)
        expected = (x - running["mean"][None, :, None, None]) / np.sqrt(running["var"] + 1e-5)[None, :, None, None]
        np.testing.assert_allclose(out, expected)

    @pytest.mark.parametrize("training", [True, False])
    def test_gradients(self, rng, training):
        x = rng.standard_normal((3, 2, 3, 3))
        gamma = rng.standard_normal(2)
        beta = rng.standard_normal(2)
        running = {"mean": rng.standard_normal(2), "var": rng.uniform(0.5, 2, 2)}

        def fwd():
            return L.batchnorm_forward(x, gamma, beta, dict(running), training)[0]

        check_grads(fwd, lambda r: L.batchnorm_backward(r, L.batchnorm_forward(
            x, gamma, beta, dict(running), training)[1]), [x, gamma, beta], rng)

    def test_batch_error(self):
        with pytest.raises(BatchError):
            L.batchnorm_forward(np.zeros((1, 2, 1, 1)), np.ones(2), np.zeros(2))


class TestMatchingLayer:
    def test_replication(self, rng):
        x = rng.standard_normal((2, 1, 4, 4))
        out, _ = L.matching_layer_forward(x, np.ones((3, 1, 1, 1)), np.zeros(3))
        for c in range(3):
            assert np.array_equal(out[:, c], x[:, 0])

    def test_linearity(self):
        out, _ = L.matching_layer_forward(np.full((1, 1, 2, 2), 2.0),
                                          np.array([0.5, -1.0, 3.0]).reshape(3, 1, 1, 1), np.array([0.0, 1.0, 0.0]))
        assert out[0, :, 0, 0].tolist() == [1.0, -1.0, 6.0]

    def test_gradients(self, rng):
        x = rng.standard_normal((2, 1, 3, 3))
        w = rng.standard_normal((3, 1, 1, 1))
        b = rng.standard_normal(3)
        check_grads(lambda: L.matching_layer_forward(x, w, b)[0],
                    lambda r: L.matching_layer_backward(r, L.matching_layer_forward(x, w, b)[1]),
                    [x, w, b], rng)

    def test_channel_error(self):
        with pytest.raises(ShapeError):
            L.matching_layer_forward(np.zeros((1, 2, 2, 2)), np.ones((3, 1, 1, 1)), np.zeros(3))


def gate_params(rng, c_x=4, c_g=6, c_int=2):
    return {"theta_w": rng.standard_normal((c_int, c_x, 1, 1)), "theta_b": rng.standard_normal(c_int),
            "phi_w": rng.standard_normal((c_int, c_g, 1, 1)), "phi_b": rng.standard_normal(c_int),
            "psi_w": rng.standard_normal((1, c_int, 1, 1)), "psi_b": rng.standard_normal(1)}


class TestAttentionGate:
    @pytest.mark.parametrize("bias,expect_x", [(20.0, True), (-20.0, False)])
    def test_saturation(self, rng, bias, expect_x):
        x = rng.standard_normal((2, 4, 6, 6))
        g = rng.standard_normal((2, 6, 3, 3))
        p = gate_params(rng)
        p["psi_w"][:] = 0.0
        p["psi_b"][:] = bias
        out, alpha, _ = L.attention_gate_forward(x, g, p)
        np.testing.assert_allclose(out, x if expect_x else 0 * x, atol=1e-6)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.floats(0.1, 5.0))
    def test_alpha_strictly_inside_unit_interval(self, seed, scale):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((1, 4, 4, 4)) * scale
        g = rng.standard_normal((1, 6, 2, 2)) * scale
        _, alpha, _ = L.attention_gate_forward(x, g, gate_params(rng))
        assert alpha.shape == (1, 1, 4, 4)
        assert np.all(alpha > 0) and np.all(alpha < 1)

    def test_gradients(self, rng):
        x = rng.standard_normal((2, 4, 6, 6))
        g = rng.standard_normal((2, 6, 3, 3))
        p = gate_params(rng)
        keys = list(p)

        def grads(r):
            dx, dg, gp = L.attention_gate_backward(r, L.attention_gate_forward(x, g, p)[2])
            return [dx, dg] + [gp[k] for k in keys]

        check_grads(lambda: L.attention_gate_forward(x, g, p)[0], grads, [x, g] + [p[k] for k in keys], rng)

    def test_shape_error(self, rng):
        with pytest.raises(ShapeError):
            L.attention_gate_forward(np.zeros((1, 4, 6, 6)), np.zeros((1, 6, 2, 2)), gate_params(rng))


class TestDiceLoss:
    def test_perfect_overlap(self):
        t = np.zeros((1, 1, 8, 8))
        t[0, 0, 2:6, 2:6] = 1
        loss, _ = L.dice_loss_forward(t.copy(), t)
        assert 0 <= loss < 0.01

    def test_closed_form(self):
        t = np.zeros((1, 1, 4, 4))
        t[..., :2] = 1
        loss, _ = L.dice_loss_forward(np.full((1, 1, 4, 4), 0.5), t)
        # intersection 4, sums 8 + 8: 1 - (2*4 + 1) / (8 + 8 + 1)
        assert loss == pytest.approx(8 / 17, abs=1e-9)

    def test_batch_average(self, rng):
        p = rng.uniform(size=(3, 1, 4, 4))
        t = (rng.uniform(size=(3, 1, 4, 4)) > 0.5).astype(float)
        each = [L.dice_loss_forward(p[i:i + 1], t[i:i + 1])[0] for i in range(3)]
        assert L.dice_loss_forward(p, t)[0] == pytest.approx(np.mean(each), abs=1e-12)

    def test_gradients(self, rng):
        p = rng.uniform(0.05, 0.95, (2, 1, 4, 4))
        t = (rng.uniform(size=(2, 1, 4, 4)) > 0.5).astype(float)

        def f():
            return L.dice_loss_forward(p, t)[0]

        num = numerical_grad(f, p, eps=1e-5)
        assert max_rel_error(L.dice_loss_backward(L.dice_loss_forward(p, t)[1]), num) < TOL

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_flip_symmetry_and_range(self, seed):
        rng = np.random.default_rng(seed)
        p = rng.uniform(size=(2, 1, 5, 7))
        t = (rng.uniform(size=(2, 1, 5, 7)) > 0.5).astype(float)
        loss = L.dice_loss_forward(p, t)[0]
        assert loss == L.dice_loss_forward(p[..., ::-1].copy(), t[..., ::-1].copy())[0]
        assert 0 <= loss <= 1

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            L.dice_loss_forward(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 3)))


SMALL = NetworkConfig(depth=2, base_channels=2, input_hw=(32, 32))


class TestUNet:
    def test_config_errors(self):
        with pytest.raises(ConfigError):
            NetworkConfig(depth=1)
        with pytest.raises(ConfigError):
            NetworkConfig(depth=4, input_hw=(40, 40))

    def test_shape_and_range(self, rng):
        cfg = NetworkConfig(depth=3, base_channels=4, input_hw=(32, 32))
        params, buffers = init_params(cfg, rng, np.float64)
        x = rng.standard_normal((2, 1, 32, 32)) * 5
        for training in (True, False):
            out = unet_forward(x, cfg, params, buffers, training)
            assert out.shape == (2, 1, 32, 32)
            assert np.all(out > 0) and np.all(out < 1)

    def test_input_errors(self, rng):
        net = AttentionUNet(SMALL, rng=rng)
        with pytest.raises(ConfigError):
            net.forward(np.zeros((1, 1, 30, 32), np.float32))
        with pytest.raises(ConfigError):
            net.forward(np.zeros((1, 3, 32, 32), np.float32))

    def test_gate_coefficients_recorded(self, rng):
        net = AttentionUNet(SMALL, rng=rng)
        net.forward(rng.standard_normal((1, 1, 32, 32)).astype(np.float32))
        assert set(net.alphas) == {0, 1}
        assert net.alphas[0].shape == (1, 1, 32, 32)
        assert net.alphas[1].shape == (1, 1, 16, 16)

    @pytest.mark.parametrize("training,full", [(True, True), (False, False)])
    def test_end_to_end_gradient(self, rng, training, full):
        # finite differences at eps 1e-5 straddle relu kinks somewhere in the
        # network, so the end-to-end check uses the norm over the whole gradient
        net = AttentionUNet(SMALL, rng=rng, dtype=np.float64)
        # zero biases on post-relu zeros put relu inputs exactly on the kink; move off it
        for name in net.params:
            if name.endswith((".b", "_b", ".beta")):
                net.params[name] = net.params[name] + rng.normal(0, 0.1, net.params[name].shape)
        for name in net.buffers:
            net.buffers[name] = net.buffers[name] + rng.uniform(0, 0.5, net.buffers[name].shape)
        x = rng.standard_normal((1, 1, 32, 32))
        t = (rng.uniform(size=(1, 1, 32, 32)) > 0.5).astype(float)
        frozen = {k: v.copy() for k, v in net.buffers.items()}

        def f():
            net.buffers.update({k: v.copy() for k, v in frozen.items()})
            return L.dice_loss_forward(net.forward(x, training), t)[0]

        f()
        grads = net.backward(L.dice_loss_backward(L.dice_loss_forward(net.forward(x, training), t)[1]))
        net.buffers.update({k: v.copy() for k, v in frozen.items()})
        assert set(grads) == set(net.params)
        analytic, numeric = [], []
        for name, p in net.params.items():
            assert np.all(np.isfinite(grads[name]))
            flat = p.reshape(-1)
            picks = range(flat.size) if full else rng.choice(flat.size, size=min(4, flat.size), replace=False)
            for i in picks:
                old = flat[i]
                flat[i] = old + 1e-5
                fp = f()
                flat[i] = old - 1e-5
                fm = f()
                flat[i] = old
                numeric.append((fp - fm) / 2e-5)
                analytic.append(grads[name].reshape(-1)[i])
        assert norm_rel_error(analytic, numeric) < 1e-3

    def test_plain_unet_equals_open_gates(self, rng):
        gated = NetworkConfig(depth=2, base_channels=4, input_hw=(16, 16))
        plain = NetworkConfig(depth=2, base_channels=4, input_hw=(16, 16), use_attention=False)
        params, buffers = init_params(gated, rng, np.float64)
        for name in params:
            if name.endswith("psi_w"):
                params[name][:] = 0.0
            if name.endswith("psi_b"):
                params[name][:] = 50.0
        plain_params = {k: v for k, v in params.items() if ".att." not in k}
        assert set(plain_params) == set(init_params(plain, rng, np.float64)[0])
        x = rng.standard_normal((2, 1, 16, 16))
        a = unet_forward(x, gated, params, dict(buffers))
        b = unet_forward(x, plain, plain_params, dict(buffers))
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_without_batchnorm_or_matching(self, rng):
        cfg = NetworkConfig(depth=2, base_channels=2, input_hw=(8, 8), batchnorm=False,
                            use_matching_layer=False)
        params, buffers = init_params(cfg, rng)
        assert buffers == {}
        assert not any(k.startswith("match") or ".bn" in k for k in params)
        assert unet_forward(np.zeros((1, 1, 8, 8), np.float32), cfg, params).shape == (1, 1, 8, 8)


class TestAdam:
    def test_zero_gradient(self, rng):
        params = {"w": rng.standard_normal(5)}
        before = params["w"].copy()
        adam_step(params, {"w": np.zeros(5)}, {}, 1, TrainConfig())
        assert np.array_equal(params["w"], before)

    def test_first_step(self, rng):
        g = rng.standard_normal(6)
        params = {"w": np.zeros(6)}
        adam_step(params, {"w": g}, {}, 1, TrainConfig(lr=0.01))
        np.testing.assert_allclose(params["w"], -0.01 * np.sign(g), atol=1e-6)

    def test_quadratic_bowl(self):
        params = {"w": np.array([1.0])}
        state = {}
        cfg = TrainConfig(lr=0.05)
        for t in range(1, 501):
            adam_step(params, {"w": 2 * params["w"]}, state, t, cfg)
        assert abs(params["w"][0]) < 1e-3

    def test_shape_mismatch_and_frozen(self):
        params = {"enc0.w": np.zeros(3), "dec0.w": np.zeros(3)}
        with pytest.raises(ShapeError):
            adam_step(params, {"enc0.w": np.ones(4)}, {}, 1, TrainConfig())
        adam_step(params, {"enc0.w": np.ones(3), "dec0.w": np.ones(3)}, {}, 1, TrainConfig(frozen=("enc0",)))
        assert np.all(params["enc0.w"] == 0) and np.all(params["dec0.w"] < 0)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            TrainConfig(lr_drop_factor=1.0)
        with pytest.raises(ConfigError):
            TrainConfig(lr_patience_epochs=0)


def blob_sample(size=32):
    yy, xx = np.mgrid[:size, :size]
    mask = ((yy - 14) ** 2 / 64 + (xx - 17) ** 2 / 36 <= 1).astype(np.float32)
    rng = np.random.default_rng(3)
    image = (mask * 2 - 1 + 0.3 * rng.standard_normal((size, size))).astype(np.float32)
    return image, mask


class TestSchedule:
    def test_stagnant_drops_and_stops(self):
        s = PlateauSchedule(1.0)
        s.update(0, 0.5)
        stops = [s.update(e, 0.5)[1] for e in range(1, 25)]
        assert stops.index(True) + 1 == 20
        assert s.drops == [4, 8, 12, 16]
        assert s.lr == 1.0 / 16

    def test_improvement_resets(self):
        s = PlateauSchedule(1.0)
        s.update(0, 0.1)
        for e in range(1, 4):
            s.update(e, 0.1)
        s.update(4, 0.2)
        assert s.drops == []
        for e in range(5, 9):
            s.update(e, 0.2)
        assert s.drops == [8]


class TestTrain:
    def test_overfits_single_sample(self):
        sample = blob_sample()
        cfg = NetworkConfig(depth=2, base_channels=8, input_hw=(32, 32))
        for seed in range(3):
            _, history = train([sample], [sample], cfg, TrainConfig(lr=1e-2, batch_size=1, max_epochs=300, rng_seed=seed))
            assert max(h["val_dice"] for h in history) > 0.95

    def test_stagnant_run_halts_at_patience(self):
        sample = blob_sample()
        cfg = NetworkConfig(depth=2, base_channels=2, input_hw=(32, 32))
        _, history = train([sample], [sample], cfg, TrainConfig(lr=0.0, batch_size=1, frozen=("enc", "dec")))
        assert len(history) == 20
        assert len({h["val_dice"] for h in history}) == 1
        assert [h["lr"] for h in history][::4] == [0.0] * 5

    def test_stagnant_lr_drops(self):
        sample = blob_sample()
        cfg = NetworkConfig(depth=2, base_channels=2, input_hw=(32, 32))
        # a frozen network never improves, so the rate halves every four epochs
        _, history = train([sample], [sample], cfg,
                           TrainConfig(lr=1e-3, batch_size=1, frozen=("enc", "dec", "match", "out")))
        assert len(history) == 20
        lrs = [h["lr"] for h in history]
        assert lrs[0] == 1e-3 and lrs[4] == 5e-4 and lrs[8] == 2.5e-4 and lrs[19] == 1e-3 / 16

    def test_deterministic(self):
        data = [blob_sample(), (blob_sample()[0][::-1].copy(), blob_sample()[1][::-1].copy())]
        cfg = NetworkConfig(depth=2, base_channels=2, input_hw=(32, 32))
        tc = TrainConfig(batch_size=1, max_epochs=5, rng_seed=7)
        a_net, a = train(data, data[:1], cfg, tc)
        b_net, b = train(data, data[:1], cfg, tc)
        assert a == b
        for k in a_net.params:
            assert np.array_equal(a_net.params[k], b_net.params[k])

    def test_empty_sets(self):
        with pytest.raises(ParameterError):
            train([], [blob_sample()], SMALL, TrainConfig())


class TestWeights:
    def params(self):
        return init_params(SMALL, np.random.default_rng(1))[0]

    def test_empty_mapping(self, tmp_path):
        params = self.params()
        save_weights(tmp_path / "w.qwt", params)
        out = import_weights(params, tmp_path / "w.qwt", {})
        assert all(np.array_equal(out[k], params[k]) for k in params)

    def test_wrong_shape_names_tensor(self):
        params = self.params()
        bad = {"block1_conv1.w": np.zeros((5, 3, 3, 3), np.float32)}
        with pytest.raises(WeightImportError) as err:
            import_weights(params, bad, {"block1_conv1.w": "enc0.conv0.w"})
        assert "enc0.conv0.w" in str(err.value)
        assert err.value.names

    def test_round_trip(self, tmp_path):
        params = self.params()
        save_weights(tmp_path / "w.qwt", params)
        loaded = load_weights(tmp_path / "w.qwt")
        assert list(loaded) == list(params)
        fresh = init_params(SMALL, np.random.default_rng(2))[0]
        out = import_weights(fresh, tmp_path / "w.qwt")
        for k in params:
            assert out[k].dtype == params[k].dtype
            assert np.array_equal(out[k], params[k])

    def test_partial_import_leaves_rest(self, tmp_path):
        params = self.params()
        src = {"block1_conv1.w": np.ones_like(params["enc0.conv0.w"])}
        out = import_weights(params, src, {"block1_conv1.w": "enc0.conv0.w"})
        assert np.all(out["enc0.conv0.w"] == 1)
        assert all(np.array_equal(out[k], params[k]) for k in params if k != "enc0.conv0.w")
        assert not np.all(params["enc0.conv0.w"] == 1)

    def test_corrupt_file(self, tmp_path):
        from qusseg.errors import FormatError
        (tmp_path / "w.qwt").write_bytes(b"QWT1" + (1).to_bytes(4, "little") + b"\x05\x00")
        with pytest.raises(FormatError):
            load_weights(tmp_path / "w.qwt")
