"""Tests for the residual conv net: forward oracles, gradients, training.

Two independent oracles guard the numerics: a direct-summation convolution
(plain Python loops, no im2col) for forward passes, and central finite
differences for every gradient path.
"""
import math

import numpy as np
import pytest

from uwacsr.neuralnet import (
    ConvLayer,
    ConvNetwork,
    LossReport,
    TrainingConfig,
    backward,
    build_csrnet,
    conv2d_forward,
    fit,
    forward,
    freeze_layers,
    load_network,
    lrelu,
    lrelu_grad,
    mse_loss,
    mse_loss_grad,
    save_network,
    transfer_train,
)


def naive_conv2d(x, weights, biases):
    """Direct summation with explicit zero padding, no vectorization."""
    c_out, c_in = weights.shape[:2]
    _, h, w = x.shape
    out = np.zeros((c_out, h, w))
    for o in range(c_out):
        for i in range(h):
            for j in range(w):
                acc = biases[o]
                for c in range(c_in):
                    for ki in range(3):
                        for kj in range(3):
                            ii, jj = i + ki - 1, j + kj - 1
                            if 0 <= ii < h and 0 <= jj < w:
                                acc += x[c, ii, jj] * weights[o, c, ki, kj]
                out[o, i, j] = acc
    return out


def naive_network_forward(net, x):
    acts = x
    for i, layer in enumerate(net.layers):
        z = naive_conv2d(acts, layer.weights, layer.biases)
        if i < net.depth - 1:
            z = np.where(z > 0.0, z, net.lrelu_slope * z)
        acts = z
    return x + acts


def fd_gradient(loss_fn, param, eps=1e-5):
    """Central finite differences over every entry of one parameter array."""
    grad = np.zeros_like(param)
    flat, gflat = param.ravel(), grad.ravel()
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + eps
        f_plus = loss_fn()
        flat[k] = orig - eps
        f_minus = loss_fn()
        flat[k] = orig
        gflat[k] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def max_rel_error(a, b):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b) / denom))


def zero_net(depth=3, n_filters=4, in_channels=2):
    chain = [in_channels] + [n_filters] * (depth - 1) + [in_channels]
    layers = [
        ConvLayer(np.zeros((c_out, c_in, 3, 3)), np.zeros(c_out))
        for c_in, c_out in zip(chain[:-1], chain[1:])
    ]
    return ConvNetwork(layers)


class TestLrelu:
    def test_branch_values(self):
        assert lrelu(2.0) == 2.0
        assert lrelu(-1.0) == pytest.approx(-0.3)
        assert lrelu(0.0) == 0.0

    def test_gradient_values(self):
        assert lrelu_grad(2.0) == 1.0
        assert lrelu_grad(-5.0) == pytest.approx(0.3)
        assert lrelu_grad(0.0) == pytest.approx(0.3)  # boundary uses the leaky branch

    def test_vectorized_and_custom_slope(self):
        x = np.array([-2.0, 0.0, 3.0])
        np.testing.assert_allclose(lrelu(x, slope=0.1), [-0.2, 0.0, 3.0])
        np.testing.assert_allclose(lrelu_grad(x, slope=0.1), [0.1, 0.1, 1.0])

    def test_gradient_matches_finite_differences_off_kink(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(50)
        x = x[np.abs(x) > 1e-3]
        eps = 1e-6
        fd = (lrelu(x + eps) - lrelu(x - eps)) / (2.0 * eps)
        np.testing.assert_allclose(lrelu_grad(x), fd, atol=1e-8)


class TestConvLayer:
    def test_rejects_bad_kernel_shape(self):
        with pytest.raises(ValueError):
            ConvLayer(np.zeros((4, 2, 5, 5)), np.zeros(4))

    def test_rejects_bias_mismatch(self):
        with pytest.raises(ValueError):
            ConvLayer(np.zeros((4, 2, 3, 3)), np.zeros(3))

    def test_rejects_nonfinite(self):
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            ConvLayer(w, np.zeros(1))


class TestConv2dForward:
    def test_zero_kernel_gives_zero(self):
        layer = ConvLayer(np.zeros((2, 3, 3, 3)), np.zeros(2))
        out = conv2d_forward(np.random.default_rng(0).standard_normal((3, 4, 5)), layer)
        assert np.all(out == 0.0)

    def test_identity_kernel_passthrough(self):
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 1, 1] = 1.0
        layer = ConvLayer(w, np.zeros(1))
        x = np.random.default_rng(1).standard_normal((1, 6, 7))
        np.testing.assert_allclose(conv2d_forward(x, layer), x, atol=1e-14)

    def test_ones_kernel_count_pattern(self):
        # padded window overlap: 4 cells at corners, 6 on edges, 9 center
        layer = ConvLayer(np.ones((1, 1, 3, 3)), np.zeros(1))
        out = conv2d_forward(np.ones((1, 3, 3)), layer)
        expected = np.array([[[4.0, 6.0, 4.0], [6.0, 9.0, 6.0], [4.0, 6.0, 4.0]]])
        np.testing.assert_allclose(out, expected, atol=1e-14)

    def test_bias_is_added(self):
        layer = ConvLayer(np.zeros((2, 1, 3, 3)), np.array([1.5, -2.0]))
        out = conv2d_forward(np.zeros((1, 4, 4)), layer)
        np.testing.assert_allclose(out[0], 1.5)
        np.testing.assert_allclose(out[1], -2.0)

    def test_matches_naive_summation(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((3, 5, 7))
        layer = ConvLayer(rng.standard_normal((4, 3, 3, 3)), rng.standard_normal(4))
        np.testing.assert_allclose(
            conv2d_forward(x, layer), naive_conv2d(x, layer.weights, layer.biases), atol=1e-12
        )

    def test_rejects_channel_mismatch(self):
        layer = ConvLayer(np.zeros((4, 2, 3, 3)), np.zeros(4))
        with pytest.raises(ValueError):
            conv2d_forward(np.zeros((3, 4, 4)), layer)


class TestNetworkForward:
    def test_zero_parameters_residual_identity(self):
        net = zero_net()
        x = np.random.default_rng(3).standard_normal((2, 6, 5))
        np.testing.assert_array_equal(forward(net, x), x)

    def test_identity_scales_linearly(self):
        net = zero_net()
        x = np.random.default_rng(4).standard_normal((2, 6, 5))
        np.testing.assert_array_equal(forward(net, 3.5 * x), 3.5 * forward(net, x))

    def test_matches_naive_reimplementation(self):
        for seed in range(3):
            net = build_csrnet(depth=3, n_filters=5, seed=seed)
            x = np.random.default_rng(100 + seed).standard_normal((2, 6, 5))
            np.testing.assert_allclose(forward(net, x), naive_network_forward(net, x), atol=1e-10)

    @pytest.mark.parametrize("shape", [(1, 1), (1, 7), (5, 3), (8, 8)])
    def test_shape_preserved(self, shape):
        net = build_csrnet(depth=2, n_filters=3, seed=0)
        x = np.zeros((2, *shape))
        assert forward(net, x).shape == x.shape

    def test_rejects_wrong_channels(self):
        net = build_csrnet(depth=2, n_filters=3, seed=0)
        with pytest.raises(ValueError):
            forward(net, np.zeros((3, 4, 4)))

    def test_builder_validates(self):
        with pytest.raises(ValueError):
            build_csrnet(depth=1)
        with pytest.raises(ValueError):
            build_csrnet(depth=2, n_filters=0)

    def test_chain_mismatch_rejected(self):
        layers = [
            ConvLayer(np.zeros((4, 2, 3, 3)), np.zeros(4)),
            ConvLayer(np.zeros((2, 5, 3, 3)), np.zeros(2)),
        ]
        with pytest.raises(ValueError):
            ConvNetwork(layers)


class TestMseLoss:
    def test_zero_for_equal(self):
        x = np.ones((2, 3, 3))
        assert mse_loss(x, x) == 0.0

    def test_unit_offset(self):
        assert mse_loss(np.ones((4, 4)), np.zeros((4, 4))) == pytest.approx(1.0)

    def test_gradient_formula_and_fd(self):
        rng = np.random.default_rng(5)
        pred = rng.standard_normal((2, 4, 3))
        target = rng.standard_normal((2, 4, 3))
        analytic = mse_loss_grad(pred, target)
        np.testing.assert_allclose(analytic, 2.0 * (pred - target) / pred.size, atol=1e-15)
        fd = fd_gradient(lambda: mse_loss(pred, target), pred)
        assert max_rel_error(analytic, fd) < 1e-4

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            mse_loss(np.zeros((2, 2)), np.zeros((2, 3)))


class TestBackward:
    def test_gradients_match_finite_differences(self):
        # the canonical small instance: 2 layers, 4 filters, 2x6x5 input
        net = build_csrnet(depth=2, n_filters=4, seed=7)
        rng = np.random.default_rng(8)
        x = rng.standard_normal((2, 6, 5))
        target = rng.standard_normal((2, 6, 5))
        grads = backward(net, x, target)
        params = net.parameter_arrays()
        assert len(grads) == len(params)
        for analytic, param in zip(grads, params):
            fd = fd_gradient(lambda: mse_loss(forward(net, x), target), param)
            assert max_rel_error(analytic, fd) < 1e-4

    def test_frozen_layer_zero_grads_upstream_flow(self):
        net = build_csrnet(depth=3, n_filters=4, seed=9)
        net.layers[1].frozen = True
        rng = np.random.default_rng(10)
        x = rng.standard_normal((2, 5, 4))
        target = rng.standard_normal((2, 5, 4))
        grads = backward(net, x, target)
        # layout: [w0, b0, w1, b1, w2, b2]
        assert np.all(grads[2] == 0.0) and np.all(grads[3] == 0.0)
        assert np.any(grads[0] != 0.0) and np.any(grads[4] != 0.0)
        # upstream gradients are unaffected by the freeze flag itself
        net.layers[1].frozen = False
        unfrozen = backward(net, x, target)
        np.testing.assert_array_equal(grads[0], unfrozen[0])
        np.testing.assert_array_equal(grads[1], unfrozen[1])

    def test_perfect_prediction_zero_grads(self):
        net = zero_net()
        x = np.random.default_rng(11).standard_normal((2, 4, 4))
        for g in backward(net, x, x):
            assert np.all(g == 0.0)


class _ScriptedModel:
    """Duck-typed stand-in with a prescribed validation loss sequence."""

    def __init__(self, val_losses):
        self._val = list(val_losses)
        self._calls = 0
        self._param = np.zeros(3)

    def parameter_arrays(self):
        return [self._param]

    def frozen_mask(self):
        return [False]

    def loss_and_grads(self, x, y):
        return 0.5, [np.zeros_like(self._param)]

    def evaluate_loss(self, x, y):
        loss = self._val[min(self._calls, len(self._val) - 1)]
        self._calls += 1
        return loss


def toy_sets(n_train=8, n_val=4, seed=0):
    rng = np.random.default_rng(seed)
    x_tr = rng.standard_normal((n_train, 2, 4, 4))
    x_va = rng.standard_normal((n_val, 2, 4, 4))
    return (x_tr, x_tr.copy()), (x_va, x_va.copy())


class TestFit:
    def test_early_stop_arithmetic(self):
        # best at epoch 0, strictly worse ever after: stop after patience+1
        model = _ScriptedModel([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0])
        cfg = TrainingConfig(max_epochs=50, early_stop_patience=5, batch_size=2, seed=0)
        report = fit(model, *toy_sets(), cfg=cfg)
        assert report.stop_reason == "early_stop"
        assert report.stop_epoch == 6
        assert report.best_val_epoch == 0
        assert report.stop_epoch - report.best_val_epoch == cfg.early_stop_patience + 1
        assert report.best_val_loss == 1.0

    def test_lr_schedule_exact(self):
        model = _ScriptedModel([1.0 / (e + 1) for e in range(100)])  # always improving
        cfg = TrainingConfig(max_epochs=100, early_stop_patience=5, batch_size=4, seed=1)
        report = fit(model, *toy_sets(), cfg=cfg)
        assert report.stop_reason == "max_epochs"
        assert report.stop_epoch == 100
        for epoch, lr in enumerate(report.lr):
            assert lr == cfg.initial_lr * cfg.lr_decay ** (epoch // cfg.decay_every)
        assert report.lr[39] == pytest.approx(0.001)
        assert report.lr[40] == pytest.approx(0.0001)
        assert report.lr[80] == pytest.approx(0.00001)

    def test_identity_smoke_training(self):
        net = build_csrnet(depth=2, n_filters=4, seed=2)
        rng = np.random.default_rng(3)
        x = rng.standard_normal((16, 2, 6, 5))
        cfg = TrainingConfig(max_epochs=5, early_stop_patience=4, batch_size=8, seed=4)
        report = fit(net, (x, x.copy()), (x[:4], x[:4].copy()), cfg)
        assert report.train_loss[-1] < report.train_loss[0]

    def test_deterministic_under_fixed_seed(self):
        runs = []
        for _ in range(2):
            net = build_csrnet(depth=2, n_filters=4, seed=5)
            train, val = toy_sets(seed=6)
            report = fit(net, train, val, TrainingConfig(max_epochs=4, early_stop_patience=3, batch_size=4, seed=7))
            runs.append((report, [p.copy() for p in net.parameter_arrays()]))
        assert runs[0][0] == runs[1][0]
        for a, b in zip(runs[0][1], runs[1][1]):
            np.testing.assert_array_equal(a, b)

    def test_parameters_restored_to_best_snapshot(self):
        net = build_csrnet(depth=2, n_filters=4, seed=8)
        train, val = toy_sets(seed=9)
        report = fit(net, train, val, TrainingConfig(max_epochs=6, early_stop_patience=5, batch_size=4, seed=10))
        assert net.evaluate_loss(*val) == report.best_val_loss

    def test_updates_mutate_in_place(self):
        net = build_csrnet(depth=2, n_filters=4, seed=11)
        before = net.parameter_arrays()
        snapshots = [p.copy() for p in before]
        train, val = toy_sets(seed=12)
        fit(net, train, val, TrainingConfig(max_epochs=2, early_stop_patience=1, batch_size=4, seed=13))
        after = net.parameter_arrays()
        assert all(a is b for a, b in zip(before, after))
        assert any(not np.array_equal(s, p) for s, p in zip(snapshots, after))

    def test_rejects_empty_sets(self):
        net = build_csrnet(depth=2, n_filters=4, seed=14)
        empty = (np.zeros((0, 2, 4, 4)), np.zeros((0, 2, 4, 4)))
        train, val = toy_sets()
        cfg = TrainingConfig(max_epochs=2, early_stop_patience=1, batch_size=4)
        with pytest.raises(ValueError):
            fit(net, empty, val, cfg)
        with pytest.raises(ValueError):
            fit(net, train, empty, cfg)


class TestTrainingConfigValidation:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"initial_lr": 0.0},
            {"lr_decay": -0.1},
            {"max_epochs": 0},
            {"batch_size": 0},
            {"early_stop_patience": 100, "max_epochs": 100},
            {"optimizer": "adam"},
            {"momentum": 1.0},
            {"clip_norm": 0.0},
        ],
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValueError):
            TrainingConfig(**kwargs)

    def test_loss_report_length_check(self):
        with pytest.raises(ValueError):
            LossReport((1.0,), (1.0, 2.0), (0.001,), 1, "max_epochs", 0, 1.0)
        with pytest.raises(ValueError):
            LossReport((1.0,), (1.0,), (0.001,), 1, "ran_out_of_coffee", 0, 1.0)


class TestFreezing:
    def test_zero_is_noop(self):
        net = build_csrnet(depth=4, n_filters=4, seed=15)
        freeze_layers(net, 0)
        assert not any(layer.frozen for layer in net.layers)

    def test_first_half_of_twenty(self):
        net = build_csrnet(depth=20, n_filters=4, seed=16)
        freeze_layers(net, 10)
        assert [layer.frozen for layer in net.layers] == [True] * 10 + [False] * 10

    def test_rejects_out_of_range(self):
        net = build_csrnet(depth=4, n_filters=4, seed=17)
        with pytest.raises(ValueError):
            freeze_layers(net, 5)
        with pytest.raises(ValueError):
            freeze_layers(net, -1)

    def test_frozen_parameters_survive_fit(self):
        net = build_csrnet(depth=3, n_filters=4, seed=18)
        freeze_layers(net, 2)
        frozen_w = [net.layers[i].weights.copy() for i in range(2)]
        train, val = toy_sets(seed=19)
        fit(net, train, val, TrainingConfig(max_epochs=3, early_stop_patience=2, batch_size=4, seed=20))
        for i in range(2):
            np.testing.assert_array_equal(net.layers[i].weights, frozen_w[i])

    def test_trainable_tail_moves(self):
        net = build_csrnet(depth=3, n_filters=4, seed=21)
        freeze_layers(net, 2)
        tail_before = net.layers[2].weights.copy()
        train, val = toy_sets(seed=22)
        fit(net, train, val, TrainingConfig(max_epochs=3, early_stop_patience=2, batch_size=4, seed=23))
        assert not np.array_equal(net.layers[2].weights, tail_before)


class TestTransferTrain:
    def test_frozen_half_identical_to_pretrained(self):
        pretrained = build_csrnet(depth=4, n_filters=4, seed=24)
        train, val = toy_sets(seed=25)
        cfg = TrainingConfig(max_epochs=3, early_stop_patience=2, batch_size=4, seed=26)
        unified, report = transfer_train(pretrained, train, val, cfg)
        assert isinstance(report, LossReport)
        for i in range(2):  # depth // 2 frozen
            np.testing.assert_array_equal(unified.layers[i].weights, pretrained.layers[i].weights)
            np.testing.assert_array_equal(unified.layers[i].biases, pretrained.layers[i].biases)
        assert not np.array_equal(unified.layers[3].weights, pretrained.layers[3].weights)

    def test_pretrained_network_untouched(self):
        pretrained = build_csrnet(depth=4, n_filters=4, seed=27)
        before = [p.copy() for p in pretrained.parameter_arrays()]
        train, val = toy_sets(seed=28)
        transfer_train(pretrained, train, val, TrainingConfig(max_epochs=2, early_stop_patience=1, batch_size=4))
        for a, b in zip(before, pretrained.parameter_arrays()):
            np.testing.assert_array_equal(a, b)

    def test_fully_frozen_input_stays_fixed(self):
        pretrained = build_csrnet(depth=4, n_filters=4, seed=29)
        freeze_layers(pretrained, 4)
        before = [p.copy() for p in pretrained.parameter_arrays()]
        train, val = toy_sets(seed=30)
        unified, _ = transfer_train(
            pretrained, train, val, TrainingConfig(max_epochs=2, early_stop_patience=1, batch_size=4)
        )
        for a, b in zip(before, unified.parameter_arrays()):
            np.testing.assert_array_equal(a, b)


class TestCheckpointIo:
    def test_round_trip(self, tmp_path):
        net = build_csrnet(depth=3, n_filters=5, seed=31, scaling_factor=10.0)
        path = tmp_path / "net.csrn"
        save_network(net, path)
        loaded = load_network(path)
        assert loaded.depth == 3
        assert loaded.n_filters == 5
        assert loaded.lrelu_slope == pytest.approx(0.3)
        assert loaded.scaling_factor == 10.0
        for a, b in zip(net.parameter_arrays(), loaded.parameter_arrays()):
            np.testing.assert_array_equal(a.astype(np.float32), b.astype(np.float32))

    def test_forward_agreement_after_reload(self, tmp_path):
        net = build_csrnet(depth=3, n_filters=4, seed=32)
        path = tmp_path / "net.csrn"
        save_network(net, path)
        loaded = load_network(path)
        x = np.random.default_rng(33).standard_normal((2, 6, 5)).astype(np.float32)
        np.testing.assert_allclose(forward(net, x), forward(loaded, x), atol=1e-6)

    def test_save_is_byte_deterministic(self, tmp_path):
        net = build_csrnet(depth=2, n_filters=4, seed=34)
        p1, p2 = tmp_path / "a.csrn", tmp_path / "b.csrn"
        save_network(net, p1)
        save_network(net, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_manifest_written(self, tmp_path):
        net = build_csrnet(depth=2, n_filters=4, seed=35)
        path = tmp_path / "net.csrn"
        save_network(net, path)
        text = (tmp_path / "net.csrn.manifest").read_text()
        assert "container: CSRN v1" in text
        assert "depth: 2" in text
        assert "sha256:" in text

    def test_rejects_wrong_magic(self, tmp_path):
        path = tmp_path / "bogus.csrn"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ValueError):
            load_network(path)
