import json

import numpy as np
import pytest

from sbdc_lab.nn import (AdamState, DenseNetwork, NonFiniteError, ShapeError,
                         flatten_grads, load_checkpoint, load_optimizer,
                         save_checkpoint)


def mse_to(target):
    def loss_fn(out):
        resid = out - target
        return (resid**2).sum(axis=1), 2.0 * resid / out.shape[0]
    return loss_fn


def finite_diff_max_rel_err(net, x, loss_fn, n_probes, rng, eps=1e-5):
    _, grads, _ = net.value_and_grad(x, loss_fn)
    analytic = flatten_grads(grads)
    flat = net.params_flat()
    idx = rng.choice(flat.size, size=min(n_probes, flat.size), replace=False)
    worst = 0.0
    for j in idx:
        p = flat.copy()
        p[j] += eps
        net.set_params_flat(p)
        lp = float(loss_fn(net.forward(x))[0].mean())
        p[j] -= 2 * eps
        net.set_params_flat(p)
        lm = float(loss_fn(net.forward(x))[0].mean())
        fd = (lp - lm) / (2 * eps)
        rel = abs(fd - analytic[j]) / max(abs(fd), abs(analytic[j]), 1e-8)
        worst = max(worst, rel)
    net.set_params_flat(flat)
    return worst


class TestForward:
    def test_zero_net_gives_zero_output(self):
        net = DenseNetwork((3, 4, 2), seed=0)
        net.set_params_flat(np.zeros(net.n_params))
        out = net.forward(np.random.default_rng(0).standard_normal((5, 3)))
        assert np.all(out == 0.0)

    def test_single_identity_layer_passes_through(self):
        net = DenseNetwork((2, 2), seed=0)
        net.weights[0] = np.eye(2)
        net.biases[0] = np.zeros(2)
        v = np.array([[1.5, -2.25], [0.0, 3.0]])
        assert np.array_equal(net.forward(v), v)

    def test_two_layer_hand_composition(self):
        # hand evaluation: z1 = W1 x + b1, h = silu(z1), out = W2 h + b2
        net = DenseNetwork((2, 2, 1), seed=0)
        net.weights[0] = np.array([[1.0, -1.0], [0.5, 2.0]])
        net.biases[0] = np.array([0.25, -0.5])
        net.weights[1] = np.array([[2.0], [-3.0]])
        net.biases[1] = np.array([0.125])
        x = np.array([[1.0, 0.0]])
        z1 = np.array([1.0 * 1.0 + 0.25, -1.0 - 0.5])
        h = z1 / (1.0 + np.exp(-z1))
        expected = 2.0 * h[0] - 3.0 * h[1] + 0.125
        assert np.allclose(net.forward(x), [[expected]], rtol=0, atol=1e-15)

    def test_dimension_mismatch_reports_shapes(self):
        net = DenseNetwork((3, 2), seed=0)
        with pytest.raises(ShapeError, match=r"\(B, 3\)"):
            net.forward(np.zeros((4, 5)))

    def test_deterministic_and_finite(self):
        net = DenseNetwork((4, 16, 3), seed=7)
        x = np.random.default_rng(1).standard_normal((9, 4))
        out1, out2 = net.forward(x), net.forward(x)
        assert np.array_equal(out1, out2)
        assert np.all(np.isfinite(out1))


class TestBackward:
    def test_half_sq_norm_identity_net_outer_product(self):
        # single linear layer, loss = 0.5 ||out||^2 => dW = x^T out = x^T (x W)
        net = DenseNetwork((2, 2), seed=0)
        net.weights[0] = np.eye(2)
        net.biases[0] = np.zeros(2)
        x = np.array([[1.0, 2.0], [3.0, -1.0]])

        def loss_fn(out):
            return 0.5 * (out**2).sum(axis=1), out

        out, cache = net.forward_cached(x)
        grads, _ = net.backward(cache, out)
        assert np.allclose(grads[0][0], x.T @ x, atol=1e-12)
        assert np.allclose(grads[0][1], x.sum(axis=0), atol=1e-12)

    def test_constant_loss_zero_gradients(self):
        net = DenseNetwork((3, 8, 2), seed=1)
        x = np.random.default_rng(2).standard_normal((6, 3))

        def loss_fn(out):
            return np.full(out.shape[0], 4.2), np.zeros_like(out)

        _, grads, dx = net.value_and_grad(x, loss_fn)
        assert np.all(flatten_grads(grads) == 0.0)
        assert np.all(dx == 0.0)

    @pytest.mark.parametrize("sizes", [(11, 64, 64, 2), (11, 64, 64, 1), (2, 32, 32, 2)])
    def test_finite_difference_oracle(self, sizes):
        rng = np.random.default_rng(42)
        net = DenseNetwork(sizes, seed=3)
        x = rng.standard_normal((8, sizes[0]))
        target = rng.standard_normal((8, sizes[-1]))
        worst = finite_diff_max_rel_err(net, x, mse_to(target), 100, rng)
        assert worst <= 1e-4

    def test_input_gradient_matches_finite_difference(self):
        net = DenseNetwork((4, 16, 1), seed=5)
        x = np.random.default_rng(6).standard_normal((3, 4))

        def loss_fn(out):
            return out[:, 0], np.ones_like(out)

        _, _, dx = net.value_and_grad(x, loss_fn)  # dout = ones => dx is d(sum)/dx
        eps = 1e-6
        for i in range(3):
            for j in range(4):
                xp, xm = x.copy(), x.copy()
                xp[i, j] += eps
                xm[i, j] -= eps
                fd = (net.forward(xp).sum() - net.forward(xm).sum()) / (2 * eps)
                assert abs(fd - dx[i, j]) / max(abs(fd), abs(dx[i, j]), 1e-8) < 1e-4

    def test_non_finite_loss_carries_batch_index(self):
        net = DenseNetwork((2, 2), seed=0)
        x = np.zeros((4, 2))

        def loss_fn(out):
            per = np.array([0.0, 1.0, np.inf, 2.0])
            return per, np.zeros_like(out)

        with pytest.raises(NonFiniteError) as err:
            net.value_and_grad(x, loss_fn)
        assert err.value.index == 2


class TestOptimizer:
    def test_zero_gradient_leaves_params_and_decays_moments(self):
        opt = AdamState(lr=0.1)
        params = np.array([1.0, -2.0])
        opt._init_moments(2)
        opt.m = np.array([0.5, 0.5])
        opt.v = np.array([0.25, 0.25])
        new = opt.update(params, np.zeros(2))
        # m decays toward 0, bias correction rescales; the step shrinks but
        # params only move through the residual first moment
        assert opt.step_count == 1
        assert np.allclose(opt.m, 0.9 * np.array([0.5, 0.5]))
        assert np.allclose(opt.v, 0.999 * np.array([0.25, 0.25]))
        assert not np.allclose(new, params)  # residual moment still steps

    def test_zero_gradient_from_fresh_state_no_move(self):
        opt = AdamState(lr=0.1)
        params = np.array([1.0, -2.0])
        new = opt.update(params, np.zeros(2))
        assert np.array_equal(new, params)

    def test_constant_gradient_moves_opposite_sign(self):
        opt = AdamState(lr=0.01)
        params = np.zeros(3)
        g = np.array([1.0, -2.0, 0.5])
        for _ in range(50):
            params = opt.update(params, g)
        assert np.all(np.sign(params) == -np.sign(g))

    def test_first_step_bias_corrected(self):
        opt = AdamState(lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8)
        new = opt.update(np.array([0.0]), np.array([1.0]))
        assert abs(new[0] + 0.1) < 1e-8

    def test_shape_mismatch_rejected(self):
        opt = AdamState()
        with pytest.raises(ShapeError):
            opt.update(np.zeros(3), np.zeros(4))

    def test_training_determinism_bitwise(self):
        def run():
            rng = np.random.default_rng(11)
            net = DenseNetwork((3, 16, 2), seed=4)
            opt = AdamState(lr=1e-3)
            params = net.params_flat()
            for _ in range(40):
                x = rng.standard_normal((8, 3))
                t = rng.standard_normal((8, 2))
                _, grads, _ = net.value_and_grad(x, mse_to(t))
                params = opt.update(params, flatten_grads(grads))
                net.set_params_flat(params)
            return params

        assert np.array_equal(run(), run())


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        net = DenseNetwork((5, 16, 2), seed=9)
        opt = AdamState(lr=3e-4)
        params = net.params_flat()
        rng = np.random.default_rng(0)
        for _ in range(5):
            x = rng.standard_normal((4, 5))
            t = rng.standard_normal((4, 2))
            _, grads, _ = net.value_and_grad(x, mse_to(t))
            params = opt.update(params, flatten_grads(grads))
            net.set_params_flat(params)
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, net, role="score", opt=opt, seed=9, step_count=5,
                        extra={"n_classes": 2})
        net2, doc = load_checkpoint(path)
        assert np.array_equal(net2.params_flat(), net.params_flat())
        assert doc["role"] == "score"
        assert doc["step_count"] == 5
        assert doc["extra"]["n_classes"] == 2
        opt2 = load_optimizer(doc)
        assert opt2.step_count == opt.step_count
        assert np.array_equal(opt2.m, opt.m)
        assert np.array_equal(opt2.v, opt.v)

    def test_rejects_foreign_files(self, tmp_path):
        path = tmp_path / "other.json"
        path.write_text(json.dumps({"format": "something-else"}))
        with pytest.raises(ValueError, match="not a"):
            load_checkpoint(path)
