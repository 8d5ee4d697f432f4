import math

import numpy as np
import pytest

from poselift import autodiff as ad


def _rand(rng, *shape):
    return ad.Tensor(rng.uniform(-1.0, 1.0, size=shape))


class TestBackwardBasics:
    def test_square(self):
        x = ad.Tensor(3.0)
        loss = ad.mul(x, x)
        ad.backward(loss)
        assert x.grad == pytest.approx(6.0)

    def test_linear_column_sums(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(4, 3))
        x = ad.Tensor(rng.normal(size=(3, 1)))
        loss = ad.tsum(ad.matmul(ad.Tensor(a), x))
        ad.backward(loss)
        assert np.allclose(x.grad[:, 0], a.sum(axis=0))

    def test_non_scalar_loss_rejected(self):
        with pytest.raises(ValueError):
            ad.backward(ad.Tensor(np.zeros(3)))

    def test_repeated_backward_accumulates(self):
        x = ad.Tensor(2.0)
        loss = ad.square(x)
        ad.backward(loss)
        ad.backward(loss)
        assert x.grad == pytest.approx(8.0)

    def test_shared_subgraph(self):
        x = ad.Tensor(2.0)
        y = ad.Tensor(-4.0)
        q = ad.mul(ad.add(x, y), ad.add(x, 1.0))
        ad.backward(q)
        assert x.grad == pytest.approx(1.0)
        assert y.grad == pytest.approx(3.0)


class TestOperatorGradients:
    """Every registered operator against central finite differences."""

    def test_elementwise_ops(self):
        rng = np.random.default_rng(5)
        builders = {
            "add": lambda p: ad.tsum(ad.add(p[0], p[1])),
            "sub": lambda p: ad.tsum(ad.sub(p[0], p[1])),
            "mul": lambda p: ad.tsum(ad.mul(p[0], p[1])),
            "div": lambda p: ad.tsum(ad.div(p[0], ad.add(ad.square(p[1]), 1.5))),
            "square": lambda p: ad.tsum(ad.square(p[0])),
            "sqrt": lambda p: ad.tsum(ad.sqrt(ad.add(ad.square(p[0]), 0.5))),
            "exp": lambda p: ad.tsum(ad.exp(p[0])),
            "log": lambda p: ad.tsum(ad.log(ad.add(ad.square(p[0]), 0.5))),
            "sin": lambda p: ad.tsum(ad.sin(p[0])),
            "cos": lambda p: ad.tsum(ad.cos(p[0])),
            "tanh": lambda p: ad.tsum(ad.tanh(p[0])),
            "sigmoid": lambda p: ad.tsum(ad.sigmoid(p[0])),
            "mean": lambda p: ad.tmean(ad.mul(p[0], p[1])),
        }
        for name, build in builders.items():
            params = [_rand(rng, 4, 5), _rand(rng, 4, 5)]
            worst = ad.check_gradients(
                lambda: build(params), params, rng, n_points=20
            )
            assert worst <= 1e-4, name

    def test_matmul_and_dense(self):
        rng = np.random.default_rng(6)
        x = _rand(rng, 7, 4)
        w = _rand(rng, 4, 3)
        b = _rand(rng, 3)
        params = [x, w, b]
        ad.check_gradients(
            lambda: ad.tsum(ad.square(ad.dense(x, w, b))), params, rng, n_points=40
        )

    def test_batched_matmul(self):
        rng = np.random.default_rng(7)
        a = _rand(rng, 5, 4, 4)
        b = _rand(rng, 5, 4, 4)
        params = [a, b]
        ad.check_gradients(
            lambda: ad.tsum(ad.square(ad.matmul(a, b))), params, rng, n_points=40
        )

    def test_take_stack_concat_reshape(self):
        rng = np.random.default_rng(8)
        x = _rand(rng, 6, 3)

        def build():
            rows = ad.take(x, np.array([0, 2, 2, 5]))
            joined = ad.concat([rows, rows], axis=0)
            stacked = ad.stack([ad.tsum(joined, axis=0), ad.tsum(joined, axis=0)])
            return ad.tsum(ad.square(ad.reshape(stacked, (6,))))

        ad.check_gradients(build, [x], rng, n_points=18)

    def test_clamp_gradient_masks(self):
        x = ad.Tensor(np.array([-2.0, 0.5, 2.0]))
        loss = ad.tsum(ad.clamp(x, -1.0, 1.0))
        ad.backward(loss)
        assert np.allclose(x.grad, [0.0, 1.0, 0.0])

    def test_conv1d_gradients(self):
        rng = np.random.default_rng(9)
        x = _rand(rng, 10, 3)
        w = _rand(rng, 3, 3, 2)
        b = _rand(rng, 2)
        params = [x, w, b]
        for causal in (True, False):
            for dil in (1, 2):
                ad.check_gradients(
                    lambda: ad.tsum(
                        ad.square(ad.conv1d(x, w, b, dilation=dil, causal=causal))
                    ),
                    params,
                    rng,
                    n_points=30,
                )

    def test_random_conv_stack_gradients(self):
        rng = np.random.default_rng(10)
        x = _rand(rng, 12, 4)
        w1 = _rand(rng, 3, 4, 6)
        b1 = _rand(rng, 6)
        w2 = _rand(rng, 3, 6, 2)
        b2 = _rand(rng, 2)
        params = [x, w1, b1, w2, b2]

        def build():
            hidden = ad.relu(ad.conv1d(x, w1, b1, causal=True))
            out = ad.conv1d(hidden, w2, b2, dilation=2, causal=True)
            return ad.tmean(ad.square(out))

        worst = ad.check_gradients(build, params, rng, n_points=60)
        assert worst <= 1e-4

    def test_lstm_bce_composite_gradients(self):
        rng = np.random.default_rng(11)
        D, H, B = 3, 5, 2
        x = _rand(rng, B, D)
        wx = _rand(rng, D, 4 * H)
        wh = _rand(rng, H, 4 * H)
        b = _rand(rng, 4 * H)
        wo = _rand(rng, H, 2)
        bo = _rand(rng, 2)
        target = ad.Tensor(rng.integers(0, 2, size=(B, 2)).astype(float))
        params = [x, wx, wh, b, wo, bo]

        def build():
            h = ad.Tensor(np.zeros((B, H)))
            c = ad.Tensor(np.zeros((B, H)))
            for _ in range(3):
                h, c = ad.lstm_cell(x, h, c, wx, wh, b)
            pred = ad.sigmoid(ad.dense(h, wo, bo))
            return ad.bce_loss(pred, target)

        worst = ad.check_gradients(build, params, rng, n_points=80)
        assert worst <= 1e-4

    def test_link_and_root_transform_gradients(self):
        rng = np.random.default_rng(12)
        theta = _rand(rng, 6)
        d = _rand(rng)
        a = _rand(rng)
        pos = _rand(rng, 6, 3)
        rot = np.linalg.qr(rng.normal(size=(3, 3)))[0]
        params = [theta, d, a, pos]

        def build():
            links = ad.link_transform(theta, d, a, alpha=-math.pi / 2)
            roots = ad.root_transform(pos, rot)
            chained = ad.matmul(roots, links)
            return ad.tsum(ad.square(chained))

        worst = ad.check_gradients(build, params, rng, n_points=40)
        assert worst <= 1e-4

    def test_ce_loss_gradients(self):
        rng = np.random.default_rng(13)
        logits = _rand(rng, 4, 6)
        target = rng.integers(0, 6, size=4)
        ad.check_gradients(
            lambda: ad.ce_loss(logits, target), [logits], rng, n_points=24
        )


class TestOperatorValues:
    def test_conv1d_identity_kernel(self):
        rng = np.random.default_rng(14)
        x = ad.Tensor(rng.normal(size=(9, 4)))
        w = ad.Tensor(np.eye(4)[None, :, :])
        b = ad.Tensor(np.zeros(4))
        out = ad.conv1d(x, w, b)
        assert np.allclose(out.data, x.data)

    def test_conv1d_channel_mismatch(self):
        x = ad.Tensor(np.zeros((5, 3)))
        w = ad.Tensor(np.zeros((3, 4, 2)))
        with pytest.raises(ValueError):
            ad.conv1d(x, w, ad.Tensor(np.zeros(2)))

    def test_lstm_zero_weights_zero_hidden(self):
        B, D, H = 2, 3, 4
        x = ad.Tensor(np.ones((B, D)))
        h = ad.Tensor(np.zeros((B, H)))
        c = ad.Tensor(np.zeros((B, H)))
        zeros = lambda *s: ad.Tensor(np.zeros(s))
        h2, c2 = ad.lstm_cell(x, h, c, zeros(D, 4 * H), zeros(H, 4 * H), zeros(4 * H))
        assert np.allclose(h2.data, 0.0)
        assert np.allclose(c2.data, 0.0)

    def test_lstm_shape_mismatch(self):
        x = ad.Tensor(np.zeros((2, 3)))
        h = ad.Tensor(np.zeros((2, 4)))
        c = ad.Tensor(np.zeros((2, 4)))
        with pytest.raises(ValueError):
            ad.lstm_cell(x, h, c, ad.Tensor(np.zeros((5, 16))),
                         ad.Tensor(np.zeros((4, 16))), ad.Tensor(np.zeros(16)))

    def test_tensor_dim_limit(self):
        with pytest.raises(ValueError):
            ad.Tensor(np.zeros((2, 2, 2, 2)))


class TestLosses:
    def test_bce_matches_targets(self):
        target = np.array([[0.0, 1.0], [1.0, 0.0]])
        loss = ad.bce_loss(ad.Tensor(target), ad.Tensor(target))
        assert loss.item() <= 1e-6

    def test_bce_half(self):
        pred = ad.Tensor(np.full((10, 3), 0.5))
        target = ad.Tensor((np.arange(30).reshape(10, 3) % 2).astype(float))
        assert ad.bce_loss(pred, target).item() == pytest.approx(math.log(2.0))

    def test_bce_shape_mismatch(self):
        with pytest.raises(ValueError):
            ad.bce_loss(ad.Tensor(np.zeros((2, 2))), ad.Tensor(np.zeros((2, 3))))

    def test_ce_uniform_nine_classes(self):
        loss = ad.ce_loss(ad.Tensor(np.zeros(9)), 4)
        assert abs(loss.item() - math.log(9.0)) <= 1e-12

    def test_ce_rejects_bad_index(self):
        with pytest.raises(ValueError):
            ad.ce_loss(ad.Tensor(np.zeros(4)), 9)

    def test_losses_invariant_to_batch_permutation(self):
        rng = np.random.default_rng(15)
        pred = rng.uniform(0.01, 0.99, size=(8, 5))
        target = rng.integers(0, 2, size=(8, 5)).astype(float)
        perm = rng.permutation(8)
        a = ad.bce_loss(ad.Tensor(pred), ad.Tensor(target)).item()
        b = ad.bce_loss(ad.Tensor(pred[perm]), ad.Tensor(target[perm])).item()
        assert a == pytest.approx(b, abs=1e-12)
        logits = rng.normal(size=(8, 5))
        idx = rng.integers(0, 5, size=8)
        c = ad.ce_loss(ad.Tensor(logits), idx).item()
        d = ad.ce_loss(ad.Tensor(logits[perm]), idx[perm]).item()
        assert c == pytest.approx(d, abs=1e-12)


class TestAdam:
    def test_first_step_magnitude(self):
        p = ad.Tensor(np.array([1.0, -2.0, 3.0]))
        opt = ad.Adam([p], lr=0.05)
        p.grad[...] = np.array([0.3, -4.0, 1e-3])
        before = p.data.copy()
        opt.step()
        delta = np.abs(p.data - before)
        g = np.array([0.3, 4.0, 1e-3])
        assert np.allclose(delta, 0.05 * g / (g + 1e-8))

    def test_zero_gradient_keeps_params(self):
        p = ad.Tensor(np.array([1.0, 2.0]))
        opt = ad.Adam([p], lr=0.1)
        opt.step()
        assert np.array_equal(p.data, [1.0, 2.0])

    def test_trajectories_bitwise_reproducible(self):
        def run():
            rng = np.random.default_rng(16)
            p = ad.Tensor(rng.normal(size=(4,)))
            t = ad.Tensor(rng.normal(size=(4,)))
            opt = ad.Adam([p], lr=0.01)
            track = []
            for _ in range(25):
                opt.zero_grad()
                loss = ad.tsum(ad.square(ad.sub(p, t)))
                ad.backward(loss)
                opt.step()
                track.append(p.data.copy())
            return np.stack(track)

        assert np.array_equal(run(), run())


class TestWeightsIO:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(17)
        named = {
            "w1": ad.Tensor(rng.normal(size=(3, 4))),
            "b1": ad.Tensor(rng.normal(size=(4,))),
        }
        prefix = str(tmp_path / "weights")
        ad.save_weights(prefix, named)
        loaded = ad.load_weights(prefix)
        assert set(loaded) == {"w1", "b1"}
        for k in named:
            assert np.array_equal(loaded[k].data, named[k].data)

    def test_version_check(self, tmp_path):
        import json

        prefix = str(tmp_path / "weights")
        ad.save_weights(prefix, {"w": ad.Tensor(np.zeros(2))})
        manifest = json.loads((tmp_path / "weights.json").read_text())
        manifest["format_version"] = 99
        (tmp_path / "weights.json").write_text(json.dumps(manifest))
        from poselift.exceptions import FormatVersionError

        with pytest.raises(FormatVersionError):
            ad.load_weights(prefix)
