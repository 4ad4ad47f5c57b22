import numpy as np
import pytest

from mfmc_lab import encoders as enc
from mfmc_lab.synthetic import make_rng

FD_MATRIX = [((2, 4, 2), False), ((2, 4, 2), True), ((3, 8, 8, 4), False), ((3, 8, 8, 4), True)]


def _loss_and_grads(params, x, r, training=True):
    out, cache = enc.forward(params, x, training)
    grads, gx = enc.backward(params, cache, r)
    return float(np.sum(out * r)), grads, gx


def _numeric(params, x, r, name, idx, h=1e-6, training=True):
    p = params.copy()
    p.arrays[name][idx] += h
    up = float(np.sum(enc.forward(p, x, training)[0] * r))
    p.arrays[name][idx] -= 2 * h
    down = float(np.sum(enc.forward(p, x, training)[0] * r))
    return (up - down) / (2 * h)


class TestInit:
    def test_deterministic(self):
        spec = enc.MlpSpec((3, 5, 2))
        a, b = enc.init_params(spec, 4), enc.init_params(spec, 4)
        for k in a.arrays:
            np.testing.assert_array_equal(a.arrays[k], b.arrays[k])

    def test_shapes(self):
        p = enc.init_params(enc.MlpSpec((2, 4, 3)), 0)
        assert p.weight(0).shape == (4, 2) and p.weight(1).shape == (3, 4)
        assert p.bias(0).shape == (4,) and p.bias(1).shape == (3,)
        assert enc.param_count(p) == 8 + 4 + 12 + 3

    def test_seed_changes_weights(self):
        spec = enc.MlpSpec((2, 4, 3))
        assert not np.array_equal(enc.init_params(spec, 0).weight(0), enc.init_params(spec, 1).weight(0))

    def test_glorot_range(self):
        p = enc.init_params(enc.MlpSpec((30, 50)), 1)
        limit = np.sqrt(6 / 80)
        assert np.abs(p.weight(0)).max() <= limit
        assert np.abs(p.weight(0)).max() > 0.9 * limit
        np.testing.assert_array_equal(p.bias(0), 0.0)

    def test_bad_specs(self):
        with pytest.raises(ValueError):
            enc.MlpSpec((3,))
        with pytest.raises(ValueError):
            enc.MlpSpec((3, 0, 2))
        with pytest.raises(ValueError):
            enc.MlpSpec((3, 4, 5, 2), (True,))


class TestForward:
    def test_zero_params(self):
        p = enc.init_params(enc.MlpSpec((3, 4, 2)), 0)
        for k in p.arrays:
            p.arrays[k][...] = 0
        np.testing.assert_array_equal(enc.forward(p, np.ones((5, 3)))[0], 0.0)

    def test_identity_layer(self):
        p = enc.init_params(enc.MlpSpec((3, 3)), 0)
        p.arrays["layer0.weight"] = np.eye(3)
        x = make_rng(0).standard_normal((4, 3))
        np.testing.assert_array_equal(enc.forward(p, x)[0], x)

    def test_hand_computed(self):
        p = enc.init_params(enc.MlpSpec((1, 2, 1)), 0)
        p.arrays["layer0.weight"] = np.array([[2.0], [-1.0]])
        p.arrays["layer0.bias"] = np.array([0.5, 0.25])
        p.arrays["layer1.weight"] = np.array([[3.0, 4.0]])
        p.arrays["layer1.bias"] = np.array([-1.0])
        # hidden = relu([2.5, -0.75]) = [2.5, 0]; out = 3 * 2.5 - 1
        assert enc.forward(p, np.array([[1.0]]))[0][0, 0] == pytest.approx(6.5)

    def test_dead_relu_gives_final_bias(self):
        p = enc.init_params(enc.MlpSpec((2, 5, 3)), 2)
        p.arrays["layer0.bias"][:] = -100.0
        p.arrays["layer1.bias"] = np.array([0.1, -0.2, 0.3])
        out = enc.forward(p, make_rng(1).uniform(-1, 1, (6, 2)))[0]
        np.testing.assert_array_equal(out, np.tile([0.1, -0.2, 0.3], (6, 1)))

    def test_shape_mismatch(self):
        p = enc.init_params(enc.MlpSpec((3, 4, 2)), 0)
        with pytest.raises(ValueError):
            enc.forward(p, np.ones((5, 2)))

    def test_non_finite_activation_names_layer(self):
        p = enc.init_params(enc.MlpSpec((2, 3, 2)), 0)
        p.arrays["layer1.weight"][:] = np.inf
        with pytest.raises(enc.NonFiniteActivationError) as info:
            enc.forward(p, np.ones((4, 2)))
        assert info.value.layer == 1

    def test_batch_norm_train_vs_eval(self):
        spec = enc.MlpSpec((3, 6, 2), True)
        p = enc.init_params(spec, 0)
        x = make_rng(2).standard_normal((50, 3)) * 4 + 2
        out_train, cache = enc.forward(p, x, training=True)
        pre = cache.normed[0]
        np.testing.assert_allclose(pre.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(pre.var(axis=0), 1.0, atol=1e-3)
        for _ in range(200):
            enc.update_running_stats(p, enc.forward(p, x, True)[1])
        out_eval = enc.forward(p, x, training=False)[0]
        np.testing.assert_allclose(out_eval, out_train, atol=0.05)

    def test_forward_does_not_mutate(self):
        p = enc.init_params(enc.MlpSpec((3, 6, 2), True), 0)
        before = p.copy()
        enc.forward(p, make_rng(3).standard_normal((8, 3)))
        for k in p.buffers:
            np.testing.assert_array_equal(p.buffers[k], before.buffers[k])


class TestBackward:
    def test_zero_upstream(self):
        p = enc.init_params(enc.MlpSpec((3, 5, 2), True), 0)
        _, cache = enc.forward(p, make_rng(0).standard_normal((7, 3)))
        grads, gx = enc.backward(p, cache, np.zeros((7, 2)))
        assert all(np.all(g == 0) for g in grads.values()) and np.all(gx == 0)

    def test_single_linear_layer_by_hand(self):
        p = enc.init_params(enc.MlpSpec((2, 2)), 0)
        x = np.array([[1.0, 2.0], [3.0, 4.0]])
        up = np.array([[1.0, 0.0], [0.0, 2.0]])
        _, cache = enc.forward(p, x)
        grads, gx = enc.backward(p, cache, up)
        np.testing.assert_allclose(grads["layer0.weight"], np.array([[1.0, 2.0], [6.0, 8.0]]))
        np.testing.assert_allclose(grads["layer0.bias"], [1.0, 2.0])
        np.testing.assert_allclose(gx, up @ p.weight(0))

    def test_stale_cache(self):
        p = enc.init_params(enc.MlpSpec((3, 5, 2)), 0)
        _, cache = enc.forward(p, np.ones((4, 3)))
        with pytest.raises(ValueError):
            enc.backward(p, cache, np.ones((5, 2)))

    @pytest.mark.parametrize("widths, bn", FD_MATRIX)
    @pytest.mark.parametrize("training", [True, False])
    def test_finite_differences(self, widths, bn, training):
        spec = enc.MlpSpec(widths, bn)
        p = enc.init_params(spec, 11)
        for k in p.arrays:
            if "bn_" in k:
                p.arrays[k] = p.arrays[k] + make_rng(12).uniform(-0.3, 0.3, p.arrays[k].shape)
        for k in p.buffers:
            p.buffers[k] = p.buffers[k] + make_rng(13).uniform(0.1, 0.5, p.buffers[k].shape)
        rng = make_rng(14)
        x = rng.standard_normal((9, spec.in_dim))
        r = rng.standard_normal((9, spec.out_dim))
        _, grads, gx = _loss_and_grads(p, x, r, training)
        for name, g in grads.items():
            num = np.array([_numeric(p, x, r, name, idx, training=training) for idx in np.ndindex(g.shape)])
            err = np.linalg.norm(num - g.ravel()) / max(np.linalg.norm(num), 1e-8)
            if np.linalg.norm(num) < 1e-8:
                err = np.abs(g).max()  # e.g. pre-BN biases have zero gradient in training mode
            assert err <= 1e-4, name
        num_x = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            xp, xm = x.copy(), x.copy()
            xp[idx] += 1e-6
            xm[idx] -= 1e-6
            num_x[idx] = (np.sum(enc.forward(p, xp, training)[0] * r) - np.sum(enc.forward(p, xm, training)[0] * r)) / 2e-6
        assert np.linalg.norm(num_x - gx) / np.linalg.norm(num_x) <= 1e-4


class TestFusion:
    def test_zero_weights(self):
        p = enc.init_params(enc.fusion_spec(2, 4), 0)
        for k in p.arrays:
            p.arrays[k][...] = 0
        out, _ = enc.fuse(p, np.ones((3, 2)), np.ones((3, 2)))
        np.testing.assert_array_equal(out, 0.0)

    def test_sum_layer(self):
        p = enc.init_params(enc.MlpSpec((2, 1)), 0)
        p.arrays["layer0.weight"] = np.array([[1.0, 1.0]])
        a, b = make_rng(1).standard_normal((5, 1)), make_rng(2).standard_normal((5, 1))
        np.testing.assert_allclose(enc.fuse(p, a, b)[0], a + b)

    def test_matches_forward_on_concatenation(self):
        p = enc.init_params(enc.fusion_spec(3, 7), 5)
        a, b = make_rng(3).standard_normal((6, 3)), make_rng(4).standard_normal((6, 3))
        np.testing.assert_array_equal(enc.fuse(p, a, b)[0], enc.forward(p, np.hstack([a, b]))[0])
        assert not np.allclose(enc.fuse(p, a, b)[0], enc.fuse(p, b, a)[0])

    def test_backward_splits_input_gradient(self):
        p = enc.init_params(enc.fusion_spec(3, 7), 5)
        a, b = make_rng(3).standard_normal((6, 3)), make_rng(4).standard_normal((6, 3))
        out, cache = enc.fuse(p, a, b)
        up = make_rng(5).standard_normal(out.shape)
        _, ga, gb = enc.fuse_backward(p, cache, up)
        _, gx = enc.backward(p, cache, up)
        np.testing.assert_array_equal(np.hstack([ga, gb]), gx)

    def test_shape_mismatch(self):
        p = enc.init_params(enc.fusion_spec(3, 4), 0)
        with pytest.raises(ValueError):
            enc.fuse(p, np.ones((4, 3)), np.ones((5, 3)))


class TestCheckpoint:
    @pytest.mark.parametrize("bn", [False, (True, False)])
    def test_round_trip_is_exact(self, tmp_path, bn):
        p = enc.init_params(enc.MlpSpec((3, 5, 4, 2), bn), 7)
        for k in p.buffers:
            p.buffers[k] = make_rng(8).standard_normal(p.buffers[k].shape)
        path = tmp_path / "net.txt"
        enc.save_params(p, path)
        q = enc.load_params(path)
        assert q.spec == p.spec
        assert set(q.arrays) == set(p.arrays) and set(q.buffers) == set(p.buffers)
        for k in p.arrays:
            np.testing.assert_array_equal(q.arrays[k], p.arrays[k])
        for k in p.buffers:
            np.testing.assert_array_equal(q.buffers[k], p.buffers[k])

    def test_header_and_bad_magic(self, tmp_path):
        path = tmp_path / "net.txt"
        enc.save_params(enc.init_params(enc.MlpSpec((2, 2)), 0), path)
        lines = path.read_text().splitlines()
        assert lines[0] == "mfmc-lab-params 1" and lines[1] == "widths 2 2"
        path.write_text("other 1\n" + "\n".join(lines[1:]))
        with pytest.raises(ValueError):
            enc.load_params(path)


def test_flatten_prefixes():
    nets = [enc.init_params(enc.MlpSpec((2, 3)), s) for s in (0, 1)]
    flat = enc.flatten(nets)
    assert sorted(flat) == ["net0.layer0.bias", "net0.layer0.weight", "net1.layer0.bias", "net1.layer0.weight"]
