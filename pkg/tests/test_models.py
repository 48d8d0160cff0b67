import numpy as np
import pytest

from cwkd.errors import ShapeError
from cwkd.gradcheck import finite_diff_grad, relative_error
from cwkd.metrics import count_params
from cwkd.models import (
    ToyNet,
    backward,
    forward,
    init_toynet,
    load_checkpoint,
    save_checkpoint,
)
from cwkd.rng import Rng

from conftest import conv2d_loops


class TestInit:
    def test_same_seed_identical(self):
        a = init_toynet(Rng(5), 8, 4)
        b = init_toynet(Rng(5), 8, 4)
        for (ka, va), (kb, vb) in zip(a.params().items(), b.params().items()):
            assert ka == kb
            np.testing.assert_array_equal(va, vb)

    def test_different_seeds_differ(self):
        a = init_toynet(Rng(5), 8, 4)
        b = init_toynet(Rng(6), 8, 4)
        assert a.conv1_w.ravel()[0] != b.conv1_w.ravel()[0]

    def test_fan_in_bound(self):
        net = init_toynet(Rng(0), 16, 4)
        bound1 = np.sqrt(1.0 / 27.0)   # conv1 fan-in 3*3*3
        assert np.abs(net.conv1_w).max() <= bound1
        assert np.abs(net.conv1_w).max() > 0.5 * bound1
        bound2 = np.sqrt(1.0 / (16 * 9))
        assert np.abs(net.conv2_w).max() <= bound2
        assert not net.conv1_b.any() and not net.conv3_b.any()

    def test_scale_multiplier(self):
        big = init_toynet(Rng(1), 4, 2, scale=10.0)
        small = init_toynet(Rng(1), 4, 2, scale=1.0)
        np.testing.assert_allclose(big.conv1_w, 10.0 * small.conv1_w, atol=1e-12)

    def test_width_and_classes(self):
        net = init_toynet(Rng(0), 12, 5)
        assert net.width == 12 and net.classes == 5


class TestForward:
    def test_zero_weights_score_is_bias(self, rng):
        net = init_toynet(Rng(0), 4, 3, scale=0.0)
        net.conv3_b[:] = [1.0, -2.0, 0.5]
        taps = forward(net, rng.uniform(0, 1, (2, 3, 5, 5)))
        for k, v in enumerate([1.0, -2.0, 0.5]):
            np.testing.assert_allclose(taps.score[:, k], v, atol=1e-15)

    def test_identity_classifier_score_equals_feature(self, rng):
        net = init_toynet(Rng(2), 3, 3)
        net.conv3_w = np.eye(3).reshape(3, 3, 1, 1)
        net.conv3_b = np.zeros(3)
        taps = forward(net, rng.uniform(0, 1, (1, 3, 4, 4)))
        np.testing.assert_array_equal(taps.score, taps.feature)

    def test_matches_composed_loop_oracle(self, rng):
        net = init_toynet(Rng(3), 4, 3)
        x = rng.uniform(0, 1, (1, 3, 5, 5))
        taps = forward(net, x)
        z1 = conv2d_loops(x, net.conv1_w, net.conv1_b, pad=1)
        a1 = np.maximum(z1, 0)
        z2 = conv2d_loops(a1, net.conv2_w, net.conv2_b, pad=1)
        a2 = np.maximum(z2, 0)
        score = conv2d_loops(a2, net.conv3_w, net.conv3_b)
        np.testing.assert_allclose(taps.feature, a2, atol=1e-12)
        np.testing.assert_allclose(taps.score, score, atol=1e-12)

    def test_shapes_and_spatial_preservation(self, rng):
        net = init_toynet(Rng(1), 8, 4)
        taps = forward(net, rng.uniform(0, 1, (2, 3, 9, 7)))
        assert taps.feature.shape == (2, 8, 9, 7)
        assert taps.score.shape == (2, 4, 9, 7)

    def test_channel_mismatch(self, rng):
        net = init_toynet(Rng(1), 8, 4)
        with pytest.raises(ShapeError):
            forward(net, rng.uniform(0, 1, (1, 4, 8, 8)))


class TestBackward:
    def test_zero_tap_grads_give_zero_param_grads(self, rng):
        net = init_toynet(Rng(4), 4, 3)
        x = rng.uniform(0, 1, (1, 3, 5, 5))
        grads = backward(net, x,
                         grad_feature=np.zeros((1, 4, 5, 5)),
                         grad_score=np.zeros((1, 3, 5, 5)))
        for g in grads.values():
            assert not g.any()

    def test_linearity_in_tap_grads(self, rng):
        net = init_toynet(Rng(4), 4, 3)
        x = rng.uniform(0, 1, (1, 3, 5, 5))
        gf = rng.uniform(-1, 1, (1, 4, 5, 5))
        gs = rng.uniform(-1, 1, (1, 3, 5, 5))
        g1 = backward(net, x, grad_feature=gf, grad_score=gs)
        g2 = backward(net, x, grad_feature=2 * gf, grad_score=2 * gs)
        for k in g1:
            np.testing.assert_allclose(g2[k], 2 * g1[k], atol=1e-10)

    def test_score_only_and_feature_only_sum(self, rng):
        net = init_toynet(Rng(4), 4, 3)
        x = rng.uniform(0, 1, (1, 3, 5, 5))
        gf = rng.uniform(-1, 1, (1, 4, 5, 5))
        gs = rng.uniform(-1, 1, (1, 3, 5, 5))
        both = backward(net, x, grad_feature=gf, grad_score=gs)
        feat = backward(net, x, grad_feature=gf)
        score = backward(net, x, grad_score=gs)
        for k in both:
            np.testing.assert_allclose(both[k], feat[k] + score[k], atol=1e-10)

    def test_every_parameter_against_finite_differences(self, rng):
        net = init_toynet(Rng(7), 4, 3)
        x = rng.uniform(0, 1, (1, 3, 5, 5))
        proj_f = rng.uniform(-1, 1, (1, 4, 5, 5))
        proj_s = rng.uniform(-1, 1, (1, 3, 5, 5))
        grads = backward(net, x, grad_feature=proj_f, grad_score=proj_s)

        def scalar(param_name, value):
            trial = net.copy()
            trial_params = trial.params()
            trial_params[param_name][...] = value
            taps = forward(trial, x)
            return float((taps.feature * proj_f).sum() + (taps.score * proj_s).sum())

        for name, value in net.params().items():
            num = finite_diff_grad(lambda v: scalar(name, v), value)
            err, _ = relative_error(grads[name], num)
            assert err < 1e-4, f"{name}: {err}"

    def test_bad_tap_shapes(self, rng):
        net = init_toynet(Rng(4), 4, 3)
        x = rng.uniform(0, 1, (1, 3, 5, 5))
        with pytest.raises(ShapeError):
            backward(net, x, grad_score=np.zeros((1, 3, 4, 4)))
        with pytest.raises(ShapeError):
            backward(net, x, grad_feature=np.zeros((1, 5, 5, 5)))


class TestParameters:
    def test_teacher_has_strictly_more_parameters(self):
        teacher = init_toynet(Rng(0), 32, 4)
        student = init_toynet(Rng(0), 8, 4)
        assert count_params(teacher) > count_params(student)

    def test_count_matches_enumeration(self):
        for width, classes in [(1, 1), (4, 3), (32, 4)]:
            net = init_toynet(Rng(0), width, classes)
            total = sum(v.size for v in net.params().values())
            assert count_params(net) == total

    def test_width_one_hand_count(self):
        net = init_toynet(Rng(0), 1, 1)
        # conv1: 1*3*3*3 + 1; conv2: 1*1*3*3 + 1; conv3: 1*1 + 1
        assert count_params(net) == 28 + 10 + 2


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        net = init_toynet(Rng(11), 8, 4)
        save_checkpoint(net, tmp_path / "ckpt")
        back = load_checkpoint(tmp_path / "ckpt")
        for (ka, va), (kb, vb) in zip(net.params().items(), back.params().items()):
            assert ka == kb
            np.testing.assert_array_equal(va, vb)
        assert back.width == 8 and back.classes == 4

    def test_rejects_foreign_directory(self, tmp_path):
        (tmp_path / "manifest.json").write_text('{"format": "other"}')
        with pytest.raises(ShapeError):
            load_checkpoint(tmp_path)
