import math

import numpy as np
import pytest
import torch

from flowvad.errors import InputError
from flowvad.losses import distance, frame_loss_terms, loss_dense, loss_frame, loss_margin, loss_opt


def rms_oracle(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)) / len(a))


class TestLossOpt:
    def test_zero_at_equality(self):
        x = np.random.default_rng(0).random((4, 4, 3))
        assert float(loss_opt(x, x)) == 0.0

    def test_constant_offset(self):
        x = np.full((5, 5, 3), 0.3)
        assert abs(float(loss_opt(x + 0.1, x)) - 0.1) < 1e-12

    def test_matches_loop(self):
        rng = np.random.default_rng(1)
        a, b = rng.random((6, 7, 3)), rng.random((6, 7, 3))
        ref = sum(abs(x - y) for x, y in zip(a.ravel(), b.ravel())) / a.size
        assert abs(float(loss_opt(a, b)) - ref) < 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(InputError):
            loss_opt(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))


class TestLossDense:
    def test_zero_at_equality(self):
        x = np.random.default_rng(2).random((4, 4, 3))
        assert float(loss_dense(x, x)) == 0.0

    def test_constant_offset_is_rms(self):
        x = np.full((8, 8, 3), 0.5)
        assert abs(float(loss_dense(x, x + 0.1)) - 0.1) < 1e-12

    def test_matches_loop(self):
        rng = np.random.default_rng(3)
        a, b = rng.random((5, 6, 3)), rng.random((5, 6, 3))
        assert abs(float(loss_dense(a, b)) - rms_oracle(a, b)) < 1e-6

    def test_norm_options(self):
        a, b = np.zeros((2, 2, 3)), np.full((2, 2, 3), 0.5)
        assert abs(float(distance(a, b, "l2")) - math.sqrt(12 * 0.25)) < 1e-12
        assert abs(float(distance(a, b, "mse")) - 0.25) < 1e-12
        with pytest.raises(InputError):
            distance(a, b, "l1")

    def test_batch_mean_of_samples(self):
        rng = np.random.default_rng(4)
        a, b = rng.random((3, 3, 4, 4)), rng.random((3, 3, 4, 4))
        per = [rms_oracle(a[i], b[i]) for i in range(3)]
        assert abs(float(loss_dense(torch.tensor(a), torch.tensor(b))) - np.mean(per)) < 1e-9


class TestLossMargin:
    def test_single_pixel_example(self):
        v = float(loss_margin(np.array([0.8]), np.array([0.7]), np.array([0.5]), alpha=0.2))
        assert abs(v - 0.1) < 1e-12

    def test_inactive_when_prediction_is_the_target(self):
        nxt = np.full((4, 4, 3), 0.9)
        cur = np.full((4, 4, 3), 0.4)
        assert float(loss_margin(nxt, nxt, cur)) == 0.0

    def test_copying_input_costs_distance_plus_alpha(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            nxt, cur = rng.random((6, 6, 3)), rng.random((6, 6, 3))
            alpha = rng.uniform(0, 1)
            d = rms_oracle(nxt, cur)
            assert abs(float(loss_margin(nxt, cur, cur, alpha)) - (d + alpha)) < 1e-12

    def test_anchor_asymmetry(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            nxt, pred, cur = rng.random((3, 4, 4, 3))
            a = float(loss_margin(nxt, pred, cur))
            b = float(loss_margin(cur, pred, nxt))
            if abs(rms_oracle(nxt, pred) - rms_oracle(cur, pred)) > 1e-9:
                assert a != b

    def test_nonnegative(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            nxt, pred, cur = rng.random((3, 3, 3, 3))
            assert float(loss_margin(nxt, pred, cur)) >= 0

    def test_negative_alpha_rejected(self):
        x = np.zeros((2, 2, 3))
        with pytest.raises(InputError):
            loss_margin(x, x, x, alpha=-0.1)

    def test_kink_subgradient_is_zero(self):
        # dyadic values so the hinge argument is exactly 0: 0.125 - 0.375 + 0.25
        pred = torch.tensor([0.625], dtype=torch.float64, requires_grad=True)
        loss = loss_margin(torch.tensor([0.75], dtype=torch.float64), pred,
                           torch.tensor([0.25], dtype=torch.float64), alpha=0.25)
        assert float(loss.detach()) == 0.0
        loss.backward()
        assert float(pred.grad) == 0.0


class TestLossFrame:
    def test_zero_when_exact_and_hinge_inactive(self):
        nxt, cur = np.full((4, 4, 3), 0.8), np.full((4, 4, 3), 0.2)
        assert float(loss_frame(nxt, nxt, cur)) == 0.0

    def test_arithmetic_example(self):
        # dense 0.1 and margin 0.1 from the single-pixel example
        nxt, pred, cur = np.array([0.8]), np.array([0.7]), np.array([0.5])
        assert abs(float(loss_dense(nxt, pred)) - 0.1) < 1e-12
        assert abs(float(loss_frame(nxt, pred, cur, 0.2, 0.004)) - 0.1004) < 1e-12

    def test_composition(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            nxt, pred, cur = rng.random((3, 5, 5, 3))
            alpha, lam = rng.uniform(0, 0.5), rng.uniform(0, 0.1)
            d = rms_oracle(nxt, pred)
            m = max(0.0, d - rms_oracle(cur, pred) + alpha)
            assert abs(float(loss_frame(nxt, pred, cur, alpha, lam)) - (d + lam * m)) < 1e-9

    def test_margin_off_is_dense(self):
        rng = np.random.default_rng(9)
        nxt, pred, cur = rng.random((3, 5, 5, 3))
        terms = frame_loss_terms(nxt, pred, cur, use_margin=False)
        assert abs(float(terms["loss"]) - float(loss_dense(nxt, pred))) < 1e-9
        assert abs(float(loss_frame(nxt, pred, cur, use_margin=False)) - float(loss_dense(nxt, pred))) < 1e-9
