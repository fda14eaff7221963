import math

import numpy as np
import pytest

from flowvad.errors import InputError
from flowvad.media import PSNR_CAP, mse, patch_psnr_mask, preprocess, psnr


def bilinear_reference(img, out_h, out_w):
    """Loop bilinear resampler with half-pixel centers and edge clamping."""
    h, w, c = img.shape
    out = np.zeros((out_h, out_w, c))
    for i in range(out_h):
        y = max((i + 0.5) * h / out_h - 0.5, 0.0)
        y0 = min(int(math.floor(y)), h - 1)
        y1 = min(y0 + 1, h - 1)
        fy = y - y0
        for j in range(out_w):
            x = max((j + 0.5) * w / out_w - 0.5, 0.0)
            x0 = min(int(math.floor(x)), w - 1)
            x1 = min(x0 + 1, w - 1)
            fx = x - x0
            top = (1 - fx) * img[y0, x0] + fx * img[y0, x1]
            bot = (1 - fx) * img[y1, x0] + fx * img[y1, x1]
            out[i, j] = (1 - fy) * top + fy * bot
    return out


class TestPreprocess:
    def test_constant_downscale(self):
        raw = np.full((512, 512, 3), 128, dtype=np.uint8)
        out = preprocess(raw)
        assert out.shape == (256, 256, 3)
        np.testing.assert_allclose(out, 128 / 255, atol=1e-7)

    def test_identity_resize_scales_by_255(self):
        raw = np.random.default_rng(0).integers(0, 256, (256, 256, 3), dtype=np.uint8)
        np.testing.assert_allclose(preprocess(raw), raw / 255.0, atol=1e-7)

    def test_grayscale_matches_reference_bilinear(self):
        rng = np.random.default_rng(1)
        raw = rng.integers(0, 256, (240, 360), dtype=np.uint8)
        out = preprocess(raw)
        assert out.shape == (256, 256, 3)
        np.testing.assert_array_equal(out[..., 0], out[..., 1])
        np.testing.assert_array_equal(out[..., 0], out[..., 2])
        ref = bilinear_reference(raw[..., None] / 255.0, 256, 256)[..., 0]
        np.testing.assert_allclose(out[..., 0], ref, atol=1e-5)

    def test_idempotent_on_unit_frames(self):
        frame = np.random.default_rng(2).random((256, 256, 3)).astype(np.float32)
        once = preprocess(frame)
        np.testing.assert_allclose(once, frame, atol=1e-7)
        np.testing.assert_allclose(preprocess(once), once, atol=1e-7)

    @pytest.mark.parametrize("bad", [np.zeros((0, 5), np.uint8), np.zeros((4, 4, 2), np.uint8),
                                     np.zeros((2, 2, 2, 2), np.uint8)])
    def test_malformed(self, bad):
        with pytest.raises(InputError):
            preprocess(bad)

    def test_output_in_unit_range(self):
        raw = np.random.default_rng(3).integers(0, 65536, (50, 70, 3), dtype=np.uint16)
        out = preprocess(raw, size=32)
        assert out.shape == (32, 32, 3)
        assert out.min() >= 0 and out.max() <= 1


class TestMSEAndPSNR:
    def test_mse_examples(self):
        ones = np.ones((4, 4, 3))
        assert mse(ones, ones) == 0
        assert mse(ones, np.zeros_like(ones)) == 1.0
        assert abs(mse(ones, np.full_like(ones, 0.9)) - 0.01) < 1e-12

    def test_psnr_examples(self):
        ones = np.ones((4, 4, 3))
        assert psnr(ones, ones) == PSNR_CAP
        assert psnr(ones, np.zeros_like(ones)) == 0.0
        assert abs(psnr(ones, np.full_like(ones, 0.9)) - 20.0) < 1e-9

    def test_shape_mismatch(self):
        with pytest.raises(InputError):
            mse(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))
        with pytest.raises(InputError):
            psnr(np.zeros((2, 2, 3)), np.zeros((3, 2, 3)))

    def test_black_truth_is_finite(self):
        assert np.isfinite(psnr(np.zeros((4, 4, 3)), np.full((4, 4, 3), 0.5)))

    def test_mse_symmetric_psnr_not(self):
        rng = np.random.default_rng(4)
        a = rng.random((8, 8, 3)) * 0.5
        b = rng.random((8, 8, 3))
        assert mse(a, b) == mse(b, a)
        assert psnr(a, b) != psnr(b, a)

    def test_psnr_strictly_decreasing_in_mse(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            truth = rng.random((8, 8, 3))
            truth[0, 0, 0] = 1.0  # fix the peak
            noise = rng.normal(size=truth.shape)
            s1, s2 = sorted(rng.uniform(0.01, 0.3, 2))
            p1, p2 = truth + s1 * noise, truth + s2 * noise
            assert mse(truth, p1) < mse(truth, p2)
            assert psnr(truth, p1) > psnr(truth, p2)


def patch_oracle(truth, pred, patch):
    gh, gw = truth.shape[0] // patch, truth.shape[1] // patch
    out = np.zeros((gh, gw))
    for i in range(gh):
        for j in range(gw):
            sq, peak, n = 0.0, 0.0, 0
            for y in range(i * patch, (i + 1) * patch):
                for x in range(j * patch, (j + 1) * patch):
                    for c in range(truth.shape[2]):
                        sq += (truth[y, x, c] - pred[y, x, c]) ** 2
                        peak = max(peak, truth[y, x, c])
                        n += 1
            err = sq / n
            out[i, j] = PSNR_CAP if err == 0 else min(PSNR_CAP, 10 * math.log10(max(peak, 1e-6) ** 2 / err))
    return out


class TestPatchMask:
    def test_identical_frames_at_cap(self):
        f = np.random.default_rng(6).random((256, 256, 3))
        mask = patch_psnr_mask(f, f)
        assert mask.shape == (4, 4)
        assert np.all(mask == PSNR_CAP)

    def test_local_difference(self):
        rng = np.random.default_rng(7)
        truth = rng.random((256, 256, 3))
        pred = truth.copy()
        pred[:64, :64] = rng.random((64, 64, 3))
        mask = patch_psnr_mask(truth, pred)
        assert mask.shape == (4, 4)
        assert mask[0, 0] < PSNR_CAP
        assert np.sum(mask < PSNR_CAP) == 1

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(8)
        truth = rng.random((40, 56, 3))
        pred = np.clip(truth + rng.normal(0, 0.1, truth.shape), 0, 1)
        np.testing.assert_allclose(patch_psnr_mask(truth, pred, 16), patch_oracle(truth, pred, 16), atol=1e-9)

    def test_trailing_partial_patches_dropped(self):
        f = np.zeros((70, 130, 3))
        assert patch_psnr_mask(f, f, 64).shape == (1, 2)

    def test_full_frame_patch_equals_psnr(self):
        rng = np.random.default_rng(9)
        truth = rng.random((64, 64, 3))
        pred = rng.random((64, 64, 3))
        assert patch_psnr_mask(truth, pred, 64)[0, 0] == psnr(truth, pred)

    def test_patch_larger_than_frame(self):
        with pytest.raises(InputError):
            patch_psnr_mask(np.zeros((32, 32, 3)), np.zeros((32, 32, 3)), 64)
