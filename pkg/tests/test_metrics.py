import numpy as np
import pytest
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal.windows import gaussian as gaussian_taps

from wex.metrics import (
    C1,
    C2,
    WINDOW_SIGMA,
    WINDOW_SIZE,
    _WINDOW,
    photometric_loss,
    photometric_loss_with_grad,
    psnr,
    ssim,
    ssim_with_grad,
)

# closed-form constant-image values, frozen from an exact-fraction evaluation
SSIM_ZERO_VS_ONE = 9.999000099990002e-05
SSIM_04_VS_03 = 0.960015993602559
PHOTOMETRIC_04_VS_03 = 0.08799680127948821


def ssim_reference(a, b):
    """Independent route: sliding windows + centered moments."""
    taps = gaussian_taps(WINDOW_SIZE, WINDOW_SIGMA)
    w = np.outer(taps, taps)
    w /= w.sum()
    a = np.atleast_3d(np.asarray(a, dtype=np.float64))
    b = np.atleast_3d(np.asarray(b, dtype=np.float64))
    vals = []
    for c in range(a.shape[2]):
        aw = sliding_window_view(a[:, :, c], (WINDOW_SIZE, WINDOW_SIZE))
        bw = sliding_window_view(b[:, :, c], (WINDOW_SIZE, WINDOW_SIZE))
        mx = (aw * w).sum(axis=(-1, -2))
        my = (bw * w).sum(axis=(-1, -2))
        vx = (((aw - mx[..., None, None]) ** 2) * w).sum(axis=(-1, -2))
        vy = (((bw - my[..., None, None]) ** 2) * w).sum(axis=(-1, -2))
        cov = (((aw - mx[..., None, None]) * (bw - my[..., None, None])) * w
               ).sum(axis=(-1, -2))
        s = ((2 * mx * my + C1) * (2 * cov + C2)
             / ((mx ** 2 + my ** 2 + C1) * (vx + vy + C2)))
        vals.append(s.mean())
    return float(np.mean(vals))


def random_pair(seed, shape=(20, 24, 3)):
    rng = np.random.default_rng(seed)
    return rng.uniform(0, 1, shape), rng.uniform(0, 1, shape)


class TestSsim:
    def test_window_normalized(self):
        assert _WINDOW.shape == (11, 11)
        assert _WINDOW.sum() == pytest.approx(1.0, abs=1e-12)

    def test_self_similarity(self):
        a, _ = random_pair(0)
        assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)

    def test_constant_images_golden(self):
        zeros = np.zeros((16, 16))
        ones = np.ones((16, 16))
        assert ssim(zeros, ones) == pytest.approx(SSIM_ZERO_VS_ONE, abs=1e-15)
        a = np.full((16, 16), 0.4)
        b = np.full((16, 16), 0.3)
        assert ssim(a, b) == pytest.approx(SSIM_04_VS_03, abs=1e-12)

    def test_symmetry(self):
        a, b = random_pair(1)
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-9)

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_independent_reference(self, seed):
        a, b = random_pair(seed)
        assert ssim(a, b) == pytest.approx(ssim_reference(a, b), abs=1e-10)

    def test_grayscale_input(self):
        a, b = random_pair(2, shape=(15, 13))
        assert ssim(a, b) == pytest.approx(ssim_reference(a, b), abs=1e-10)

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((16, 16)), np.zeros((16, 17)))
        with pytest.raises(ValueError):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))

    def test_gradient_matches_finite_differences(self):
        a, b = random_pair(3, shape=(14, 14, 3))
        value, grad = ssim_with_grad(a, b)
        assert value == pytest.approx(ssim(a, b), abs=1e-12)
        rng = np.random.default_rng(4)
        h = 1e-6
        for _ in range(40):
            i, j, c = (int(rng.integers(14)), int(rng.integers(14)),
                       int(rng.integers(3)))
            ap = a.copy()
            ap[i, j, c] += h
            am = a.copy()
            am[i, j, c] -= h
            fd = (ssim(ap, b) - ssim(am, b)) / (2 * h)
            assert grad[i, j, c] == pytest.approx(fd, rel=1e-4, abs=1e-9)

    def test_grayscale_gradient_shape(self):
        a, b = random_pair(5, shape=(12, 12))
        _, grad = ssim_with_grad(a, b)
        assert grad.shape == (12, 12)


class TestPsnr:
    def test_known_value(self):
        a = np.zeros((8, 8))
        b = np.full((8, 8), 0.5)
        assert psnr(a, b) == pytest.approx(10 * np.log10(4.0))

    def test_identical_is_infinite(self):
        a = np.full((4, 4), 0.3)
        assert psnr(a, a) == np.inf


class TestPhotometricLoss:
    def test_identical_images_zero(self):
        a, _ = random_pair(6)
        assert photometric_loss(a, a) == 0.0

    def test_l1_only(self):
        a, b = random_pair(7)
        assert photometric_loss(a, b, lambda_l1=1.0, lambda_ssim=0.0) == \
            pytest.approx(np.abs(a - b).mean(), abs=1e-12)

    def test_constant_offset_golden(self):
        rendered = np.full((16, 16, 3), 0.4)
        target = np.full((16, 16, 3), 0.3)
        assert photometric_loss(rendered, target) == \
            pytest.approx(PHOTOMETRIC_04_VS_03, abs=1e-12)

    def test_defaults(self):
        a, b = random_pair(8)
        expect = 0.8 * np.abs(a - b).mean() + 0.2 * (1 - ssim(a, b))
        assert photometric_loss(a, b) == pytest.approx(expect, abs=1e-12)

    def test_grad_matches_finite_differences(self):
        a, b = random_pair(9, shape=(13, 13, 3))
        total, l1, s, grad = photometric_loss_with_grad(a, b)
        assert total == pytest.approx(photometric_loss(a, b), abs=1e-12)
        assert l1 == pytest.approx(np.abs(a - b).mean(), abs=1e-12)
        assert s == pytest.approx(ssim(a, b), abs=1e-12)
        rng = np.random.default_rng(10)
        h = 1e-6
        for _ in range(30):
            i, j, c = (int(rng.integers(13)), int(rng.integers(13)),
                       int(rng.integers(3)))
            ap = a.copy()
            ap[i, j, c] += h
            am = a.copy()
            am[i, j, c] -= h
            fd = (photometric_loss(ap, b) - photometric_loss(am, b)) / (2 * h)
            assert grad[i, j, c] == pytest.approx(fd, rel=1e-4, abs=1e-9)
