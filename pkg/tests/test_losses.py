"""Photometric objective: SSIM identities, masking semantics, smoothness
hand-values, and the assembled total loss on rendered clips."""

import numpy as np
import pytest

from depthcast.core.tensor import Tensor
from depthcast.data import CONTEXT_INDEX, DatasetParams, generate_clip
from depthcast.geometry import Pose, build_warp_grid, relative_pose, warp_image
from depthcast.losses import (
    LossWeights,
    auto_mask,
    min_reprojection,
    photometric_error,
    smoothness,
    ssim_dissimilarity,
    total_loss,
)

from helpers import assert_close, numerical_gradient


def rnd_img(shape, seed):
    rng = np.random.default_rng(seed)
    base = rng.random(shape).astype(np.float32)
    # light smoothing so images resemble natural content
    base = (base + np.roll(base, 1, -1) + np.roll(base, 1, -2)) / 3.0
    return base.astype(np.float32)


class TestSSIM:
    def test_self_similarity_is_zero(self):
        x = Tensor(rnd_img((2, 3, 8, 10), 0))
        out = ssim_dissimilarity(x, x)
        assert np.array_equal(out.data, np.zeros_like(out.data))

    def test_constant_zero_vs_one_hand_value(self):
        x = Tensor(np.zeros((1, 3, 6, 6), dtype=np.float32))
        y = Tensor(np.ones((1, 3, 6, 6), dtype=np.float32))
        out = ssim_dissimilarity(x, y)
        c1 = 0.01 ** 2
        expected = (1.0 - c1 / (1.0 + c1)) / 2.0  # ~0.49995
        assert np.allclose(out.data, expected, atol=1e-6)

    def test_symmetric(self):
        x = Tensor(rnd_img((1, 3, 7, 9), 1))
        y = Tensor(rnd_img((1, 3, 7, 9), 2))
        assert np.array_equal(ssim_dissimilarity(x, y).data, ssim_dissimilarity(y, x).data)

    def test_range_zero_one(self):
        x = Tensor(rnd_img((2, 3, 8, 8), 3))
        y = Tensor(rnd_img((2, 3, 8, 8), 4))
        out = ssim_dissimilarity(x, y).data
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError, match="mismatch"):
            ssim_dissimilarity(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((1, 3, 4, 5))))


class TestPhotometricError:
    def test_identical_images_give_zero(self):
        x = Tensor(rnd_img((2, 3, 8, 8), 5))
        assert np.array_equal(photometric_error(x, x).data, np.zeros((2, 1, 8, 8), np.float32))

    def test_alpha_one_reduces_to_l1(self):
        x = Tensor(rnd_img((1, 3, 6, 6), 6))
        y = Tensor(rnd_img((1, 3, 6, 6), 7))
        pe = photometric_error(x, y, LossWeights(alpha=1.0))
        l1 = np.abs(x.data - y.data).mean(axis=1, keepdims=True)
        assert np.allclose(pe.data, l1, atol=1e-7)

    def test_mixture_matches_separately_evaluated_branches(self):
        x = Tensor(rnd_img((1, 3, 6, 6), 8))
        y = Tensor((x.data + 0.01).astype(np.float32))
        w = LossWeights(alpha=0.15)
        pe = photometric_error(x, y, w).data
        ssim = ssim_dissimilarity(x, y, w.c1, w.c2).data
        l1 = np.abs(x.data - y.data).mean(axis=1, keepdims=True)
        assert_close(pe, 0.85 * ssim + 0.15 * l1, rtol=1e-5, atol=1e-7, label="pe mixture")


class TestMinReprojectionAndMask:
    def test_elementwise_minimum(self):
        out = min_reprojection(Tensor(np.array([0.5], np.float32)),
                               Tensor(np.array([0.3], np.float32)))
        assert np.allclose(out.data, [0.3])

    def test_min_of_equal_inputs_is_input(self):
        x = Tensor(rnd_img((1, 1, 4, 4), 9))
        assert np.array_equal(min_reprojection(x, x).data, x.data)

    def test_min_bounds_both_inputs(self):
        a, b = Tensor(rnd_img((1, 1, 5, 5), 10)), Tensor(rnd_img((1, 1, 5, 5), 11))
        m = min_reprojection(a, b).data
        assert np.all(m <= a.data) and np.all(m <= b.data)

    def test_static_scene_identity_warp_masks_everything_out(self):
        img = Tensor(rnd_img((1, 3, 8, 8), 12))
        prev = Tensor(rnd_img((1, 3, 8, 8), 13))
        nxt = Tensor(rnd_img((1, 3, 8, 8), 14))
        mu = auto_mask(img, (prev, nxt), (prev, nxt))  # warped == unwarped
        assert not mu.any()

    def test_perfect_warp_masks_everything_in(self):
        img = Tensor(rnd_img((1, 3, 8, 8), 15))
        off = Tensor((img.data + 0.1).astype(np.float32))
        mu = auto_mask(img, (img, img), (off, off))
        assert mu.all()

    def test_moving_camera_clip_keeps_majority_of_textured_pixels(self):
        clip = generate_clip(21, DatasetParams())
        ti = CONTEXT_INDEX
        tgt = Tensor(clip.images[None, ti])
        warped = {}
        for off in (-1, 1):
            pose = relative_pose(clip.cam_poses[ti], clip.cam_poses[ti + off])
            grid, _ = build_warp_grid(Tensor(clip.depths[0][None, None]), clip.intrinsics, pose)
            warped[off] = warp_image(Tensor(clip.images[None, ti + off]), grid)
        mu = auto_mask(tgt, (warped[-1], warped[1]),
                       (Tensor(clip.images[None, ti - 1]), Tensor(clip.images[None, ti + 1])))
        img = clip.images[ti]
        gmag = np.zeros(img.shape[1:], np.float32)
        gmag[:, :-1] += np.abs(np.diff(img, axis=2)).mean(0)
        gmag[:-1, :] += np.abs(np.diff(img, axis=1)).mean(0)
        textured = gmag > 0.02
        assert mu[0, 0][textured].mean() > 0.5


class TestSmoothness:
    def test_constant_disparity_is_zero(self):
        disp = Tensor(np.full((1, 1, 6, 8), 0.37, dtype=np.float32))
        img = Tensor(rnd_img((1, 3, 6, 8), 16))
        out = smoothness(disp, img, normalize=False)
        assert float(out.data) == 0.0
        out_n = smoothness(disp, img, normalize=True)
        assert abs(float(out_n.data)) < 1e-6

    def test_unit_ramp_constant_image_hand_value(self):
        h, w = 5, 7
        ramp = np.broadcast_to(np.arange(w, dtype=np.float32), (1, 1, h, w)).copy()
        img = Tensor(np.full((1, 3, h, w), 0.5, dtype=np.float32))
        out = smoothness(Tensor(ramp), img, normalize=False)
        assert np.allclose(float(out.data), 1.0, atol=1e-6)  # |d/dx| = 1, e^0 = 1

    def test_image_edge_damps_disparity_step(self):
        h, w = 4, 6
        disp = np.zeros((1, 1, h, w), dtype=np.float32)
        disp[:, :, :, 3:] = 1.0
        img_flat = np.full((1, 3, h, w), 0.5, dtype=np.float32)
        img_edge = img_flat.copy()
        img_edge[:, :, :, 3:] = 1.0  # strong edge at the disparity step
        flat = float(smoothness(Tensor(disp), Tensor(img_flat), normalize=False).data)
        edged = float(smoothness(Tensor(disp), Tensor(img_edge), normalize=False).data)
        assert edged < flat


def _gt_disparity(depth, d_min=0.1, d_max=100.0):
    a, b = 1.0 / d_min - 1.0 / d_max, 1.0 / d_max
    return ((1.0 / depth - b) / a).astype(np.float32)


def _clip_losses_setup(clip, sigma_by_target):
    frames = clip.images[None]
    poses = {}
    for tgt in (0, 1, 3, 5):
        ti = CONTEXT_INDEX + tgt
        poses[tgt] = (relative_pose(clip.cam_poses[ti], clip.cam_poses[ti - 1]),
                      relative_pose(clip.cam_poses[ti], clip.cam_poses[ti + 1]))
    disparities = {tgt: [Tensor(sigma_by_target[tgt][None, None])] for tgt in (0, 1, 3, 5)}
    return disparities, frames, poses


class TestTotalLoss:
    def test_gt_depth_beats_constant_depth_baselines(self):
        clip = generate_clip(22, DatasetParams())
        gt_sigma = {t: _gt_disparity(clip.depths[t]) for t in (0, 1, 3, 5)}
        disp, frames, poses = _clip_losses_setup(clip, gt_sigma)
        w = LossWeights(smoothness=0.0)
        gt_loss, gt_break = total_loss(disp, frames, poses, clip.intrinsics, w)
        for const_depth in (2.0, 8.0, 30.0):
            sig = {t: _gt_disparity(np.full_like(clip.depths[t], const_depth)) for t in (0, 1, 3, 5)}
            disp_c, _, _ = _clip_losses_setup(clip, sig)
            c_loss, _ = total_loss(disp_c, frames, poses, clip.intrinsics, w)
            assert gt_break["photometric"] < float(c_loss.data), f"baseline {const_depth}"

    def test_zero_smoothness_weight_zeroes_the_term_exactly(self):
        clip = generate_clip(23, DatasetParams())
        gt_sigma = {t: _gt_disparity(clip.depths[t]) for t in (0, 1, 3, 5)}
        disp, frames, poses = _clip_losses_setup(clip, gt_sigma)
        _, br = total_loss(disp, frames, poses, clip.intrinsics, LossWeights(smoothness=0.0))
        assert br["smoothness"] == 0.0

    def test_loss_finite_and_positive_on_random_outputs(self):
        clip = generate_clip(24, DatasetParams())
        rng = np.random.default_rng(0)
        sig = {t: rng.uniform(0.05, 0.95, clip.depths[t].shape).astype(np.float32)
               for t in (0, 1, 3, 5)}
        disp, frames, poses = _clip_losses_setup(clip, sig)
        loss, br = total_loss(disp, frames, poses, clip.intrinsics, LossWeights())
        assert np.isfinite(float(loss.data)) and float(loss.data) > 0.0
        assert 0.0 <= br["mask_fraction"] <= 1.0

    def test_static_scene_identity_pose_photometric_is_exactly_zero(self):
        # warped == unwarped bitwise, so the strict mask removes every pixel
        clip = generate_clip(25, DatasetParams())
        frames = np.repeat(clip.images[None, CONTEXT_INDEX][:, None], 10, axis=1)
        ident = Pose.identity()
        poses = {t: (ident, ident) for t in (0, 1, 3, 5)}
        rng = np.random.default_rng(1)
        disp = {t: [Tensor(rng.uniform(0.1, 0.9, (1, 1, 64, 96)).astype(np.float32))]
                for t in (0, 1, 3, 5)}
        loss, br = total_loss(disp, frames, poses, clip.intrinsics, LossWeights(smoothness=0.0))
        assert br["photometric"] == 0.0
        assert br["mask_fraction"] == 0.0

    def test_missing_pose_raises(self):
        clip = generate_clip(26, DatasetParams())
        gt_sigma = {t: _gt_disparity(clip.depths[t]) for t in (0, 1, 3, 5)}
        disp, frames, poses = _clip_losses_setup(clip, gt_sigma)
        del poses[3]
        with pytest.raises(ValueError, match="poses for target 3"):
            total_loss(disp, frames, poses, clip.intrinsics)

    def test_gradient_wrt_toy_disparity_matches_fd(self):
        # single target, single scale, 4x4 toy; rel tol 3%
        h = w = 4
        rng = np.random.default_rng(2)
        from depthcast.geometry import CameraIntrinsics
        k = CameraIntrinsics(6.0, 6.0, 2.0, 2.0)
        frames = rnd_img((1, 5, 3, h, w), 3)
        pose = Pose.from_rt(np.eye(3, dtype=np.float32), np.array([0.6, 0.3, 0.2], np.float32))
        poses = {0: (pose, pose.inverse())}
        sigma = rng.uniform(0.3, 0.6, (1, 1, h, w)).astype(np.float32)

        def f(sig_np):
            loss, _ = total_loss({0: [Tensor(sig_np)]}, frames, poses, k,
                                 LossWeights(smoothness=1e-3), depth_range=(0.5, 10.0),
                                 context_index=3, targets=(0,))
            return float(loss.data)

        st = Tensor(sigma, requires_grad=True)
        loss, _ = total_loss({0: [st]}, frames, poses, k, LossWeights(smoothness=1e-3),
                             depth_range=(0.5, 10.0), context_index=3, targets=(0,))
        loss.backward()
        fd = numerical_gradient(f, sigma, eps=1e-3)
        assert_close(st.grad, fd, rtol=0.03, atol=2e-4, label="total_loss grad")
