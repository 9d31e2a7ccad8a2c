"""Self-supervised photometric objective.

Per target frame and per scale: upsample the sigmoid disparity to full
resolution, convert to depth, warp both temporal neighbors into the target,
mix SSIM and L1 into a per-pixel error, take the per-pixel minimum over the
two reconstructions, drop pixels where warping does not beat the unwarped
neighbor (auto-masking), and add edge-aware disparity smoothness. The total
sums over targets and scales and averages over the batch.

Pixels whose reprojection is invalid (behind the camera or outside the
frame) are assigned the identity error so the min-reprojection and the mask
discard them naturally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import tensor as T
from .core.tensor import Tensor
from .geometry import CameraIntrinsics, build_warp_grid, depth_from_activation, warp_image


@dataclass
class LossWeights:
    alpha: float = 0.15          # L1 share; SSIM carries (1 - alpha)
    smoothness: float = 1e-3
    c1: float = 0.01 ** 2
    c2: float = 0.03 ** 2
    normalize_disparity: bool = True

    def validate(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.smoothness < 0 or self.c1 <= 0 or self.c2 <= 0:
            raise ValueError("smoothness must be >= 0 and C1, C2 > 0")


def ssim_dissimilarity(x, y, c1: float = 0.01 ** 2, c2: float = 0.03 ** 2) -> Tensor:
    """(1 - SSIM)/2 with 3x3 box statistics, averaged over channels.

    Returns a (B, 1, H, W) map in [0, 1]; zero iff the patches agree.
    """
    x, y = T.as_tensor(x), T.as_tensor(y)
    if x.shape != y.shape:
        raise ValueError(f"ssim: shape mismatch {tuple(x.shape)} vs {tuple(y.shape)}")
    mu_x = T.avg_pool2d(x)
    mu_y = T.avg_pool2d(y)
    sigma_x = T.avg_pool2d(x * x) - mu_x * mu_x
    sigma_y = T.avg_pool2d(y * y) - mu_y * mu_y
    sigma_xy = T.avg_pool2d(x * y) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + np.float32(c1)) * (2.0 * sigma_xy + np.float32(c2))
    den = (mu_x * mu_x + mu_y * mu_y + np.float32(c1)) * (sigma_x + sigma_y + np.float32(c2))
    ssim = num / den
    dissim = T.clamp((1.0 - ssim) * 0.5, 0.0, 1.0)
    return dissim.mean(axis=1, keepdims=True)


def photometric_error(target, reconstruction, weights: LossWeights = LossWeights()) -> Tensor:
    """pe = (1 - alpha) * SSIM-dissimilarity + alpha * channel-mean |diff|."""
    target, reconstruction = T.as_tensor(target), T.as_tensor(reconstruction)
    if target.shape != reconstruction.shape:
        raise ValueError(f"photometric_error: shape mismatch {tuple(target.shape)} "
                         f"vs {tuple(reconstruction.shape)}")
    l1 = (target - reconstruction).abs().mean(axis=1, keepdims=True)
    if weights.alpha == 1.0:
        return l1
    ssim = ssim_dissimilarity(target, reconstruction, weights.c1, weights.c2)
    return np.float32(1.0 - weights.alpha) * ssim + np.float32(weights.alpha) * l1


def min_reprojection(pe_a, pe_b) -> Tensor:
    """Per-pixel minimum of two reprojection error maps (occlusion handling)."""
    return T.minimum(pe_a, pe_b)


def _mask_from_errors(pe_warped, pe_identity) -> np.ndarray:
    """mu = [min over warped errors < min over identity errors], per pixel."""
    warped = np.minimum.reduce([p.data for p in pe_warped])
    ident = np.minimum.reduce([p.data if isinstance(p, Tensor) else p for p in pe_identity])
    return warped < ident


def auto_mask(target, warped_pair, unwarped_pair, weights: LossWeights = LossWeights()) -> np.ndarray:
    """Binary mask keeping pixels where reprojection beats doing nothing.

    warped_pair / unwarped_pair are the two reconstructions and the two raw
    neighbor frames. Ties are excluded (strict inequality).
    """
    with T.no_grad():
        pe_w = [photometric_error(target, w, weights) for w in warped_pair]
        pe_id = [photometric_error(target, u, weights) for u in unwarped_pair]
    return _mask_from_errors(pe_w, pe_id)


def smoothness(disp, image, normalize: bool = True) -> Tensor:
    """Edge-aware first-order smoothness of a disparity map.

    Forward differences; image gradients are channel-mean magnitudes; when
    ``normalize`` is on the disparity is first divided by its spatial mean.
    """
    disp, image = T.as_tensor(disp), T.as_tensor(image)
    if disp.shape[-2:] != image.shape[-2:]:
        raise ValueError(f"smoothness: spatial mismatch {tuple(disp.shape)} vs {tuple(image.shape)}")
    d = disp
    if normalize:
        d = d / (d.mean(axis=(2, 3), keepdims=True) + np.float32(1e-7))
    dx = (d[:, :, :, 1:] - d[:, :, :, :-1]).abs()
    dy = (d[:, :, 1:, :] - d[:, :, :-1, :]).abs()
    with T.no_grad():
        ix = (image[:, :, :, 1:] - image[:, :, :, :-1]).abs().mean(axis=1, keepdims=True)
        iy = (image[:, :, 1:, :] - image[:, :, :-1, :]).abs().mean(axis=1, keepdims=True)
    wx = Tensor(np.exp(-ix.data))
    wy = Tensor(np.exp(-iy.data))
    return (dx * wx).mean() + (dy * wy).mean()


def _box_downsample(img: np.ndarray, factor: int) -> np.ndarray:
    b, c, h, w = img.shape
    return img.reshape(b, c, h // factor, factor, w // factor, factor).mean(axis=(3, 5))


def total_loss(disparities, frames, poses, intrinsics: CameraIntrinsics,
               weights: LossWeights = LossWeights(),
               depth_range=(0.1, 100.0), context_index: int = 3, targets=(0, 1, 3, 5)):
    """Full objective over all targets and scales.

    disparities: {target offset: [disp tensors, full resolution first, each
        half the previous size]}
    frames: constant (B, n_frames, 3, H, W) array covering t-3 .. t+6
    poses: {target offset: (pose to previous neighbor, pose to next neighbor)},
        each mapping target-frame points into the neighbor frame
    Returns (scalar loss, breakdown dict with per-term floats).
    """
    weights.validate()
    d_min, d_max = depth_range
    frames = np.asarray(frames, dtype=np.float32)
    b, n_frames, _, h, w = frames.shape

    total = None
    photo_sum = 0.0
    smooth_sum = 0.0
    mask_fracs = []

    for tgt in targets:
        ti = context_index + tgt
        if ti - 1 < 0 or ti + 1 >= n_frames:
            raise ValueError(f"total_loss: target offset {tgt} needs frames {ti - 1}..{ti + 1}")
        if tgt not in poses:
            raise ValueError(f"total_loss: missing poses for target {tgt}")
        if tgt not in disparities:
            raise ValueError(f"total_loss: missing disparities for target {tgt}")
        i_tgt = Tensor(frames[:, ti])
        i_prev = Tensor(frames[:, ti - 1])
        i_next = Tensor(frames[:, ti + 1])
        pose_prev, pose_next = poses[tgt]

        with T.no_grad():
            pe_id_prev = photometric_error(i_tgt, i_prev, weights)
            pe_id_next = photometric_error(i_tgt, i_next, weights)
        pe_id_min = np.minimum(pe_id_prev.data, pe_id_next.data)

        for scale, disp in enumerate(disparities[tgt]):
            if disp.shape[2] == h and disp.shape[3] == w:
                disp_full = disp
            else:
                disp_full = T.upsample_bilinear(disp, h, w)
            depth = depth_from_activation(disp_full, d_min, d_max)

            pes = []
            for src_img, pose in ((i_prev, pose_prev), (i_next, pose_next)):
                grid, valid = build_warp_grid(depth, intrinsics, pose)
                recon = warp_image(src_img, grid)
                pe = photometric_error(i_tgt, recon, weights)
                pe_id = pe_id_prev if src_img is i_prev else pe_id_next
                pes.append(T.where(valid, pe, pe_id))
            min_pe = min_reprojection(pes[0], pes[1])

            mu = min_pe.data < pe_id_min
            mask_fracs.append(float(mu.mean()))
            l_ph = (min_pe * Tensor(mu.astype(np.float32))).mean()
            photo_sum += float(l_ph.data)
            term = l_ph

            if weights.smoothness > 0.0:
                img_scale = frames[:, ti] if scale == 0 else _box_downsample(frames[:, ti], 2 ** scale)
                l_s = smoothness(disp, Tensor(img_scale), weights.normalize_disparity)
                smooth_sum += weights.smoothness * float(l_s.data)
                term = term + np.float32(weights.smoothness) * l_s

            total = term if total is None else total + term

    breakdown = {
        "total": float(total.data),
        "photometric": photo_sum,
        "smoothness": smooth_sum,
        "mask_fraction": float(np.mean(mask_fracs)),
    }
    return total, breakdown
