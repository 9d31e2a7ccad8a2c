"""Shared test utilities: the finite-difference gradient oracle and the
rendered-scene warp-consistency oracle.

The FD oracle stays independent of the autodiff path: it only calls the
forward function, perturbs inputs one element at a time, and differences the
outputs in float64.
"""

import numpy as np

from depthcast.core.tensor import Tensor


def numerical_gradient(f, x, eps=1e-3):
    """Central finite differences of scalar-valued ``f`` at float32 array ``x``."""
    x = np.asarray(x, dtype=np.float32)
    g = np.zeros(x.shape, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        xp = x.copy()
        xm = x.copy()
        xp[idx] += eps
        xm[idx] -= eps
        # divide by the realized float32 step, not the nominal one
        step = float(xp[idx]) - float(xm[idx])
        g[idx] = (float(f(xp)) - float(f(xm))) / step
        it.iternext()
    return g


def assert_close(actual, expected, rtol=0.02, atol=1e-4, label=""):
    actual = np.asarray(actual, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    err = np.abs(actual - expected)
    bound = atol + rtol * np.abs(expected)
    if not np.all(err <= bound):
        worst = np.unravel_index(np.argmax(err - bound), err.shape)
        raise AssertionError(
            f"{label or 'values'} differ at {worst}: actual={actual[worst]:.6g} "
            f"expected={expected[worst]:.6g} (|err|={err[worst]:.3g}, bound={bound[worst]:.3g})")


def gradcheck(fn, arrays, wrt=None, rtol=0.02, atol=1e-4, eps=1e-3, seed=0):
    """Check autodiff grads of ``fn(*tensors)`` against central differences.

    ``fn`` returns any-shaped tensor; a fixed random projection turns it into
    a scalar so that every output element influences the check.
    """
    arrays = [np.asarray(a, dtype=np.float32) for a in arrays]
    wrt = list(range(len(arrays))) if wrt is None else list(wrt)

    probe = fn(*[Tensor(a) for a in arrays])
    rng = np.random.default_rng(seed)
    proj = rng.normal(size=probe.shape).astype(np.float32)

    tensors = [Tensor(a, requires_grad=(i in wrt)) for i, a in enumerate(arrays)]
    loss = (fn(*tensors) * Tensor(proj)).sum()
    loss.backward()

    for i in wrt:
        def scalar(x, i=i):
            args = [Tensor(x if j == i else arrays[j]) for j in range(len(arrays))]
            # op under test runs in float32; the projection-sum is float64
            return float((fn(*args).data.astype(np.float64) * proj).sum())

        fd = numerical_gradient(scalar, arrays[i], eps=eps)
        ad = tensors[i].grad
        assert ad is not None, f"input {i}: no gradient populated"
        assert_close(ad, fd, rtol=rtol, atol=atol, label=f"grad of input {i}")


def warp_consistency_stats(clip, src_offset=1, grad_thresh=0.02, occl_thresh=0.03):
    """Warp frame t+src_offset into t using ground-truth depth and pose.

    Returns (mae, beat_fraction): mean |warped - target| over valid
    non-occluded pixels, and the fraction of textured pixels where the warp
    strictly beats the unwarped source frame. Occlusions are detected by
    comparing the source depth sampled at the warp against the transformed
    target depth; the valid region is eroded one pixel to drop bilinear halos.
    """
    from depthcast.core import tensor as T
    from depthcast.data.scene import CONTEXT_INDEX
    from depthcast.geometry import build_warp_grid, relative_pose, warp_image

    ti = CONTEXT_INDEX
    si = CONTEXT_INDEX + src_offset
    img_t = clip.images[ti]
    img_s = clip.images[si]
    depth_t = clip.depths[0]
    k = clip.intrinsics
    pose_t2s = relative_pose(clip.cam_poses[ti], clip.cam_poses[si])

    grid, valid = build_warp_grid(Tensor(depth_t[None, None]), k, pose_t2s)
    warped = warp_image(Tensor(img_s[None]), grid).data[0]

    r = pose_t2s.rotation.data.astype(np.float64)
    tr = pose_t2s.translation.data.astype(np.float64)
    h, w = depth_t.shape
    xs = (np.arange(w) + 0.5 - k.cx) / k.fx
    ys = (np.arange(h) + 0.5 - k.cy) / k.fy
    gx, gy = np.meshgrid(xs, ys)
    dirs = np.stack([gx, gy, np.ones_like(gx)], axis=-1)
    z_in_src = (dirs @ r.T)[..., 2] * depth_t + tr[2]

    depth_s = clip.depths.get(src_offset)
    ok = valid[0, 0].copy()
    if depth_s is not None:
        src_depth_at = T.grid_sample(Tensor(depth_s[None, None]), grid).data[0, 0]
        occluded = np.abs(src_depth_at - z_in_src) / np.maximum(z_in_src, 1e-3) > occl_thresh
        ok &= ~occluded
    eroded = ok.copy()
    eroded[1:] &= ok[:-1]
    eroded[:-1] &= ok[1:]
    eroded[:, 1:] &= ok[:, :-1]
    eroded[:, :-1] &= ok[:, 1:]

    err = np.abs(warped - img_t).mean(axis=0)
    base = np.abs(img_s - img_t).mean(axis=0)
    gx_img = np.abs(np.diff(img_t, axis=2)).mean(0)
    gy_img = np.abs(np.diff(img_t, axis=1)).mean(0)
    gmag = np.zeros_like(err)
    gmag[:, :-1] += gx_img
    gmag[:-1, :] += gy_img
    textured = (gmag > grad_thresh) & eroded

    mae = float(err[eroded].mean())
    beat = float((err[textured] < base[textured]).mean())
    return mae, beat
