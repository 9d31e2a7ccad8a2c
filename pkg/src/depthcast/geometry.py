"""Pinhole projection, rigid transforms, and differentiable warp grids.

Pixel coordinate convention: the center of pixel column ``i`` sits at the
continuous coordinate ``i + 0.5``, so normalized sampling coordinates obey
``g = 2 u / N - 1`` and the identity pose reproduces the exact self-sampling
grid. The reprojection pipeline is explicit backproject -> rigid transform ->
project with a divide by the (clamped) depth, so that invalid points can be
masked rather than poisoning the loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import tensor as T
from .core.tensor import Tensor

Z_EPS = 1e-3  # points with camera-frame depth below this are flagged invalid


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def validate(self, width: int, height: int) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"intrinsics: focal lengths must be positive, got {self.fx}, {self.fy}")
        if not (0 < self.cx < width) or not (0 < self.cy < height):
            raise ValueError(f"intrinsics: principal point ({self.cx}, {self.cy}) "
                             f"outside image {width}x{height}")

    def flipped(self, width: int) -> "CameraIntrinsics":
        return CameraIntrinsics(self.fx, self.fy, width - self.cx, self.cy)

    def to_json(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}

    @classmethod
    def from_json(cls, d: dict) -> "CameraIntrinsics":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]))


class Pose:
    """SE(3) transform y = R x + t; rotation/translation may carry a batch dim.

    Both fields are tensors so that network-predicted poses stay inside the
    autodiff graph; ground-truth poses are just constant tensors.
    """

    def __init__(self, rotation, translation):
        self.rotation = T.as_tensor(rotation)
        self.translation = T.as_tensor(translation)
        if self.rotation.shape[-2:] != (3, 3) or self.translation.shape[-1] != 3:
            raise ValueError(f"pose: bad shapes {self.rotation.shape}, {self.translation.shape}")

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3, dtype=np.float32), np.zeros(3, dtype=np.float32))

    @classmethod
    def from_rt(cls, r: np.ndarray, t: np.ndarray) -> "Pose":
        return cls(np.asarray(r, dtype=np.float32), np.asarray(t, dtype=np.float32))

    def compose(self, other: "Pose") -> "Pose":
        """Returns the transform x -> self(other(x))."""
        r = T.matmul(self.rotation, other.rotation)
        t_col = other.translation.reshape(*other.translation.shape, 1)
        t = T.matmul(self.rotation, t_col).reshape(other.translation.shape) + self.translation
        return Pose(r, t)

    def inverse(self) -> "Pose":
        nd = self.rotation.ndim
        rt = T.transpose(self.rotation, tuple(range(nd - 2)) + (nd - 1, nd - 2))
        t_col = self.translation.reshape(*self.translation.shape, 1)
        t = -T.matmul(rt, t_col).reshape(self.translation.shape)
        return Pose(rt, t)

    def validate(self, tol: float = 1e-5) -> None:
        r = self.rotation.data.astype(np.float64)
        rtr = r.swapaxes(-1, -2) @ r
        eye = np.eye(3)
        if np.max(np.abs(rtr - eye)) > tol:
            raise ValueError(f"pose: rotation not orthonormal (max dev {np.max(np.abs(rtr - eye)):.2e})")
        det = np.linalg.det(r)
        if np.max(np.abs(det - 1.0)) > tol:
            raise ValueError(f"pose: rotation determinant {det} != +1")

    def to_json(self) -> dict:
        if self.rotation.ndim != 2:
            raise ValueError("pose: only unbatched poses serialize to JSON")
        return {"rotation": [float(v) for v in self.rotation.data.ravel()],
                "translation": [float(v) for v in self.translation.data.ravel()]}

    @classmethod
    def from_json(cls, d: dict) -> "Pose":
        r = np.asarray(d["rotation"], dtype=np.float32).reshape(3, 3)
        t = np.asarray(d["translation"], dtype=np.float32)
        return cls(r, t)

    def __repr__(self):
        return f"Pose(rotation={tuple(self.rotation.shape)}, translation={tuple(self.translation.shape)})"


def pose_compose(a: Pose, b: Pose) -> Pose:
    return a.compose(b)


def pose_invert(p: Pose) -> Pose:
    return p.inverse()


def relative_pose(cam_to_world_tgt: Pose, cam_to_world_src: Pose) -> Pose:
    """Transform taking target-camera coordinates into source-camera coordinates."""
    return cam_to_world_src.inverse().compose(cam_to_world_tgt)


def axis_angle_to_matrix(v) -> Tensor:
    """Rodrigues rotation about axis v/|v| by angle |v|; v=0 gives identity.

    Accepts (..., 3); differentiable everywhere (a tiny epsilon regularizes
    the angle so the zero-rotation case stays exact and finite).
    """
    v = T.as_tensor(v)
    if v.shape[-1] != 3:
        raise ValueError(f"axis_angle_to_matrix: expected (..., 3), got {tuple(v.shape)}")
    theta2 = (v * v).sum(axis=-1, keepdims=True) + 1e-24
    theta = T.sqrt(theta2)
    f1 = T.sin(theta) / theta                    # sin(t)/t -> 1 at t = 0
    f2 = (1.0 - T.cos(theta)) / theta2           # (1-cos t)/t^2 -> 1/2 at t = 0

    x = v[..., 0:1]
    y = v[..., 1:2]
    z = v[..., 2:3]
    zero = x * 0.0
    row0 = T.stack([zero, -z, y], axis=-1)
    row1 = T.stack([z, zero, -x], axis=-1)
    row2 = T.stack([-y, x, zero], axis=-1)
    k = T.concat([row0, row1, row2], axis=-2)    # (..., 3, 3) skew matrix
    k2 = T.matmul(k, k)

    eye = Tensor(np.eye(3, dtype=np.float32))
    f1m = f1.reshape(*f1.shape[:-1], 1, 1)
    f2m = f2.reshape(*f2.shape[:-1], 1, 1)
    return eye + f1m * k + f2m * k2


def depth_from_activation(sigma, d_min: float, d_max: float) -> Tensor:
    """Map a sigmoid activation in [0, 1] to depth via D = 1/(a*sigma + b).

    a and b are fixed so sigma=0 gives d_max and sigma=1 gives d_min.
    """
    if d_min <= 0 or d_max <= d_min:
        raise ValueError(f"depth_from_activation: need 0 < d_min < d_max, got ({d_min}, {d_max})")
    b = 1.0 / d_max
    a = 1.0 / d_min - 1.0 / d_max
    sigma = T.as_tensor(sigma)
    return 1.0 / (sigma * np.float32(a) + np.float32(b))


def disparity_range(d_min: float, d_max: float):
    """The (a, b) pair used by depth_from_activation."""
    return 1.0 / d_min - 1.0 / d_max, 1.0 / d_max


_DIR_CACHE = {}


def _pixel_rays(k: CameraIntrinsics, height: int, width: int) -> np.ndarray:
    key = (k, height, width)
    dirs = _DIR_CACHE.get(key)
    if dirs is None:
        xs = (np.arange(width, dtype=np.float32) + 0.5 - k.cx) / k.fx
        ys = (np.arange(height, dtype=np.float32) + 0.5 - k.cy) / k.fy
        gx, gy = np.meshgrid(xs, ys)
        dirs = np.stack([gx.ravel(), gy.ravel(), np.ones(height * width, np.float32)])
        _DIR_CACHE[key] = dirs.astype(np.float32).reshape(1, 3, height * width)
        dirs = _DIR_CACHE[key]
    return dirs


def build_warp_grid(depth, k: CameraIntrinsics, pose_tgt_to_src: Pose, z_eps: float = Z_EPS):
    """Per-pixel sampling grid realizing backproject -> transform -> project.

    depth: (B, 1, H, W) positive target-frame depth (differentiable).
    Returns (grid, valid): grid is (B, H, W, 2) in normalized [-1, 1]
    coordinates; valid is a constant bool array (B, 1, H, W), false where the
    transformed point lands behind the camera or outside the frame.
    """
    depth = T.as_tensor(depth)
    if depth.ndim != 4 or depth.shape[1] != 1:
        raise ValueError(f"build_warp_grid: depth must be (B,1,H,W), got {tuple(depth.shape)}")
    b, _, h, w = depth.shape
    dirs = Tensor(_pixel_rays(k, h, w))

    cam = depth.reshape(b, 1, h * w) * dirs                      # (B, 3, HW)
    rot = pose_tgt_to_src.rotation
    tr = pose_tgt_to_src.translation
    if rot.ndim == 2:
        rot = rot.reshape(1, 3, 3)
        tr = tr.reshape(1, 3, 1)
    else:
        tr = tr.reshape(-1, 3, 1)
    moved = T.matmul(rot, cam) + tr                              # (B, 3, HW)

    x = moved[:, 0:1, :]
    y = moved[:, 1:2, :]
    z = moved[:, 2:3, :]
    zc = T.clamp(z, lo=z_eps)
    u = x * np.float32(k.fx) / zc + np.float32(k.cx)
    v = y * np.float32(k.fy) / zc + np.float32(k.cy)
    gx = u * np.float32(2.0 / w) - 1.0
    gy = v * np.float32(2.0 / h) - 1.0

    grid = T.concat([gx, gy], axis=1).reshape(b, 2, h, w).transpose(0, 2, 3, 1)
    valid = ((z.data > z_eps)
             & (np.abs(gx.data) <= 1.0)
             & (np.abs(gy.data) <= 1.0)).reshape(b, 1, h, w)
    return grid, valid


def warp_image(src, grid) -> Tensor:
    """Resample a source image at the warp grid (bilinear, border-clamped)."""
    return T.grid_sample(src, grid)
