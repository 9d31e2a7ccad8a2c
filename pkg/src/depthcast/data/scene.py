"""Procedural raycast scenes with analytic ground-truth depth and poses.

World frame: x right, y down, z forward; the camera starts at the origin
looking along +z. The only geometry is a textured ground plane plus floating
axis-aligned boxes, which is enough to exercise parallax, occlusion, and
(optionally) independent object motion. Textures are multi-octave value
noise anchored to each object so that a moving box carries its texture with
it; colors depend only on surface point and distance, which keeps rendered
frames photometrically consistent under camera motion.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..geometry import CameraIntrinsics, Pose

_RAY_EPS = 0.05  # ignore intersections closer than this
_LIGHT = np.array([0.35, -0.8, 0.49])
_LIGHT_DIR = _LIGHT / np.linalg.norm(_LIGHT)


@dataclass
class BoxSpec:
    center: np.ndarray      # (3,) position at t=0
    size: np.ndarray        # (3,) full extents
    velocity: np.ndarray    # (3,) units/s
    seed: int = 0

    def center_at(self, time: float) -> np.ndarray:
        return self.center + self.velocity * time


@dataclass
class SceneSpec:
    ground_height: float = 1.6            # y of the ground plane (y points down)
    boxes: list = field(default_factory=list)
    cam_velocity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    cam_yaw_rate: float = 0.0             # rad/s about the down axis
    cam_pitch_rate: float = 0.0           # rad/s about the right axis
    cam_pitch_angle: float = 0.0          # fixed downward tilt (rad)
    frame_dt: float = 0.1
    n_frames: int = 10
    texture_seed: int = 0
    background_color: tuple = (0.42, 0.47, 0.55)
    fog_distance: float = 60.0

    def validate(self, d_min: float, d_max: float) -> None:
        for i in range(self.n_frames):
            tau = i * self.frame_dt
            cam_y = self.cam_velocity[1] * tau
            if cam_y >= self.ground_height - 0.2:
                raise ValueError(f"scene: camera dips to the ground plane at frame {i}")
            pose = camera_pose(self, tau)
            r, t = pose.rotation.data.astype(np.float64), pose.translation.data.astype(np.float64)
            for b, box in enumerate(self.boxes):
                z_cam = (r.T @ (box.center_at(tau) - t))[2]
                if not (d_min + 0.5 < z_cam < 0.9 * d_max):
                    raise ValueError(f"scene: box {b} at camera depth {z_cam:.2f} "
                                     f"outside ({d_min + 0.5}, {0.9 * d_max}) at frame {i}")


def camera_pose(scene: SceneSpec, time: float) -> Pose:
    """Camera-to-world pose along the scene's linear + yaw/pitch trajectory."""
    psi = scene.cam_yaw_rate * time
    phi = scene.cam_pitch_angle + scene.cam_pitch_rate * time
    cy_, sy_ = np.cos(psi), np.sin(psi)
    cp_, sp_ = np.cos(phi), np.sin(phi)
    r_yaw = np.array([[cy_, 0.0, sy_], [0.0, 1.0, 0.0], [-sy_, 0.0, cy_]])
    r_pitch = np.array([[1.0, 0.0, 0.0], [0.0, cp_, -sp_], [0.0, sp_, cp_]])
    r = r_yaw @ r_pitch
    t = np.asarray(scene.cam_velocity, dtype=np.float64) * time
    return Pose.from_rt(r.astype(np.float32), t.astype(np.float32))


def _hash01(ix, iy, iz, seed):
    """Deterministic lattice hash -> [0, 1); plain integer mixing, no RNG state."""
    seed_mix = np.uint64((seed * 0x27D4EB2F165667C5) & 0xFFFFFFFFFFFFFFFF)
    h = (ix.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
         ^ iy.astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
         ^ iz.astype(np.uint64) * np.uint64(0x165667B19E3779F9)
         ^ seed_mix)
    h ^= h >> np.uint64(33)
    h *= np.uint64(0xFF51AFD7ED558CCD)
    h ^= h >> np.uint64(33)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _smooth(t):
    return t * t * (3.0 - 2.0 * t)


def value_noise(points, seed, octaves=3):
    """Multi-octave trilinear value noise over (N, 3) points, range [0, 1]."""
    p = np.asarray(points, dtype=np.float64)
    acc = np.zeros(p.shape[0])
    amp, total = 1.0, 0.0
    for o in range(octaves):
        q = p * (2.0 ** o)
        base = np.floor(q)
        f = _smooth(q - base)
        ix, iy, iz = (base[:, 0].astype(np.int64), base[:, 1].astype(np.int64),
                      base[:, 2].astype(np.int64))
        oseed = seed * 1013 + o * 77
        val = 0.0
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    corner = _hash01(ix + dx, iy + dy, iz + dz, oseed)
                    wx = f[:, 0] if dx else 1.0 - f[:, 0]
                    wy = f[:, 1] if dy else 1.0 - f[:, 1]
                    wz = f[:, 2] if dz else 1.0 - f[:, 2]
                    val = val + corner * wx * wy * wz
        acc += amp * val
        total += amp
        amp *= 0.5
    return acc / total


def _texture_rgb(points, seed):
    """Three decorrelated noise channels squeezed into a mid-tone palette."""
    base = value_noise(points, seed)
    out = np.empty((points.shape[0], 3))
    for c in range(3):
        ch = value_noise(points + 17.31 * (c + 1), seed + 101 * (c + 1))
        out[:, c] = 0.15 + 0.7 * (0.55 * base + 0.45 * ch)
    return out


def _raycast(scene: SceneSpec, time: float, dirs_cam: np.ndarray, cam_pose: Pose):
    """Nearest-hit query for a bundle of camera-frame rays (z component 1)."""
    n = dirs_cam.shape[0]
    r_wc = cam_pose.rotation.data.astype(np.float64)
    origin = cam_pose.translation.data.astype(np.float64)
    d_w = dirs_cam @ r_wc.T

    t_best = np.full(n, np.inf)
    hit_kind = np.full(n, -1, dtype=np.int32)   # -1 none, 0 ground, 1+i box i
    box_axis = np.zeros(n, dtype=np.int64)
    box_sign = np.zeros(n)

    dy = d_w[:, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ground = (scene.ground_height - origin[1]) / dy
    ok = (dy > 1e-9) & (t_ground > _RAY_EPS)
    t_best = np.where(ok, t_ground, t_best)
    hit_kind = np.where(ok, 0, hit_kind)

    for i, box in enumerate(scene.boxes):
        c = box.center_at(time)
        half = np.asarray(box.size, dtype=np.float64) / 2.0
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (c - half - origin) / d_w
            t2 = (c + half - origin) / d_w
        tq = np.where(np.isnan(t1), -np.inf, np.minimum(t1, t2))
        tf = np.where(np.isnan(t2), np.inf, np.maximum(t1, t2))
        tn = tq.max(axis=1)
        tfar = tf.min(axis=1)
        hit = (tn <= tfar) & (tn > _RAY_EPS) & (tn < t_best)
        t_best = np.where(hit, tn, t_best)
        hit_kind = np.where(hit, i + 1, hit_kind)
        axis = tq.argmax(axis=1)
        box_axis = np.where(hit, axis, box_axis)
        sign = -np.sign(np.take_along_axis(d_w, axis[:, None], axis=1)[:, 0])
        box_sign = np.where(hit, sign, box_sign)

    return t_best, hit_kind, box_axis, box_sign, d_w, origin


_GROUND_FADE = (18.0, 35.0)  # ground texture contrast fades out over this depth band


def _shade(scene: SceneSpec, time: float, t_best, hit_kind, box_axis, box_sign,
           d_w, origin, d_max: float):
    n = t_best.shape[0]
    depth = np.where(np.isfinite(t_best), np.minimum(t_best, d_max), d_max)
    point = origin + d_w * depth[:, None]

    color = np.tile(np.asarray(scene.background_color), (n, 1))
    ground = hit_kind == 0
    if ground.any():
        # anisotropic coordinates keep the projected texture resolvable at
        # grazing angles; contrast fades out where it would alias anyway
        p = point[ground]
        coords = np.stack([p[:, 0] * 0.9, p[:, 2] * 0.22, np.zeros(p.shape[0])], axis=1)
        tex = _texture_rgb(coords, scene.texture_seed)
        fade = np.clip((_GROUND_FADE[1] - depth[ground]) / (_GROUND_FADE[1] - _GROUND_FADE[0]),
                       0.0, 1.0)[:, None]
        color[ground] = 0.5 + (tex - 0.5) * fade
    for i, box in enumerate(scene.boxes):
        m = hit_kind == i + 1
        if not m.any():
            continue
        local = point[m] - box.center_at(time)
        tex = _texture_rgb(local * 1.8, scene.texture_seed * 7919 + box.seed + 1)
        normal = np.zeros((m.sum(), 3))
        normal[np.arange(m.sum()), box_axis[m]] = box_sign[m]
        shade = 0.72 + 0.28 * np.abs(normal @ _LIGHT_DIR)
        color[m] = tex * shade[:, None]

    hit_any = hit_kind >= 0
    fog = np.exp(-depth / scene.fog_distance)
    color = np.where(hit_any[:, None],
                     color * fog[:, None] + np.asarray(scene.background_color) * (1 - fog[:, None]),
                     color)
    return np.clip(color, 0.0, 1.0), depth


def _ray_grid(k: CameraIntrinsics, width: int, height: int):
    xs = (np.arange(width) + 0.5 - k.cx) / k.fx
    ys = (np.arange(height) + 0.5 - k.cy) / k.fy
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel(), np.ones(width * height)], axis=1)


def render_frame(scene: SceneSpec, time: float, k: CameraIntrinsics, cam_pose: Pose,
                 width: int, height: int, d_min: float = 0.1, d_max: float = 100.0,
                 supersample: int = 2):
    """Raycast one frame; returns (image (3,H,W) in [0,1], depth (H,W)).

    Color is box-averaged over ``supersample``^2 sub-rays per pixel (keeps the
    texture bandlimited for bilinear warping); depth comes from the exact
    pixel-center ray, clamped to d_max. Rays that miss everything get the flat
    background color at d_max.
    """
    ss = max(1, int(supersample))
    hits = _raycast(scene, time, _ray_grid(k, width, height), cam_pose)
    depth = np.where(np.isfinite(hits[0]), np.minimum(hits[0], d_max), d_max)
    if ss == 1:
        color, _ = _shade(scene, time, *hits, d_max)
        img = color.T.reshape(3, height, width)
    else:
        k_ss = CameraIntrinsics(k.fx * ss, k.fy * ss, k.cx * ss, k.cy * ss)
        hits_ss = _raycast(scene, time, _ray_grid(k_ss, width * ss, height * ss), cam_pose)
        color, _ = _shade(scene, time, *hits_ss, d_max)
        img = (color.T.reshape(3, height, ss, width, ss).mean(axis=(2, 4)))
    return (img.astype(np.float32),
            np.clip(depth, d_min, d_max).reshape(height, width).astype(np.float32))


TARGET_OFFSETS = (0, 1, 3, 5)
CONTEXT_INDEX = 3  # frame index of "now" inside the 10-frame clip (t-3 .. t+6)


@dataclass
class ClipSample:
    images: np.ndarray                 # (n_frames, 3, H, W) float32 in [0, 1]
    depths: dict                       # target offset -> (H, W) float32
    cam_poses: list                    # n_frames camera-to-world Pose
    intrinsics: CameraIntrinsics
    clip_id: str = ""

    @property
    def n_frames(self):
        return self.images.shape[0]

    @property
    def image_size(self):
        return self.images.shape[2], self.images.shape[3]


@dataclass
class DatasetParams:
    width: int = 96
    height: int = 64
    fx: float = 80.0
    fy: float = 80.0
    d_min: float = 0.1
    d_max: float = 100.0
    n_boxes: tuple = (5, 9)
    box_size: tuple = (0.9, 2.6)
    box_x: tuple = (-6.0, 6.0)
    box_y: tuple = (-1.6, 1.1)
    box_z: tuple = (3.5, 22.0)
    cam_forward_speed: tuple = (0.7, 1.7)
    # magnitude ranges with a random sign: every clip carries enough lateral
    # and rotational flow that no image region sits at a motion dead-spot
    cam_lateral_speed: tuple = (0.35, 0.9)
    cam_yaw_rate: tuple = (0.12, 0.3)
    cam_pitch_rate: tuple = (0.06, 0.15)
    # fixed downward tilt keeps most ground pixels at learnable depths
    cam_pitch_angle: tuple = (0.16, 0.24)
    box_speed: tuple = (0.4, 1.3)      # used only when moving_objects
    moving_objects: bool = False
    frame_dt: float = 0.1
    n_frames: int = 10

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.fx, self.fy, self.width / 2.0, self.height / 2.0)


def sample_scene(rng: np.random.Generator, params: DatasetParams) -> SceneSpec:
    n_boxes = int(rng.integers(params.n_boxes[0], params.n_boxes[1] + 1))
    boxes = []
    horizon = (params.n_frames - 1) * params.frame_dt
    fwd = rng.uniform(*params.cam_forward_speed)
    lat = rng.uniform(*params.cam_lateral_speed) * rng.choice([-1.0, 1.0])
    cam_velocity = np.array([lat, 0.0, fwd])
    for b in range(n_boxes):
        center = np.array([rng.uniform(*params.box_x),
                           rng.uniform(*params.box_y),
                           rng.uniform(*params.box_z)])
        size = rng.uniform(params.box_size[0], params.box_size[1], size=3)
        if params.moving_objects:
            ang = rng.uniform(0, 2 * np.pi)
            speed = rng.uniform(*params.box_speed)
            velocity = np.array([np.cos(ang), 0.0, np.sin(ang)]) * speed
        else:
            velocity = np.zeros(3)
        # keep the box comfortably in front of the camera over the whole clip
        rel_end = center + velocity * horizon - cam_velocity * horizon
        if rel_end[2] < params.d_min + 2.0 or center[2] < params.d_min + 2.0:
            center[2] += 4.0
        boxes.append(BoxSpec(center=center, size=size, velocity=velocity,
                             seed=int(rng.integers(0, 2 ** 31))))
    return SceneSpec(
        ground_height=rng.uniform(1.4, 1.9),
        boxes=boxes,
        cam_velocity=cam_velocity,
        cam_yaw_rate=rng.uniform(*params.cam_yaw_rate) * rng.choice([-1.0, 1.0]),
        cam_pitch_rate=rng.uniform(*params.cam_pitch_rate) * rng.choice([-1.0, 1.0]),
        cam_pitch_angle=rng.uniform(*params.cam_pitch_angle),
        frame_dt=params.frame_dt,
        n_frames=params.n_frames,
        texture_seed=int(rng.integers(0, 2 ** 31)),
    )


def render_clip(scene: SceneSpec, params: DatasetParams, clip_id: str = "") -> ClipSample:
    k = params.intrinsics()
    images = np.empty((scene.n_frames, 3, params.height, params.width), dtype=np.float32)
    poses = []
    depths = {}
    wanted = {CONTEXT_INDEX + off: off for off in TARGET_OFFSETS}
    for i in range(scene.n_frames):
        tau = i * scene.frame_dt
        pose = camera_pose(scene, tau)
        img, depth = render_frame(scene, tau, k, pose, params.width, params.height,
                                  params.d_min, params.d_max)
        images[i] = img
        poses.append(pose)
        if i in wanted:
            depths[wanted[i]] = depth
    return ClipSample(images=images, depths=depths, cam_poses=poses,
                      intrinsics=k, clip_id=clip_id)


def generate_clip(seed: int, params: DatasetParams, clip_id: str = "") -> ClipSample:
    """Deterministic clip from a seed: sample a scene, validate, render."""
    rng = np.random.default_rng(seed)
    scene = sample_scene(rng, params)
    scene.validate(params.d_min, params.d_max)
    return render_clip(scene, params, clip_id=clip_id or f"clip_{seed:06d}")


def _apply_color_jitter(images, brightness, contrast, saturation):
    x = images.astype(np.float32)
    gray = x.mean(axis=-3, keepdims=True)
    x = gray + (x - gray) * saturation
    x = 0.5 + (x - 0.5) * contrast
    x = x * brightness
    return np.clip(x, 0.0, 1.0)


_MIRROR = np.diag([-1.0, 1.0, 1.0]).astype(np.float32)


def flip_clip(clip: ClipSample) -> ClipSample:
    """Mirror images, depths, intrinsics, and poses about the camera x axis."""
    width = clip.images.shape[3]
    poses = [Pose.from_rt(_MIRROR @ p.rotation.data @ _MIRROR, _MIRROR @ p.translation.data)
             for p in clip.cam_poses]
    return replace(
        clip,
        images=np.ascontiguousarray(clip.images[..., ::-1]),
        depths={k: np.ascontiguousarray(v[:, ::-1]) for k, v in clip.depths.items()},
        cam_poses=poses,
        intrinsics=clip.intrinsics.flipped(width),
    )


def augment(clip: ClipSample, seed: int, flip_prob: float = 0.5) -> ClipSample:
    """Horizontal flip (p=0.5) plus clip-consistent color jitter.

    The same jitter parameters apply to every frame so cross-frame photometric
    consistency is preserved; depth maps are untouched by jitter.
    """
    rng = np.random.default_rng(seed)
    do_flip = rng.random() < flip_prob
    brightness = rng.uniform(0.8, 1.2)
    contrast = rng.uniform(0.8, 1.2)
    saturation = rng.uniform(0.8, 1.2)
    if do_flip:
        clip = flip_clip(clip)
    images = _apply_color_jitter(clip.images, brightness, contrast, saturation)
    return replace(clip, images=images)
