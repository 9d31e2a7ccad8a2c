"""Dataset directory layout and ingestion.

    <root>/manifest.json
    <root>/clips/<id>/frame_<k>.ppm          k = 0..n_frames-1
    <root>/clips/<id>/depth_<k>.pfm          k = frame index of each target
    <root>/clips/<id>/poses.json             camera-to-world, all frames
    <root>/clips/<id>/intrinsics.json

The manifest is the only ingestion path; it lists every file each clip owns.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..geometry import CameraIntrinsics, Pose
from .formats import read_pfm, read_ppm, write_pfm, write_ppm
from .scene import CONTEXT_INDEX, TARGET_OFFSETS, ClipSample, DatasetParams, generate_clip


class DatasetError(ValueError):
    pass


def save_clip(root: Path, clip: ClipSample) -> dict:
    """Write one clip under root/clips/<id>/ and return its manifest entry."""
    clip_dir = Path(root) / "clips" / clip.clip_id
    clip_dir.mkdir(parents=True, exist_ok=True)
    entry = {"id": clip.clip_id, "frames": [], "depths": {},
             "poses": f"clips/{clip.clip_id}/poses.json",
             "intrinsics": f"clips/{clip.clip_id}/intrinsics.json"}
    for i in range(clip.n_frames):
        rel = f"clips/{clip.clip_id}/frame_{i}.ppm"
        write_ppm(Path(root) / rel, clip.images[i])
        entry["frames"].append(rel)
    for off, depth in sorted(clip.depths.items()):
        frame_idx = CONTEXT_INDEX + off
        rel = f"clips/{clip.clip_id}/depth_{frame_idx}.pfm"
        write_pfm(Path(root) / rel, depth)
        entry["depths"][str(off)] = rel
    with open(clip_dir / "poses.json", "w") as f:
        json.dump({"frames": [p.to_json() for p in clip.cam_poses]}, f, indent=1)
    with open(clip_dir / "intrinsics.json", "w") as f:
        json.dump(clip.intrinsics.to_json(), f, indent=1)
    return entry


def generate_dataset(out_dir, n_clips: int, seed: int, params: DatasetParams) -> Path:
    """Render n_clips deterministic clips and write manifest + files."""
    if n_clips <= 0:
        raise DatasetError(f"gen-data: clip count must be positive, got {n_clips}")
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(n_clips):
        clip = generate_clip(seed + i, params, clip_id=f"clip_{i:04d}")
        entries.append(save_clip(root, clip))
    manifest = {
        "image_size": [params.height, params.width],
        "frame_dt": params.frame_dt,
        "n_frames": params.n_frames,
        "target_offsets": list(TARGET_OFFSETS),
        "context_index": CONTEXT_INDEX,
        "moving_objects": params.moving_objects,
        "seed": seed,
        "clips": entries,
    }
    with open(root / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=1)
    return root / "manifest.json"


def load_clip_dir(root: Path, entry: dict) -> ClipSample:
    root = Path(root)
    images = np.stack([read_ppm(root / rel) for rel in entry["frames"]])
    depths = {int(off): read_pfm(root / rel) for off, rel in entry["depths"].items()}
    with open(root / entry["poses"]) as f:
        poses = [Pose.from_json(d) for d in json.load(f)["frames"]]
    with open(root / entry["intrinsics"]) as f:
        intr = CameraIntrinsics.from_json(json.load(f))
    return ClipSample(images=images, depths=depths, cam_poses=poses,
                      intrinsics=intr, clip_id=entry["id"])


class ClipDataset:
    """Eagerly loaded dataset; a desk-scale set fits comfortably in memory."""

    def __init__(self, root):
        self.root = Path(root)
        manifest_path = self.root / "manifest.json"
        if not manifest_path.exists():
            raise DatasetError(f"no manifest.json under {self.root}")
        with open(manifest_path) as f:
            self.manifest = json.load(f)
        missing = [rel for e in self.manifest["clips"]
                   for rel in (*e["frames"], *e["depths"].values(), e["poses"], e["intrinsics"])
                   if not (self.root / rel).exists()]
        if missing:
            raise DatasetError(f"manifest lists missing files, e.g. {missing[0]}")
        self.clips = [load_clip_dir(self.root, e) for e in self.manifest["clips"]]

    def __len__(self):
        return len(self.clips)

    def __getitem__(self, i) -> ClipSample:
        return self.clips[i]

    @property
    def image_size(self):
        return tuple(self.manifest["image_size"])
