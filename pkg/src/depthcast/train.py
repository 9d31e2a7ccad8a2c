"""Training loop: deterministic batching, resumable checkpoints, CSV logging.

Batches are keyed by (seed, step) so an interrupted run resumed from a
checkpoint replays exactly the batches the uninterrupted run would have seen;
combined with restored Adam state this makes resume bitwise-equivalent.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core.checkpoint import load_checkpoint, save_checkpoint
from .core.optim import Adam
from .data.dataset import ClipDataset
from .data.scene import CONTEXT_INDEX, augment
from .geometry import Pose, relative_pose
from .losses import LossWeights, total_loss
from .network import DepthForecastModel, NetworkConfig, build_model


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    dataset: str = ""
    out_dir: str = "runs/default"
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 4
    steps: int = 2000
    alpha: float = 0.15
    smoothness_weight: float = 1e-3
    seed: int = 0
    pose_mode: str = "learned"            # "learned" or "known"
    d_min: float = 0.1
    d_max: float = 100.0
    normalize_disparity: bool = True
    augment: bool = True
    flip_prob: float = 0.5
    checkpoint_every: int = 500
    resume: str = ""

    def validate(self):
        if self.lr <= 0:
            raise ValueError(f"train.lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"train.batch_size must be >= 1, got {self.batch_size}")
        if self.pose_mode not in ("learned", "known"):
            raise ValueError(f"train.pose_mode must be 'learned' or 'known', got {self.pose_mode!r}")
        if not self.dataset:
            raise ValueError("train.dataset is required")

    def loss_weights(self) -> LossWeights:
        return LossWeights(alpha=self.alpha, smoothness=self.smoothness_weight,
                           normalize_disparity=self.normalize_disparity)


def make_batch(dataset: ClipDataset, cfg: TrainConfig, step: int):
    """Deterministic batch for a given step: clip choice and augmentation
    derive from (seed, step) only."""
    rng = np.random.default_rng([cfg.seed, step])
    idx = rng.integers(0, len(dataset), cfg.batch_size)
    clips = []
    for i in idx:
        clip = dataset[int(i)]
        if cfg.augment:
            clip = augment(clip, int(rng.integers(0, 2 ** 31)), cfg.flip_prob)
        clips.append(clip)
    k0 = clips[0].intrinsics
    if any(c.intrinsics != k0 for c in clips):
        raise TrainingError("batch mixes differing intrinsics; use a centered principal "
                            "point so flips preserve them")
    frames = np.stack([c.images for c in clips])
    return frames, clips


def _stack_poses(poses):
    return Pose(np.stack([p.rotation.data for p in poses]),
                np.stack([p.translation.data for p in poses]))


def known_warp_poses(clips, targets):
    """Ground-truth target-to-neighbor transforms per target (constants)."""
    out = {}
    for tgt in targets:
        ti = CONTEXT_INDEX + tgt
        prev = [relative_pose(c.cam_poses[ti], c.cam_poses[ti - 1]) for c in clips]
        nxt = [relative_pose(c.cam_poses[ti], c.cam_poses[ti + 1]) for c in clips]
        out[tgt] = (_stack_poses(prev), _stack_poses(nxt))
    return out


def train_step(model: DepthForecastModel, opt: Adam, frames, clips, cfg: TrainConfig,
               step: int):
    """One optimization step; returns the loss breakdown."""
    targets = model.cfg.targets
    try:
        out = model.depth_net(frames[:, :model.cfg.context_length])
        if cfg.pose_mode == "known":
            poses = known_warp_poses(clips, targets)
        else:
            poses = {}
            for tgt in targets:
                ti = CONTEXT_INDEX + tgt
                prev_to_tgt, tgt_to_next = model.pose_net(frames[:, (ti - 1, ti, ti + 1)])
                poses[tgt] = (prev_to_tgt.inverse(), tgt_to_next)
        loss, breakdown = total_loss(out.disparities, frames, poses,
                                     clips[0].intrinsics, cfg.loss_weights(),
                                     depth_range=(cfg.d_min, cfg.d_max),
                                     context_index=CONTEXT_INDEX, targets=targets)
        opt.zero_grad()
        loss.backward()
    except FloatingPointError as e:
        max_grad = max((float(np.abs(p.grad).max()) for p in opt.params
                        if p.grad is not None), default=float("nan"))
        raise TrainingError(f"non-finite loss at step {step}: {e} (max |grad| {max_grad:.3e})")
    opt.step()
    return breakdown


def save_training_checkpoint(path, model: DepthForecastModel, opt: Adam, step: int):
    tensors = dict(model.state_dict())
    names = [n for n, _ in model.named_parameters()]
    for name, m, v in zip(names, opt.m, opt.v):
        tensors[f"optim.m.{name}"] = m
        tensors[f"optim.v.{name}"] = v
    tensors["meta.step"] = np.float32(step)
    tensors["meta.adam_t"] = np.float32(opt.t)
    save_checkpoint(path, tensors)


def load_training_checkpoint(path, model: DepthForecastModel, opt: Adam | None = None) -> int:
    """Restore model (and optionally optimizer) state; returns the step count."""
    blob = load_checkpoint(path)
    state = {k: v for k, v in blob.items()
             if not k.startswith("optim.") and not k.startswith("meta.")}
    model.load_state_dict(state)
    if opt is not None:
        names = [n for n, _ in model.named_parameters()]
        opt.load_state_dict({
            "t": int(blob["meta.adam_t"]),
            "m": [blob[f"optim.m.{n}"] for n in names],
            "v": [blob[f"optim.v.{n}"] for n in names],
        })
    return int(blob["meta.step"])


CSV_HEADER = "step,total,photometric,smoothness,mask_fraction\n"


def train(cfg: TrainConfig, net_cfg: NetworkConfig, log=print):
    """Run the full loop; returns the final checkpoint path."""
    cfg.validate()
    net_cfg.validate()
    dataset = ClipDataset(cfg.dataset)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    model = build_model(net_cfg, cfg.seed)
    opt = Adam(list(model.parameters()), lr=cfg.lr,
               betas=(cfg.beta1, cfg.beta2), eps=cfg.adam_eps)
    start = 0
    if cfg.resume:
        start = load_training_checkpoint(cfg.resume, model, opt)
        log(f"resumed from {cfg.resume} at step {start}")

    csv_path = out_dir / "train.csv"
    mode = "a" if (cfg.resume and csv_path.exists()) else "w"
    t0 = time.time()
    final_path = out_dir / "final.dsq"
    with open(csv_path, mode) as csv:
        if mode == "w":
            csv.write(CSV_HEADER)
        for step in range(start, cfg.steps):
            frames, clips = make_batch(dataset, cfg, step)
            br = train_step(model, opt, frames, clips, cfg, step)
            csv.write(f"{step},{br['total']:.6f},{br['photometric']:.6f},"
                      f"{br['smoothness']:.6f},{br['mask_fraction']:.4f}\n")
            csv.flush()
            done = step + 1
            if done % 50 == 0 or done == cfg.steps:
                rate = (time.time() - t0) / max(1, done - start)
                log(f"step {done}/{cfg.steps} total {br['total']:.4f} "
                    f"mask {br['mask_fraction']:.2f} ({rate:.2f}s/step)")
            if cfg.checkpoint_every and done % cfg.checkpoint_every == 0 and done < cfg.steps:
                save_training_checkpoint(out_dir / f"step_{done:06d}.dsq", model, opt, done)
    save_training_checkpoint(final_path, model, opt, cfg.steps)
    log(f"final checkpoint: {final_path}")
    return final_path
