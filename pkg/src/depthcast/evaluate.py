"""Evaluation protocol: per-clip median scaling, the standard depth error
metrics, and pixel-weighted aggregation over a held-out set."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import tensor as T
from .data.scene import TARGET_OFFSETS, ClipSample
from .geometry import depth_from_activation
from .network import DepthForecastModel

EVAL_CLAMP = (0.5, 100.0)


@dataclass
class MetricRecord:
    horizon: int
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    d1: float
    d2: float
    d3: float
    n_pixels: int

    def row(self):
        return (f"{self.horizon},{self.abs_rel:.6f},{self.sq_rel:.6f},{self.rmse:.6f},"
                f"{self.rmse_log:.6f},{self.d1:.6f},{self.d2:.6f},{self.d3:.6f}")


def median_scale(pred, gt, valid, clamp=EVAL_CLAMP):
    """pred * median(gt)/median(pred) over valid pixels, then clamped."""
    valid = np.asarray(valid, dtype=bool)
    if not valid.any():
        raise ValueError("median_scale: empty valid mask")
    med_pred = np.median(pred[valid])
    if med_pred <= 0:
        raise ValueError(f"median_scale: non-positive prediction median {med_pred}")
    scaled = pred.astype(np.float64) * (np.median(gt[valid]) / med_pred)
    return np.clip(scaled, *clamp)


def _metric_sums(pred, gt, valid):
    valid = np.asarray(valid, dtype=bool)
    if not valid.any():
        raise ValueError("compute_metrics: empty valid mask")
    p = pred[valid].astype(np.float64)
    g = gt[valid].astype(np.float64)
    if np.any(g <= 0):
        raise ValueError("compute_metrics: non-positive ground truth inside the valid mask")
    ratio = np.maximum(p / g, g / p)
    return {
        "abs_rel": float(np.sum(np.abs(p - g) / g)),
        "sq_rel": float(np.sum((p - g) ** 2 / g)),
        "se": float(np.sum((p - g) ** 2)),
        "se_log": float(np.sum((np.log(p) - np.log(g)) ** 2)),
        "d1": int(np.count_nonzero(ratio < 1.25)),
        "d2": int(np.count_nonzero(ratio < 1.25 ** 2)),
        "d3": int(np.count_nonzero(ratio < 1.25 ** 3)),
        "n": int(p.size),
    }


def _finalize(horizon, sums) -> MetricRecord:
    n = sums["n"]
    return MetricRecord(
        horizon=horizon,
        abs_rel=sums["abs_rel"] / n,
        sq_rel=sums["sq_rel"] / n,
        rmse=float(np.sqrt(sums["se"] / n)),
        rmse_log=float(np.sqrt(sums["se_log"] / n)),
        d1=sums["d1"] / n,
        d2=sums["d2"] / n,
        d3=sums["d3"] / n,
        n_pixels=n,
    )


def compute_metrics(pred, gt, valid, horizon: int = 0) -> MetricRecord:
    """Error metrics over the valid pixels (median scaling NOT applied here)."""
    return _finalize(horizon, _metric_sums(pred, gt, valid))


def valid_depth_mask(gt, d_max: float = 100.0):
    """Pixels carrying real geometry: positive and below the far-plane cap."""
    return (gt > 0) & (gt < d_max * 0.999)


def model_predictor(model: DepthForecastModel, d_min: float = 0.1, d_max: float = 100.0):
    """Wraps a model into clip -> {horizon: full-resolution depth map}."""

    def predict(clip: ClipSample):
        context = clip.images[None, :model.cfg.context_length]
        with T.no_grad():
            out = model.depth_net(context)
        return {tgt: depth_from_activation(out.disparities[tgt][0], d_min, d_max).data[0, 0]
                for tgt in out.targets()}

    return predict


def evaluate(clips, predict, horizons=TARGET_OFFSETS, d_max: float = 100.0,
             clamp=EVAL_CLAMP):
    """Aggregate records per horizon over an iterable of clips.

    ``predict`` maps a clip to {horizon: depth map}. Median scaling is
    per clip and per horizon; aggregation is pixel-weighted so the dataset
    numbers equal the metrics of the pooled pixel set.
    """
    totals = {h: None for h in horizons}
    for clip in clips:
        preds = predict(clip)
        for h in horizons:
            if h not in clip.depths:
                raise ValueError(f"clip {clip.clip_id!r} lacks ground truth for horizon {h}")
            if h not in preds:
                raise ValueError(f"prediction lacks horizon {h}")
            gt = clip.depths[h]
            mask = valid_depth_mask(gt, d_max)
            scaled = median_scale(preds[h], gt, mask, clamp)
            sums = _metric_sums(scaled, gt, mask)
            if totals[h] is None:
                totals[h] = sums
            else:
                totals[h] = {k: totals[h][k] + sums[k] for k in sums}
    return [_finalize(h, totals[h]) for h in horizons]


CSV_HEADER = "horizon,abs_rel,sq_rel,rmse,rmse_log,d1,d2,d3\n"


def write_metrics_csv(path, records):
    with open(path, "w") as f:
        f.write(CSV_HEADER)
        for rec in records:
            f.write(rec.row() + "\n")
    return Path(path)
