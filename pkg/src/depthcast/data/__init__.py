from .scene import (
    CONTEXT_INDEX,
    TARGET_OFFSETS,
    BoxSpec,
    ClipSample,
    DatasetParams,
    SceneSpec,
    augment,
    camera_pose,
    flip_clip,
    generate_clip,
    render_clip,
    render_frame,
    sample_scene,
    value_noise,
)
from .formats import FormatError, read_pfm, read_pgm, read_ppm, write_pfm, write_pgm, write_ppm
from .dataset import ClipDataset, DatasetError, generate_dataset, load_clip_dir, save_clip

__all__ = [
    "CONTEXT_INDEX", "TARGET_OFFSETS", "BoxSpec", "ClipSample", "DatasetParams",
    "SceneSpec", "augment", "camera_pose", "flip_clip", "generate_clip",
    "render_clip", "render_frame", "sample_scene", "value_noise",
    "FormatError", "read_pfm", "read_pgm", "read_ppm", "write_pfm", "write_pgm",
    "write_ppm", "ClipDataset", "DatasetError", "generate_dataset", "load_clip_dir",
    "save_clip",
]
