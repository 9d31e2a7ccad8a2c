"""Self-supervised depth-sequence forecasting at desk scale.

Four context frames go in; depth maps for offsets {0, 1, 3, 5} come out,
trained purely from photometric warping against synthetic raycast scenes.
"""

__version__ = "0.1.0"

from . import core
from .geometry import CameraIntrinsics, Pose
from .network import DepthForecastModel, NetworkConfig, build_model, desk_config, paper_config

__all__ = [
    "core", "CameraIntrinsics", "Pose", "DepthForecastModel", "NetworkConfig",
    "build_model", "desk_config", "paper_config", "__version__",
]
