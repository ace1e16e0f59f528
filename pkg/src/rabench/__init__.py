"""rabench: a workbench for temporal consistency of range-azimuth heatmap
sequences.

Simulates ground-truth and degraded heatmap streams, fuses them in a proxy
latent space with windowed/convolutional temporal fusion, scan-matches the
results into trajectories, and evaluates everything with motion-consistency
and localization metrics.
"""

from .errors import ConfigError, DataError
from .grid import FrameSequence, Heatmap, Pose2D, SensorGeometry, Trajectory

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "FrameSequence",
    "Heatmap",
    "Pose2D",
    "SensorGeometry",
    "Trajectory",
    "__version__",
]
