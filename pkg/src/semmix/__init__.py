"""Cross-domain semantic patch mixing with teacher-student self-training for
LiDAR point-cloud segmentation."""

__version__ = "0.1.0"

from .errors import (AlignmentError, ConfigError, DataError, FormatError, LossError,
                     ModelOutputError, NumericError, RemapError, SelectionError, SemmixError,
                     StatisticsError)
from .types import (IGNORE, ClassFrequencyDistribution, ClassSet, Dataset, Frame, LabelKind,
                    LabelSet, PointCloud, concat, make_rng, split, subset)

__all__ = [
    "AlignmentError", "ConfigError", "DataError", "FormatError", "LossError",
    "ModelOutputError", "NumericError", "RemapError", "SelectionError", "SemmixError",
    "StatisticsError", "IGNORE", "ClassFrequencyDistribution", "ClassSet", "Dataset", "Frame",
    "LabelKind", "LabelSet", "PointCloud", "concat", "make_rng", "split", "subset",
]
