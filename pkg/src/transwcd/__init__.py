"""Weakly-supervised change detection with a hierarchical transformer.

A change classifier trained from image-level labels yields pixel masks via
multi-scale class activation maps; an optional dilated decoder supervised by
label-gated targets and a label-gated penalty refine them.
"""
from .errors import (ConfigError, DimensionError, EmptyCounts, LabelError, LayoutError,
                     MissingGT, RangeError, ShapeMismatch, TransWCDError)
from .model import ModelConfig, TransWCD

__version__ = "0.1.0"
