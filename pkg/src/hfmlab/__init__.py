"""Workbench for hierarchical feature models, breadth renormalization and
deep belief network analysis."""

from . import analysis, data, dbn, hfm, rg, states
from .hfm import G_CRITICAL, HfmParams
from .rg import RgConfig
from .states import DenseDistribution, EmpiricalSample, FeatureState

__version__ = "0.1.0"

__all__ = [
    "analysis",
    "data",
    "dbn",
    "hfm",
    "rg",
    "states",
    "G_CRITICAL",
    "HfmParams",
    "RgConfig",
    "DenseDistribution",
    "EmpiricalSample",
    "FeatureState",
    "__version__",
]
