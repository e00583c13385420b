"""Sparse additive forecasting of high-dimensional functional time series.

Coefficient surfaces are bivariate Bernstein splines on a triangulation and are
selected with a two-level group bridge penalty.
"""

from .basis import BasisSpec, CoefficientSurface, roughness_matrix, smoothness_matrix
from .design import FunctionalPanel, assemble
from .mesh import Triangulation, triangulate_rect
from .metrics import ise, mafe, msfe, selection_scores
from .model import HdftsModel, ModelConfig, fit_model, forecast, tune
from .sim import SimConfig, gen_panel, run_monte_carlo
from .solver import PenaltyConfig, fit

__version__ = "0.1.0"

__all__ = [
    "BasisSpec", "CoefficientSurface", "FunctionalPanel", "HdftsModel", "ModelConfig",
    "PenaltyConfig", "SimConfig", "Triangulation", "assemble", "fit", "fit_model", "forecast",
    "gen_panel", "ise", "mafe", "msfe", "roughness_matrix", "run_monte_carlo",
    "selection_scores", "smoothness_matrix", "triangulate_rect", "tune",
]
