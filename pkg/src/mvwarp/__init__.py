"""Multi-view ICA with per-source delays and dilations."""
from .objective import UnmixingSet, total_loss
from .pipeline import FitConfig, FitResult, fit
from .warpsig import MultiViewData, Signal, WarpParams

__version__ = "0.1.0"

__all__ = ["FitConfig", "FitResult", "MultiViewData", "Signal", "UnmixingSet",
           "WarpParams", "fit", "total_loss", "__version__"]
