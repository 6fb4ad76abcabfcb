"""Space-time attention video transformers with an analytical cost model."""

from .config import PRESETS, ModelConfig, Scheme, StageOrder, load_config, preset
from .embedding import PatchGrid, PosMode

__version__ = "0.1.0"

__all__ = ["PRESETS", "ModelConfig", "PatchGrid", "PosMode", "Scheme", "StageOrder",
           "load_config", "preset", "__version__"]
