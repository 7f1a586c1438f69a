"""Multi-scale contrastive adaptors on a frozen toy transformer segmenter.

A pure-NumPy research artifact: tape-based autodiff, a small frozen ViT
encoder, token- and sample-level contrastive adaptors, synthetic
camouflage/shadow data, and a deterministic AdamW training loop.  Hot
elementwise kernels optionally run through numba (see mca.kernels).
"""

from .config import TrainConfig, VARIANTS, load_config
from .errors import (
    ConfigError,
    ContractError,
    DataParseError,
    DegenerateInputError,
    ShapeError,
    TrainingAbortError,
    UndefinedMetricError,
)
from .tensor import Graph, Tensor, backward, set_default_dtype

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "Graph",
    "backward",
    "set_default_dtype",
    "TrainConfig",
    "VARIANTS",
    "load_config",
    "ShapeError",
    "ContractError",
    "DegenerateInputError",
    "ConfigError",
    "DataParseError",
    "TrainingAbortError",
    "UndefinedMetricError",
    "__version__",
]
