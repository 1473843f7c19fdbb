"""Few-shot human action anomaly detection with a shared contrastive encoder
and frequency-domain diffusion augmentation."""

from .errors import (
    CompatibilityError,
    ConfigError,
    ContractError,
    DivergenceError,
    HaadError,
    ManifestError,
)

__version__ = "0.1.0"

__all__ = [
    "CompatibilityError",
    "ConfigError",
    "ContractError",
    "DivergenceError",
    "HaadError",
    "ManifestError",
    "__version__",
]
