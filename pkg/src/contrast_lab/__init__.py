"""Contrastive losses with temperature-adaptive reweighting: forward values,
closed-form gradients, scaling-factor analysis and a small deterministic trainer."""

from .core import (
    ContrastLabError,
    LogitsRow,
    LossSpec,
    TemperatureConfig,
    UnitEmbeddingBatch,
    Variant,
    make_unit_batch,
)
from .gradients import analytic_gradients, scaling_factor
from .losses import batch_value, dcl_value, infonce_value, macl_batch_value
from .temperature import adaptive_temperature

__version__ = "0.1.0"
