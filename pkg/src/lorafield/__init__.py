"""Neural fields with low-rank weight adapters."""

from .field import (AdapterSet, FieldArchitecture, FieldNet, FieldWeights,
                    adapter_param_count, count_params, forward, init_adapters,
                    init_base, merge_adapters)
from .samplers import RasterImage
from .serialization import BaseCheckpoint
from .training import (TrainConfig, encode_sequence, full_finetune, train_base,
                       train_lora)

__all__ = [
    "AdapterSet", "BaseCheckpoint", "FieldArchitecture", "FieldNet", "FieldWeights",
    "RasterImage", "TrainConfig", "adapter_param_count", "count_params", "encode_sequence",
    "forward", "full_finetune", "init_adapters", "init_base", "merge_adapters", "train_base",
    "train_lora",
]
