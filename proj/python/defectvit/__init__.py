"""Python access to the defectvit detector pipeline."""

from ._core import (
    ConfigError,
    RefusalError,
    anchor_grid,
    decode_offsets,
    encode_offsets,
    evaluate,
    generate,
    generate_sample,
    iou,
    modified_accuracy,
    modified_cce,
    modified_mse,
    predict,
    train,
    validate_config,
)

__all__ = [
    "ConfigError",
    "RefusalError",
    "anchor_grid",
    "decode_offsets",
    "encode_offsets",
    "evaluate",
    "generate",
    "generate_sample",
    "iou",
    "modified_accuracy",
    "modified_cce",
    "modified_mse",
    "predict",
    "train",
    "validate_config",
]
