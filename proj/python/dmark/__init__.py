"""Green-list watermarking for a toy masked-diffusion decoder."""

from ._dmark import (
    CapacityError,
    ConfigError,
    ContractViolation,
    DataError,
    DecodeSchedule,
    GreenMatrix,
    ToyLM,
    ToyModelSpec,
    WatermarkKey,
    apply_attack,
    calibrate,
    decode,
    evaluate,
    green_set,
    hash_context_raw,
    is_green,
    run_cli,
    score,
    score_bits,
    strategy_names,
    uniform_score,
    z_score,
)

__all__ = [
    "CapacityError",
    "ConfigError",
    "ContractViolation",
    "DataError",
    "DecodeSchedule",
    "GreenMatrix",
    "ToyLM",
    "ToyModelSpec",
    "WatermarkKey",
    "apply_attack",
    "calibrate",
    "decode",
    "evaluate",
    "green_set",
    "hash_context_raw",
    "is_green",
    "run_cli",
    "score",
    "score_bits",
    "strategy_names",
    "uniform_score",
    "z_score",
]
