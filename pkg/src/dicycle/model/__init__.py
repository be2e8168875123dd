from .network import (
    ABLATIONS,
    CTRModel,
    ForwardOutput,
    ModelConfig,
    Variant,
    cross_entropy_loss,
    probe_timestamp_sweep,
)

__all__ = [
    "ABLATIONS", "CTRModel", "ForwardOutput", "ModelConfig", "Variant", "cross_entropy_loss",
    "probe_timestamp_sweep",
]
