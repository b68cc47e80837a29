from .graph import (
    GraphError,
    LayerSpec,
    NetworkGraph,
    TrainState,
    forward,
    init_real_params,
    init_state,
    load_checkpoint,
    measure,
    predict,
    save_checkpoint,
    train_step,
)
from .layers import BnState, ConvSpec, FcSpec, LayerStats

__all__ = [
    "GraphError",
    "LayerSpec",
    "NetworkGraph",
    "TrainState",
    "ConvSpec",
    "FcSpec",
    "BnState",
    "LayerStats",
    "forward",
    "train_step",
    "predict",
    "measure",
    "init_state",
    "init_real_params",
    "save_checkpoint",
    "load_checkpoint",
]
