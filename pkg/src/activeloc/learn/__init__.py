from .autograd import Tensor, backward, grad, parameter
from .estimators import MLPScorer, VPTScorer
from .models import init_mlp, init_vpt, mlp_forward, pad_tokens, vpt_forward
from .train import ParamStore, TrainConfig, schema_hash, train, undersample

__all__ = [
    "Tensor", "backward", "grad", "parameter",
    "MLPScorer", "VPTScorer",
    "init_mlp", "init_vpt", "mlp_forward", "pad_tokens", "vpt_forward",
    "ParamStore", "TrainConfig", "schema_hash", "train", "undersample",
]
