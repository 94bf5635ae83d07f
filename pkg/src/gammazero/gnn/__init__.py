"""Graph network over belief graphs: parameters, forward/backward, training."""

from .network import GraphBatch, NetworkOutput, backward, forward, forward_batch, make_batch, policy_from_logits
from .params import GnnParameters, load_params, param_shapes, save_params

__all__ = [
    "GnnParameters", "GraphBatch", "NetworkOutput", "backward", "forward", "forward_batch",
    "load_params", "make_batch", "param_shapes", "policy_from_logits", "save_params",
]
