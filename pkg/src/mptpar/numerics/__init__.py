from .gradcheck import GradCheckReport, NonDeterministicError, analytic_grads, finite_diff_check, relative_error
from .ops import (ConfigError, bce_with_logits, cross_layer, encoder, encoder_layer, feed_forward, init_attention,
                  init_encoder, init_encoder_layer, init_layer_norm, init_linear, layer_norm, multi_head_attention,
                  softmax_lastdim)
from .optim import adam_step
from .params import CheckpointError, ParamStore
from .tensor import NonFiniteError, Tensor, backward

__all__ = [
    "CheckpointError", "ConfigError", "GradCheckReport", "NonDeterministicError", "NonFiniteError", "ParamStore",
    "Tensor", "adam_step", "analytic_grads", "backward", "bce_with_logits", "cross_layer", "encoder",
    "encoder_layer", "feed_forward", "finite_diff_check", "init_attention", "init_encoder", "init_encoder_layer",
    "init_layer_norm", "init_linear", "layer_norm", "multi_head_attention", "relative_error", "softmax_lastdim",
]
