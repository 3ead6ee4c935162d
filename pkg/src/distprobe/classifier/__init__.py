from .checkpoint import load_checkpoint, save_checkpoint
from .divergence import DivergenceEstimate, jsd_estimate, tv_lower_bound
from .losses import binary_two_term_ce, cross_entropy_loss, cross_entropy_with_grad, softmax
from .models import (ModelSpec, Parameters, backward, extract_features, forward, forward_cache,
                     init_params, zero_params)
from .training import ProbeReport, TrainConfig, TrainedClassifier, evaluate, fit, stack_classes, train


def grad(spec, params, batch, labels, label_smoothing=0.0):
    """Exact gradient of the mean smoothed cross-entropy w.r.t. the flat parameters."""
    logits, cache = forward_cache(spec, params, batch)
    _, dlogits = cross_entropy_with_grad(logits, labels, label_smoothing)
    return backward(spec, params, cache, dlogits)[0]


__all__ = [
    "DivergenceEstimate", "ModelSpec", "Parameters", "ProbeReport", "TrainConfig", "TrainedClassifier",
    "backward", "binary_two_term_ce", "cross_entropy_loss", "cross_entropy_with_grad", "evaluate",
    "extract_features", "fit", "forward", "forward_cache", "grad", "init_params", "jsd_estimate",
    "load_checkpoint", "save_checkpoint", "softmax", "stack_classes", "train", "tv_lower_bound",
    "zero_params",
]
