from __future__ import annotations

import numpy as np


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=-1, keepdims=True))


def softmax(logits) -> np.ndarray:
    return np.exp(log_softmax(logits))


def smoothed_targets(labels, k: int, eps: float) -> np.ndarray:
    """True class keeps ``1 - eps``; the remaining ``eps`` spreads evenly over the other classes."""
    labels = np.asarray(labels, dtype=np.int64)
    q = np.full((labels.size, k), eps / (k - 1))
    q[np.arange(labels.size), labels] = 1.0 - eps
    return q


def cross_entropy_loss(logits, labels, label_smoothing: float = 0.0) -> float:
    """Mean softmax cross-entropy in nats against smoothed one-hot targets."""
    logits = np.asarray(logits, dtype=np.float64)
    q = smoothed_targets(labels, logits.shape[-1], label_smoothing)
    return float(-(q * log_softmax(logits)).sum(axis=-1).mean())


def cross_entropy_with_grad(logits, labels, label_smoothing: float = 0.0):
    logits = np.asarray(logits, dtype=np.float64)
    q = smoothed_targets(labels, logits.shape[-1], label_smoothing)
    logp = log_softmax(logits)
    loss = float(-(q * logp).sum(axis=-1).mean())
    return loss, (np.exp(logp) - q) / logits.shape[0]


def binary_two_term_ce(logits, labels) -> float:
    """``-E_class0[log C] - E_class1[log(1 - C)]`` with ``C`` the class-0 probability.

    Each expectation is averaged within its own class, matching the
    two-expectation form of the binary discrimination loss.
    """
    logp = log_softmax(logits)
    labels = np.asarray(labels)
    if logp.shape[-1] != 2:
        raise ValueError("two-term cross-entropy needs binary logits")
    return float(-logp[labels == 0, 0].mean() - logp[labels == 1, 1].mean())
