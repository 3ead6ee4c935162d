"""Minibatch SGD training and held-out evaluation of distribution classifiers."""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..errors import ContractError, DataError, TrainingError
from ..imaging import AugmentationSpec, augment_batch, center_crop
from ..numerics import RngStream
from . import divergence
from .losses import binary_two_term_ce, cross_entropy_with_grad, log_softmax
from .models import ModelSpec, Parameters, backward, forward, forward_cache, init_params

NORMALIZATIONS = ("none", "per_channel_standardize", "clamp01")
SCHEDULES = ("constant", "cosine")
EVAL_CHUNK = 2048


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "sgd_momentum"
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 30
    label_smoothing: float = 0.1
    augmentation: AugmentationSpec = field(default_factory=AugmentationSpec)
    seed: int = 0
    normalization: str = "per_channel_standardize"
    schedule: str = "cosine"

    def __post_init__(self):
        if self.optimizer != "sgd_momentum":
            raise ContractError(f"unsupported optimizer {self.optimizer!r}")
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ContractError("lr must be > 0, batch_size and epochs >= 1")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ContractError("label smoothing must lie in [0, 1)")
        if self.normalization not in NORMALIZATIONS:
            raise ContractError(f"unknown normalization {self.normalization!r}")
        if self.schedule not in SCHEDULES:
            raise ContractError(f"unknown lr schedule {self.schedule!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["augmentation"] = asdict(self.augmentation)
        return d


@dataclass
class ProbeReport:
    class_names: list
    train_counts: list
    heldout_counts: list
    accuracy: float
    cross_entropy_nats: float
    confusion: list
    divergence: Optional[dict]
    preprocessing: list
    seed: int
    loss_curve: list
    wall_clock_seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def loss_monotone(self) -> bool:
        return self.loss_curve[-1] <= self.loss_curve[0]

    @property
    def tv_lower(self):
        return None if self.divergence is None else self.divergence["tv_lower"]

    @property
    def jsd_estimate(self):
        return None if self.divergence is None else self.divergence["jsd_estimate"]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainedClassifier:
    """Parameters plus the input pipeline fitted on the training split."""

    spec: ModelSpec
    params: Parameters
    normalization: str = "none"
    mean: Optional[np.ndarray] = None
    std: Optional[np.ndarray] = None
    eval_crop: Optional[int] = None

    def preprocess(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.eval_crop is not None and x.ndim == 4 and x.shape[-1] != self.eval_crop:
            x = center_crop(x, self.eval_crop)
        return self._normalize(x)

    def _normalize(self, x):
        if self.normalization == "clamp01":
            return np.clip(x, 0.0, 1.0)
        if self.normalization == "per_channel_standardize":
            return (x - self.mean) / self.std
        return x

    def logits(self, x) -> np.ndarray:
        x = self.preprocess(x)
        out = [forward(self.spec, self.params, x[i:i + EVAL_CHUNK]) for i in range(0, len(x), EVAL_CHUNK)]
        return np.concatenate(out) if out else np.zeros((0, self.spec.num_classes))

    def predict(self, x) -> np.ndarray:
        # np.argmax returns the first maximum: ties go to the lower class index
        return np.argmax(self.logits(x), axis=1)

    def __iter__(self):
        yield self.spec
        yield self.params


def _channel_stats(x: np.ndarray):
    axes = tuple(i for i in range(x.ndim) if i != 1)
    shape = [1] * x.ndim
    shape[1] = x.shape[1]
    mean = x.mean(axis=axes).reshape(shape[1:])
    std = x.std(axis=axes).reshape(shape[1:])
    std = np.where(std > 1e-12, std, 1.0)
    return mean, std


def stack_classes(arrays: Sequence[np.ndarray]):
    x = np.concatenate([np.asarray(a, dtype=np.float64) for a in arrays])
    y = np.concatenate([np.full(len(a), c, dtype=np.int64) for c, a in enumerate(arrays)])
    return x, y


def _balanced_order(counts, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
    # interleave per-class permutations; smaller classes cycle through fresh permutations
    n_max = max(counts)
    offsets = np.cumsum([0] + list(counts[:-1]))
    per_class = []
    for c, n in enumerate(counts):
        reps = -(-n_max // n)
        idx = np.concatenate([rng.permutation(n) for _ in range(reps)])[:n_max]
        per_class.append(idx + offsets[c])
    order = np.stack(per_class, axis=1).reshape(-1)
    labels = np.tile(np.arange(len(counts)), n_max)
    return order, labels


def evaluate(model: TrainedClassifier, x, labels, k: Optional[int] = None):
    """Accuracy, mean cross-entropy (nats) and ``k x k`` confusion matrix.

    Confusion rows are true classes, columns predictions.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise DataError("cannot evaluate on an empty dataset")
    k = k or model.spec.num_classes
    logits = model.logits(x)
    logp = log_softmax(logits)
    pred = np.argmax(logits, axis=1)
    conf = np.zeros((k, k), dtype=np.int64)
    np.add.at(conf, (labels, pred), 1)
    acc = float(np.trace(conf) / conf.sum())
    ce = float(-logp[np.arange(len(labels)), labels].mean())
    return acc, ce, conf


def fit(spec: ModelSpec, x, y, config: TrainConfig, rng: RngStream, num_classes: Optional[int] = None):
    """Train on stacked arrays; returns the classifier and its per-epoch loss curve."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    k = num_classes or spec.num_classes
    counts = [int(np.sum(y == c)) for c in range(k)]
    if min(counts) == 0:
        raise DataError(f"class {counts.index(0)} has no training examples")
    aug = config.augmentation
    model = TrainedClassifier(spec, init_params(spec, rng.child("init")), config.normalization)
    if config.normalization == "per_channel_standardize":
        model.mean, model.std = _channel_stats(x)
    if aug.crop_size is not None and x.ndim == 4:
        model.eval_crop = aug.crop_size
    use_aug = not aug.is_identity and x.ndim == 4
    xn = None if use_aug else model._normalize(x)
    class_sorted = np.argsort(y, kind="stable")
    order_rng = rng.child("order")
    aug_rng = rng.child("augment")
    params = model.params.vector
    velocity = np.zeros_like(params)
    bs = config.batch_size
    steps_per_epoch = -(-k * max(counts) // bs)
    total_steps = steps_per_epoch * config.epochs
    step = 0
    curve = []
    for epoch in range(1, config.epochs + 1):
        order, _ = _balanced_order(counts, order_rng)
        order = class_sorted[order]
        losses = []
        for start in range(0, len(order), bs):
            idx = order[start:start + bs]
            if use_aug:
                xb = model._normalize(augment_batch(x[idx], aug, aug_rng))
            else:
                xb = xn[idx]
            logits, cache = forward_cache(spec, model.params, xb)
            loss, dlogits = cross_entropy_with_grad(logits, y[idx], config.label_smoothing)
            if not math.isfinite(loss):
                raise TrainingError(f"loss diverged (non-finite) in epoch {epoch}")
            grad, _ = backward(spec, model.params, cache, dlogits)
            if config.schedule == "cosine":
                lr = 0.5 * config.lr * (1.0 + math.cos(math.pi * step / total_steps))
            else:
                lr = config.lr
            velocity *= config.momentum
            velocity += grad
            params -= lr * velocity
            step += 1
            losses.append(loss)
        curve.append(float(np.mean(losses)))
        if not np.all(np.isfinite(params)):
            raise TrainingError(f"parameters became non-finite in epoch {epoch}")
    return model, curve


def train(spec: ModelSpec, datasets, config: TrainConfig, rng: Optional[RngStream] = None,
          class_names=None, preprocessing=None):
    """Train one classifier over ``datasets`` (one ``{"train", "val"}`` mapping per class).

    Returns ``(TrainedClassifier, ProbeReport)``; the classifier unpacks as
    ``(spec, params)``. Binary probes also carry divergence estimates.
    """
    t0 = time.perf_counter()
    if len(datasets) < 2:
        raise DataError("need at least two classes")
    for c, d in enumerate(datasets):
        if len(d["train"]) == 0 or len(d["val"]) == 0:
            raise DataError(f"class {c} has an empty train or held-out split")
    k = len(datasets)
    if spec.num_classes != k:
        raise ContractError(f"model has {spec.num_classes} outputs but {k} classes were given")
    rng = rng if rng is not None else RngStream(config.seed)
    x, y = stack_classes([d["train"] for d in datasets])
    xv, yv = stack_classes([d["val"] for d in datasets])
    model, curve = fit(spec, x, y, config, rng, k)
    acc, ce, conf = evaluate(model, xv, yv, k)
    div = None
    if k == 2:
        two_term = binary_two_term_ce(model.logits(xv), yv)
        div = divergence.estimate(acc, two_term).to_dict()
        div["two_term_ce_nats"] = two_term
    chain = list(preprocessing or [])
    chain.append(f"augment={config.augmentation.describe()}")
    if model.eval_crop is not None:
        chain.append(f"eval_center_crop={model.eval_crop}")
    chain.append(f"normalize={config.normalization}")
    report = ProbeReport(
        class_names=list(class_names) if class_names else [f"class{c}" for c in range(k)],
        train_counts=[len(d["train"]) for d in datasets],
        heldout_counts=[len(d["val"]) for d in datasets],
        accuracy=acc,
        cross_entropy_nats=ce,
        confusion=conf.tolist(),
        divergence=div,
        preprocessing=chain,
        seed=int(config.seed),
        loss_curve=curve,
        wall_clock_seconds=time.perf_counter() - t0,
    )
    return model, report
