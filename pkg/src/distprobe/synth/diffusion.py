"""Toy DDPM: forward noising, noise-prediction training, ancestral sampling and
classifier guidance toward the "real" class.

Data are flat vectors (2-D points or flattened images) of dimension ``n``.
Timesteps run ``1..T``; ``t = 0`` denotes clean data (alpha_bar = 1).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..classifier.models import ModelSpec, Parameters, backward, forward, forward_cache, init_params
from ..classifier.training import TrainConfig, TrainedClassifier, train
from ..errors import ContractError, TrainingError
from ..numerics import RngStream

EMBED_DIM = 16
MAX_SCALED_BETA = 0.5
REAL, GENERATED = 0, 1


class NoiseSchedule:
    """Linear beta schedule over ``T`` steps.

    Endpoints default to the classic ``1e-4 -> 0.02`` scaled by ``1000 / T``
    so shorter chains still end near pure noise (alpha_bar_T ~ 4e-5 at T=100).
    The scaled end point is capped at 0.5, which only matters for ``T < 40``.
    """

    def __init__(self, T: int = 100, beta_start: Optional[float] = None, beta_end: Optional[float] = None):
        if T < 1:
            raise ContractError("T must be >= 1")
        scale = 1000.0 / T
        self.T = T
        self.beta_start = 1e-4 * scale if beta_start is None else beta_start
        self.beta_end = min(0.02 * scale, MAX_SCALED_BETA) if beta_end is None else beta_end
        if T == 1:
            betas = np.array([self.beta_end])
        else:
            betas = np.linspace(self.beta_start, self.beta_end, T)
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise ContractError("betas must lie in (0, 1)")
        # index 0 holds the t=0 convention
        self.betas = np.concatenate([[0.0], betas])
        self.alphas = 1.0 - self.betas
        self.alpha_bars = np.cumprod(self.alphas)

    def alpha_bar(self, t):
        return self.alpha_bars[t]

    def describe(self) -> dict:
        return {"T": self.T, "beta_start": self.beta_start, "beta_end": self.beta_end}


def time_embedding(t, dim: int = EMBED_DIM) -> np.ndarray:
    """Sinusoidal embedding of integer timesteps, shape ``(len(t), dim)``."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _check_t(t, schedule: NoiseSchedule):
    arr = np.asarray(t)
    if np.any(arr < 0) or np.any(arr > schedule.T):
        raise ContractError(f"timestep outside [0, {schedule.T}]")


def forward_diffuse(x, t, schedule: NoiseSchedule, rng: RngStream):
    """Return ``(z_t, eps)`` with ``z_t = sqrt(ab_t) x + sqrt(1 - ab_t) eps``.

    ``t`` may be a scalar or one timestep per row of ``x``.
    """
    _check_t(t, schedule)
    x = np.asarray(x, dtype=np.float64)
    eps = rng.normal(size=x.shape)
    ab = np.asarray(schedule.alpha_bars[np.asarray(t)], dtype=np.float64)
    if ab.ndim == 1:
        ab = ab.reshape((-1,) + (1,) * (x.ndim - 1))
    return np.sqrt(ab) * x + np.sqrt(1.0 - ab) * eps, eps


# ---------------------------------------------------------------------------
# denoiser

@dataclass
class Denoiser:
    """MLP noise predictor over ``[z_t, embed(t)]``."""

    spec: ModelSpec
    params: Parameters
    data_dim: int
    embed_dim: int = EMBED_DIM

    @classmethod
    def create(cls, data_dim: int, rng: RngStream, hidden: int = 128, embed_dim: int = EMBED_DIM):
        if data_dim < 2:
            raise ContractError("denoiser data dimension must be >= 2")
        spec = ModelSpec("mlp", (data_dim + embed_dim,), data_dim, hidden=hidden)
        return cls(spec, init_params(spec, rng), data_dim, embed_dim)

    def inputs(self, z, t) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64).reshape(len(z), -1)
        t = np.broadcast_to(np.asarray(t), (len(z),))
        return np.concatenate([z, time_embedding(t, self.embed_dim)], axis=1)

    def predict(self, z, t) -> np.ndarray:
        z = np.asarray(z)
        return forward(self.spec, self.params, self.inputs(z, t)).reshape(z.shape)


def noise_prediction_loss(denoiser, batch, schedule: NoiseSchedule, rng: RngStream, return_grad: bool = False):
    """Mean over the batch of ``||eps_hat(z_t, t) - eps||^2`` with ``t ~ U{1..T}``.

    ``denoiser`` only needs ``predict(z, t)`` unless ``return_grad`` is set,
    in which case it must be a :class:`Denoiser`.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if len(batch) == 0:
        raise ContractError("empty batch")
    t = rng.integers(1, schedule.T + 1, size=len(batch))
    z, eps = forward_diffuse(batch, t, schedule, rng)
    if not return_grad:
        pred = denoiser.predict(z, t)
        return float(np.mean(np.sum((pred - eps).reshape(len(batch), -1) ** 2, axis=1)))
    inp = denoiser.inputs(z, t)
    out, cache = forward_cache(denoiser.spec, denoiser.params, inp)
    diff = out - eps.reshape(len(batch), -1)
    loss = float(np.mean(np.sum(diff ** 2, axis=1)))
    grad, _ = backward(denoiser.spec, denoiser.params, cache, 2.0 * diff / len(batch))
    return loss, grad


@dataclass(frozen=True)
class DenoiserConfig:
    hidden: int = 128
    steps: int = 4000
    batch_size: int = 128
    lr: float = 0.02
    momentum: float = 0.9
    seed: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def train_denoiser(data, schedule: NoiseSchedule, config: DenoiserConfig = DenoiserConfig(),
                   rng: Optional[RngStream] = None):
    """SGD-with-momentum (cosine decay) on the noise-prediction loss.

    Returns the denoiser and the loss averaged over each tenth of training.
    """
    rng = rng if rng is not None else RngStream(config.seed)
    data = np.asarray(data, dtype=np.float64).reshape(len(data), -1)
    den = Denoiser.create(data.shape[1], rng.child("init"), hidden=config.hidden)
    batch_rng = rng.child("batches")
    noise_rng = rng.child("noise")
    vel = np.zeros_like(den.params.vector)
    losses = []
    for step in range(config.steps):
        idx = batch_rng.integers(0, len(data), size=config.batch_size)
        loss, g = noise_prediction_loss(den, data[idx], schedule, noise_rng, return_grad=True)
        if not math.isfinite(loss):
            raise TrainingError(f"denoiser loss diverged at step {step}")
        lr = 0.5 * config.lr * (1 + math.cos(math.pi * step / config.steps))
        vel *= config.momentum
        vel += g
        den.params.vector -= lr * vel
        losses.append(loss)
    chunks = np.array_split(np.array(losses), min(10, len(losses)))
    return den, [float(c.mean()) for c in chunks]


# ---------------------------------------------------------------------------
# guidance

@dataclass
class NoisedClassifier:
    """Binary real(0)/generated(1) classifier over ``[z_t, embed(t)]``."""

    model: TrainedClassifier
    data_dim: int
    embed_dim: int = EMBED_DIM

    def inputs(self, z, t):
        z = np.asarray(z, dtype=np.float64).reshape(len(z), -1)
        t = np.broadcast_to(np.asarray(t), (len(z),))
        return np.concatenate([z, time_embedding(t, self.embed_dim)], axis=1)

    def log_prob_real(self, z, t) -> np.ndarray:
        logits = self.model.logits(self.inputs(z, t))
        m = logits.max(axis=1, keepdims=True)
        return (logits[:, REAL] - m[:, 0]) - np.log(np.exp(logits - m).sum(axis=1))

    def grad_log_real(self, z, t) -> np.ndarray:
        """Gradient of ``log C_real(z, t)`` w.r.t. ``z`` by backpropagation."""
        z = np.asarray(z, dtype=np.float64)
        m = self.model
        x = m.preprocess(self.inputs(z, t))
        logits, cache = forward_cache(m.spec, m.params, x)
        p = np.exp(logits - logits.max(axis=1, keepdims=True))
        p /= p.sum(axis=1, keepdims=True)
        dlogits = -p
        dlogits[:, REAL] += 1.0
        _, dx = backward(m.spec, m.params, cache, dlogits, need_input=True)
        dz = dx[:, :self.data_dim]
        if m.normalization == "per_channel_standardize":
            dz = dz / m.std[:self.data_dim]
        return dz.reshape(z.shape)


@dataclass(frozen=True)
class GuidanceConfig:
    scale: float
    classifier: NoisedClassifier

    def __post_init__(self):
        if self.scale < 0:
            raise ContractError("guidance scale must be >= 0")


def ancestral_sample(denoiser: Denoiser, schedule: NoiseSchedule, n: int, rng: RngStream,
                     guidance: Optional[GuidanceConfig] = None) -> np.ndarray:
    """DDPM reverse chain from ``z_T ~ N(0, I)`` with variance ``beta_t``.

    With guidance the step mean is shifted by ``s * beta_t * grad log C_real``.
    A zero scale skips the shift, so it reproduces the unguided chain exactly.
    """
    d = denoiser.data_dim
    if guidance is not None and guidance.classifier.data_dim != d:
        raise ContractError(f"guidance classifier expects dimension {guidance.classifier.data_dim}, "
                            f"denoiser produces {d}")
    z = rng.normal(size=(n, d))
    for t in range(schedule.T, 0, -1):
        beta = schedule.betas[t]
        eps = denoiser.predict(z, t)
        mean = (z - beta / math.sqrt(1.0 - schedule.alpha_bars[t]) * eps) / math.sqrt(schedule.alphas[t])
        if guidance is not None and guidance.scale != 0:
            mean = mean + guidance.scale * beta * guidance.classifier.grad_log_real(z, t)
        if t > 1:
            z = mean + math.sqrt(beta) * rng.normal(size=(n, d))
        else:
            z = mean
    return z


def train_noised_classifier(real, generated, schedule: NoiseSchedule, config: TrainConfig,
                            rng: Optional[RngStream] = None, hidden: int = 128, heldout_fraction: float = 0.2,
                            repeats: int = 1, fixed_t: Optional[int] = None):
    """Train the real-vs-generated classifier on forward-noised inputs.

    Each example becomes ``[forward_diffuse(x, t), embed(t)]`` with
    ``t ~ U{1..T}`` (or ``fixed_t``), repeated ``repeats`` times with fresh
    noise. Returns ``(NoisedClassifier, ProbeReport)``.
    """
    if len(real) == 0 or len(generated) == 0:
        raise ContractError("both sample sets must be nonempty")
    real = np.asarray(real, dtype=np.float64).reshape(len(real), -1)
    generated = np.asarray(generated, dtype=np.float64).reshape(len(generated), -1)
    if real.shape[1] != generated.shape[1]:
        raise ContractError("real and generated samples differ in dimension")
    rng = rng if rng is not None else RngStream(config.seed)
    d = real.shape[1]
    noise_rng = rng.child("noise")

    def noised(x):
        x = np.repeat(x, repeats, axis=0)
        if fixed_t is None:
            t = noise_rng.integers(1, schedule.T + 1, size=len(x))
        else:
            t = np.full(len(x), fixed_t)
        z, _ = forward_diffuse(x, t, schedule, noise_rng)
        return np.concatenate([z, time_embedding(t)], axis=1)

    datasets = []
    for arr in (real, generated):
        n_val = max(1, int(round(heldout_fraction * len(arr))))
        if n_val >= len(arr):
            raise ContractError("need more samples than the held-out split")
        datasets.append({"train": noised(arr[:-n_val]), "val": noised(arr[-n_val:])})
    spec = ModelSpec("mlp", (d + EMBED_DIM,), 2, hidden=hidden)
    model, report = train(spec, datasets, config, rng.child("train"), class_names=["real", "generated"],
                          preprocessing=[f"forward_diffuse(t={'U{1..%d}' % schedule.T if fixed_t is None else fixed_t})"])
    return NoisedClassifier(model, d), report
