"""Self-consuming generator loops (model autophagy) on labelled point data.

The fast-path generator fits one Gaussian per class label (maximum-likelihood
covariance) and samples labels by their empirical frequencies; the slower
``denoiser`` generator trains a toy diffusion model per generation. Generation 0
fits real data; each later generation fits either its predecessor's samples
(``replace``) or a mixture holding a fraction ``rho`` of real samples
(``augment``).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..classifier.models import ModelSpec
from ..classifier.training import TrainConfig, train
from ..errors import ContractError
from ..numerics import RngStream, eig_sym, frechet_gaussian_distance, gaussian_fit
from . import diffusion

log = logging.getLogger(__name__)

DEGENERATE_EIG = 1e-9
RIDGE = 1e-6


@dataclass
class GaussianFitter:
    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    regularized: bool = False

    @classmethod
    def fit(cls, x, labels, num_classes: Optional[int] = None) -> "GaussianFitter":
        x = np.asarray(x, dtype=np.float64)
        labels = np.asarray(labels)
        k = num_classes or int(labels.max()) + 1
        d = x.shape[1]
        weights, means, covs = [], [], []
        regularized = False
        for c in range(k):
            xc = x[labels == c]
            weights.append(len(xc) / len(x))
            if len(xc) == 0:
                means.append(np.zeros(d))
                covs.append(np.eye(d) * RIDGE)
                regularized = True
                continue
            mu = xc.mean(axis=0)
            cov = (xc - mu).T @ (xc - mu) / len(xc)
            cov = 0.5 * (cov + cov.T)
            if eig_sym(cov)[0][-1] < DEGENERATE_EIG:
                log.warning("degenerate covariance for class %d; adding %.0e*I", c, RIDGE)
                cov = cov + RIDGE * np.eye(d)
                regularized = True
            means.append(mu)
            covs.append(cov)
        return cls(np.array(weights), np.array(means), np.array(covs), regularized)

    def sample(self, n: int, rng: RngStream):
        labels = rng.choice(len(self.weights), size=n, p=self.weights / self.weights.sum())
        factors = []
        for cov in self.covs:
            w, v = eig_sym(cov)
            factors.append(v * np.sqrt(np.clip(w, 0.0, None)))
        z = rng.normal(size=(n, self.means.shape[1]))
        x = self.means[labels] + np.einsum("nij,nj->ni", np.array(factors)[labels], z)
        return x, labels

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "means": self.means.tolist(),
                "covs": self.covs.tolist(), "regularized": self.regularized}


@dataclass
class DenoiserGenerator:
    """Unlabelled generator: a toy diffusion model retrained from scratch each generation."""

    denoiser: diffusion.Denoiser
    schedule: diffusion.NoiseSchedule
    loss_curve: list
    regularized: bool = False

    @classmethod
    def fit(cls, x, config: diffusion.DenoiserConfig, schedule: diffusion.NoiseSchedule, rng: RngStream):
        den, curve = diffusion.train_denoiser(np.asarray(x, dtype=np.float64), schedule, config, rng)
        return cls(den, schedule, curve)

    def sample(self, n: int, rng: RngStream):
        x = diffusion.ancestral_sample(self.denoiser, self.schedule, n, rng)
        return x, np.zeros(n, dtype=np.int64)

    def to_dict(self) -> dict:
        return {"kind": "denoiser", "num_params": int(self.denoiser.params.vector.size),
                "loss_curve": list(self.loss_curve)}


@dataclass(frozen=True)
class AutophagyConfig:
    generations: int = 6
    samples_per_generation: int = 200
    policy: str = "replace"  # replace | augment
    real_fraction: float = 0.5
    eval_samples: int = 5000
    probe: bool = True
    probe_samples: int = 1000
    probe_config: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=10, label_smoothing=0.0))
    probe_hidden: int = 32
    generator: str = "gaussian"  # gaussian | denoiser
    denoiser: diffusion.DenoiserConfig = field(default_factory=lambda: diffusion.DenoiserConfig(steps=1500))
    T: int = 100

    def __post_init__(self):
        if self.generations < 1:
            raise ContractError("generations must be >= 1")
        if self.policy not in ("replace", "augment"):
            raise ContractError(f"unknown policy {self.policy!r}")
        if not 0.0 < self.real_fraction <= 1.0:
            raise ContractError("real_fraction must lie in (0, 1]")
        if self.generator not in ("gaussian", "denoiser"):
            raise ContractError(f"unknown generator {self.generator!r}")

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["probe_config"] = self.probe_config.to_dict()
        d["denoiser"] = self.denoiser.to_dict()
        return d


def probe_vs_real(real_train, real_val, gen_train, gen_val, config: TrainConfig, rng: RngStream,
                  hidden: int = 32):
    spec = ModelSpec("mlp", (real_train.shape[1],), 2, hidden=hidden)
    _, report = train(spec, [{"train": real_train, "val": real_val}, {"train": gen_train, "val": gen_val}],
                      config, rng, class_names=["real", "generated"])
    return report


def autophagy_loop(real, config: AutophagyConfig, rng: RngStream) -> list[dict]:
    """Run the generation loop; one record per generation.

    ``real`` is either a spec with ``sample_labeled`` or an ``(x, labels)`` pool.
    Records carry the Frechet distance (raw coordinates) between generator
    samples and held-out real data, the probe accuracy of a real-vs-generated
    classifier, and the fitted generator.
    """
    n = config.samples_per_generation
    n_eval = config.eval_samples
    if hasattr(real, "sample_labeled"):
        pool_x, pool_y = real.sample_labeled(n + n_eval + 2 * config.probe_samples, rng.child("real"))
    else:
        pool_x, pool_y = (np.asarray(a) for a in real)
    if len(pool_x) < n + n_eval:
        raise ContractError("real pool too small for training and evaluation")
    k = int(pool_y.max()) + 1
    train_x, train_y = pool_x[:n], pool_y[:n]
    eval_x = pool_x[n:n + n_eval]
    probe_real = pool_x[n + n_eval:]
    mu_real, cov_real = gaussian_fit(eval_x)

    schedule = diffusion.NoiseSchedule(config.T)
    records = []
    data_x, data_y = train_x, train_y
    for g in range(config.generations):
        gen_rng = rng.child("generation", g)
        if config.generator == "denoiser":
            model = DenoiserGenerator.fit(data_x, config.denoiser, schedule, gen_rng.child("fit"))
        else:
            model = GaussianFitter.fit(data_x, data_y, k)
        samples, _ = model.sample(n_eval, gen_rng.child("eval"))
        mu_g, cov_g = gaussian_fit(samples)
        rec = {
            "generation": g,
            "policy": config.policy,
            "frechet_raw": frechet_gaussian_distance(mu_g, cov_g, mu_real, cov_real),
            "generator": model.to_dict(),
            "regularized": model.regularized,
        }
        if config.probe and len(probe_real) >= 2:
            gx, _ = model.sample(len(probe_real), gen_rng.child("probe"))
            half = len(probe_real) // 2
            rep = probe_vs_real(probe_real[:half], probe_real[half:], gx[:half], gx[half:],
                                config.probe_config, gen_rng.child("classifier"), config.probe_hidden)
            rec["probe_accuracy"] = rep.accuracy
            rec["probe_report"] = rep.to_dict()
        records.append(rec)
        if g + 1 == config.generations:
            break
        new_x, new_y = model.sample(n, gen_rng.child("train"))
        if config.policy == "augment":
            n_real = int(round(config.real_fraction * n))
            pick = gen_rng.child("mix").permutation(len(train_x))[:n_real]
            data_x = np.concatenate([train_x[pick], new_x[:n - n_real]])
            data_y = np.concatenate([train_y[pick], new_y[:n - n_real]])
        else:
            data_x, data_y = new_x, new_y
    return records
