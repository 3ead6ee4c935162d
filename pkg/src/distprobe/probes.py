"""Experiment harness: probes, sweeps, mixing, multi-way, autophagy, guidance and
Frechet comparisons, each producing a reproducible :class:`ReportBundle`.

Distribution sources are either synthetic specs (sampled from streams keyed
by ``(name, split)``) or dataset directories ``<path>/{train,val}``. Every
ladder point trains on its own stream ``stable_id(kind, abscissa, trial)``.
"""
from __future__ import annotations

import math
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .classifier.models import ModelSpec, extract_features
from .classifier.training import ProbeReport, TrainConfig, train
from .errors import ContractError, DataError
from .imaging import center_crop, load_distribution_dir, random_crop_batch
from .numerics import RngStream, frechet_gaussian_distance, gaussian_fit, stable_id
from .spectral import FilterSpec, apply_filter
from .synth import autophagy, diffusion
from .synth.distributions import BernoulliPixels, Point2DMixture, bayes_accuracy, exact_divergences

KINDS = ("probe", "same_dist", "scale_curve", "freq_sweep", "crop_sweep", "mix_eval", "multiway",
         "mad", "guide_demo", "frechet_compare")
RANDOM_CROP_TRIALS = 4
# Frechet distance between two independent 10^4-sample fits of one standard 2-D
# Gaussian; 2000 calibration trials gave mean 7.0e-4, 99.9th percentile 2.9e-3, max 3.3e-3
FRECHET_FLOOR_2D_1E4 = 5e-3


@dataclass(frozen=True)
class ModelConfig:
    family: str = "mlp"
    hidden: int = 128
    conv_channels: tuple = (8, 16)

    def build(self, input_shape, k: int) -> ModelSpec:
        return ModelSpec(self.family, tuple(input_shape), k, hidden=self.hidden, conv_channels=self.conv_channels)


@dataclass(frozen=True)
class Source:
    """A named distribution: a synthetic spec or a dataset directory path."""

    name: str
    spec: object = None
    path: Optional[str] = None

    def describe(self) -> str:
        return f"dir:{self.path}" if self.path is not None else f"synth:{self.spec.to_string()}"

    def draw(self, n_train: int, n_val: int, master_seed: int) -> dict:
        """Train/val arrays; val depends only on ``(name, master_seed)``."""
        if self.path is not None:
            data = load_distribution_dir(self.path)
            for split, n in (("train", n_train), ("val", n_val)):
                have = len(data.get(split, ()))
                if have < n:
                    raise DataError(f"{self.path}/{split} has {have} samples, {n} requested")
            return {"train": data["train"][:n_train], "val": data["val"][:n_val]}
        tr = RngStream(master_seed, stable_id("data", self.name, "train"))
        va = RngStream(master_seed, stable_id("data", self.name, "val"))
        return {"train": self.spec.sample(n_train, tr), "val": self.spec.sample(n_val, va)}


@dataclass
class CurvePoint:
    abscissa: object
    trial: int
    seed: int
    stream_id: int
    report: dict
    metrics: dict = field(default_factory=dict)


@dataclass
class ReportBundle:
    kind: str
    spec: dict
    points: list = field(default_factory=list)
    summary: list = field(default_factory=list)
    oracle: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def accuracies(self, abscissa=None) -> list:
        return [p.report["accuracy"] for p in self.points if abscissa is None or p.abscissa == abscissa]

    def mean_accuracy(self, abscissa) -> float:
        return statistics.fmean(self.accuracies(abscissa))

    def summarize(self) -> None:
        groups: dict = {}
        for p in self.points:
            key = repr(p.abscissa)
            groups.setdefault(key, (p.abscissa, []))[1].append(p)
        self.summary = []
        for abscissa, pts in groups.values():
            accs = [p.report["accuracy"] for p in pts]
            row = {"abscissa": abscissa, "n": len(accs), "accuracy_mean": statistics.fmean(accs),
                   "accuracy_sd": statistics.stdev(accs) if len(accs) > 1 else 0.0}
            for key in sorted({k for p in pts for k, v in p.metrics.items() if isinstance(v, (int, float))}):
                vals = [p.metrics[key] for p in pts if isinstance(p.metrics.get(key), (int, float))]
                row[f"{key}_mean"] = statistics.fmean(vals)
            self.summary.append(row)


def _map(fn: Callable, items: Sequence, jobs: int = 1) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def point_stream(master_seed: int, kind: str, abscissa, trial: int = 0) -> RngStream:
    return RngStream(master_seed, stable_id(kind, abscissa, trial))


def _oracle(sources: Sequence[Source]) -> dict:
    specs = [s.spec for s in sources]
    if len(specs) != 2 or not all(isinstance(s, BernoulliPixels) for s in specs):
        return {}
    try:
        p, q = specs[0].oracle(), specs[1].oracle()
        tv, jsd = exact_divergences(p, q)
        return {"tv": tv, "jsd": jsd, "bayes_accuracy": bayes_accuracy(p, q)}
    except ContractError:
        return {}


def _train_probe(datasets, names, model: ModelConfig, config: TrainConfig, rng: RngStream,
                 preprocessing=()) -> ProbeReport:
    input_shape = np.asarray(datasets[0]["train"]).shape[1:]
    aug = config.augmentation
    if aug.crop_size is not None and len(input_shape) == 3:
        input_shape = (input_shape[0], aug.crop_size, aug.crop_size)
    spec = model.build(input_shape, len(datasets))
    _, report = train(spec, datasets, config, rng, class_names=names, preprocessing=list(preprocessing))
    return report


def _point(abscissa, trial, master_seed, stream: RngStream, report: ProbeReport, **metrics) -> CurvePoint:
    return CurvePoint(abscissa, trial, master_seed, stream.stream_id, report.to_dict(), metrics)


def _spec_echo(kind, sources, model, config, master_seed, **params) -> dict:
    return {"kind": kind, "distributions": {s.name: s.describe() for s in sources},
            "model": asdict(model), "train": config.to_dict(), "master_seed": master_seed,
            "params": params}


# ---------------------------------------------------------------------------
# experiments

def run_probe(sources: Sequence[Source], model: ModelConfig = ModelConfig(), config: TrainConfig = TrainConfig(),
              n_train: int = 1000, n_val: int = 1000, master_seed: int = 0,
              rng: Optional[RngStream] = None, kind: str = "probe") -> ProbeReport:
    """Train one classifier over all sources and report held-out performance."""
    if len(sources) < 2:
        raise ContractError("a probe needs at least two distributions")
    datasets = [s.draw(n_train, n_val, master_seed) for s in sources]
    rng = rng if rng is not None else point_stream(master_seed, kind, None)
    report = _train_probe(datasets, [s.name for s in sources], model, config, rng)
    oracle = _oracle(sources)
    if oracle:
        report.extra["oracle"] = oracle
    return report


def _bundle_single(kind, sources, model, config, n_train, n_val, master_seed, **params) -> ReportBundle:
    rng = point_stream(master_seed, kind, None)
    report = run_probe(sources, model, config, n_train, n_val, master_seed, rng=rng, kind=kind)
    bundle = ReportBundle(kind, _spec_echo(kind, sources, model, config, master_seed,
                                           n_train=n_train, n_val=n_val, **params))
    bundle.points.append(_point(None, 0, master_seed, rng, report))
    bundle.oracle = report.extra.get("oracle", {})
    bundle.summarize()
    return bundle


def probe_bundle(sources, model=ModelConfig(), config=TrainConfig(), n_train=1000, n_val=1000, master_seed=0):
    return _bundle_single("probe", sources, model, config, n_train, n_val, master_seed)


def same_dist(source: Source, model=ModelConfig(), config=TrainConfig(), n_train=1000, n_val=1000,
              master_seed=0) -> ReportBundle:
    """Probe a distribution against an independent sample of itself."""
    pair = [replace(source, name=f"{source.name}_a"), replace(source, name=f"{source.name}_b")]
    return _bundle_single("same_dist", pair, model, config, n_train, n_val, master_seed)


def multiway_probe(sources, model=ModelConfig(), config=TrainConfig(), n_train=1000, n_val=1000,
                   master_seed=0) -> ReportBundle:
    if len(sources) < 3:
        raise ContractError("multi-way probes need at least three distributions")
    return _bundle_single("multiway", sources, model, config, n_train, n_val, master_seed)


def scale_curve(sources, ladder: Sequence[int], model=ModelConfig(), config=TrainConfig(), n_val=1000,
                master_seed=0, jobs=1) -> ReportBundle:
    """Independent probes per training-set size; the held-out set is shared.

    Smaller training sets are prefixes of larger ones, so a one-point ladder
    reproduces ``run_probe`` given the same training stream.
    """
    ladder = [int(v) for v in ladder]
    _check_ladder(ladder)
    kind = "scale_curve"
    val = [s.draw(1, n_val, master_seed)["val"] for s in sources]

    def one(size):
        datasets = []
        for s, v in zip(sources, val):
            tr = s.draw(size, 1, master_seed)["train"]
            datasets.append({"train": tr, "val": v})
        rng = point_stream(master_seed, kind, size)
        rep = _train_probe(datasets, [s.name for s in sources], model, config, rng)
        return _point(size, 0, master_seed, rng, rep)

    bundle = ReportBundle(kind, _spec_echo(kind, sources, model, config, master_seed, ladder=ladder, n_val=n_val))
    bundle.points = _map(one, ladder, jobs)
    bundle.oracle = _oracle(sources)
    bundle.summarize()
    return bundle


def freq_sweep(sources, filters: Sequence[FilterSpec], model=ModelConfig(), config=TrainConfig(),
               n_train=1000, n_val=1000, master_seed=0, clamp=False, jobs=1) -> ReportBundle:
    """Filter every distribution identically, then probe, once per filter."""
    kind = "freq_sweep"
    base = [s.draw(n_train, n_val, master_seed) for s in sources]
    for d in base:
        if d["train"].ndim != 4:
            raise ContractError("frequency sweeps need image distributions")

    def one(f: FilterSpec):
        datasets = [{k: apply_filter(v, f, clamp=clamp) for k, v in d.items()} for d in base]
        rng = point_stream(master_seed, kind, f.label())
        chain = [f"filter={f.label()}/{f.shape}", f"clamp={clamp}"]
        rep = _train_probe(datasets, [s.name for s in sources], model, config, rng, chain)
        return _point(f.label(), 0, master_seed, rng, rep)

    bundle = ReportBundle(kind, _spec_echo(kind, sources, model, config, master_seed,
                                           filters=[f"{f.label()}/{f.shape}" for f in filters],
                                           n_train=n_train, n_val=n_val, clamp=clamp))
    bundle.points = _map(one, list(filters), jobs)
    bundle.summarize()
    return bundle


def crop_sweep(sources, sizes: Sequence[int], mode: str = "center", model=ModelConfig(), config=TrainConfig(),
               n_train=1000, n_val=1000, master_seed=0, trials: Optional[int] = None, jobs=1) -> ReportBundle:
    """Probe on center crops, or on random crops averaged over several trials."""
    if mode not in ("center", "random"):
        raise ContractError(f"unknown crop mode {mode!r}")
    kind = "crop_sweep"
    trials = trials or (RANDOM_CROP_TRIALS if mode == "random" else 1)
    base = [s.draw(n_train, n_val, master_seed) for s in sources]
    full = min(base[0]["train"].shape[-2:])
    for size in sizes:
        if size > full:
            raise ContractError(f"crop {size} exceeds image extent {full}")

    def one(job):
        size, trial = job
        rng = point_stream(master_seed, kind, (mode, size), trial)
        if mode == "center":
            datasets = [{k: center_crop(v, size) for k, v in d.items()} for d in base]
        else:
            crop_rng = rng.child("crops")
            datasets = [{k: random_crop_batch(v, size, crop_rng) for k, v in d.items()} for d in base]
        rep = _train_probe(datasets, [s.name for s in sources], model, config, rng, [f"{mode}_crop={size}"])
        return _point(int(size), trial, master_seed, rng, rep, mode=mode)

    jobs_list = [(int(s), t) for s in sizes for t in range(trials)]
    bundle = ReportBundle(kind, _spec_echo(kind, sources, model, config, master_seed, sizes=list(sizes),
                                           mode=mode, trials=trials, n_train=n_train, n_val=n_val))
    bundle.points = _map(one, jobs_list, jobs)
    bundle.summarize()
    return bundle


# ---------------------------------------------------------------------------
# replace vs augment

@dataclass(frozen=True)
class MixSpec:
    alpha: float
    mode: str  # replace | augment

    def __post_init__(self):
        if self.mode not in ("replace", "augment"):
            raise ContractError(f"unknown mix mode {self.mode!r}")
        hi = 1.0 if self.mode == "replace" else 3.0
        if not 0.0 <= self.alpha <= hi:
            raise ContractError(f"{self.mode} alpha must lie in [0, {hi:g}]")


class DiagonalGaussianGenerator:
    """Per-class Gaussian over flattened pixels with independent coordinates.

    Deliberately imperfect: it keeps per-pixel means and variances but drops
    pixel correlations and the bump structure of the real images.
    """

    def __init__(self, covariance: str = "diag"):
        self.covariance = covariance
        self.params = []

    def fit(self, per_class: Sequence[np.ndarray]):
        self.params = []
        for x in per_class:
            flat = x.reshape(len(x), -1)
            mu = flat.mean(axis=0)
            if self.covariance == "diag":
                self.params.append((mu, flat.std(axis=0), x.shape[1:]))
            else:
                cov = np.cov(flat, rowvar=False) + 1e-6 * np.eye(flat.shape[1])
                self.params.append((mu, np.linalg.cholesky(cov), x.shape[1:]))
        return self

    def sample(self, c: int, n: int, rng: RngStream) -> np.ndarray:
        mu, scale, shape = self.params[c]
        z = rng.normal(size=(n, mu.size))
        x = mu + (z * scale if self.covariance == "diag" else z @ scale.T)
        return x.reshape((n,) + tuple(shape))


def mixed_training_set(real: np.ndarray, generated: np.ndarray, mix: MixSpec) -> np.ndarray:
    """Replace the last ``round(alpha n)`` real samples, or append that many generated ones."""
    m = int(round(mix.alpha * len(real)))
    if m > len(generated):
        raise DataError(f"need {m} generated samples, have {len(generated)}")
    if mix.mode == "replace":
        return np.concatenate([real[:len(real) - m], generated[:m]])
    return np.concatenate([real, generated[:m]])


def mix_eval(class_sources: Sequence[Source], alphas: Sequence[float], model=ModelConfig(),
             config=TrainConfig(), n_train=200, n_val=1000, master_seed=0, covariance="diag",
             modes=("replace", "augment"), jobs=1) -> ReportBundle:
    """Downstream k-class task trained on real data mixed with generated data.

    The generator is a per-class Gaussian fitted to the real training split.
    Points at equal alpha share a training stream; alpha = 0 reuses the
    baseline stream, so both modes reproduce the all-real baseline exactly.
    """
    kind = "mix_eval"
    real = [s.draw(n_train, n_val, master_seed) for s in class_sources]
    gen_model = DiagonalGaussianGenerator(covariance).fit([d["train"] for d in real])
    need = int(math.ceil(max(list(alphas) + [0.0]) * n_train))
    pool = [gen_model.sample(c, max(need, 1), RngStream(master_seed, stable_id(kind, "generate", c)))
            for c in range(len(class_sources))]
    names = [s.name for s in class_sources]

    def run(mix: Optional[MixSpec]):
        alpha = 0.0 if mix is None else mix.alpha
        rng = point_stream(master_seed, kind, float(alpha))
        if mix is None:
            datasets = real
        else:
            datasets = [{"train": mixed_training_set(d["train"], g, mix), "val": d["val"]}
                        for d, g in zip(real, pool)]
        rep = _train_probe(datasets, names, model, config, rng,
                           ["baseline" if mix is None else f"{mix.mode}(alpha={alpha:g})"])
        abscissa = alpha
        return _point(abscissa, 0, master_seed, rng, rep, mode="baseline" if mix is None else mix.mode)

    jobs_list = [None] + [MixSpec(float(a), m) for a in alphas for m in modes]
    bundle = ReportBundle(kind, _spec_echo(kind, class_sources, model, config, master_seed,
                                           alphas=[float(a) for a in alphas], modes=list(modes),
                                           n_train=n_train, n_val=n_val, generator=f"gaussian_{covariance}"))
    bundle.points = _map(run, jobs_list, jobs)
    bundle.summarize()
    base = bundle.points[0].report["accuracy"]
    pairs = []
    for a in alphas:
        accs = {p.metrics["mode"]: p.report["accuracy"] for p in bundle.points[1:] if p.abscissa == float(a)}
        pairs.append({"alpha": float(a), **accs, "baseline": base})
    bundle.extra["pairs"] = pairs
    return bundle


# ---------------------------------------------------------------------------
# autophagy

def mad_probe(real_spec, config: autophagy.AutophagyConfig, master_seed: int = 0) -> ReportBundle:
    kind = "mad"
    rng = RngStream(master_seed, stable_id(kind, config.policy))
    records = autophagy.autophagy_loop(real_spec, config, rng)
    bundle = ReportBundle(kind, {"kind": kind, "real": real_spec.to_string(), "config": config.to_dict(),
                                 "master_seed": master_seed})
    for rec in records:
        report = rec.pop("probe_report", None) or {"accuracy": float("nan")}
        bundle.points.append(CurvePoint(rec["generation"], 0, master_seed, rng.stream_id, report,
                                        {"frechet_raw": rec["frechet_raw"], "policy": rec["policy"],
                                         "regularized": rec["regularized"], "generator": rec["generator"]}))
    bundle.summarize()
    return bundle


# ---------------------------------------------------------------------------
# classifier guidance

def ring_mixture(k: int = 8, radius: float = 6.0, sd: float = 0.4) -> Point2DMixture:
    """Equal-weight isotropic Gaussians evenly spaced on a circle."""
    ang = np.arange(k) * 2 * np.pi / k
    means = tuple((radius * math.cos(a), radius * math.sin(a)) for a in ang)
    cov = ((sd * sd, 0.0), (0.0, sd * sd))
    return Point2DMixture((1.0 / k,) * k, means, (cov,) * k)


@dataclass(frozen=True)
class GuideDemoConfig:
    n_real: int = 4000
    n_samples: int = 2000
    T: int = 100
    denoiser: diffusion.DenoiserConfig = diffusion.DenoiserConfig(hidden=64, steps=500)
    classifier: TrainConfig = TrainConfig(epochs=20, label_smoothing=0.0)
    classifier_hidden: int = 64
    noise_repeats: int = 4

    def to_dict(self) -> dict:
        return {"n_real": self.n_real, "n_samples": self.n_samples, "T": self.T,
                "denoiser": self.denoiser.to_dict(), "classifier": self.classifier.to_dict(),
                "classifier_hidden": self.classifier_hidden, "noise_repeats": self.noise_repeats}


def guide_demo(real_spec, scales: Sequence[float] = (0.0, 1.0), config: GuideDemoConfig = GuideDemoConfig(),
               master_seed: int = 0) -> ReportBundle:
    """Fake-rate of guided samples under a judge trained on real vs unguided samples.

    Every scale reuses one sampling stream, so ``s = 0`` reproduces the
    unguided samples exactly.
    """
    kind = "guide_demo"
    root = RngStream(master_seed, stable_id(kind))
    sched = diffusion.NoiseSchedule(config.T)
    n = config.n_real
    xr = real_spec.sample(3 * n, root.child("real"))
    den, den_curve = diffusion.train_denoiser(xr[:n], sched, config.denoiser, root.child("denoiser"))
    gen_j = diffusion.ancestral_sample(den, sched, n, root.child("judge_samples"))
    gen_c = diffusion.ancestral_sample(den, sched, n, root.child("guide_samples"))
    cut = int(0.75 * n)
    judge_spec = ModelSpec("mlp", xr.shape[1:], 2, hidden=config.classifier_hidden)
    judge, judge_rep = train(judge_spec, [{"train": xr[n:n + cut], "val": xr[n + cut:2 * n]},
                                          {"train": gen_j[:cut], "val": gen_j[cut:]}],
                             config.classifier, root.child("judge"), class_names=["real", "generated"])
    guide, guide_rep = diffusion.train_noised_classifier(
        xr[2 * n:], gen_c, sched, config.classifier, root.child("noised"),
        hidden=config.classifier_hidden, repeats=config.noise_repeats)
    bundle = ReportBundle(kind, {"kind": kind, "real": real_spec.to_string(), "scales": [float(s) for s in scales],
                                 "config": config.to_dict(), "schedule": sched.describe(),
                                 "master_seed": master_seed})
    sample_stream = root.child("evaluation")
    for s in scales:
        rng = sample_stream.clone()
        g = diffusion.GuidanceConfig(float(s), guide)
        x = diffusion.ancestral_sample(den, sched, config.n_samples, rng, g if s else None)
        fake = float(np.mean(judge.predict(x) == diffusion.GENERATED))
        bundle.points.append(CurvePoint(float(s), 0, master_seed, sample_stream.stream_id,
                                        {"accuracy": judge_rep.accuracy}, {"fake_rate": fake}))
    rates = [p.metrics["fake_rate"] for p in bundle.points]
    best = rates[0]
    for p, r in zip(bundle.points, rates):
        p.metrics["over_guidance"] = bool(r > best)
        best = min(best, r)
    bundle.extra = {"judge": judge_rep.to_dict(), "guidance_classifier": guide_rep.to_dict(),
                    "denoiser_loss_curve": den_curve}
    bundle.summarize()
    return bundle


# ---------------------------------------------------------------------------
# Frechet comparator

def frechet_compare(sources, feature_source: str = "raw", model=ModelConfig(hidden=32), config=TrainConfig(),
                    n_train=1000, n_val=1000, master_seed=0):
    """Gaussian Frechet distance between two distributions next to a probe of the same pair.

    Features are either the raw (flattened) coordinates or the probe's
    penultimate activations; both are fitted on the held-out split.
    Returns ``(distance, ProbeReport, ReportBundle)``.
    """
    if len(sources) != 2:
        raise ContractError("the Frechet comparator needs exactly two distributions")
    if feature_source not in ("raw", "classifier_penultimate"):
        raise ContractError(f"unknown feature source {feature_source!r}")
    kind = "frechet_compare"
    datasets = [s.draw(n_train, n_val, master_seed) for s in sources]
    rng = point_stream(master_seed, kind, feature_source)
    spec = model.build(np.asarray(datasets[0]["train"]).shape[1:], 2)
    clf, report = train(spec, datasets, config, rng, class_names=[s.name for s in sources])
    feats = []
    for d in datasets:
        if feature_source == "raw":
            f = np.asarray(d["val"]).reshape(len(d["val"]), -1)
        else:
            f = extract_features(clf.spec, clf.params, clf.preprocess(d["val"]))
        if f.shape[1] > 64:
            raise ContractError(f"feature dimension {f.shape[1]} exceeds 64")
        feats.append(f)
    (m1, c1), (m2, c2) = gaussian_fit(feats[0]), gaussian_fit(feats[1])
    dist = frechet_gaussian_distance(m1, c1, m2, c2)
    report.extra["frechet_distance"] = dist
    report.extra["feature_source"] = feature_source
    bundle = ReportBundle(kind, _spec_echo(kind, sources, model, config, master_seed,
                                           feature_source=feature_source, n_train=n_train, n_val=n_val))
    bundle.points.append(CurvePoint(feature_source, 0, master_seed, rng.stream_id, report.to_dict(),
                                    {"frechet_distance": dist}))
    bundle.summarize()
    return dist, report, bundle


def _check_ladder(ladder):
    if any(b <= a for a, b in zip(ladder, ladder[1:])):
        raise ContractError(f"ladder {ladder} is not strictly increasing")
