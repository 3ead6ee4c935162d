"""Command-line front end.

Every experiment subcommand writes ``report.json`` and ``curve.csv`` into
``<out>/seed-<seed>/``. Option precedence: command-line flag, then the
``--config`` file (``key=value`` lines, ``#`` comments), then the built-in
default. The resolved values are echoed into the report under ``run_config``.

Exit codes: 0 success, 1 experiment or I/O failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import __version__, probes
from .classifier.training import TrainConfig
from .errors import ContractError, DistProbeError
from .imaging import AugmentationSpec, write_distribution_dir
from .spectral import parse_filter
from .synth import autophagy, diffusion
from .synth.distributions import parse_dist_spec

log = logging.getLogger("distprobe")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class Opt:
    name: str
    type: type
    default: object
    help: str
    choices: Optional[tuple] = None
    repeat: bool = False

    @property
    def dest(self) -> str:
        return self.name.replace("-", "_")


def _flag(name, help):
    return Opt(name, bool, False, help)


COMMON = [
    Opt("seed", int, 0, "master seed"),
    Opt("out", str, "runs", "output root; results go to <out>/seed-<seed>"),
    Opt("jobs", int, 1, "concurrent ladder points"),
]
DATA = [
    Opt("n-train", int, 1000, "training samples per distribution"),
    Opt("n-val", int, 1000, "held-out samples per distribution"),
]
MODEL = [
    Opt("model", str, "mlp", "classifier family", ("logistic", "mlp", "smallconv")),
    Opt("hidden", int, 128, "mlp hidden width"),
    Opt("conv-channels", str, "8,16", "smallconv channel counts"),
]
TRAIN = [
    Opt("epochs", int, 30, "training epochs"),
    Opt("lr", float, 0.05, "peak learning rate"),
    Opt("momentum", float, 0.9, "SGD momentum"),
    Opt("batch-size", int, 64, "minibatch size"),
    Opt("label-smoothing", float, 0.1, "label smoothing epsilon"),
    Opt("normalization", str, "per_channel_standardize", "input normalization",
        ("none", "clamp01", "per_channel_standardize")),
    Opt("schedule", str, "cosine", "learning-rate schedule", ("cosine", "constant")),
    Opt("aug-pad", int, 0, "zero padding before the random crop"),
    Opt("aug-crop", int, 0, "random crop size (0 disables)"),
    Opt("aug-flip", float, 0.0, "horizontal flip probability"),
]
PROBE = COMMON + DATA + MODEL + TRAIN

SUBCOMMANDS = {
    "probe": ("train one classifier to separate the given distributions", (2, None), PROBE),
    "same-dist": ("null check: probe one distribution against itself", (1, 1), PROBE),
    "scale-curve": ("accuracy versus training-set size", (2, None), PROBE + [
        Opt("ladder", str, "50,200,1000", "training-set sizes, strictly increasing")]),
    "freq-sweep": ("accuracy under a ladder of frequency filters", (2, None), PROBE + [
        Opt("filter", str, None, "low:T | high:T | band:A-B | KIND:frac:V (repeatable)", repeat=True),
        Opt("mask-shape", str, "rect", "mask geometry", ("rect", "circle")),
        _flag("clamp", "clamp filtered images to [0, 1]")]),
    "crop-sweep": ("accuracy under center or random crops", (2, None), PROBE + [
        Opt("crops", str, None, "crop sizes, e.g. 4,8,16"),
        Opt("mode", str, "center", "crop placement", ("center", "random")),
        Opt("trials", int, 0, "trials per crop size (0: 1 for center, 4 for random)")]),
    "mix-eval": ("downstream accuracy when real data is replaced or augmented by generated data",
                 (2, None), PROBE + [
        Opt("alphas", str, "0,0.5,1", "mixing ratios"),
        Opt("modes", str, "replace,augment", "mixing modes"),
        Opt("covariance", str, "diag", "generator covariance", ("diag", "full"))]),
    "multiway": ("k-way probe over three or more distributions", (3, None), PROBE),
    "mad-sim": ("self-consuming generator loop with drift and probe metrics", (0, 1), COMMON + [
        Opt("generations", int, 6, "number of generations"),
        Opt("samples-per-generation", int, 100, "training samples per generation"),
        Opt("policy", str, "replace", "data policy", ("replace", "augment")),
        Opt("real-fraction", float, 0.5, "real share of each augment-policy training set"),
        Opt("eval-samples", int, 5000, "samples for the Frechet estimate"),
        Opt("probe-samples", int, 1000, "real samples for the per-generation probe"),
        Opt("probe-epochs", int, 10, "probe training epochs"),
        Opt("probe-hidden", int, 32, "probe hidden width"),
        Opt("generator", str, "gaussian", "generator family", ("gaussian", "denoiser")),
        Opt("den-steps", int, 1500, "denoiser optimisation steps (denoiser generator)"),
        _flag("no-probe", "skip the per-generation probe")]),
    "guide-demo": ("fake-rate of classifier-guided diffusion samples", (0, 1), COMMON + [
        Opt("scales", str, "0,1", "guidance scales"),
        Opt("n-real", int, 4000, "real samples per training role"),
        Opt("n-samples", int, 2000, "samples generated per scale"),
        Opt("T", int, 100, "diffusion steps"),
        Opt("steps", int, 500, "denoiser optimisation steps"),
        Opt("den-hidden", int, 64, "denoiser hidden width"),
        Opt("den-lr", float, 0.02, "denoiser learning rate"),
        Opt("classifier-hidden", int, 64, "judge and guidance classifier hidden width"),
        Opt("classifier-epochs", int, 20, "judge and guidance classifier epochs"),
        Opt("noise-repeats", int, 4, "noised copies per guidance training example")]),
    "frechet": ("Gaussian Frechet distance next to a probe of the same pair", (2, 2), PROBE + [
        Opt("features", str, "raw", "feature source", ("raw", "classifier_penultimate"))]),
    "synth": ("write synthetic distributions as dataset directories", (1, None), [
        Opt("seed", int, 0, "master seed"),
        Opt("out", str, "data", "output root; one directory per distribution"),
        Opt("format", str, "ntf", "file format", ("ntf", "png"))] + DATA),
}

DIST_HELP = "NAME=dir:PATH | NAME=synth:SPEC (repeatable); SPEC grammar: " \
            "bernoulli:theta=,shape=CxHxW[,patch=,patch_theta=] | spectral:shape=,bands=LO-HI@SIGMA/... | " \
            "blob:shape=,centers=R:C/...[,weights=,spread=,width=,amp=,background=,noise=] | " \
            "point2d:weights=a/b,means=X:Y/...,covs=A:B:C:D/... or std=S"

DEFAULT_REAL = {
    "mad-sim": "point2d:weights=0.5/0.5,means=-2:0/2:0,covs=0.5:0:0:0.5/0.5:0:0:0.5",
    "guide-demo": probes.ring_mixture().to_string(),
}


@dataclass
class RunConfig:
    command: str
    sources: list
    settings: dict
    seed: int
    out: Path
    jobs: int = 1
    filters: list = field(default_factory=list)

    def echo(self) -> dict:
        return {"command": self.command, "distributions": {s.name: s.describe() for s in self.sources},
                **{k: v for k, v in sorted(self.settings.items())}}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="distprobe", description="Classifier-based distribution probes.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    for name, (help_text, arity, opts) in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        lo, hi = arity
        if hi != 0:
            p.add_argument("--dist", action="append", metavar="NAME=SOURCE", default=argparse.SUPPRESS,
                           help=DIST_HELP + (f"; default real={DEFAULT_REAL[name]}" if name in DEFAULT_REAL else ""))
        p.add_argument("--config", metavar="PATH", default=argparse.SUPPRESS,
                       help="key=value file; flags take precedence")
        for o in opts:
            kw = {"dest": o.dest, "default": argparse.SUPPRESS,
                  "help": f"{o.help} (default: {o.default})" if o.default is not None else o.help}
            if o.type is bool:
                p.add_argument(f"--{o.name}", action="store_true", **kw)
            else:
                p.add_argument(f"--{o.name}", type=o.type, choices=o.choices,
                               action="append" if o.repeat else "store", **kw)
    return parser


def read_config_file(path) -> dict:
    """Flat ``key=value`` lines; repeated keys accumulate into lists."""
    out: dict = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        out.setdefault(key.strip().replace("-", "_"), []).append(value.strip())
    return out


def _coerce(opt: Opt, value: str):
    if opt.type is bool:
        low = value.lower()
        if low not in ("1", "0", "true", "false", "yes", "no"):
            raise UsageError(f"config value for {opt.name} must be a boolean, got {value!r}")
        return low in ("1", "true", "yes")
    try:
        v = opt.type(value)
    except ValueError as exc:
        raise UsageError(f"bad value {value!r} for {opt.name}") from exc
    if opt.choices and v not in opt.choices:
        raise UsageError(f"{opt.name} must be one of {', '.join(opt.choices)}")
    return v


def parse_source(text: str, command: str) -> probes.Source:
    name, sep, src = text.partition("=")
    if not sep or not name:
        raise UsageError(f"--dist expects NAME=SOURCE, got {text!r}")
    if src.startswith("dir:"):
        if command == "synth":
            raise UsageError("synth needs synthetic sources")
        return probes.Source(name, path=src[4:])
    if src.startswith("synth:"):
        src = src[6:]
    try:
        return probes.Source(name, parse_dist_spec(src, name))
    except ContractError as exc:
        raise UsageError(str(exc)) from exc


def _int_list(text: str, what: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"bad {what} list {text!r}") from exc


def _float_list(text: str, what: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"bad {what} list {text!r}") from exc


def parse(argv: Optional[Sequence[str]] = None) -> RunConfig:
    """Parse arguments into a :class:`RunConfig`; raises :class:`UsageError`."""
    ns = vars(build_parser().parse_args(argv))
    command = ns.pop("command")
    ns.pop("verbose", None)
    _, (lo, hi), opts = SUBCOMMANDS[command]
    file_values = read_config_file(ns.pop("config")) if "config" in ns else {}
    known = {o.dest: o for o in opts}
    unknown = sorted(set(file_values) - set(known) - {"dist"})
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")

    settings = {}
    for dest, o in known.items():
        if dest in ns:
            settings[dest] = ns[dest]
        elif dest in file_values:
            vals = [_coerce(o, v) for v in file_values[dest]]
            settings[dest] = vals if o.repeat else vals[-1]
        else:
            settings[dest] = o.default

    dist_args = ns.get("dist", file_values.get("dist", []))
    if not dist_args and command in DEFAULT_REAL:
        dist_args = [f"real={DEFAULT_REAL[command]}"]
    if len(dist_args) < lo or (hi is not None and len(dist_args) > hi):
        want = f"exactly {lo}" if lo == hi else (f"at least {lo}" if hi is None else f"at most {hi}")
        raise UsageError(f"{command} needs {want} --dist argument(s), got {len(dist_args)}")
    sources = [parse_source(d, command) for d in dist_args]
    names = [s.name for s in sources]
    if len(set(names)) != len(names):
        raise UsageError(f"duplicate distribution names in {names}")

    cfg = RunConfig(command, sources, settings, settings["seed"], Path(settings["out"]), settings.get("jobs", 1))
    if cfg.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    if command == "freq-sweep":
        if not settings["filter"]:
            raise UsageError("freq-sweep requires --filter")
        try:
            cfg.filters = [parse_filter(f, settings["mask_shape"]) for f in settings["filter"]]
        except ContractError as exc:
            raise UsageError(str(exc)) from exc
    if command == "crop-sweep" and not settings["crops"]:
        raise UsageError("crop-sweep requires --crops")
    if command == "mad-sim" and not hasattr(sources[0].spec, "sample_labeled"):
        raise UsageError("mad-sim needs a point2d distribution")
    if command == "guide-demo" and sources[0].spec is None:
        raise UsageError("guide-demo needs a synthetic distribution")
    return cfg


def _train_config(s: dict) -> TrainConfig:
    aug = AugmentationSpec(pad=s["aug_pad"], crop_size=s["aug_crop"] or None, horizontal_flip_prob=s["aug_flip"])
    return TrainConfig(lr=s["lr"], momentum=s["momentum"], batch_size=s["batch_size"], epochs=s["epochs"],
                       label_smoothing=s["label_smoothing"], augmentation=aug, seed=s["seed"],
                       normalization=s["normalization"], schedule=s["schedule"])


def _model_config(s: dict) -> probes.ModelConfig:
    return probes.ModelConfig(s["model"], s["hidden"], tuple(_int_list(s["conv_channels"], "channel")))


def run(cfg: RunConfig):
    """Run the experiment; returns a ReportBundle (or the written paths for ``synth``)."""
    s, seed, src = cfg.settings, cfg.seed, cfg.sources
    if cfg.command == "synth":
        written = []
        for source in src:
            data = source.draw(s["n_train"], s["n_val"], seed)
            write_distribution_dir(cfg.out / source.name, data, s["format"])
            (cfg.out / source.name / "source.txt").write_text(
                f"{source.describe()}\nseed={seed}\nn_train={s['n_train']}\nn_val={s['n_val']}\n", encoding="utf-8")
            written.append(cfg.out / source.name)
        return written
    if cfg.command == "mad-sim":
        acfg = autophagy.AutophagyConfig(
            generations=s["generations"], samples_per_generation=s["samples_per_generation"], policy=s["policy"],
            real_fraction=s["real_fraction"], eval_samples=s["eval_samples"], probe=not s["no_probe"],
            probe_samples=s["probe_samples"],
            probe_config=TrainConfig(epochs=s["probe_epochs"], label_smoothing=0.0), probe_hidden=s["probe_hidden"],
            generator=s["generator"], denoiser=diffusion.DenoiserConfig(steps=s["den_steps"]))
        return probes.mad_probe(src[0].spec, acfg, seed)
    if cfg.command == "guide-demo":
        ccfg = TrainConfig(epochs=s["classifier_epochs"], label_smoothing=0.0)
        gcfg = probes.GuideDemoConfig(
            n_real=s["n_real"], n_samples=s["n_samples"], T=s["T"],
            denoiser=diffusion.DenoiserConfig(hidden=s["den_hidden"], steps=s["steps"], lr=s["den_lr"]),
            classifier=ccfg, classifier_hidden=s["classifier_hidden"], noise_repeats=s["noise_repeats"])
        return probes.guide_demo(src[0].spec, _float_list(s["scales"], "scale"), gcfg, seed)

    model, tcfg = _model_config(s), _train_config(s)
    n_train, n_val, jobs = s["n_train"], s["n_val"], cfg.jobs
    if cfg.command == "probe":
        return probes.probe_bundle(src, model, tcfg, n_train, n_val, seed)
    if cfg.command == "same-dist":
        return probes.same_dist(src[0], model, tcfg, n_train, n_val, seed)
    if cfg.command == "multiway":
        return probes.multiway_probe(src, model, tcfg, n_train, n_val, seed)
    if cfg.command == "scale-curve":
        return probes.scale_curve(src, _int_list(s["ladder"], "ladder"), model, tcfg, n_val, seed, jobs)
    if cfg.command == "freq-sweep":
        return probes.freq_sweep(src, cfg.filters, model, tcfg, n_train, n_val, seed, s["clamp"], jobs)
    if cfg.command == "crop-sweep":
        return probes.crop_sweep(src, _int_list(s["crops"], "crop"), s["mode"], model, tcfg, n_train, n_val,
                                 seed, s["trials"] or None, jobs)
    if cfg.command == "mix-eval":
        modes = tuple(m.strip() for m in s["modes"].split(",") if m.strip())
        return probes.mix_eval(src, _float_list(s["alphas"], "alpha"), model, tcfg, n_train, n_val, seed,
                               s["covariance"], modes, jobs)
    if cfg.command == "frechet":
        return probes.frechet_compare(src, s["features"], model, tcfg, n_train, n_val, seed)[2]
    raise UsageError(f"unknown command {cfg.command!r}")


def execute(cfg: RunConfig) -> int:
    from .reports import write_bundle

    out_dir = cfg.out if cfg.command == "synth" else cfg.out / f"seed-{cfg.seed}"
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        result = run(cfg)
        if cfg.command == "synth":
            for path in result:
                print(path)
            return EXIT_OK
        result.spec["run_config"] = cfg.echo()
        for path in write_bundle(result, out_dir):
            print(path)
    except UsageError as exc:
        print(f"distprobe: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DistProbeError, OSError, ValueError, ArithmeticError) as exc:
        print(f"distprobe: {cfg.command} failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.INFO if ("-v" in argv or "--verbose" in argv) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse(argv)
    except UsageError as exc:
        print(str(exc) if str(exc).startswith("distprobe") else f"distprobe: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    return execute(cfg)


if __name__ == "__main__":
    sys.exit(main())
