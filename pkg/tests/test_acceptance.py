"""End-to-end acceptance checks, one per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` (a little over a minute on one
core) or as a script: ``python3 tests/test_acceptance.py [N ...]``.
"""
from __future__ import annotations

import contextlib
import io
import json
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from distprobe import cli
from distprobe.classifier import TrainConfig
from distprobe.numerics import RngStream, fft2, frechet_gaussian_distance
from distprobe.probes import (FRECHET_FLOOR_2D_1E4, ModelConfig, Source, crop_sweep, freq_sweep, frechet_compare,
                              guide_demo, mix_eval, ring_mixture, run_probe, same_dist, scale_curve)
from distprobe.reports import strip_wall_clock
from distprobe.spectral import FilterSpec, apply_filter, make_mask
from distprobe.synth import (AutophagyConfig, GuidanceConfig, NoiseSchedule, ancestral_sample, autophagy_loop,
                             forward_diffuse, noise_prediction_loss, parse_dist_spec, train_denoiser,
                             train_noised_classifier)
from distprobe.synth.diffusion import Denoiser, DenoiserConfig

NO_SMOOTHING = TrainConfig(epochs=10, label_smoothing=0.0)


def src(name, text):
    return Source(name, parse_dist_spec(text, name))


# ---------------------------------------------------------------------------
# criteria; each returns (passed, one-line detail)


NULL_FAMILIES = {
    "bernoulli": ("bernoulli:theta=0.3,shape=1x4x4", ModelConfig("logistic")),
    "blob": ("blob:shape=1x8x8,centers=2:2/5:5,spread=1.0", ModelConfig(hidden=32)),
    "point2d": ("point2d:weights=0.5/0.5,means=-1:0/1:0,std=0.5", ModelConfig(hidden=32)),
}


def criterion_1():
    inside, total = 0, 0
    worst = {}
    for fam, (text, model) in NULL_FAMILIES.items():
        accs = []
        for seed in range(20):
            b = same_dist(src(fam, text), model, NO_SMOOTHING, 1000, 1000, seed)
            accs.append(b.points[0].report["accuracy"])
        inside += sum(0.45 <= a <= 0.55 for a in accs)
        total += len(accs)
        worst[fam] = max(abs(a - 0.5) for a in accs)
    detail = f"{inside}/{total} runs in [0.45, 0.55]; max |acc-0.5| " + \
             ", ".join(f"{k}={v:.3f}" for k, v in worst.items())
    return inside >= 0.9 * total, detail


DIVERGENCE_SHAPES = ("1x1x1", "1x2x2", "1x4x4")
DIVERGENCE_GAPS = {0.1: (0.45, 0.55), 0.4: (0.3, 0.7), 0.9: (0.05, 0.95)}


def criterion_2():
    ok, worst_acc, worst_over, worst_gap, worst_tv = True, 0.0, -1.0, 0.0, -1.0
    for shape in DIVERGENCE_SHAPES:
        for a, b in DIVERGENCE_GAPS.values():
            pair = [src("p", f"bernoulli:theta={a},shape={shape}"), src("q", f"bernoulli:theta={b},shape={shape}")]
            rep = run_probe(pair, ModelConfig("logistic"), NO_SMOOTHING, 5000, 10000, 0)
            oracle = rep.extra["oracle"]
            d_acc = abs(rep.accuracy - oracle["bayes_accuracy"])
            over = rep.jsd_estimate - oracle["jsd"]
            d_tv = rep.tv_lower - oracle["tv"]
            worst_acc, worst_over = max(worst_acc, d_acc), max(worst_over, over)
            worst_gap, worst_tv = max(worst_gap, abs(over)), max(worst_tv, d_tv)
            ok &= d_acc <= 0.03 and abs(over) <= 0.05 and over <= 0.01 and d_tv <= 0.03
    detail = (f"max |acc-bayes|={worst_acc:.4f}, max |jsd_hat-jsd|={worst_gap:.4f}, "
              f"max jsd overshoot={worst_over:+.4f}, max tv_lower-tv={worst_tv:+.4f}")
    return ok, detail


def dft_matrix(m):
    return np.array([[complex(math.cos(-2 * math.pi * i * j / m), math.sin(-2 * math.pi * i * j / m))
                      for j in range(m)] for i in range(m)])


def naive_dft(x):
    m, n = x.shape
    return dft_matrix(m) @ x @ dft_matrix(n).T


def criterion_3():
    counts_ok = True
    for t in range(9):
        enum = sum(1 for u in range(64) for v in range(64) if max(abs(u - 32), abs(v - 32)) <= t)
        counts_ok &= make_mask(FilterSpec("lowpass", threshold=t), 64, 64).sum() == enum == (2 * t + 1) ** 2
    rng = RngStream(0)
    x, y = rng.random((2, 64, 64)), rng.random((2, 64, 64))
    err = 0.0
    for shape in ("rectangular", "circular"):
        for t in (0, 3, 10, 31):
            lo, hi = FilterSpec("lowpass", threshold=t, shape=shape), FilterSpec("highpass", threshold=t, shape=shape)
            err = max(err, np.max(np.abs(apply_filter(x, lo) + apply_filter(x, hi) - x)))
    band = FilterSpec("bandpass", low=4, high=12)
    lin = np.max(np.abs(apply_filter(2 * x - 3 * y, band) - 2 * apply_filter(x, band) + 3 * apply_filter(y, band)))
    once = apply_filter(x, band)
    idem = np.max(np.abs(apply_filter(once, band) - once))
    fft_err = max(np.max(np.abs(fft2(z) - naive_dft(z)))
                  for s in (2, 4, 8) for z in [RngStream(s).normal(size=(s, s))])
    ok = counts_ok and err < 1e-9 and lin < 1e-9 and idem < 1e-9 and fft_err < 1e-10
    return ok, (f"mask counts {'match' if counts_ok else 'MISMATCH'}; complement {err:.1e}, linearity {lin:.1e}, "
                f"idempotence {idem:.1e}, fft vs DFT {fft_err:.1e}")


BANDED = ("spectral:shape=1x32x32,bands=0-7@1/8-12@1/13-16@1",
          "spectral:shape=1x32x32,bands=0-7@1/8-12@2/13-16@1")


def criterion_4():
    ins, outs = [], []
    filters = [FilterSpec("bandpass", low=0, high=4), FilterSpec("bandpass", low=8, high=12)]
    for seed in range(5):
        b = freq_sweep([src("a", BANDED[0]), src("b", BANDED[1])], filters, ModelConfig(), NO_SMOOTHING,
                       2000, 1000, seed)
        acc = {p.abscissa: p.report["accuracy"] for p in b.points}
        outs.append(acc["band:0-4"])
        ins.append(acc["band:8-12"])
    ok = min(ins) >= 0.9 and max(outs) <= 0.6 and all(i - o >= 0.3 for i, o in zip(ins, outs))
    return ok, f"in-band min {min(ins):.3f} (>= 0.9), out-of-band max {max(outs):.3f} (<= 0.6)"


def criterion_5():
    model, cfg = ModelConfig("logistic"), NO_SMOOTHING
    glob = [src("lo", "bernoulli:theta=0.2,shape=1x64x64"), src("hi", "bernoulli:theta=0.8,shape=1x64x64")]
    g = crop_sweep(glob, [4, 8, 16, 32, 64], "center", model, cfg, 500, 500)
    g_acc = {p.abscissa: p.report["accuracy"] for p in g.points}
    local = [src("lo", "bernoulli:theta=0.5,shape=1x64x64,patch=8,patch_theta=0.2"),
             src("hi", "bernoulli:theta=0.5,shape=1x64x64,patch=8,patch_theta=0.8")]
    c = crop_sweep(local, [16], "center", model, cfg, 500, 500)
    r = crop_sweep(local, [16], "random", model, cfg, 500, 500)
    gap = c.mean_accuracy(16) - r.mean_accuracy(16)
    ok = min(g_acc.values()) >= 0.95 and gap >= 0.1 and len(r.points) == 4
    return ok, (f"global min acc {min(g_acc.values()):.3f} over crops 4..64; local center {c.mean_accuracy(16):.3f} "
                f"vs random {r.mean_accuracy(16):.3f} (4 trials, sd {r.summary[0]['accuracy_sd']:.3f}), gap {gap:.3f}")


def criterion_6():
    pair = [src("a", "bernoulli:theta=0.45,shape=1x8x8"), src("b", "bernoulli:theta=0.55,shape=1x8x8")]
    ladder = [50, 200, 1000]
    accs = np.zeros((5, 3))
    for seed in range(5):
        b = scale_curve(pair, ladder, ModelConfig(), NO_SMOOTHING, 1000, seed)
        accs[seed] = [p.report["accuracy"] for p in b.points]
    means = accs.mean(axis=0)
    ok = all(b >= a - 0.02 for a, b in zip(means, means[1:]))
    return ok, "mean accuracy " + " -> ".join(f"{n}:{m:.3f}" for n, m in zip(ladder, means))


MIX_CLASSES = [f"blob:shape=1x8x8,centers=3.5:3.5,spread=2.0,width={w}" for w in ("0.8", "1.6", "2.4")]


def criterion_7():
    wins = {0.5: 0, 1.0: 0}
    endpoints = True
    classes = [src(f"c{i}", t) for i, t in enumerate(MIX_CLASSES)]
    for seed in range(10):
        b = mix_eval(classes, [0.0, 0.5, 1.0], ModelConfig(hidden=32), NO_SMOOTHING, 200, 1000, seed)
        base = b.points[0].report
        for p in b.points:
            if p.abscissa == 0.0:
                endpoints &= json.dumps(strip_wall_clock({k: v for k, v in p.report.items() if k != "preprocessing"}),
                                        sort_keys=True) == json.dumps(strip_wall_clock(
                    {k: v for k, v in base.items() if k != "preprocessing"}), sort_keys=True)
        for pair in b.extra["pairs"]:
            if pair["alpha"] in wins:
                wins[pair["alpha"]] += pair["augment"] >= pair["replace"]
    ok = endpoints and all(w >= 8 for w in wins.values())
    return ok, (f"augment >= replace in {wins[0.5]}/10 (alpha 0.5), {wins[1.0]}/10 (alpha 1); "
                f"alpha=0 endpoints {'identical' if endpoints else 'DIFFER'}")


MAD_REAL = cli.DEFAULT_REAL["mad-sim"]


def criterion_8():
    real = parse_dist_spec(MAD_REAL)
    drift, mitigated = 0, 0
    for seed in range(10):
        runs = {}
        for policy in ("replace", "augment"):
            cfg = AutophagyConfig(generations=6, samples_per_generation=100, policy=policy, real_fraction=0.5,
                                  probe=False)
            runs[policy] = autophagy_loop(real, cfg, RngStream(seed))
        rep, aug = runs["replace"], runs["augment"]
        drift += rep[5]["frechet_raw"] > rep[0]["frechet_raw"]
        mitigated += aug[5]["frechet_raw"] < rep[5]["frechet_raw"]
    return drift >= 8 and mitigated >= 8, f"replace drift in {drift}/10; augment below replace in {mitigated}/10"


def criterion_9():
    wins, rates = 0, []
    for seed in range(10):
        b = guide_demo(ring_mixture(), (0.0, 1.0), master_seed=seed)
        r0, r1 = (p.metrics["fake_rate"] for p in b.points)
        wins += r1 < r0
        rates.append((r0, r1))
    # zero-scale guidance against an unguided chain on shared streams
    s = NoiseSchedule(50)
    real = ring_mixture().sample(600, RngStream(1))
    den, _ = train_denoiser(real, s, DenoiserConfig(hidden=32, steps=200), RngStream(2))
    fake = ancestral_sample(den, s, 600, RngStream(3))
    clf, _ = train_noised_classifier(real, fake, s, TrainConfig(epochs=2), RngStream(4), hidden=16)
    plain = ancestral_sample(den, s, 500, RngStream(5))
    zero = ancestral_sample(den, s, 500, RngStream(5), GuidanceConfig(0.0, clf))
    identical = plain.tobytes() == zero.tobytes()
    mean = np.mean(rates, axis=0)
    return wins >= 8 and identical, (f"guided < unguided in {wins}/10 (mean fake-rate {mean[0]:.3f} -> {mean[1]:.3f}); "
                                     f"s=0 {'bit-identical' if identical else 'DIFFERS'}")


def criterion_10():
    s = NoiseSchedule(100)
    n = 20_000
    x = RngStream(0).normal(size=(n, 1))
    rng = RngStream(1)
    worst = 0.0
    for t in range(1, s.T + 1):
        z, _ = forward_diffuse(x, t, s, rng)
        expected = s.alpha_bars[t] * x.var(ddof=1) + 1 - s.alpha_bars[t]
        worst = max(worst, abs(z.var(ddof=1) - expected) / (math.sqrt(2 / n) * expected))

    class Zero:
        def predict(self, z, t):
            return np.zeros_like(z)

    dim = 6
    loss = noise_prediction_loss(Zero(), RngStream(2).normal(size=(10_000, dim)), s, RngStream(3))
    rel = abs(loss - dim) / dim

    den = Denoiser.create(2, RngStream(4), hidden=16)
    batch = RngStream(5).normal(size=(8, 2))
    _, g = noise_prediction_loss(den, batch, s, RngStream(6), return_grad=True)
    base = den.params.vector.copy()
    fd_err = 0.0
    for i in RngStream(7).choice(base.size, size=80, replace=False):
        vals = []
        for h in (1e-5, -1e-5):
            den.params.vector[:] = base
            den.params.vector[i] += h
            vals.append(noise_prediction_loss(den, batch, s, RngStream(6)))
        fd = (vals[0] - vals[1]) / 2e-5
        fd_err = max(fd_err, abs(fd - g[i]) / max(abs(fd), abs(g[i]), 1e-7))
    den.params.vector[:] = base
    ok = worst <= 3 and rel <= 0.05 and fd_err < 1e-4
    return ok, f"marginal variance worst {worst:.2f} sigma; E|eps|^2 rel err {rel:.4f}; denoiser FD rel err {fd_err:.1e}"


MOMENT_MATCHED = ("point2d:means=0:0,std=1",
                  "point2d:weights=0.5/0.5,means=0.98:0/-0.98:0,covs=0.04:0:0:1/0.04:0:0:1")


def criterion_11():
    one_d = abs(frechet_gaussian_distance([0.0], [[1.0]], [3.0], [[4.0]]) - 10.0)
    d1, d2 = np.array([1.0, 2.0, 9.0]), np.array([4.0, 0.5, 1.0])
    diag = abs(frechet_gaussian_distance(np.zeros(3), np.diag(d1), np.zeros(3), np.diag(d2))
               - float(np.sum((np.sqrt(d1) - np.sqrt(d2)) ** 2)))
    pair = [src("gauss", MOMENT_MATCHED[0]), src("split", MOMENT_MATCHED[1])]
    dist, rep, _ = frechet_compare(pair, "raw", ModelConfig(hidden=32), TrainConfig(epochs=30, label_smoothing=0.0),
                                   2000, 10_000)
    same = [src("a", MOMENT_MATCHED[0]), src("b", MOMENT_MATCHED[0])]
    floor_dist, _, _ = frechet_compare(same, "raw", ModelConfig(hidden=8), TrainConfig(epochs=1), 100, 10_000)
    ok = one_d < 1e-9 and diag < 1e-9 and dist < 0.02 and rep.accuracy >= 0.7 and floor_dist < FRECHET_FLOOR_2D_1E4
    return ok, (f"closed forms err {max(one_d, diag):.1e}; moment-matched distance {dist:.4f} with probe accuracy "
                f"{rep.accuracy:.3f}; identical-pair distance {floor_dist:.1e} (floor {FRECHET_FLOOR_2D_1E4:g})")


QUICK = ["--epochs", "2", "--n-train", "100", "--n-val", "100"]
A = "a=bernoulli:theta=0.3,shape=1x8x8"
B = "b=bernoulli:theta=0.7,shape=1x8x8"
DETERMINISM_RUNS = {
    "probe": ["--dist", A, "--dist", B] + QUICK,
    "same-dist": ["--dist", A] + QUICK,
    "scale-curve": ["--dist", A, "--dist", B, "--ladder", "25,50,100"] + QUICK,
    "freq-sweep": ["--dist", A, "--dist", B, "--filter", "low:1", "--filter", "band:2-3"] + QUICK,
    "crop-sweep": ["--dist", A, "--dist", B, "--crops", "4,8", "--mode", "random", "--jobs", "2"] + QUICK,
    "mix-eval": [a for i, t in enumerate(MIX_CLASSES) for a in ("--dist", f"c{i}={t}")] + QUICK,
    "multiway": ["--dist", A, "--dist", B, "--dist", "c=bernoulli:theta=0.5,shape=1x8x8"] + QUICK,
    "mad-sim": ["--generations", "3"],
    "guide-demo": ["--n-real", "300", "--n-samples", "200", "--steps", "100", "--classifier-epochs", "2"],
    "frechet": ["--dist", "g=point2d:means=0:0,std=1", "--dist", "h=point2d:means=1:0,std=2"] + QUICK,
    "synth": ["--dist", A, "--dist", "s=spectral:shape=1x16x16,bands=0-8@1", "--n-train", "20", "--n-val", "10"],
}


def _snapshot(root: Path) -> dict:
    out = {}
    for path in sorted(root.rglob("*")):
        if path.is_file():
            data = path.read_bytes()
            if path.name == "report.json":
                data = json.dumps(strip_wall_clock(json.loads(data)), sort_keys=True).encode()
            out[str(path.relative_to(root))] = data
    return out


def criterion_12(workdir: Path):
    same, failed = 0, []
    for command, args in DETERMINISM_RUNS.items():
        out = workdir / command
        snaps = []
        for _ in range(2):
            with contextlib.redirect_stdout(io.StringIO()):
                code = cli.main([command] + args + ["--seed", "4", "--out", str(out)])
            if code != 0:
                failed.append(command)
                break
            snaps.append(_snapshot(out))
        if len(snaps) == 2 and snaps[0] == snaps[1] and snaps[0]:
            same += 1
        elif command not in failed:
            failed.append(command)
    total = len(DETERMINISM_RUNS)
    return same == total, f"{same}/{total} subcommands reproduce their outputs" + \
        (f"; differing: {', '.join(failed)}" if failed else "")


# ---------------------------------------------------------------------------
# harness

CRITERIA = {
    1: ("same-distribution null", criterion_1),
    2: ("divergence oracle agreement", criterion_2),
    3: ("filter correctness", criterion_3),
    4: ("frequency localization", criterion_4),
    5: ("crop sweep", criterion_5),
    6: ("scaling trend", criterion_6),
    7: ("replace vs augment", criterion_7),
    8: ("autophagy drift", criterion_8),
    9: ("guidance direction", criterion_9),
    10: ("diffusion numerics", criterion_10),
    11: ("Frechet comparator", criterion_11),
    12: ("determinism", criterion_12),
}


def evaluate(number: int, workdir: Path):
    title, fn = CRITERIA[number]
    start = time.perf_counter()
    passed, detail = fn(workdir) if number == 12 else fn()
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2} {title}: {detail} ({time.perf_counter() - start:.0f}s)"
    return passed, line


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, tmp_path, capsys):
    passed, line = evaluate(number, tmp_path)
    with capsys.disabled():
        print("\n" + line)
    assert passed, line


if __name__ == "__main__":
    import tempfile

    wanted = [int(a) for a in sys.argv[1:]] or sorted(CRITERIA)
    results = []
    with tempfile.TemporaryDirectory() as tmp:
        for n in wanted:
            ok, line = evaluate(n, Path(tmp))
            print(line, flush=True)
            results.append(ok)
    sys.exit(0 if all(results) else 1)
