"""Acceptance criteria 1 to 11, each at its stated tolerance.

The desk-scale pipeline (synthetic speckle corpus, small U-Net) runs once
per session through the CLI and is shared by criteria 2, 3, 10 and 11.
Criterion 1 needs the Duke SD-OCT data and only runs when
NOISIERPLUS_DUKE_MANIFEST points at its manifest.
"""

import json
import math
import os
import shutil
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from conftest import ACCEPTANCE_RESULTS
from noisierplus.baselines import BASELINE_NAMES, nlm_array, total_variation, tv_chambolle_array
from noisierplus.baselines import wavelet_bayes_shrink_array
from noisierplus.cli import main
from noisierplus.imaging import (
    Domain,
    ImagePlane,
    InverseMode,
    anscombe_forward,
    anscombe_inverse,
    psnr,
    ssim,
)
from noisierplus.net import UNetConfig, build_unet
from noisierplus.noise import GaussianScalarPrior, NoiseSpec, conditional_expectation_probe
from noisierplus.training import TrainConfig, fit, simulate_stopping

ROOT = Path(__file__).resolve().parents[1]
DESK_CONFIG = ROOT / "configs" / "desk.toml"
FULL_CONFIG = ROOT / "configs" / "full.toml"
TIME_LIMIT_S = 30 * 60


def record(number, ok, detail):
    ACCEPTANCE_RESULTS[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE_RESULTS[number])
    return ok


def write_config(template: Path, dest_dir: Path, manifest: Path) -> Path:
    text = template.read_text().splitlines()
    lines = [f'manifest = "{manifest}"' if ln.startswith("manifest =") else
             'output_dir = "run"' if ln.startswith("output_dir =") else ln for ln in text]
    path = dest_dir / template.name
    path.write_text("\n".join(lines) + "\n")
    return path


def run_desk_pipeline(root: Path, corpus: Path) -> dict:
    cfg = write_config(DESK_CONFIG, root, corpus / "manifest.txt")
    t0 = time.perf_counter()
    for argv in (["prepare"], ["train"], ["train", "--supervised"], ["evaluate"]):
        assert main(argv + ["--config", str(cfg)]) == 0, argv
    run = root / "run"
    sample = corpus / "noisy" / "camera.png"
    assert main(["denoise", str(sample), str(run / "camera_denoised.png"), "--model", str(run / "model.ckpt"),
                 "--tile-size", "64", "--tile-overlap", "16", "--threads", "1"]) == 0
    elapsed = time.perf_counter() - t0
    return {"root": root, "run": run, "cfg": cfg, "elapsed": elapsed,
            "report": json.loads((run / "report" / "report.json").read_text())}


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert main(["synth", "--output", str(out), "--seed", "0"]) == 0
    return out


@pytest.fixture(scope="session")
def desk(tmp_path_factory, corpus):
    return run_desk_pipeline(tmp_path_factory.mktemp("desk_a"), corpus)


def summary_by_method(report):
    return {r["method"]: r for r in report["summary"]}


# ---------------------------------------------------------------------------
# 1. Full-data reproduction (opt-in)
# ---------------------------------------------------------------------------


@pytest.mark.fulldata
@pytest.mark.skipif(not os.environ.get("NOISIERPLUS_DUKE_MANIFEST"),
                    reason="set NOISIERPLUS_DUKE_MANIFEST to the Duke SD-OCT manifest")
def test_criterion_01_full_data_reproduction(tmp_path):
    manifest = Path(os.environ["NOISIERPLUS_DUKE_MANIFEST"]).resolve()
    cfg = write_config(FULL_CONFIG, tmp_path, manifest)
    for argv in (["prepare"], ["train"], ["train", "--supervised"], ["evaluate"]):
        assert main(argv + ["--config", str(cfg)]) == 0, argv
    report = json.loads((tmp_path / "run" / "report" / "report.json").read_text())
    ours = summary_by_method(report)["Ours"]
    ok = abs(ours["psnr_mean"] - 21.86) <= 1.5 and abs(ours["ssim_mean"] - 0.87) <= 0.05
    record(1, ok, f"Ours PSNR {ours['psnr_mean']:.2f} dB (target 21.86 +- 1.5), "
                  f"SSIM {ours['ssim_mean']:.3f} (target 0.87 +- 0.05)")
    assert ok


# ---------------------------------------------------------------------------
# 2, 3, 11. Desk-scale pipeline
# ---------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_02_ordering(desk):
    s = summary_by_method(desk["report"])
    n = s["Ours"]["n"]
    ours, sup = s["Ours"]["psnr_mean"], s["Supervised"]["psnr_mean"]
    best_name = max((m for m in BASELINE_NAMES if m in s), key=lambda m: s[m]["psnr_mean"])
    best = s[best_name]["psnr_mean"]
    ok = n >= 20 and ours > best and sup >= ours and desk["elapsed"] <= TIME_LIMIT_S
    record(2, ok, f"Ours {ours:.2f} dB vs best baseline {best_name} {best:.2f} dB; Supervised {sup:.2f} dB; "
                  f"n={n}; pipeline {desk['elapsed'] / 60:.1f} min")
    assert n >= 20
    assert desk["elapsed"] <= TIME_LIMIT_S
    assert sup >= ours
    assert ours > best


@pytest.mark.slow
def test_criterion_03_denoising_gain(desk):
    s = summary_by_method(desk["report"])
    gain = s["Ours"]["psnr_mean"] - desk["report"]["extras"]["input"]["psnr_mean"]
    ok = gain >= 2.0 and desk["elapsed"] <= TIME_LIMIT_S
    record(3, ok, f"gain over noisy input {gain:+.2f} dB (need >= 2)")
    assert ok


@pytest.mark.slow
def test_criterion_11_two_pass_inference(desk):
    by_pass = desk["report"]["extras"]["ours_psnr_by_pass"]
    one, two = by_pass[0], by_pass[1]
    delta = two - one
    ok = two >= one - 0.1
    record(11, ok, f"PSNR 1 pass {one:.2f} dB, 2 passes {two:.2f} dB, delta {delta:+.3f} dB")
    assert ok


# ---------------------------------------------------------------------------
# 4. Conditional-mean probe
# ---------------------------------------------------------------------------


def test_criterion_04_probe():
    t0 = time.perf_counter()
    rep = conditional_expectation_probe(GaussianScalarPrior(128.0, 40.0), NoiseSpec(50.0, 50.0, seed=7000),
                                        n_samples=1_000_000, n_bins=40)
    r = rep.reliable
    identity = rep.identity_holds(4.0)
    closed_dev = np.abs(rep.e_m1_given_z - rep.closed_form_m1)[r] / rep.stderr[r]
    elapsed = time.perf_counter() - t0
    ok = identity and bool(np.all(closed_dev <= 4.0)) and elapsed < 60
    record(4, ok, f"identity within 4 SE in {r.sum()} bins: {identity}; closed form max "
                  f"{closed_dev.max():.2f} SE; {elapsed:.1f} s")
    assert ok


# ---------------------------------------------------------------------------
# 5. Anscombe suite
# ---------------------------------------------------------------------------


def test_criterion_05_anscombe():
    t0 = time.perf_counter()
    lattice = ImagePlane(np.arange(256.0).reshape(16, 16), Domain.PIXEL)
    back = anscombe_inverse(anscombe_forward(lattice), InverseMode.ALGEBRAIC)
    rt_err = float(np.max(np.abs(back.data - lattice.data)))
    variances, mean_errs = [], []
    for lam in (10, 20, 30, 50, 100):
        draws = np.random.default_rng(lam).poisson(lam, 1_000_000).astype(float).reshape(1000, 1000)
        a = anscombe_forward(ImagePlane(draws, Domain.PIXEL))
        variances.append(float(a.data.var()))
        # the unbiased inverse maps E[A(z)] back to the Poisson mean
        est = anscombe_inverse(ImagePlane([[a.data.mean()]], Domain.ANSCOMBE), InverseMode.CLOSED_FORM_UNBIASED)
        mean_errs.append(abs(est.data[0, 0] - lam) / lam)
    elapsed = time.perf_counter() - t0
    ok = rt_err <= 1e-9 and all(0.9 <= v <= 1.1 for v in variances) and max(mean_errs) < 0.01 and elapsed < 60
    record(5, ok, f"round trip {rt_err:.1e}; variances {min(variances):.3f}..{max(variances):.3f}; "
                  f"worst mean error {100 * max(mean_errs):.3f}%; {elapsed:.1f} s")
    assert ok


# ---------------------------------------------------------------------------
# 6. Metric oracles
# ---------------------------------------------------------------------------


def test_criterion_06_metrics():
    zeros, full = np.zeros((16, 16)), np.full((16, 16), 255.0)
    p0 = psnr(zeros, full)
    p20 = psnr(zeros, np.full((16, 16), 25.5))
    x = np.random.default_rng(0).uniform(0, 255, (32, 32))
    s_self = ssim(x, x)
    c1 = (0.01 * 255) ** 2
    hand = (2 * 100 * 200 + c1) / (100**2 + 200**2 + c1)
    s_const = ssim(np.full((8, 8), 100.0), np.full((8, 8), 200.0))
    ok = p0 == 0.0 and abs(p20 - 20) <= 1e-9 and s_self == 1.0 and abs(s_const - hand) <= 1e-6
    record(6, ok, f"PSNR(0,255)={p0} dB; 20 dB case err {abs(p20 - 20):.1e}; SSIM(x,x)={s_self}; "
                  f"constant SSIM err {abs(s_const - hand):.1e}")
    assert ok


# ---------------------------------------------------------------------------
# 7. Gradient check
# ---------------------------------------------------------------------------


def test_criterion_07_gradient_check():
    t0 = time.perf_counter()
    net = build_unet(UNetConfig(depth=1, base_channels=2), seed=11, dtype=torch.float64)
    g = torch.Generator().manual_seed(0)
    x = torch.rand((2, 1, 8, 8), generator=g, dtype=torch.float64) * 255
    y = torch.rand((2, 1, 8, 8), generator=g, dtype=torch.float64) * 255

    def loss_fn():
        return (((net(x) - y) / 255.0) ** 2).mean()

    params = list(net.parameters())
    grads = torch.autograd.grad(loss_fn(), params)
    # step near the float64 optimum for central differences, eps ** (1/3)
    h, worst, checked = 1e-4, 0.0, 0
    with torch.no_grad():
        for p, gr in zip(params, grads):
            flat, gflat = p.view(-1), gr.view(-1)
            for i in range(flat.numel()):
                old = flat[i].item()
                flat[i] = old + h
                up = loss_fn().item()
                flat[i] = old - h
                down = loss_fn().item()
                flat[i] = old
                fd, an = (up - down) / (2 * h), gflat[i].item()
                scale = max(abs(fd), abs(an))
                if scale > 1e-10:
                    worst = max(worst, abs(fd - an) / scale)
                checked += 1
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 60
    record(7, ok, f"{checked} parameters, max relative error {worst:.2e}; {elapsed:.1f} s")
    assert ok


# ---------------------------------------------------------------------------
# 8. Adam step and early stopping
# ---------------------------------------------------------------------------


def test_criterion_08_adam_and_early_stopping():
    net = build_unet(UNetConfig(depth=1, base_channels=4), seed=5, dtype=torch.float64)
    start = [p.detach().clone() for p in net.parameters()]
    gen = torch.Generator().manual_seed(1)
    x = torch.rand((4, 1, 8, 8), generator=gen, dtype=torch.float64) * 255
    y = torch.rand((4, 1, 8, 8), generator=gen, dtype=torch.float64) * 255
    loss = (((net(x) - y) / 255.0) ** 2).flatten(1).mean(dim=1).mean()
    grads = [g.detach() for g in torch.autograd.grad(loss, list(net.parameters()))]
    lr, b1, b2, eps = 2e-5, 0.9, 0.99, 1e-8
    fit(net, x, y, x, y, TrainConfig(learning_rate=lr, adam_beta1=b1, adam_beta2=b2, adam_eps=eps,
                                     batch_size=4, max_epochs=1))
    worst = 0.0
    for p, p0, g in zip(net.parameters(), start, grads):
        m_hat = (1 - b1) * g / (1 - b1)
        v_hat = (1 - b2) * g * g / (1 - b2)
        expected = p0 - lr * m_hat / (v_hat.sqrt() + eps)
        worst = max(worst, float((p.detach() - expected).abs().max()))
    tie = simulate_stopping([5, 4, 4, 4, 4, 4], patience=4)
    rng = np.random.default_rng(0)
    mismatches = 0
    for _ in range(500):
        series = list(rng.integers(0, 5, rng.integers(1, 30)))
        patience = int(rng.integers(1, 6))
        best, best_ep, stop = math.inf, 0, len(series)
        for e, v in enumerate(series, 1):
            if v < best:
                best, best_ep = v, e
            elif e - best_ep >= patience:
                stop = e
                break
        mismatches += simulate_stopping(series, patience) != (stop, best_ep)
    ok = worst <= 1e-12 and tie == (6, 2) and mismatches == 0
    record(8, ok, f"Adam step max error {worst:.1e}; tie series stops after epoch {tie[0]} (best {tie[1]}); "
                  f"{mismatches} mismatches in 500 injected series")
    assert ok


# ---------------------------------------------------------------------------
# 9. Baseline oracles
# ---------------------------------------------------------------------------


def _nlm_brute(f, r, s, h):
    pad = r + s
    P = np.pad(f, pad, mode="reflect")
    out = np.zeros_like(f)
    for i in range(f.shape[0]):
        for j in range(f.shape[1]):
            ci, cj = i + pad, j + pad
            ref = P[ci - r:ci + r + 1, cj - r:cj + r + 1]
            num = den = 0.0
            for di in range(-s, s + 1):
                for dj in range(-s, s + 1):
                    w = np.exp(-np.mean((ref - P[ci + di - r:ci + di + r + 1, cj + dj - r:cj + dj + r + 1]) ** 2)
                               / h**2)
                    num += w * P[ci + di, cj + dj]
                    den += w
            out[i, j] = num / den
    return out


def test_criterion_09_baseline_oracles():
    rng = np.random.default_rng(9)
    nlm_err = max(float(np.max(np.abs(nlm_array(f, 1, 3, h) - _nlm_brute(f, 1, 3, h))))
                  for f, h in ((rng.uniform(0, 255, (8, 8)), 25.0), (rng.uniform(0, 255, (8, 8)), 60.0)))
    noisy = 128 + 40 * np.sin(np.mgrid[0:64, 0:64][1] / 6.0) + rng.normal(0, 25, (64, 64))
    tvs = [total_variation(noisy)] + [total_variation(tv_chambolle_array(noisy, w)[0]) for w in (5, 10, 20, 40, 80)]
    monotone = all(a > b for a, b in zip(tvs, tvs[1:]))
    f = rng.uniform(0, 255, (64, 64))
    wav_err = float(np.max(np.abs(wavelet_bayes_shrink_array(f, "db4", 3, threshold_scale=0.0) - f)))
    ok = nlm_err <= 1e-10 and monotone and wav_err <= 1e-8
    record(9, ok, f"NLM vs brute force {nlm_err:.1e}; TV {tvs[0]:.0f} -> {tvs[-1]:.0f} monotone: {monotone}; "
                  f"wavelet reconstruction {wav_err:.1e}")
    assert ok


# ---------------------------------------------------------------------------
# 10. Determinism
# ---------------------------------------------------------------------------


def _same_bytes(a: Path, b: Path) -> bool:
    return a.read_bytes() == b.read_bytes()


@pytest.mark.slow
def test_criterion_10_determinism(desk, corpus, tmp_path_factory):
    second = run_desk_pipeline(tmp_path_factory.mktemp("desk_b"), corpus)
    a, b = desk["run"], second["run"]
    digest_a = json.loads((a / "dataset" / "digest.json").read_text())["digest"]
    digest_b = json.loads((b / "dataset" / "digest.json").read_text())["digest"]
    checks = {
        "dataset digest": digest_a == digest_b,
        "self-supervised history": _same_bytes(a / "history_model.csv", b / "history_model.csv"),
        "supervised history": _same_bytes(a / "history_supervised.csv", b / "history_supervised.csv"),
        "per-patch metrics": _same_bytes(a / "report" / "metrics.csv", b / "report" / "metrics.csv"),
        "denoised image": _same_bytes(a / "camera_denoised.png", b / "camera_denoised.png"),
    }
    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    record(10, ok, f"digest {digest_a[:12]}; identical: {', '.join(checks) if ok else 'NO: ' + ', '.join(failed)}")
    shutil.rmtree(second["root"], ignore_errors=True)
    assert ok
