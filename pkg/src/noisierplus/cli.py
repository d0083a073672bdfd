"""Command-line entry point: ``noisierplus <command> [options]``.

Exit codes: 0 success, 1 unexpected error, 2 configuration/usage error,
3 data error (missing files, corrupt checkpoint, bad image), 4 numeric
divergence, 5 capability error (e.g. a disabled method was requested).
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, NoisierPlusError

log = logging.getLogger("noisierplus")

EXIT_OK, EXIT_ERROR = 0, 1


def _set_threads(n: int) -> None:
    import torch

    torch.set_num_threads(int(n))


def _load_cfg(args):
    from .config import ExperimentConfig, load_config

    cfg = load_config(args.config) if args.config else ExperimentConfig()
    return cfg.with_overrides(seed=args.seed, output_dir=args.output, threads=args.threads,
                              iterations=getattr(args, "iterations", None))


def _dataset_dir(cfg) -> Path:
    return Path(cfg.output_dir) / "dataset"


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def cmd_synth(args) -> int:
    from .config import derive_seed
    from .synthetic import DEFAULT_IMAGES, make_synthetic_corpus

    names = tuple(args.images) if args.images else DEFAULT_IMAGES
    path = make_synthetic_corpus(args.output or "corpus", names, args.speckle_shape,
                                 derive_seed(args.seed or 0, "speckle"))
    print(f"wrote {len(names)} image pairs; manifest {path}")
    return EXIT_OK


def cmd_prepare(args) -> str:
    from .data import build_dataset, load_manifest, save_dataset

    cfg = _load_cfg(args)
    if cfg.manifest_path is None:
        raise ConfigError("no manifest given (set 'manifest' in the config file)")
    manifest = load_manifest(cfg.manifest_path)
    ds = build_dataset(manifest, cfg.patch_config, cfg.noise_spec)
    ds.config["experiment"] = cfg.echo()
    save_dataset(ds, _dataset_dir(cfg))
    c = ds.counts()
    print(f"dataset {ds.digest}")
    print(f"train {c['train']}  val {c['val']}  test {c['test']}  -> {_dataset_dir(cfg)}")
    return ds.digest


def cmd_train(args) -> Path:
    from . import plotting
    from .data import load_dataset
    from .net import build_unet
    from .training import print_progress, save_model, train, train_supervised

    if args.resume:
        raise ConfigError("training is single-shot; resuming an interrupted run is not supported")
    cfg = _load_cfg(args)
    _set_threads(cfg.threads)
    ds = load_dataset(_dataset_dir(cfg))
    sup = bool(args.supervised)
    net = build_unet(cfg.unet, cfg.init_seed(sup))
    tcfg = cfg.train_config(sup)
    t0 = time.perf_counter()
    model = (train_supervised if sup else train)(net, ds, tcfg, progress=print_progress)
    tag = "supervised" if sup else "model"
    out = Path(cfg.output_dir)
    ckpt = save_model(model, out / f"{tag}.ckpt")
    hist = model.write_history_csv(out / f"history_{tag}.csv")
    plotting.plot_history(model.history, out / f"history_{tag}.png", title=f"{model.mode} training")
    print(f"best epoch {model.best_epoch} of {len(model.history)}  ({time.perf_counter() - t0:.1f} s)")
    print(f"checkpoint {ckpt}\nhistory {hist}")
    return ckpt


def cmd_denoise(args) -> int:
    from .data import read_image, write_image
    from .inference import InferenceConfig, denoise_trace
    from .training import load_model

    if args.config:
        cfg = _load_cfg(args)
        icfg = cfg.inference
        _set_threads(cfg.threads)
    else:
        icfg = InferenceConfig()
        _set_threads(args.threads or 1)
    overrides = {k: v for k, v in (("iterations", args.iterations), ("tile_size", args.tile_size),
                                   ("tile_overlap", args.tile_overlap), ("inverse_mode", args.inverse_mode))
                 if v is not None}
    icfg = replace(icfg, **overrides)
    model = load_model(args.model)
    noisy = read_image(args.image)
    gt = read_image(args.ground_truth) if args.ground_truth else None
    if gt is not None and gt.shape != noisy.shape:
        raise DataError(f"ground truth {gt.shape} and input {noisy.shape} differ in size")
    t0 = time.perf_counter()
    out, passes = denoise_trace(model, noisy, icfg, gt)
    elapsed = time.perf_counter() - t0
    write_image(out, args.out)
    print(f"{args.image}: {noisy.height}x{noisy.width}, {icfg.iterations} pass(es), {elapsed:.3f} s -> {args.out}")
    if args.save_passes:
        d = Path(args.save_passes)
        d.mkdir(parents=True, exist_ok=True)
        for k, (img, _) in enumerate(passes, 1):
            np.save(d / f"pass{k}.npy", img.data)
    if gt is not None:
        from .imaging import psnr

        print(f"input   PSNR {psnr(gt, noisy):8.3f} dB")
        for k, (_, score) in enumerate(passes, 1):
            print(f"pass {k}  PSNR {score:8.3f} dB")
    return EXIT_OK


def _evaluate(args, cfg, out_dir, n_panels):
    from .data import load_dataset
    from .report import evaluate_test_set
    from .training import load_model

    _set_threads(cfg.threads)
    ds = load_dataset(_dataset_dir(cfg))
    model_path = Path(args.model) if args.model else Path(cfg.output_dir) / "model.ckpt"
    model = load_model(model_path, cfg.unet)
    sup = None
    sup_path = Path(args.supervised_model) if args.supervised_model else Path(cfg.output_dir) / "supervised.ckpt"
    footnote = None
    if cfg.evaluate.supervised:
        if sup_path.exists():
            sup = load_model(sup_path, cfg.unet)
        else:
            footnote = f"Supervised omitted: no checkpoint at {sup_path}."
    report = evaluate_test_set(
        ds, model, sup, cfg.inference, cfg.baselines, tune=cfg.evaluate.tune_baselines,
        panel_dir=(out_dir / "panels") if n_panels else None, n_panels=n_panels, config_echo=cfg.echo(),
    )
    if footnote:
        report.footnotes.append(footnote)
    report.write_all(out_dir)
    return report


def cmd_evaluate(args):
    cfg = _load_cfg(args)
    out_dir = Path(cfg.output_dir) / "report"
    report = _evaluate(args, cfg, out_dir, 0)
    print(report.markdown())
    print(f"report written to {out_dir}")
    return report


def cmd_compare(args):
    cfg = _load_cfg(args)
    out_dir = Path(cfg.output_dir) / "compare"
    report = _evaluate(args, cfg, out_dir, cfg.evaluate.panel_images)
    print(report.markdown())
    by_pass = report.extras.get("ours_psnr_by_pass")
    if by_pass:
        print("Ours mean PSNR by pass: " + ", ".join(f"{v:.3f}" for v in by_pass))
    print(f"comparison written to {out_dir}")
    return report


def cmd_probe(args):
    from . import plotting
    from .config import derive_seed
    from .noise import GaussianScalarPrior, NoiseSpec, UniformPixelPrior, conditional_expectation_probe

    prior = GaussianScalarPrior(args.mu0, args.sigma0) if args.prior == "gaussian" else UniformPixelPrior()
    spec = NoiseSpec(args.sigma1, args.sigma2, derive_seed(args.seed or 0, "probe"))
    report = conditional_expectation_probe(prior, spec, args.n_samples, args.n_bins)
    out = Path(args.output or "probe")
    out.mkdir(parents=True, exist_ok=True)
    csv_path = report.write_csv(out / "probe.csv")
    plotting.plot_probe(report, out / "probe.png")
    r = report.reliable
    print(f"identity E[Y|Z]-E[X|Z]=E[M1|Z] within 4 SE: {'yes' if report.identity_holds() else 'NO'}")
    print(f"max |E[M1|Z]| over reliable bins: {np.max(np.abs(report.e_m1_given_z[r])):.4f}")
    if report.closed_form_m1 is not None:
        z = np.abs(report.e_m1_given_z - report.closed_form_m1)[r] / np.maximum(report.stderr[r], 1e-300)
        print(f"max closed-form deviation: {np.max(z):.2f} standard errors")
    print(f"wrote {csv_path}")
    return report


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config file (TOML)")
    common.add_argument("--seed", type=int, help="override global_seed")
    common.add_argument("--output", help="override output directory")
    common.add_argument("--threads", type=int, help="torch intra-op threads (default from config, 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="noisierplus", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic speckled corpus + manifest")
    s.add_argument("--images", nargs="*", help="skimage.data grayscale image names")
    s.add_argument("--speckle-shape", type=float, default=4.0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("prepare", parents=[common], help="extract patches and build the noisier/noisier+ dataset")
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("train", parents=[common], help="train the network on the prepared dataset")
    s.add_argument("--supervised", action="store_true", help="train the noisy->clean upper-bound model")
    s.add_argument("--resume", action="store_true", help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("denoise", parents=[common], help="denoise one image")
    s.add_argument("image")
    s.add_argument("out")
    s.add_argument("--model", required=True)
    s.add_argument("--ground-truth")
    s.add_argument("--iterations", type=int)
    s.add_argument("--tile-size", type=int)
    s.add_argument("--tile-overlap", type=int)
    s.add_argument("--inverse-mode", choices=["algebraic", "asymptotic", "closed-form-unbiased"])
    s.add_argument("--save-passes", metavar="DIR", help="save each pass's float output as .npy")
    s.set_defaults(func=cmd_denoise)

    for name, func, helptext in (("evaluate", cmd_evaluate, "score methods on the test split"),
                                 ("compare", cmd_compare, "ranked comparison with example panels")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--model", help="self-supervised checkpoint (default <output>/model.ckpt)")
        s.add_argument("--supervised-model", help="supervised checkpoint (default <output>/supervised.ckpt)")
        s.add_argument("--iterations", type=int)
        s.set_defaults(func=func)

    s = sub.add_parser("probe", parents=[common], help="Monte-Carlo check of the conditional-mean identity")
    s.add_argument("--prior", choices=["uniform", "gaussian"], default="gaussian")
    s.add_argument("--mu0", type=float, default=128.0)
    s.add_argument("--sigma0", type=float, default=40.0)
    s.add_argument("--sigma1", type=float, default=50.0)
    s.add_argument("--sigma2", type=float, default=50.0)
    s.add_argument("--n-samples", type=int, default=1_000_000)
    s.add_argument("--n-bins", type=int, default=40)
    s.set_defaults(func=cmd_probe)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except NoisierPlusError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
