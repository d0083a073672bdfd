"""Test-set evaluation and per-method metric reports (CSV, markdown, JSON, figures)."""

from __future__ import annotations

import csv
import datetime as _dt
import json
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .baselines import BASELINE_NAMES, BaselineParams, run_baseline, tune_baselines
from .data import PatchDataset, write_image
from .imaging import MetricPair, metric_pair
from .inference import InferenceConfig, denoise_trace
from . import plotting

log = logging.getLogger(__name__)

METHOD_ORDER = BASELINE_NAMES + ("Ours", "Supervised")


def patch_id(record) -> str:
    return f"{record.source_id}@{record.origin[0]},{record.origin[1]}"


def _std(values) -> float:
    # Sample standard deviation (ddof=1); 0 for a single value.
    v = np.asarray(values, dtype=np.float64)
    return float(v.std(ddof=1)) if v.size > 1 else 0.0


@dataclass
class MetricsReport:
    per_method: dict = field(default_factory=dict)  # method -> list[(image_id, MetricPair)]
    config: dict = field(default_factory=dict)
    dataset_digest: str = ""
    footnotes: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)
    started: str = ""
    finished: str = ""

    @property
    def methods(self) -> list:
        return list(self.per_method)

    def aggregate(self, method: str) -> dict:
        pairs = [m for _, m in self.per_method[method]]
        p = [m.psnr_db for m in pairs]
        s = [m.ssim for m in pairs]
        return {
            "method": method,
            "n": len(pairs),
            "psnr_mean": float(np.mean(p)),
            "psnr_std": _std(p),
            "ssim_mean": float(np.mean(s)),
            "ssim_std": _std(s),
        }

    def summary(self) -> list:
        """Aggregates ranked by mean PSNR, best first (ties keep method order)."""
        rows = [self.aggregate(m) for m in self.per_method]
        rows.sort(key=lambda r: -r["psnr_mean"])
        for rank, r in enumerate(rows, 1):
            r["rank"] = rank
        return rows

    # Writers ------------------------------------------------------------

    def write_per_image_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "image_id", "psnr_db", "ssim"])
            for m, rows in self.per_method.items():
                for image_id, mp in rows:
                    w.writerow([m, image_id, repr(mp.psnr_db), repr(mp.ssim)])
        return path

    def write_summary_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rank", "method", "n", "psnr_mean", "psnr_std", "ssim_mean", "ssim_std"])
            for r in self.summary():
                w.writerow([r["rank"], r["method"], r["n"], repr(r["psnr_mean"]), repr(r["psnr_std"]),
                            repr(r["ssim_mean"]), repr(r["ssim_std"])])
        return path

    def markdown(self) -> str:
        cols = self.methods
        agg = {m: self.aggregate(m) for m in cols}
        lines = [
            "| | " + " | ".join(cols) + " |",
            "|---|" + "---|" * len(cols),
            "| PSNR | " + " | ".join(f"{agg[m]['psnr_mean']:.2f} ± {agg[m]['psnr_std']:.2f}" for m in cols) + " |",
            "| SSIM | " + " | ".join(f"{agg[m]['ssim_mean']:.2f} ± {agg[m]['ssim_std']:.2f}" for m in cols) + " |",
            "",
            "Mean ± sample standard deviation over "
            f"{agg[cols[0]]['n'] if cols else 0} test patches.",
            "",
            "| rank | method | PSNR (dB) | SSIM |",
            "|---|---|---|---|",
        ]
        for r in self.summary():
            lines.append(f"| {r['rank']} | {r['method']} | {r['psnr_mean']:.2f} ± {r['psnr_std']:.2f} "
                         f"| {r['ssim_mean']:.3f} ± {r['ssim_std']:.3f} |")
        for k, note in enumerate(self.footnotes, 1):
            lines.append("")
            lines.append(f"[{k}] {note}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> dict:
        return {
            "dataset_digest": self.dataset_digest,
            "config": self.config,
            "summary": self.summary(),
            "footnotes": self.footnotes,
            "extras": self.extras,
            "started": self.started,
            "finished": self.finished,
        }

    def write_all(self, out_dir, figures: bool = True) -> Path:
        """Write metrics.csv, summary.csv, report.md, report.json and the bar chart."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        self.write_per_image_csv(out_dir / "metrics.csv")
        self.write_summary_csv(out_dir / "summary.csv")
        (out_dir / "report.md").write_text(self.markdown())
        (out_dir / "report.json").write_text(json.dumps(self.to_json(), indent=2))
        if figures and self.per_method:
            plotting.plot_metric_bars(self.summary(), out_dir / "metrics.png")
        return out_dir


def read_per_image_csv(path) -> dict:
    out = {}
    with Path(path).open() as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["method"], []).append((row["image_id"], MetricPair(float(row["psnr_db"]),
                                                                                   float(row["ssim"]))))
    return out


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _clip(a):
    return np.clip(a, 0, 255)


def evaluate_test_set(
    ds: PatchDataset,
    model=None,
    supervised_model=None,
    icfg: InferenceConfig = InferenceConfig(),
    baseline_params: Optional[BaselineParams] = BaselineParams(),
    tune: bool = True,
    grids=None,
    panel_dir=None,
    n_panels: int = 0,
    config_echo: Optional[dict] = None,
) -> MetricsReport:
    """Score every enabled method on the test split against the clean patches.

    Metrics are computed on outputs clamped to [0, 255]. Baselines run on the
    pixel-domain noisy patch; when ``tune`` is set their parameters are first
    grid-searched on the validation split. The self-supervised model uses
    ``icfg.iterations`` passes, the supervised model a single pass.
    Test patches without ground truth are skipped with a warning.
    """
    report = MetricsReport(config=dict(config_echo or {}), dataset_digest=ds.digest, started=_now())
    test = [r for r in ds.test if r.clean is not None]
    skipped = len(ds.test) - len(test)
    if skipped:
        warnings.warn(f"{skipped} test patch(es) have no ground truth and were skipped")
    if not test:
        raise ValueError("no test patches with ground truth")
    patch = test[0].noisy.height
    tile_icfg = replace(icfg, tile_size=patch, tile_overlap=min(icfg.tile_overlap, patch - 1))

    methods: dict[str, Callable] = {}
    if baseline_params is not None:
        enabled = baseline_params.enabled_methods()
        if "BM3D" not in enabled:
            report.footnotes.append("BM3D omitted: disabled in this build configuration.")
        if tune:
            val_pairs = [(r.noisy.data, r.clean.data) for r in ds.val if r.clean is not None]
            if val_pairs:
                baseline_params, scores = tune_baselines(val_pairs, baseline_params, grids)
                report.extras["baseline_grid"] = {
                    m: [{"setting": p, "val_psnr": s} for p, s in rows] for m, rows in scores.items()}
            else:
                report.footnotes.append("Baselines not tuned: validation split has no ground truth.")
        report.extras["baseline_params"] = baseline_params.to_dict()
        for name in enabled:
            methods[name] = (lambda n: lambda r: run_baseline(n, r.noisy.data, baseline_params))(name)

    pass_psnr = []
    if model is not None:
        def ours(r):
            out, passes = denoise_trace(model, r.noisy, tile_icfg, r.clean)
            pass_psnr.append([p for _, p in passes])
            return out.data
        methods["Ours"] = ours
    if supervised_model is not None:
        sup_icfg = replace(tile_icfg, iterations=1)
        methods["Supervised"] = lambda r: denoise_trace(supervised_model, r.noisy, sup_icfg)[0].data

    ordered = [m for m in METHOD_ORDER if m in methods]
    report.per_method = {m: [] for m in ordered}
    panel_records = sorted(test, key=lambda r: r.index)[:n_panels] if panel_dir else []
    panel_ids = {r.index for r in panel_records}
    panel_outputs = {}
    input_metrics = []
    for r in test:
        input_metrics.append(metric_pair(r.clean.data, r.noisy.data))
        for m in ordered:
            out = _clip(methods[m](r))
            report.per_method[m].append((patch_id(r), metric_pair(r.clean.data, out)))
            if r.index in panel_ids:
                panel_outputs.setdefault(r.index, {})[m] = out

    report.extras["input"] = {
        "psnr_mean": float(np.mean([m.psnr_db for m in input_metrics])),
        "ssim_mean": float(np.mean([m.ssim for m in input_metrics])),
    }
    if pass_psnr:
        per_pass = np.array(pass_psnr)
        report.extras["ours_psnr_by_pass"] = [float(v) for v in per_pass.mean(axis=0)]
        report.extras["ours_pass_psnr"] = per_pass.tolist()
    if panel_dir and panel_records:
        write_panels(panel_dir, panel_records, panel_outputs, ordered)
    report.finished = _now()
    return report


def write_panels(panel_dir, records, outputs, methods) -> Path:
    """One PNG per method per sampled test patch, plus a montage figure."""
    panel_dir = Path(panel_dir)
    panel_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for r in records:
        d = panel_dir / patch_id(r).replace("@", "_").replace(",", "_")
        d.mkdir(exist_ok=True)
        write_image(r.noisy, d / "noisy.png")
        write_image(r.clean, d / "clean.png")
        row = [("Noisy", r.noisy.data), ("Clean", r.clean.data)]
        for m in methods:
            write_image(outputs[r.index][m], d / f"{m}.png")
            row.append((m, outputs[r.index][m]))
        rows.append(row)
    plotting.plot_panels(rows, panel_dir / "panels.png")
    return panel_dir


def recompute_summary_matches(report_dir, tol: float = 1e-9) -> bool:
    """Check summary.csv against the per-image metrics.csv it was derived from."""
    per = read_per_image_csv(Path(report_dir) / "metrics.csv")
    with (Path(report_dir) / "summary.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        vals = per[row["method"]]
        p = [m.psnr_db for _, m in vals]
        s = [m.ssim for _, m in vals]
        for got, want in ((float(row["psnr_mean"]), np.mean(p)), (float(row["psnr_std"]), _std(p)),
                          (float(row["ssim_mean"]), np.mean(s)), (float(row["ssim_std"]), _std(s))):
            if not math.isclose(got, float(want), rel_tol=0, abs_tol=tol):
                return False
    return True
