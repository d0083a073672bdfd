"""Image I/O, dataset manifests, seeded patch extraction and the train/val/test split.

Manifest grammar (one entry per line, ``#`` starts a comment)::

    root = relative/or/absolute/dir         # optional, default: manifest's dir
    image_id=scan01 noisy=noisy/01.tif clean=clean/01.tif
    image_id=scan02 noisy="noisy/with space.png"

Fields are ``key=value`` tokens split with shell quoting rules. ``image_id``
and ``noisy`` are required; ``clean`` is optional.
"""

from __future__ import annotations

import hashlib
import json
import logging
import shlex
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError
from .imaging import Domain, ImagePlane, anscombe_forward, clamp_u8, to_rescaled
from .noise import NoiseSpec, NoisyTriple, make_noisy_triple

log = logging.getLogger(__name__)

DATASET_FORMAT_VERSION = 1


# --------------------------------------------------------------------------
# Image I/O
# --------------------------------------------------------------------------


def read_image(path) -> ImagePlane:
    """Read an 8-bit single-channel PNG or TIFF into a pixel-domain plane."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            arr = np.asarray(im)
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    except OSError as exc:
        raise DataError(f"{path}: cannot read image ({exc})") from None
    if mode in ("RGB", "RGBA", "P", "CMYK", "YCbCr", "LA", "PA", "HSV", "LAB") or arr.ndim != 2:
        raise DataError(f"{path}: expected single-channel image, got mode {mode}")
    if mode != "L" or arr.dtype != np.uint8:
        raise DataError(f"{path}: unsupported bit depth (mode {mode}); expected 8-bit grayscale")
    meta = {}
    sidecar = _sidecar_path(path)
    if sidecar.exists():
        info = json.loads(sidecar.read_text())
        meta = info.get("meta", {})
    return ImagePlane(arr.astype(np.float64), Domain.PIXEL, meta)


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def write_image(img, path, sidecar: Optional[bool] = None) -> Path:
    """Write an image as 8-bit grayscale, clamping to [0, 255] with half-to-even rounding.

    Domain tag and ``meta`` go to ``<path>.json`` when ``sidecar`` is true, or by
    default whenever the image is not a plain pixel-domain plane.
    """
    path = Path(path)
    data = img.data if isinstance(img, ImagePlane) else np.asarray(img, dtype=np.float64)
    Image.fromarray(clamp_u8(data), mode="L").save(path)
    if isinstance(img, ImagePlane):
        if sidecar is None:
            sidecar = bool(img.meta) or img.domain is not Domain.PIXEL
        if sidecar:
            _sidecar_path(path).write_text(json.dumps({"domain": img.domain.value, "meta": img.meta}, indent=2))
    return path


# --------------------------------------------------------------------------
# Manifest
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    noisy_path: Path
    clean_path: Optional[Path] = None


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple
    root: Path

    def __post_init__(self):
        if not self.entries:
            raise DataError("empty manifest")
        ids = [e.image_id for e in self.entries]
        dup = {i for i in ids if ids.count(i) > 1}
        if dup:
            raise DataError(f"duplicate image_id: {', '.join(sorted(dup))}")

    def sorted_entries(self) -> list:
        return sorted(self.entries, key=lambda e: e.image_id)

    def echo(self) -> list:
        return [{"image_id": e.image_id, "noisy": str(e.noisy_path),
                 "clean": None if e.clean_path is None else str(e.clean_path)} for e in self.sorted_entries()]


def parse_manifest(text: str, base_dir, source: str = "<manifest>", check_files: bool = True) -> DatasetManifest:
    base_dir = Path(base_dir)
    root = base_dir
    raw = []
    for lineno, line in enumerate(text.splitlines(), 1):
        try:
            tokens = shlex.split(line, comments=True)
        except ValueError as exc:
            raise DataError(f"{source}:{lineno}: {exc}") from None
        if not tokens:
            continue
        if tokens[0] == "root" or tokens[0].startswith("root="):
            rest = [t for t in ["=".join(tokens[0].split("=")[1:])] + tokens[1:] if t and t != "="]
            value = rest[0] if len(rest) == 1 else ""
            if not value:
                raise DataError(f"{source}:{lineno}: root directive needs a path")
            root = (base_dir / value) if not Path(value).is_absolute() else Path(value)
            continue
        fields = {}
        for tok in tokens:
            if "=" not in tok:
                raise DataError(f"{source}:{lineno}: expected key=value, got {tok!r}")
            key, value = tok.split("=", 1)
            if key not in ("image_id", "noisy", "clean"):
                raise DataError(f"{source}:{lineno}: unknown field {key!r}")
            if key in fields:
                raise DataError(f"{source}:{lineno}: field {key!r} given twice")
            fields[key] = value
        for req in ("image_id", "noisy"):
            if not fields.get(req):
                raise DataError(f"{source}:{lineno}: missing required field {req!r}")
        raw.append((lineno, fields))

    entries = []
    missing = []
    for lineno, f in raw:
        noisy = root / f["noisy"]
        clean = root / f["clean"] if f.get("clean") else None
        if check_files and not noisy.exists():
            missing.append(f"{source}:{lineno}: {noisy}")
        entries.append(ManifestEntry(f["image_id"], noisy, clean))
    if missing:
        raise DataError("missing noisy image(s):\n  " + "\n  ".join(missing))
    return DatasetManifest(tuple(entries), root)


def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    return parse_manifest(path.read_text(), path.parent, str(path), check_files)


def write_manifest(path, entries, root=None) -> Path:
    """Write ``(image_id, noisy, clean_or_None)`` tuples in manifest grammar."""
    lines = []
    if root is not None:
        lines.append(f"root = {shlex.quote(str(root))}")
    for image_id, noisy, clean in entries:
        line = f"image_id={shlex.quote(str(image_id))} noisy={shlex.quote(str(noisy))}"
        if clean is not None:
            line += f" clean={shlex.quote(str(clean))}"
        lines.append(line)
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


# --------------------------------------------------------------------------
# Patches
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PatchConfig:
    patch_size: int = 128
    total_patches: int = 1700
    split: tuple = (1500, 100, 100)
    extraction_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "split", tuple(int(v) for v in self.split))
        if self.patch_size < 1 or self.total_patches < 1:
            raise ConfigError("patch_size and total_patches must be positive")
        if len(self.split) != 3 or min(self.split) < 0:
            raise ConfigError(f"split must be three nonnegative counts, got {self.split}")
        if sum(self.split) != self.total_patches:
            raise ConfigError(f"split {self.split} does not sum to total_patches={self.total_patches}")

    def check_depth(self, depth: int) -> None:
        if self.patch_size % (2**depth):
            raise ConfigError(f"patch_size {self.patch_size} not divisible by 2^{depth}")


def allocate_patches(image_ids, total: int) -> dict:
    """Spread ``total`` as evenly as possible; remainder to the first ids in sorted order."""
    ids = sorted(image_ids)
    base, rem = divmod(total, len(ids))
    return {iid: base + (1 if k < rem else 0) for k, iid in enumerate(ids)}


def draw_origins(height: int, width: int, patch_size: int, count: int, rng) -> list:
    rows, cols = height - patch_size + 1, width - patch_size + 1
    possible = rows * cols
    if count > possible:
        raise DataError(f"cannot draw {count} distinct origins (only {possible} available)")
    if possible <= 4 * count:
        flat = rng.choice(possible, size=count, replace=False)
        return [(int(f // cols), int(f % cols)) for f in flat]
    seen = set()
    out = []
    while len(out) < count:
        o = (int(rng.integers(rows)), int(rng.integers(cols)))
        if o not in seen:
            seen.add(o)
            out.append(o)
    return out


def extract_patches(img: ImagePlane, cfg: PatchConfig, per_image_count: int, seed, name: str = "image") -> list:
    """Crop ``per_image_count`` distinct square patches at uniform random origins.

    Returns a list of ``(patch, (row, col))``.
    """
    p = cfg.patch_size
    if img.height < p or img.width < p:
        raise DataError(f"{name}: {img.height}x{img.width} is smaller than patch_size {p}")
    rng = np.random.default_rng(seed)
    origins = draw_origins(img.height, img.width, p, per_image_count, rng)
    return [(img.crop(r, c, p), (r, c)) for r, c in origins]


def patch_noise_seed(noise_seed: int, index: int) -> int:
    ss = np.random.SeedSequence([int(noise_seed), int(index)])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass
class PatchRecord:
    """One extracted patch with everything needed to rebuild its triple."""

    index: int
    source_id: str
    origin: tuple
    noisy: ImagePlane
    clean: Optional[ImagePlane]
    noise: NoiseSpec

    @cached_property
    def triple(self) -> NoisyTriple:
        return make_noisy_triple(to_rescaled(anscombe_forward(self.noisy)), self.noise)

    @cached_property
    def clean_rescaled(self) -> Optional[ImagePlane]:
        if self.clean is None:
            return None
        return to_rescaled(anscombe_forward(self.clean))

    @property
    def clean_patch(self) -> Optional[ImagePlane]:
        return self.clean


@dataclass
class PatchDataset:
    train: list
    val: list
    test: list
    config: dict = field(default_factory=dict)
    digest: str = ""

    def counts(self) -> dict:
        return {"train": len(self.train), "val": len(self.val), "test": len(self.test)}

    def splits(self):
        return (("train", self.train), ("val", self.val), ("test", self.test))

    def has_clean(self, split: str = "all") -> bool:
        groups = [r for _, recs in self.splits() for r in recs] if split == "all" else getattr(self, split)
        return all(r.clean is not None for r in groups)


def _collect_records(manifest: DatasetManifest, pcfg: PatchConfig, nspec: NoiseSpec) -> list:
    entries = manifest.sorted_entries()
    alloc = allocate_patches([e.image_id for e in entries], pcfg.total_patches)
    records = []
    for k, entry in enumerate(entries):
        noisy = read_image(entry.noisy_path)
        clean = None
        if entry.clean_path is not None:
            clean = read_image(entry.clean_path)
            if clean.shape != noisy.shape:
                raise DataError(f"{entry.image_id}: clean {clean.shape} and noisy {noisy.shape} differ in size")
        patches = extract_patches(noisy, pcfg, alloc[entry.image_id], [pcfg.extraction_seed, k], entry.image_id)
        for patch, (r, c) in patches:
            idx = len(records)
            records.append(PatchRecord(
                index=idx,
                source_id=entry.image_id,
                origin=(r, c),
                noisy=patch,
                clean=None if clean is None else clean.crop(r, c, pcfg.patch_size),
                noise=nspec.with_seed(patch_noise_seed(nspec.seed, idx)),
            ))
    return records


def _split_records(records: list, pcfg: PatchConfig):
    perm = np.random.default_rng([pcfg.extraction_seed, 0x5EED]).permutation(len(records))
    n_train, n_val, _ = pcfg.split
    train = [records[i] for i in perm[:n_train]]
    val = [records[i] for i in perm[n_train:n_train + n_val]]
    test = [records[i] for i in perm[n_train + n_val:]]
    return train, val, test


def dataset_config_echo(manifest: DatasetManifest, pcfg: PatchConfig, nspec: NoiseSpec) -> dict:
    return {
        "format_version": DATASET_FORMAT_VERSION,
        "patch_config": {**asdict(pcfg), "split": list(pcfg.split)},
        "noise_spec": asdict(nspec),
        "split_granularity": "patch",
        "manifest": manifest.echo(),
    }


def compute_digest(ds: PatchDataset) -> str:
    h = hashlib.sha256()
    keys = ("format_version", "patch_config", "noise_spec", "split_granularity")
    h.update(json.dumps({k: ds.config.get(k) for k in keys}, sort_keys=True).encode())
    for name, recs in ds.splits():
        for r in recs:
            h.update(f"{name}|{r.index}|{r.source_id}|{r.origin[0]},{r.origin[1]}|{r.noise.seed}".encode())
            t = r.triple
            for arr in (t.x_ans.data, t.y_noisier.data, t.z_noisier_plus.data):
                h.update(np.ascontiguousarray(arr).tobytes())
            if r.clean is not None:
                h.update(np.ascontiguousarray(r.clean.data).tobytes())
    return h.hexdigest()


def build_dataset(manifest: DatasetManifest, pcfg: PatchConfig, nspec: NoiseSpec) -> PatchDataset:
    """Extract patches, split them, and attach the noisier/noisier+ construction.

    Patches are assigned to splits by a seeded shuffle of patch identities.
    Triples are computed lazily per record but are a pure function of the
    stored noisy patch and its derived noise seed.
    """
    records = _collect_records(manifest, pcfg, nspec)
    train, val, test = _split_records(records, pcfg)
    ds = PatchDataset(train, val, test, dataset_config_echo(manifest, pcfg, nspec))
    ds.digest = compute_digest(ds)
    log.info("built dataset %s: %s", ds.digest[:12], ds.counts())
    return ds


# --------------------------------------------------------------------------
# Persistence
# --------------------------------------------------------------------------


def save_dataset(ds: PatchDataset, out_dir) -> Path:
    """Write ``patches.npz`` and ``digest.json`` into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    recs = [(name, r) for name, group in ds.splits() for r in group]
    has_clean = np.array([r.clean is not None for _, r in recs], dtype=bool)
    p = recs[0][1].noisy.height if recs else 0
    np.savez_compressed(
        out_dir / "patches.npz",
        split=np.array([name for name, _ in recs]),
        index=np.array([r.index for _, r in recs], dtype=np.int64),
        source_id=np.array([r.source_id for _, r in recs]),
        origin=np.array([r.origin for _, r in recs], dtype=np.int64).reshape(-1, 2),
        noise_seed=np.array([r.noise.seed for _, r in recs], dtype=np.uint64),
        noisy=np.stack([r.noisy.data for _, r in recs]) if recs else np.zeros((0, p, p)),
        clean=np.stack([r.clean.data if r.clean is not None else np.zeros_like(r.noisy.data) for _, r in recs])
        if recs else np.zeros((0, p, p)),
        has_clean=has_clean,
    )
    write_digest_file(ds, out_dir / "digest.json")
    return out_dir


def write_digest_file(ds: PatchDataset, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps({"digest": ds.digest, "counts": ds.counts(), "config": ds.config}, indent=2))
    return path


def load_dataset(out_dir) -> PatchDataset:
    out_dir = Path(out_dir)
    try:
        info = json.loads((out_dir / "digest.json").read_text())
        arrs = np.load(out_dir / "patches.npz")
    except (OSError, ValueError) as exc:
        raise DataError(f"{out_dir}: no prepared dataset ({exc})") from None
    ns = info["config"]["noise_spec"]
    groups = {"train": [], "val": [], "test": []}
    for k in range(len(arrs["index"])):
        clean = ImagePlane(arrs["clean"][k], Domain.PIXEL) if arrs["has_clean"][k] else None
        groups[str(arrs["split"][k])].append(PatchRecord(
            index=int(arrs["index"][k]),
            source_id=str(arrs["source_id"][k]),
            origin=tuple(int(v) for v in arrs["origin"][k]),
            noisy=ImagePlane(arrs["noisy"][k], Domain.PIXEL),
            clean=clean,
            noise=NoiseSpec(ns["sigma1"], ns["sigma2"], int(arrs["noise_seed"][k])),
        ))
    ds = PatchDataset(groups["train"], groups["val"], groups["test"], info["config"], info["digest"])
    if compute_digest(ds) != info["digest"]:
        raise DataError(f"{out_dir}: dataset digest mismatch")
    return ds
