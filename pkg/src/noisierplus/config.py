"""Experiment configuration (TOML) and global-seed derivation.

Example::

    manifest = "corpus/manifest.txt"   # relative paths resolve against this file
    output_dir = "runs/desk"
    global_seed = 0
    threads = 1

    [patches]
    patch_size = 64
    total_patches = 340
    split = [300, 20, 20]

    [noise]
    sigma1 = 50.0
    sigma2 = 50.0

    [unet]
    depth = 3
    base_channels = 16

    [train]
    learning_rate = 1e-3
    max_epochs = 40

    [inference]
    iterations = 2
    tile_size = 64
    tile_overlap = 16

    [baselines]
    tune = true
    [baselines.bm3d]
    enabled = true

    [evaluate]
    supervised = true
    panel_images = 4

Every section is optional; omitted fields take the library defaults.
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .baselines import BaselineParams
from .data import PatchConfig
from .errors import ConfigError
from .inference import InferenceConfig
from .net import UNetConfig
from .noise import NoiseSpec
from .training import TrainConfig

# Every module seed is global_seed + its offset.
SEED_OFFSETS = {
    "extraction": 0,
    "noise": 1_000,
    "unet_init": 2_000,
    "train_shuffle": 3_000,
    "supervised_init": 4_000,
    "supervised_shuffle": 5_000,
    "speckle": 6_000,
    "probe": 7_000,
}


def derive_seed(global_seed: int, name: str) -> int:
    return int(global_seed) + SEED_OFFSETS[name]


@dataclass(frozen=True)
class EvaluateOptions:
    supervised: bool = True
    tune_baselines: bool = True
    panel_images: int = 4


@dataclass(frozen=True)
class SyntheticOptions:
    images: tuple = ("camera", "coins", "moon", "page", "text", "clock")
    speckle_shape: float = 4.0


@dataclass(frozen=True)
class ExperimentConfig:
    manifest_path: Optional[Path] = None
    output_dir: Path = Path("runs/default")
    global_seed: int = 0
    threads: int = 1
    patches: PatchConfig = field(default_factory=PatchConfig)
    noise_sigma: tuple = (50.0, 50.0)
    unet: UNetConfig = field(default_factory=UNetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    baselines: BaselineParams = field(default_factory=BaselineParams)
    evaluate: EvaluateOptions = field(default_factory=EvaluateOptions)
    synthetic: SyntheticOptions = field(default_factory=SyntheticOptions)

    def __post_init__(self):
        self.patches.check_depth(self.unet.depth)
        self.inference.check_depth(self.unet.depth)
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    # Seeded views -------------------------------------------------------

    def seed(self, name: str) -> int:
        return derive_seed(self.global_seed, name)

    @property
    def patch_config(self) -> PatchConfig:
        return replace(self.patches, extraction_seed=self.seed("extraction"))

    @property
    def noise_spec(self) -> NoiseSpec:
        return NoiseSpec(self.noise_sigma[0], self.noise_sigma[1], self.seed("noise"))

    def train_config(self, supervised: bool = False) -> TrainConfig:
        return replace(self.train, seed=self.seed("supervised_shuffle" if supervised else "train_shuffle"))

    def init_seed(self, supervised: bool = False) -> int:
        return self.seed("supervised_init" if supervised else "unet_init")

    def with_overrides(self, seed=None, output_dir=None, threads=None, iterations=None) -> "ExperimentConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, global_seed=int(seed))
        if output_dir is not None:
            cfg = replace(cfg, output_dir=Path(output_dir))
        if threads is not None:
            cfg = replace(cfg, threads=int(threads))
        if iterations is not None:
            cfg = replace(cfg, inference=replace(cfg.inference, iterations=int(iterations)))
        return cfg

    def echo(self) -> dict:
        """Plain-data record of the full configuration, including derived seeds."""
        return {
            "manifest": None if self.manifest_path is None else str(self.manifest_path),
            "output_dir": str(self.output_dir),
            "global_seed": self.global_seed,
            "threads": self.threads,
            "derived_seeds": {k: self.seed(k) for k in SEED_OFFSETS},
            "patches": {**asdict(self.patch_config), "split": list(self.patches.split)},
            "noise": asdict(self.noise_spec),
            "unet": self.unet.to_dict(),
            "train": self.train_config().to_dict(),
            "inference": self.inference.to_dict(),
            "baselines": self.baselines.to_dict(),
            "evaluate": asdict(self.evaluate),
            "synthetic": {**asdict(self.synthetic), "images": list(self.synthetic.images)},
        }


_TOP_KEYS = {"manifest", "output_dir", "global_seed", "threads", "patches", "noise", "unet", "train",
             "inference", "baselines", "evaluate", "synthetic"}


def _build(cls, section: dict, name: str, **extra):
    try:
        return cls(**{**section, **extra})
    except TypeError as exc:
        raise ConfigError(f"[{name}]: {exc}") from None


def config_from_dict(d: dict, base_dir=".") -> ExperimentConfig:
    base_dir = Path(base_dir)
    unknown = set(d) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base_dir / p

    patches = dict(d.get("patches", {}))
    if "extraction_seed" in patches:
        raise ConfigError("[patches]: extraction_seed is derived from global_seed")
    if "split" in patches:
        patches["split"] = tuple(patches["split"])
    noise = dict(d.get("noise", {}))
    extra = set(noise) - {"sigma1", "sigma2"}
    if extra:
        raise ConfigError(f"[noise]: unknown keys {sorted(extra)}")
    train = dict(d.get("train", {}))
    if "seed" in train:
        raise ConfigError("[train]: seed is derived from global_seed")
    baselines = dict(d.get("baselines", {}))
    tune = baselines.pop("tune", None)
    evaluate = dict(d.get("evaluate", {}))
    if tune is not None:
        evaluate.setdefault("tune_baselines", bool(tune))
    synthetic = dict(d.get("synthetic", {}))
    if "images" in synthetic:
        synthetic["images"] = tuple(synthetic["images"])
    try:
        bparams = BaselineParams.from_dict(baselines)
    except TypeError as exc:
        raise ConfigError(f"[baselines]: {exc}") from None

    return ExperimentConfig(
        manifest_path=resolve(d["manifest"]) if "manifest" in d else None,
        output_dir=resolve(d.get("output_dir", "runs/default")),
        global_seed=int(d.get("global_seed", 0)),
        threads=int(d.get("threads", 1)),
        patches=_build(PatchConfig, patches, "patches"),
        noise_sigma=(float(noise.get("sigma1", 50.0)), float(noise.get("sigma2", 50.0))),
        unet=_build(UNetConfig, d.get("unet", {}), "unet"),
        train=_build(TrainConfig, train, "train"),
        inference=_build(InferenceConfig, d.get("inference", {}), "inference"),
        baselines=bparams,
        evaluate=_build(EvaluateOptions, evaluate, "evaluate"),
        synthetic=_build(SyntheticOptions, synthetic, "synthetic"),
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        d = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(d, path.parent)
