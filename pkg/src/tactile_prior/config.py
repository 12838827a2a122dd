"""Run configuration: nested dataclasses loaded from JSON with strict keys."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError

CATEGORIES = ("checker", "wood_rings", "fractal_noise", "brushed_metal",
              "fabric_weave", "smooth_plastic")
MODES = ("A", "M", "C", "MA")
SHAPE_KEYS = {
    "prior": ("feature_dim", "trunk_hidden", "head_hidden", "pool", "map_resolution"),
    "tactile": ("dim_d", "hidden", "filters", "patch", "touch_stride", "vision_stride"),
}
DATA_VARIANTS = ("F", "S")


@dataclass
class DataConfig:
    categories: list[str] = field(default_factory=lambda: list(CATEGORIES))
    instances_per_category: int = 10
    touches_per_instance: int = 4
    resolution: int = 32
    touch_resolution: int = 16
    clutter: bool = True
    split: list[int] = field(default_factory=lambda: [8, 1, 1])
    library_entries_per_category: int = 20
    library_resolution: int = 32
    adapt_pool_per_category: int = 10
    # label thresholds for the rough/smooth and hard/soft probe tasks
    rough_threshold: float = 0.5
    hard_height_threshold: float = 0.009

    def validate(self) -> None:
        from .synth import known_categories

        for c in self.categories:
            if c not in known_categories():
                raise ConfigError(f"data.categories: unknown category {c!r}")
        if not self.categories:
            raise ConfigError("data.categories: at least one category is required")
        if self.instances_per_category < 1:
            raise ConfigError("data.instances_per_category must be >= 1")
        if self.touches_per_instance < 1:
            raise ConfigError("data.touches_per_instance must be >= 1")
        if self.resolution < 16:
            raise ConfigError("data.resolution must be >= 16")
        if self.touch_resolution < 8:
            raise ConfigError("data.touch_resolution must be >= 8")
        if len(self.split) != 3 or min(self.split) < 0 or sum(self.split) <= 0:
            raise ConfigError("data.split must be three non-negative weights")
        if self.library_entries_per_category < 1:
            raise ConfigError("data.library_entries_per_category must be >= 1")
        if self.adapt_pool_per_category < 1:
            raise ConfigError("data.adapt_pool_per_category must be >= 1")


@dataclass
class PriorConfig:
    feature_dim: int = 128
    trunk_hidden: int = 256
    head_hidden: int = 128
    pool: int = 8
    map_resolution: int = 16
    steps: int = 300
    batch_size: int = 16
    lr: float = 1e-3
    loss_weights: list[float] = field(default_factory=lambda: [1.0, 0.0, 0.1])
    renders_per_material: int = 5

    def validate(self) -> None:
        if len(self.loss_weights) != 3:
            raise ConfigError("prior.loss_weights must be [mse, mae, ssim]")
        if min(self.loss_weights) < 0:
            raise ConfigError("prior.loss_weights must be non-negative")
        if self.map_resolution < 8:
            raise ConfigError("prior.map_resolution must be >= 8 (SSIM window)")
        for name in ("feature_dim", "trunk_hidden", "head_hidden", "pool", "batch_size",
                     "renders_per_material"):
            if getattr(self, name) < 1:
                raise ConfigError(f"prior.{name} must be >= 1")
        if self.steps < 0 or self.lr < 0:
            raise ConfigError("prior.steps and prior.lr must be >= 0")


@dataclass
class AdaptConfig:
    steps: int = 60
    batch_size: int = 16
    lr: float = 5e-4
    disc_lr: float = 1e-3
    disc_hidden: int = 32
    lambda_adv: float = 0.05
    lambda_rec: float = 1.0

    def validate(self) -> None:
        if self.lambda_adv < 0 or self.lambda_rec < 0:
            raise ConfigError("adapt.lambda_adv and adapt.lambda_rec must be >= 0")
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("adapt.steps must be >= 0 and adapt.batch_size >= 1")


@dataclass
class TactileConfig:
    mode: str = "MA"
    tau: float = 0.07
    dim_d: int = 64
    hidden: int = 128
    filters: int = 64
    patch: int = 3
    touch_stride: int = 1
    vision_stride: int = 2
    batch_size: int = 32
    steps: int = 300
    lr: float = 3e-3
    material_weight: float = 0.5
    freeze_vision: bool = False
    data_variant: str = "F"
    prior_cache_path: str | None = None

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"tactile.mode must be one of {MODES}, got {self.mode!r}")
        if not self.tau > 0:
            raise ConfigError("tactile.tau must be > 0")
        if self.batch_size < 2:
            raise ConfigError("tactile.batch_size must be >= 2")
        if not 0.0 <= self.material_weight <= 1.0:
            raise ConfigError("tactile.material_weight must lie in [0, 1]")
        if self.data_variant not in DATA_VARIANTS:
            raise ConfigError(f"tactile.data_variant must be one of {DATA_VARIANTS}")
        if self.steps < 0 or self.lr < 0:
            raise ConfigError("tactile.steps and tactile.lr must be >= 0")
        for name in ("dim_d", "hidden", "filters", "patch", "touch_stride", "vision_stride"):
            if getattr(self, name) < 1:
                raise ConfigError(f"tactile.{name} must be >= 1")


@dataclass
class ProbeConfig:
    steps: int = 500
    lr: float = 0.05
    data_variant: str = "F"

    def validate(self) -> None:
        if self.steps < 0 or self.lr < 0:
            raise ConfigError("probe.steps and probe.lr must be >= 0")
        if self.data_variant not in DATA_VARIANTS:
            raise ConfigError(f"probe.data_variant must be one of {DATA_VARIANTS}")


@dataclass
class RetrievalConfig:
    k: int = 5

    def validate(self) -> None:
        if self.k < 1:
            raise ConfigError("retrieval.k must be >= 1")


@dataclass
class AblationConfig:
    modes: list[str] = field(default_factory=lambda: list(MODES))
    data_modes: list[str] = field(default_factory=lambda: ["FF", "FS", "SS"])
    seeds: list[int] = field(default_factory=lambda: [0, 1])
    alt_prior_seed_offset: int = 1000

    def validate(self) -> None:
        for m in self.modes:
            if m not in MODES:
                raise ConfigError(f"ablation.modes: unknown mode {m!r}")
        for dm in self.data_modes:
            if len(dm) != 2 or any(c not in DATA_VARIANTS for c in dm):
                raise ConfigError(f"ablation.data_modes: bad entry {dm!r}")


@dataclass
class RunConfig:
    seed: int = 17
    data: DataConfig = field(default_factory=DataConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    tactile: TactileConfig = field(default_factory=TactileConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def validate(self) -> "RunConfig":
        for f in dataclasses.fields(self):
            section = getattr(self, f.name)
            if hasattr(section, "validate"):
                section.validate()
        return self

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def section_hash(self, *names: str) -> str:
        doc = {n: self.to_dict()[n] for n in names}
        return config_hash(doc)

    def compat_hash(self, *names: str) -> str:
        """Hash of the dataset plus the shape-defining keys of the named sections.

        Checkpoints carry this hash, so schedule overrides (steps, lr, mode)
        never invalidate them while a different dataset or layer size does.
        """
        doc = {"data": self.to_dict()["data"]}
        for n in names:
            section = self.to_dict()[n]
            doc[n] = {k: section[k] for k in SHAPE_KEYS[n]}
        return config_hash(doc)

    def replace(self, **sections) -> "RunConfig":
        return dataclasses.replace(self, **sections)


def config_hash(doc: Any) -> str:
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _build(cls, doc: dict, where: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - set(names))
    if unknown:
        raise ConfigError(f"unknown config key {where + '.' if where else ''}{unknown[0]}")
    kwargs = {}
    for key, value in doc.items():
        default = getattr(cls(), key)
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value, f"{where}.{key}" if where else key)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(doc: dict) -> RunConfig:
    return _build(RunConfig, doc, "").validate()


def load_config(path: str | os.PathLike | None) -> RunConfig:
    """Load a JSON config (missing keys take defaults). RETRO_SEED overrides seed."""
    doc: dict = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    cfg = config_from_dict(doc)
    env_seed = os.environ.get("RETRO_SEED")
    if env_seed is not None:
        try:
            cfg.seed = int(env_seed)
        except ValueError:
            raise ConfigError(f"RETRO_SEED must be an integer, got {env_seed!r}") from None
    return cfg
