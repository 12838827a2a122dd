"""Procedural visuo-tactile benchmark.

Materials are generated from a procedural height field per category; normals
are the normalized height gradient. Vision images are GGX renders under a
random light rig (optionally composited onto clutter), touch images are a
GelSight-style three-light shading of the normal field inside a contact disc.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import brdf
from .brdf import Light, LightRig, MaterialMaps
from .config import DataConfig
from .errors import ConfigError, DataError, GeometryError
from .rng import Xoshiro256, derive_seed, stream
from .tensor import load_rten, save_rten

LIBRARY_ID_BASE = 1_000_000
ADAPT_ID_BASE = 2_000_000
TOUCH_NOISE_SIGMA = 0.01
TOUCH_LIGHT_ELEVATION = math.radians(35.0)
TOUCH_LIGHT_AZIMUTHS = tuple(math.radians(a) for a in (90.0, 210.0, 330.0))
TOUCH_CORE_RADIUS = 0.8
SPLITS = ("train", "val", "test")

# base height amplitude (texture units) per category
_BASE_AMPLITUDE = {
    "checker": 0.008,
    "wood_rings": 0.008,
    "fractal_noise": 0.03,
    "brushed_metal": 0.01,
    "fabric_weave": 0.01,
    "smooth_plastic": 0.002,
}


def known_categories() -> tuple[str, ...]:
    return tuple(_BASE_AMPLITUDE)


# -- procedural primitives -----------------------------------------------------

def _grid(resolution: int):
    c = (np.arange(resolution) + 0.5) / resolution
    return np.meshgrid(c, c)  # x varies along columns, y along rows


def value_noise(rng: Xoshiro256, resolution: int, cells_x: int, cells_y: int | None = None):
    """Periodic smooth value noise in [0, 1]."""
    cells_y = cells_x if cells_y is None else cells_y
    lattice = rng.random_array((cells_y, cells_x))
    x, y = _grid(resolution)
    gx, gy = x * cells_x, y * cells_y
    x0, y0 = np.floor(gx).astype(int), np.floor(gy).astype(int)
    fx, fy = gx - x0, gy - y0
    sx, sy = fx * fx * (3 - 2 * fx), fy * fy * (3 - 2 * fy)
    x0, y0 = x0 % cells_x, y0 % cells_y
    x1, y1 = (x0 + 1) % cells_x, (y0 + 1) % cells_y
    top = lattice[y0, x0] * (1 - sx) + lattice[y0, x1] * sx
    bot = lattice[y1, x0] * (1 - sx) + lattice[y1, x1] * sx
    return top * (1 - sy) + bot * sy


def fbm(rng: Xoshiro256, resolution: int, base_cells: int, octaves: int = 4) -> np.ndarray:
    """Fractal sum of value noise, zero-mean, roughly in [-1, 1]."""
    total = np.zeros((resolution, resolution))
    amp, norm = 1.0, 0.0
    for o in range(octaves):
        total += amp * (value_noise(rng, resolution, base_cells * 2 ** o) * 2.0 - 1.0)
        norm += amp
        amp *= 0.5
    return total / norm


def normals_from_height(height: np.ndarray) -> np.ndarray:
    res = height.shape[0]
    hx = np.gradient(height, 1.0 / res, axis=1)
    hy = -np.gradient(height, 1.0 / res, axis=0)  # tangent-space y points up
    n = np.stack([-hx, -hy, np.ones_like(height)], axis=-1)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def _random_color(rng: Xoshiro256, lo: float = 0.15, hi: float = 0.85) -> np.ndarray:
    return np.array([rng.uniform(lo, hi) for _ in range(3)])


# -- materials -----------------------------------------------------------------

def material_params(category: str, seed: int) -> dict:
    """Scalar generating parameters (used for the rough/hard proxy labels)."""
    if category not in _BASE_AMPLITUDE:
        raise ConfigError(f"category: unknown material category {category!r}")
    rng = stream(seed, "material-params", category)
    amp = _BASE_AMPLITUDE[category] * rng.uniform(0.6, 1.4)
    rough = {
        "checker": (0.4, 0.6),
        "wood_rings": (0.45, 0.65),
        "fractal_noise": (0.45, 0.7),
        "brushed_metal": (0.08, 0.22),
        "fabric_weave": (0.72, 0.9),
        "smooth_plastic": (0.25, 0.45),
    }[category]
    spec = {
        "checker": (0.2, 0.35),
        "wood_rings": (0.08, 0.2),
        "fractal_noise": (0.1, 0.25),
        "brushed_metal": (0.8, 1.0),
        "fabric_weave": (0.0, 0.04),
        "smooth_plastic": (0.4, 0.6),
    }[category]
    return {
        "category": category,
        "height_amplitude": amp,
        "roughness_mean": rng.uniform(*rough),
        "specular_mean": rng.uniform(*spec),
    }


def gen_material(category: str, seed: int, resolution: int,
                 height_scale: float = 1.0) -> MaterialMaps:
    if resolution < 16:
        raise ConfigError(f"resolution must be >= 16, got {resolution}")
    p = material_params(category, seed)
    rng = stream(seed, "material", category)
    amp = p["height_amplitude"] * height_scale
    r0, s0 = p["roughness_mean"], p["specular_mean"]
    x, y = _grid(resolution)
    ones = np.ones((resolution, resolution))
    c1, c2 = _random_color(rng), _random_color(rng)

    if category == "checker":
        k = (4, 6, 8)[rng.integer(3)]
        pattern = np.tanh(4.0 * np.sin(2 * np.pi * k * x) * np.sin(2 * np.pi * k * y))
        height = 0.5 * amp * pattern + 0.05 * amp * fbm(rng, resolution, 8, 2)
        mix = 0.5 * (pattern + 1.0)
        rough = r0 + 0.08 * pattern
        spec = s0 * ones
    elif category == "wood_rings":
        cx, cy, f = rng.uniform(-0.5, 1.5), rng.uniform(-0.5, 1.5), rng.uniform(6.0, 10.0)
        warp = fbm(rng, resolution, 4, 3)
        r = np.hypot(x - cx, y - cy) + 0.04 * warp
        rings = np.sin(2 * np.pi * f * r)
        height = amp * rings
        mix = 0.5 * (rings + 1.0)
        c1 = np.array([0.45, 0.28, 0.12]) * rng.uniform(0.7, 1.3)
        c2 = c1 * 0.6
        rough = r0 + 0.06 * rings
        spec = s0 * ones
    elif category == "fractal_noise":
        height = amp * fbm(rng, resolution, 4, 4)
        mix = value_noise(rng, resolution, 4)
        rough = r0 + 0.2 * fbm(rng, resolution, 4, 3)
        spec = s0 * ones
    elif category == "brushed_metal":
        streaks = value_noise(rng, resolution, 2, 24) * 2.0 - 1.0
        fine = value_noise(rng, resolution, 2, 48) * 2.0 - 1.0
        height = amp * (0.7 * streaks + 0.3 * fine)
        mix = 0.5 * (streaks + 1.0)
        grey = rng.uniform(0.2, 0.4)
        c1, c2 = np.full(3, grey), np.full(3, grey * 1.2)
        rough = r0 + 0.04 * streaks
        spec = s0 * ones
    elif category == "fabric_weave":
        f = (6, 8, 10)[rng.integer(3)]
        sel = np.tanh(3.0 * np.sin(np.pi * f * x) * np.sin(np.pi * f * y))
        warp_t = np.cos(2 * np.pi * f * y)
        weft_t = np.cos(2 * np.pi * f * x)
        height = amp * (0.5 * (1 + sel) * warp_t + 0.5 * (1 - sel) * weft_t)
        height = height + 0.1 * amp * fbm(rng, resolution, 16, 2)
        mix = 0.5 * (sel + 1.0)
        rough = r0 + 0.05 * sel
        spec = s0 * ones
    else:  # smooth_plastic
        height = amp * fbm(rng, resolution, 3, 2)
        mix = 0.5 * ones
        c2 = c1
        rough = r0 * ones
        spec = s0 * ones

    diffuse = c1 * mix[..., None] + c2 * (1.0 - mix[..., None])
    return brdf.make_maps(diffuse, normals_from_height(height), np.clip(rough, 0.01, 1.0),
                          spec, height=height)


def resample_maps(maps: MaterialMaps, resolution: int) -> MaterialMaps:
    """Box-downsample maps to ``resolution`` (integer factor), renormalizing normals."""
    h = maps.resolution[0]
    if h == resolution:
        return maps
    if h % resolution:
        raise DataError(f"cannot downsample {h} to {resolution}")
    f = h // resolution

    def pool(a):
        shp = (resolution, f, resolution, f) + a.shape[2:]
        return a.reshape(shp).mean(axis=(1, 3))

    return brdf.make_maps(pool(maps.diffuse), pool(maps.normal), pool(maps.roughness),
                          pool(maps.specular))


# -- light rigs ----------------------------------------------------------------

def _dir(elev: float, azim: float) -> tuple[float, float, float]:
    return brdf.unit((math.cos(elev) * math.cos(azim), math.cos(elev) * math.sin(azim),
                      math.sin(elev)))


def random_rig(rng: Xoshiro256, n_lights: int = 3) -> LightRig:
    lights = []
    for _ in range(n_lights):
        elev = math.radians(rng.uniform(30.0, 75.0))
        azim = rng.uniform(0.0, 2 * math.pi)
        power = rng.uniform(0.6, 1.2)
        tint = tuple(power * rng.uniform(0.9, 1.1) for _ in range(3))
        lights.append(Light(_dir(elev, azim), tint))
    return LightRig(tuple(lights))


def adaptation_rig(rng: Xoshiro256) -> LightRig:
    """Different light statistics: one low, warm, strong light."""
    elev = math.radians(rng.uniform(15.0, 35.0))
    azim = rng.uniform(0.0, 2 * math.pi)
    power = rng.uniform(1.6, 2.4)
    return LightRig((Light(_dir(elev, azim), (1.2 * power, 1.0 * power, 0.75 * power)),))


def render_variants(maps: MaterialMaps, seed: int, n: int) -> list[np.ndarray]:
    """``n`` clamped renders of one material under independent random rigs."""
    return [np.clip(brdf.render(maps, random_rig(stream(seed, "variant", k))), 0.0, 1.0)
            for k in range(n)]


def vignette(resolution: int, strength: float = 0.5) -> np.ndarray:
    x, y = _grid(resolution)
    rho2 = ((x - 0.5) ** 2 + (y - 0.5) ** 2) / 0.5
    return 1.0 - strength * rho2


# -- touch ---------------------------------------------------------------------

@dataclass(frozen=True)
class Contact:
    center: tuple[float, float]  # (u, v): u along columns, v along rows, in [0, 1]
    radius: float
    pressure: float

    def to_dict(self) -> dict:
        return {"center": list(self.center), "radius": self.radius, "pressure": self.pressure}

    @classmethod
    def from_dict(cls, d: dict) -> "Contact":
        return cls(tuple(d["center"]), d["radius"], d["pressure"])


def _touch_lights() -> list[np.ndarray]:
    return [np.array(_dir(TOUCH_LIGHT_ELEVATION, a)) for a in TOUCH_LIGHT_AZIMUTHS]


def _bilinear(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    px = np.clip(u * w - 0.5, 0.0, w - 1.0)
    py = np.clip(v * h - 0.5, 0.0, h - 1.0)
    x0, y0 = np.floor(px).astype(int), np.floor(py).astype(int)
    x1, y1 = np.minimum(x0 + 1, w - 1), np.minimum(y0 + 1, h - 1)
    fx, fy = (px - x0)[..., None], (py - y0)[..., None]
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def contact_falloff(resolution: int, pressure: float) -> np.ndarray:
    c = (np.arange(resolution) + 0.5) / resolution * 2.0 - 1.0
    rho2 = c[None, :] ** 2 + c[:, None] ** 2
    return pressure * np.sqrt(np.clip(1.0 - rho2, 0.0, 1.0))


def touch_core_mask(resolution: int) -> np.ndarray:
    """Binary mask of the central contact region (the segmented touch variant)."""
    c = (np.arange(resolution) + 0.5) / resolution * 2.0 - 1.0
    return (np.sqrt(c[None, :] ** 2 + c[:, None] ** 2) <= TOUCH_CORE_RADIUS).astype(np.float64)


def touch_baseline(resolution: int, pressure: float) -> np.ndarray:
    """Noise-free touch image of a perfectly flat surface."""
    flat = np.sin(TOUCH_LIGHT_ELEVATION)
    return np.repeat(contact_falloff(resolution, pressure)[..., None] * flat, 3, axis=-1)


def simulate_touch(maps: MaterialMaps, contact: Contact, seed: int, resolution: int = 16,
                   noise_sigma: float = TOUCH_NOISE_SIGMA) -> np.ndarray:
    """Gel-sensor image (resolution, resolution, 3). Never reads the diffuse map."""
    u, v = contact.center
    r = contact.radius
    if r <= 0 or u - r < 0 or u + r > 1 or v - r < 0 or v + r > 1:
        raise GeometryError(f"contact disc {contact} is not inside the map")
    t = (np.arange(resolution) + 0.5) / resolution * 2.0 - 1.0
    su = np.broadcast_to(u + r * t[None, :], (resolution, resolution))
    sv = np.broadcast_to(v + r * t[:, None], (resolution, resolution))
    n = _bilinear(maps.normal, su, sv)
    gain = 1.0 + 2.0 * contact.pressure  # the gel exaggerates pressed-in relief
    n = np.stack([n[..., 0] * gain, n[..., 1] * gain, n[..., 2]], axis=-1)
    n = n / np.linalg.norm(n, axis=-1, keepdims=True)
    shading = np.stack([np.maximum(n @ l, 0.0) for l in _touch_lights()], axis=-1)
    img = shading * contact_falloff(resolution, contact.pressure)[..., None]
    if noise_sigma > 0:
        img = img + noise_sigma * stream(seed, "touch-noise").normal_array(img.shape)
    return np.maximum(img, 0.0)


def random_contact(rng: Xoshiro256) -> Contact:
    r = rng.uniform(0.15, 0.25)
    return Contact((rng.uniform(r, 1 - r), rng.uniform(r, 1 - r)), r, rng.uniform(0.6, 1.0))


# -- clutter -------------------------------------------------------------------

def clutter_background(rng: Xoshiro256, resolution: int) -> np.ndarray:
    layers = [value_noise(rng, resolution, 4) for _ in range(3)]
    return np.clip(np.stack(layers, axis=-1) * 0.8 + 0.1, 0.0, 1.0)


def surface_mask(rng: Xoshiro256, resolution: int) -> np.ndarray:
    x, y = _grid(resolution)
    cx, cy = rng.uniform(0.4, 0.6), rng.uniform(0.4, 0.6)
    ax, ay = rng.uniform(0.3, 0.42), rng.uniform(0.3, 0.42)
    return ((((x - cx) / ax) ** 2 + ((y - cy) / ay) ** 2) <= 1.0).astype(np.float64)


# -- dataset -------------------------------------------------------------------

@dataclass
class Instance:
    instance_id: int
    category: str
    label: int
    params: dict
    maps: MaterialMaps
    vision: np.ndarray          # full (composited) image, clamped to [0, 1]
    mask: np.ndarray            # 1 on the material surface
    touches: list[np.ndarray]
    contacts: list[Contact]
    rig: LightRig

    def vision_variant(self, variant: str) -> np.ndarray:
        return self.vision if variant == "F" else self.vision * self.mask[..., None]

    def touch_variant(self, k: int, variant: str) -> np.ndarray:
        t = self.touches[k]
        return t if variant == "F" else t * touch_core_mask(t.shape[0])[..., None]


@dataclass
class VisuoTactilePair:
    pair_id: int
    instance_id: int
    label: int
    vision: np.ndarray
    touch: np.ndarray
    maps: MaterialMaps | None
    segmented: bool


def pair_id(instance_id: int, k: int) -> int:
    return instance_id * 1000 + k


@dataclass
class Dataset:
    config: DataConfig
    seed: int
    instances: list[Instance]
    splits: dict[str, list[int]]
    _by_id: dict[int, Instance] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._by_id = {inst.instance_id: inst for inst in self.instances}

    def instance(self, instance_id: int) -> Instance:
        return self._by_id[instance_id]

    def split_instances(self, split: str) -> list[Instance]:
        if split not in self.splits:
            raise DataError(f"unknown split {split!r}")
        return [self._by_id[i] for i in self.splits[split]]

    def pairs(self, split: str, variant: str = "F") -> list[VisuoTactilePair]:
        out = []
        for inst in self.split_instances(split):
            vision = inst.vision_variant(variant)
            for k in range(len(inst.touches)):
                out.append(VisuoTactilePair(pair_id(inst.instance_id, k), inst.instance_id,
                                            inst.label, vision, inst.touch_variant(k, variant),
                                            inst.maps, variant == "S"))
        return out

    def labels(self, split: str, task: str = "material") -> np.ndarray:
        """Per-pair labels: material category, or the rough/hard proxy binaries."""
        out = []
        for inst in self.split_instances(split):
            out.extend([task_label(inst, task, self.config)] * len(inst.touches))
        return np.array(out, dtype=int)


def task_label(inst: Instance, task: str, cfg: DataConfig) -> int:
    if task == "material":
        return inst.label
    if task == "rough":
        return int(inst.params["roughness_mean"] > cfg.rough_threshold)
    if task == "hard":
        return int(inst.params["height_amplitude"] > cfg.hard_height_threshold)
    raise ConfigError(f"unknown probe task {task!r}")


def split_counts(n: int, weights) -> tuple[int, int, int]:
    total = float(sum(weights))
    n_val = int(round(n * weights[1] / total))
    n_test = int(round(n * weights[2] / total))
    if n >= 3:
        n_val = max(n_val, 1) if weights[1] > 0 else 0
        n_test = max(n_test, 1) if weights[2] > 0 else 0
    n_train = n - n_val - n_test
    if n_train < 0:
        raise ConfigError("data.split leaves no room for training instances")
    return n_train, n_val, n_test


def build_instance(cfg: DataConfig, seed: int, instance_id: int, category: str,
                   label: int) -> Instance:
    mseed = derive_seed(seed, instance_id, "material")
    maps = gen_material(category, mseed, cfg.resolution)
    params = material_params(category, mseed)
    rig = random_rig(stream(seed, instance_id, "vision-rig"))
    surface = np.clip(brdf.render(maps, rig), 0.0, 1.0)
    if cfg.clutter:
        rng = stream(seed, instance_id, "clutter")
        mask = surface_mask(rng, cfg.resolution)
        background = clutter_background(rng, cfg.resolution)
        vision = mask[..., None] * surface + (1.0 - mask[..., None]) * background
    else:
        mask = np.ones((cfg.resolution, cfg.resolution))
        vision = surface
    touches, contacts = [], []
    for k in range(cfg.touches_per_instance):
        contact = random_contact(stream(seed, instance_id, "contact", k))
        contacts.append(contact)
        touches.append(simulate_touch(maps, contact, derive_seed(seed, instance_id, "touch", k),
                                      cfg.touch_resolution))
    return Instance(instance_id, category, label, params, maps, vision, mask, touches,
                    contacts, rig)


def build_dataset(config: DataConfig, seed: int) -> Dataset:
    config.validate()
    instances = []
    splits = {s: [] for s in SPLITS}
    counts = split_counts(config.instances_per_category, config.split)
    iid = 0
    for label, category in enumerate(config.categories):
        ids = []
        for _ in range(config.instances_per_category):
            instances.append(build_instance(config, seed, iid, category, label))
            ids.append(iid)
            iid += 1
        order = stream(seed, "split", category).permutation(len(ids))
        shuffled = [ids[i] for i in order]
        start = 0
        for name, n in zip(SPLITS, counts):
            splits[name].extend(sorted(shuffled[start:start + n]))
            start += n
    for name in SPLITS:
        splits[name].sort()
    return Dataset(config, seed, instances, splits)


# -- material library and adaptation pool --------------------------------------

@dataclass
class LibraryEntry:
    library_id: int
    category: str
    label: int
    maps: MaterialMaps
    sphere: np.ndarray
    flat: np.ndarray


@dataclass
class MaterialLibrary:
    entries: list[LibraryEntry]

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def ids(self) -> list[int]:
        return [e.library_id for e in self.entries]


def build_material_library(config: DataConfig, seed: int,
                           rig: LightRig = brdf.CANONICAL_RIG) -> MaterialLibrary:
    config.validate()
    entries = []
    j = 0
    for label, category in enumerate(config.categories):
        for _ in range(config.library_entries_per_category):
            lid = LIBRARY_ID_BASE + j
            maps = gen_material(category, derive_seed(seed, lid, "material"), config.resolution)
            sphere = np.clip(brdf.render_sphere(maps, rig, config.library_resolution), 0.0, 1.0)
            flat = np.clip(brdf.render(maps, rig), 0.0, 1.0)
            entries.append(LibraryEntry(lid, category, label, maps, sphere, flat))
            j += 1
    return MaterialLibrary(entries)


def build_adaptation_pool(config: DataConfig, seed: int) -> list[np.ndarray]:
    """Unlabeled images in a held-out style: different lights plus a vignette."""
    config.validate()
    out = []
    vig = vignette(config.resolution)[..., None]
    j = 0
    for category in config.categories:
        for _ in range(config.adapt_pool_per_category):
            aid = ADAPT_ID_BASE + j
            maps = gen_material(category, derive_seed(seed, aid, "material"), config.resolution)
            img = brdf.render(maps, adaptation_rig(stream(seed, aid, "adapt-rig")))
            out.append(np.clip(img * vig, 0.0, 1.0))
            j += 1
    return out


# -- disk layout ---------------------------------------------------------------

def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _save_maps(d: Path, maps: MaterialMaps) -> None:
    for name, arr in maps.arrays().items():
        save_rten(d / f"{name}.rten", arr)


def load_maps(d: Path) -> MaterialMaps:
    arrs = {n: load_rten(Path(d) / f"{n}.rten").numpy()
            for n in ("diffuse", "normal", "roughness", "specular")}
    return MaterialMaps(**arrs).validate()


def write_dataset(ds: Dataset, root, library: MaterialLibrary | None = None) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    from dataclasses import asdict

    records = []
    for inst in ds.instances:
        d = root / str(inst.instance_id)
        d.mkdir(exist_ok=True)
        _save_maps(d, inst.maps)
        save_rten(d / "vision.rten", inst.vision)
        brdf.save_png(d / "vision.png", inst.vision)
        save_rten(d / "mask.rten", inst.mask)
        for k, t in enumerate(inst.touches):
            save_rten(d / f"touch_{k}.rten", t)
        records.append({"instance_id": inst.instance_id, "category": inst.category,
                        "label": inst.label, "params": inst.params,
                        "contacts": [c.to_dict() for c in inst.contacts],
                        "rig": inst.rig.to_dict()})
    manifest = {"format": "tactile-prior-dataset/1", "seed": ds.seed,
                "config": asdict(ds.config), "splits": ds.splits, "instances": records}
    if library is not None:
        lib_root = root / "library"
        lib_root.mkdir(exist_ok=True)
        lib_records = []
        for e in library.entries:
            d = lib_root / str(e.library_id)
            d.mkdir(exist_ok=True)
            _save_maps(d, e.maps)
            save_rten(d / "sphere.rten", e.sphere)
            save_rten(d / "flat.rten", e.flat)
            brdf.save_png(d / "sphere.png", e.sphere)
            lib_records.append({"library_id": e.library_id, "category": e.category,
                                "label": e.label})
        manifest["library"] = lib_records
    _write_json(root / "manifest.json", manifest)
    return root


def read_manifest(root) -> dict:
    path = Path(root) / "manifest.json"
    if not path.exists():
        raise DataError(f"dataset manifest not found: {path}")
    return json.loads(path.read_text())


def load_dataset(root) -> Dataset:
    root = Path(root)
    manifest = read_manifest(root)
    cfg = DataConfig(**manifest["config"])
    instances = []
    for rec in manifest["instances"]:
        d = root / str(rec["instance_id"])
        contacts = [Contact.from_dict(c) for c in rec["contacts"]]
        instances.append(Instance(
            rec["instance_id"], rec["category"], rec["label"], rec["params"], load_maps(d),
            load_rten(d / "vision.rten").numpy(), load_rten(d / "mask.rten").numpy(),
            [load_rten(d / f"touch_{k}.rten").numpy() for k in range(len(contacts))],
            contacts, LightRig.from_dict(rec["rig"])))
    return Dataset(cfg, manifest["seed"], instances,
                   {k: list(v) for k, v in manifest["splits"].items()})


def load_library(root) -> MaterialLibrary:
    root = Path(root)
    manifest = read_manifest(root)
    if "library" not in manifest:
        raise DataError(f"dataset at {root} has no material library")
    entries = []
    for rec in manifest["library"]:
        d = root / "library" / str(rec["library_id"])
        entries.append(LibraryEntry(rec["library_id"], rec["category"], rec["label"],
                                    load_maps(d), load_rten(d / "sphere.rten").numpy(),
                                    load_rten(d / "flat.rten").numpy()))
    return MaterialLibrary(entries)
