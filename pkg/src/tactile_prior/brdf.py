"""Cook-Torrance / GGX forward renderer for per-pixel material maps.

Conventions
-----------
* Normals are tangent-space unit vectors with a positive z component.
* A light's ``direction`` is the unit vector from the surface toward the
  light, so a light at (0, 0, 1) sits straight above a flat surface.
* GGX uses alpha = roughness**2, roughness floored at 0.01.
* Images are linear RGB, non-negative, clamped to [0, 1] only at export.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import ShapeError, ValidationError

ROUGHNESS_FLOOR = 0.01
DENOM_FLOOR = 1e-6
NORMAL_TOL = 1e-6


@dataclass(frozen=True)
class MaterialMaps:
    """diffuse (H,W,3), normal (H,W,3), roughness (H,W), specular (H,W)."""

    diffuse: np.ndarray
    normal: np.ndarray
    roughness: np.ndarray
    specular: np.ndarray
    height: np.ndarray | None = field(default=None, compare=False)

    @property
    def resolution(self) -> tuple[int, int]:
        return self.roughness.shape

    def validate(self) -> "MaterialMaps":
        h, w = self.roughness.shape
        for name, arr, shape in (("diffuse", self.diffuse, (h, w, 3)),
                                 ("normal", self.normal, (h, w, 3)),
                                 ("specular", self.specular, (h, w))):
            if arr.shape != shape:
                raise ShapeError(f"{name} map has shape {arr.shape}, expected {shape}")
        problems = []
        norms = np.linalg.norm(self.normal, axis=-1)
        bad = np.argwhere((np.abs(norms - 1.0) > NORMAL_TOL) | (self.normal[..., 2] <= 0))
        if bad.size:
            problems.append(f"normal at pixel {tuple(bad[0])}")
        for name, arr, lo, hi in (("diffuse", self.diffuse, 0.0, 1.0),
                                  ("roughness", self.roughness, ROUGHNESS_FLOOR, 1.0),
                                  ("specular", self.specular, 0.0, 1.0)):
            bad = np.argwhere(~((arr >= lo) & (arr <= hi)))
            if bad.size:
                problems.append(f"{name} at pixel/channel {tuple(int(i) for i in bad[0])}")
        if problems:
            raise ValidationError("invalid material maps: " + "; ".join(problems))
        return self

    def arrays(self) -> dict[str, np.ndarray]:
        return {"diffuse": self.diffuse, "normal": self.normal,
                "roughness": self.roughness, "specular": self.specular}


def make_maps(diffuse, normal, roughness, specular, height=None) -> MaterialMaps:
    """Build maps, flooring roughness and renormalizing normals."""
    normal = np.asarray(normal, dtype=np.float64)
    normal = normal / np.linalg.norm(normal, axis=-1, keepdims=True)
    return MaterialMaps(
        diffuse=np.clip(np.asarray(diffuse, dtype=np.float64), 0.0, 1.0),
        normal=normal,
        roughness=np.clip(np.asarray(roughness, dtype=np.float64), ROUGHNESS_FLOOR, 1.0),
        specular=np.clip(np.asarray(specular, dtype=np.float64), 0.0, 1.0),
        height=height,
    ).validate()


@dataclass(frozen=True)
class Light:
    direction: tuple[float, float, float]
    intensity: tuple[float, float, float] = (1.0, 1.0, 1.0)


@dataclass(frozen=True)
class LightRig:
    lights: tuple[Light, ...]
    view: tuple[float, float, float] = (0.0, 0.0, 1.0)

    def validate(self) -> "LightRig":
        for vec, what in [(lt.direction, "light direction") for lt in self.lights] + [(self.view, "view")]:
            if abs(np.linalg.norm(vec) - 1.0) > 1e-6:
                raise ValidationError(f"{what} {vec} is not unit length")
        for lt in self.lights:
            if min(lt.intensity) < 0:
                raise ValidationError(f"negative light intensity {lt.intensity}")
        return self

    @classmethod
    def from_dict(cls, doc: dict) -> "LightRig":
        lights = tuple(Light(tuple(map(float, d["direction"])),
                             tuple(map(float, d.get("intensity", (1.0, 1.0, 1.0)))))
                       for d in doc["lights"])
        return cls(lights, tuple(map(float, doc.get("view", (0.0, 0.0, 1.0))))).validate()

    def to_dict(self) -> dict:
        return {"lights": [{"direction": list(lt.direction), "intensity": list(lt.intensity)}
                           for lt in self.lights],
                "view": list(self.view)}


def unit(v) -> tuple[float, float, float]:
    v = np.asarray(v, dtype=np.float64)
    return tuple(float(c) for c in v / np.linalg.norm(v))


CANONICAL_RIG = LightRig((
    Light(unit((0.5, 0.5, 1.0)), (1.5, 1.5, 1.5)),
    Light(unit((-0.6, 0.2, 1.0)), (0.8, 0.8, 0.8)),
))


def ggx_ndf(n_dot_h, alpha):
    a2 = alpha * alpha
    d = n_dot_h * n_dot_h * (a2 - 1.0) + 1.0
    return a2 / (np.pi * d * d)


def smith_lambda(cos_theta, alpha):
    c = np.maximum(cos_theta, 1e-12)
    tan2 = np.maximum(1.0 - c * c, 0.0) / (c * c)
    return 0.5 * (-1.0 + np.sqrt(1.0 + alpha * alpha * tan2))


def smith_g2(n_dot_l, n_dot_v, alpha):
    """Height-correlated Smith masking-shadowing."""
    return 1.0 / (1.0 + smith_lambda(n_dot_l, alpha) + smith_lambda(n_dot_v, alpha))


def schlick_fresnel(f0, v_dot_h):
    return f0 + (1.0 - f0) * (1.0 - v_dot_h) ** 5


def shade(normal, diffuse, roughness, specular, rig: LightRig) -> np.ndarray:
    """Per-pixel radiance for arrays shaped (..., 3)/(...)."""
    view = np.asarray(rig.view)
    alpha = np.maximum(roughness, ROUGHNESS_FLOOR) ** 2
    n_dot_v = np.clip(normal @ view, 0.0, 1.0)
    out = np.zeros(diffuse.shape)
    for light in rig.lights:
        l = np.asarray(light.direction)
        h = (l + view) / np.linalg.norm(l + view)
        n_dot_l = normal @ l
        cos_l = np.maximum(n_dot_l, 0.0)
        n_dot_h = np.clip(normal @ h, 0.0, 1.0)
        v_dot_h = float(np.clip(view @ h, 0.0, 1.0))
        d = ggx_ndf(n_dot_h, alpha)
        g = smith_g2(cos_l, n_dot_v, alpha)
        f = schlick_fresnel(specular, v_dot_h)
        spec = d * g * f / (4.0 * np.maximum(cos_l * n_dot_v, DENOM_FLOOR))
        brdf = diffuse / np.pi * (1.0 - specular)[..., None] + (specular * spec)[..., None]
        out = out + brdf * cos_l[..., None] * np.asarray(light.intensity)
    return out


def render(maps: MaterialMaps, rig: LightRig) -> np.ndarray:
    """Render maps as a flat patch seen orthographically; returns (H,W,3)."""
    maps.validate()
    rig.validate()
    return shade(maps.normal, maps.diffuse, maps.roughness, maps.specular, rig)


def sphere_geometry(resolution: int):
    """Pixel-center positions on the unit disc and the sphere normals there."""
    c = (np.arange(resolution) + 0.5) / resolution * 2.0 - 1.0
    x = np.broadcast_to(c[None, :], (resolution, resolution))
    y = np.broadcast_to(-c[:, None], (resolution, resolution))
    r2 = x * x + y * y
    inside = r2 < 1.0
    z = np.sqrt(np.clip(1.0 - r2, 0.0, 1.0))
    return np.stack([x, y, z], axis=-1), inside


def render_sphere(maps: MaterialMaps, rig: LightRig, resolution: int) -> np.ndarray:
    """Wrap maps on a unit sphere (equirectangular UV), orthographic view."""
    maps.validate()
    rig.validate()
    geo, inside = sphere_geometry(resolution)
    nx, ny, nz = geo[..., 0], geo[..., 1], geo[..., 2]
    phi = np.arctan2(nx, nz)
    u = 0.5 + phi / (2.0 * np.pi)
    v = np.arccos(np.clip(ny, -1.0, 1.0)) / np.pi
    mh, mw = maps.resolution
    col = np.floor(u * mw).astype(int) % mw
    row = np.minimum(np.floor(v * mh).astype(int), mh - 1)

    tangent = np.stack([np.cos(phi), np.zeros_like(phi), -np.sin(phi)], axis=-1)
    bitangent = np.cross(geo, tangent)
    tn = maps.normal[row, col]
    world = (tn[..., 0:1] * tangent + tn[..., 1:2] * bitangent + tn[..., 2:3] * geo)
    world = world / np.linalg.norm(world, axis=-1, keepdims=True)

    img = shade(world, maps.diffuse[row, col], maps.roughness[row, col],
                maps.specular[row, col], rig)
    return np.where(inside[..., None], img, 0.0)


def rendering_rmse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    d = np.clip(a, 0.0, 1.0) - np.clip(b, 0.0, 1.0)
    return float(np.sqrt(np.mean(d * d)))


def to_srgb8(img) -> np.ndarray:
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.round(img ** (1.0 / 2.2) * 255.0).astype(np.uint8)


def save_png(path, img) -> None:
    arr = to_srgb8(img)
    mode = "RGB" if arr.ndim == 3 else "L"
    PILImage.fromarray(arr, mode=mode).save(Path(path), format="PNG", optimize=False)
