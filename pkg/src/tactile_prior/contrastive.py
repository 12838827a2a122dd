"""Touch/vision/material contrastive pretraining.

Modes: ``A`` aligns touch with vision, ``M`` aligns touch with the projected
material prior, ``C`` does the same with an alternative frozen prior, and
``MA`` mixes the touch-vision and touch-material objectives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensor as T
from .checkpoint import Checkpoint, params_sha256
from .config import RunConfig, TactileConfig
from .errors import ConfigError, ContractError, DataError, NumericError, ShapeError
from .layers import constants, grads_by_name, init_linear, mlp, watch_all
from .optim import OptimizerState, optimizer_step
from .prior import batch_indices, extract_prior_features
from .rng import stream
from .synth import Dataset

USES_VISION = {"A": True, "M": False, "C": False, "MA": True}
USES_PRIOR = {"A": False, "M": True, "C": True, "MA": True}


@dataclass
class ContrastiveModel:
    mode: str
    tau: float
    params: dict[str, np.ndarray]
    touch_resolution: int
    vision_resolution: int
    patch: int
    touch_stride: int
    vision_stride: int
    prior_dim: int | None

    def validate(self) -> "ContrastiveModel":
        if not self.tau > 0:
            raise ConfigError(f"temperature must be > 0, got {self.tau}")
        has_p = "proj.w" in self.params
        has_v = "vision.0.w" in self.params
        if has_p != USES_PRIOR[self.mode] or has_v != USES_VISION[self.mode]:
            raise ContractError(f"parameter set does not match mode {self.mode}")
        return self

    def metadata(self) -> dict:
        return {"mode": self.mode, "tau": self.tau, "touch_resolution": self.touch_resolution,
                "vision_resolution": self.vision_resolution, "patch": self.patch,
                "touch_stride": self.touch_stride, "vision_stride": self.vision_stride,
                "prior_dim": self.prior_dim}


def _init_encoder(seed: int, name: str, cfg: TactileConfig) -> dict[str, np.ndarray]:
    params = init_linear(seed, f"{name}.conv", cfg.patch * cfg.patch * 3, cfg.filters)
    params |= init_linear(seed, f"{name}.0", cfg.filters, cfg.hidden)
    params |= init_linear(seed, f"{name}.1", cfg.hidden, cfg.dim_d, gain=1.0)
    return params


def init_contrastive(cfg: TactileConfig, seed: int, touch_resolution: int,
                     vision_resolution: int, prior_dim: int | None) -> ContrastiveModel:
    """Init streams are keyed by layer name, so every mode starts from the
    same touch (and vision) weights for a given seed.

    The touch output layer starts at zero weight with a fixed unit bias: an
    untrained touch encoder maps every input to one embedding.
    """
    params = _init_encoder(seed, "touch", cfg)
    params["touch.1.w"] = np.zeros_like(params["touch.1.w"])
    bias = stream(seed, "init", "touch.1.b").normal_array(cfg.dim_d)
    params["touch.1.b"] = bias / np.linalg.norm(bias)
    if USES_VISION[cfg.mode]:
        params |= _init_encoder(seed, "vision", cfg)
    if USES_PRIOR[cfg.mode]:
        if prior_dim is None:
            raise ConfigError(f"mode {cfg.mode} needs a prior feature dimension")
        params |= init_linear(seed, "proj", prior_dim, cfg.dim_d, bias=False, gain=1.0)
    return ContrastiveModel(cfg.mode, cfg.tau, params, touch_resolution, vision_resolution,
                            cfg.patch, cfg.touch_stride, cfg.vision_stride,
                            prior_dim if USES_PRIOR[cfg.mode] else None).validate()


def local_patches(images, resolution: int, size: int, stride: int, what: str) -> np.ndarray:
    """(N, positions, size*size*3) square patches, each centered to zero mean per channel."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[None]
    if images.shape[1:] != (resolution, resolution, 3):
        raise ShapeError(f"{what} images must be {resolution}x{resolution}x3, "
                         f"got {images.shape[1:]}")
    win = sliding_window_view(images, (size, size), axis=(1, 2))[:, ::stride, ::stride]
    n, rows, cols = win.shape[:3]
    win = win.transpose(0, 1, 2, 4, 5, 3).reshape(n, rows * cols, size * size, 3)
    win = win - win.mean(axis=2, keepdims=True)
    return np.ascontiguousarray(win.reshape(n, rows * cols, size * size * 3))


def encoder_tensor(p: dict, patches, name: str) -> T.Tensor:
    """Shared patch filter + ReLU, averaged over positions, then an MLP and normalization."""
    n, positions, dim = np.shape(patches)
    flat = T.as_tensor(np.reshape(patches, (n * positions, dim)))
    resp = T.relu(flat @ p[f"{name}.conv.w"] + p[f"{name}.conv.b"])
    pooled = T.mean(T.reshape(resp, (n, positions, -1)), axis=1)
    return T.l2_normalize(mlp(pooled, p, [f"{name}.0", f"{name}.1"]), axis=1)


def prior_tensor(p: dict, h) -> T.Tensor:
    return T.l2_normalize(T.as_tensor(h) @ p["proj.w"], axis=1)


def touch_patches(model: ContrastiveModel, touch) -> np.ndarray:
    return local_patches(touch, model.touch_resolution, model.patch, model.touch_stride, "touch")


def vision_patches(model: ContrastiveModel, vision) -> np.ndarray:
    return local_patches(vision, model.vision_resolution, model.patch, model.vision_stride,
                         "vision")


def encode_touch(model: ContrastiveModel, touch) -> np.ndarray:
    single = np.asarray(touch).ndim == 3
    out = encoder_tensor(constants(model.params), touch_patches(model, touch), "touch").numpy()
    return out[0] if single else out


def encode_vision(model: ContrastiveModel, vision) -> np.ndarray:
    if "vision.0.w" not in model.params:
        raise ContractError(f"mode {model.mode} has no image encoder")
    single = np.asarray(vision).ndim == 3
    out = encoder_tensor(constants(model.params), vision_patches(model, vision), "vision").numpy()
    return out[0] if single else out


def project_prior(model: ContrastiveModel, h) -> np.ndarray:
    if "proj.w" not in model.params:
        raise ContractError(f"mode {model.mode} has no projection head")
    h = np.asarray(h, dtype=np.float64)
    single = h.ndim == 1
    if h.shape[-1] != model.prior_dim:
        raise ShapeError(f"prior feature dim {h.shape[-1]} != {model.prior_dim}")
    out = prior_tensor(constants(model.params), np.atleast_2d(h)).numpy()
    return out[0] if single else out


# -- losses --------------------------------------------------------------------

def info_nce(a, b, tau: float) -> T.Tensor:
    """Mean over rows of -log softmax(a_i . b_j / tau)_{j=i}."""
    if not tau > 0:
        raise ConfigError(f"temperature must be > 0, got {tau}")
    a, b = T.as_tensor(a), T.as_tensor(b)
    if a.ndim != 2 or a.shape != b.shape:
        raise ShapeError(f"info_nce needs two (B, D) batches of equal shape, "
                         f"got {a.shape} and {b.shape}")
    n = a.shape[0]
    logits = T.scale(a @ b.T, 1.0 / tau)
    logp = T.log_softmax(logits, axis=1)
    return T.scale(T.sum(logp * np.eye(n)), -1.0 / n)


def bidirectional_loss(a, b, tau: float) -> T.Tensor:
    return info_nce(a, b, tau) + info_nce(b, a, tau)


# Touch-to-material alignment has the same form with projected priors as targets.
material_alignment_loss = bidirectional_loss


@dataclass
class Batch:
    touch: np.ndarray                 # touch patches (B, positions, dim)
    vision: np.ndarray | None         # vision patches
    prior: np.ndarray | None          # frozen prior features (B, C)

    def __post_init__(self):
        n = len(self.touch)
        for name in ("vision", "prior"):
            arr = getattr(self, name)
            if arr is not None and len(arr) != n:
                raise ShapeError(f"batch {name} has {len(arr)} rows, touch has {n}")


def loss_terms(p: dict, batch: Batch, mode: str, tau: float,
               material_weight: float = 0.5) -> tuple[T.Tensor, T.Tensor | None, T.Tensor | None]:
    """(total, touch-vision term, touch-material term) for one batch."""
    if USES_VISION[mode] and batch.vision is None:
        raise ContractError(f"mode {mode} needs vision inputs")
    if USES_PRIOR[mode] and batch.prior is None:
        raise ContractError(f"mode {mode} needs prior features")
    et = encoder_tensor(p, batch.touch, "touch")
    l_tv = l_tm = None
    if USES_VISION[mode]:
        l_tv = bidirectional_loss(et, encoder_tensor(p, batch.vision, "vision"), tau)
    if USES_PRIOR[mode]:
        l_tm = material_alignment_loss(et, prior_tensor(p, batch.prior), tau)
    if mode == "A":
        total = l_tv
    elif mode in ("M", "C"):
        total = l_tm
    else:
        total = T.scale(l_tv, 1.0 - material_weight) + T.scale(l_tm, material_weight)
    return total, l_tv, l_tm


def dual_loss(batch: Batch, model: ContrastiveModel, material_weight: float = 0.5) -> T.Tensor:
    return loss_terms(constants(model.params), batch, model.mode, model.tau, material_weight)[0]


# -- training ------------------------------------------------------------------

@dataclass
class PairTable:
    """Encoder inputs for every visuo-tactile pair of one split, in manifest order."""
    pair_ids: list[int]
    instance_ids: list[int]
    labels: np.ndarray
    touch: np.ndarray
    vision: np.ndarray | None
    prior: np.ndarray | None

    def batch(self, idx) -> Batch:
        return Batch(self.touch[idx], None if self.vision is None else self.vision[idx],
                     None if self.prior is None else self.prior[idx])


def instance_images(ds: Dataset, split: str, variant: str) -> tuple[list[int], np.ndarray]:
    insts = ds.split_instances(split)
    return [i.instance_id for i in insts], np.stack([i.vision_variant(variant) for i in insts])


def prior_feature_table(prior: Checkpoint, ds: Dataset, split: str,
                        variant: str) -> tuple[np.ndarray, list[int]]:
    """Frozen prior features of each instance's vision image, keyed by instance id."""
    ids, images = instance_images(ds, split, variant)
    return extract_prior_features(prior, images), ids


def pair_table(ds: Dataset, split: str, variant: str, model: ContrastiveModel,
               prior_features: tuple[np.ndarray, list[int]] | None = None) -> PairTable:
    pairs = ds.pairs(split, variant)
    if not pairs:
        raise DataError(f"split {split!r} has no pairs")
    touch = touch_patches(model, np.stack([pr.touch for pr in pairs]))
    vision = None
    if USES_VISION[model.mode]:
        vision = vision_patches(model, np.stack([pr.vision for pr in pairs]))
    prior = None
    if USES_PRIOR[model.mode]:
        if prior_features is None:
            raise ConfigError(f"mode {model.mode} requires prior features")
        feats, ids = prior_features
        row = {iid: k for k, iid in enumerate(ids)}
        missing = sorted({pr.instance_id for pr in pairs} - set(row))
        if missing:
            raise DataError(f"prior features missing for instance {missing[0]}")
        prior = np.asarray(feats)[[row[pr.instance_id] for pr in pairs]]
    return PairTable([pr.pair_id for pr in pairs], [pr.instance_id for pr in pairs],
                     np.array([pr.label for pr in pairs]), touch, vision, prior)


def tactile_config_hash(run: RunConfig) -> str:
    return run.compat_hash("prior", "tactile")


def _finite(x: float, what: str) -> float:
    if not math.isfinite(x):
        raise NumericError(f"non-finite {what}: {x}")
    return x


def model_from_checkpoint(ckpt: Checkpoint) -> ContrastiveModel:
    if ckpt.kind != "tactile":
        raise DataError(f"checkpoint kind {ckpt.kind!r} is not a tactile encoder")
    m = ckpt.metadata
    return ContrastiveModel(m["mode"], m["tau"], dict(ckpt.params), m["touch_resolution"],
                            m["vision_resolution"], m["patch"], m["touch_stride"],
                            m["vision_stride"], m["prior_dim"]).validate()


def train_tactile(ds: Dataset, prior: Checkpoint | None, run: RunConfig, seed: int,
                  prior_features: tuple[np.ndarray, list[int]] | None = None,
                  steps: int | None = None) -> tuple[Checkpoint, list[dict]]:
    """Minibatch Adam on the mode's objective over train-split pairs.

    Prior features come from ``prior_features`` (a cached table) when given,
    otherwise they are extracted once from the frozen ``prior`` checkpoint.
    Returns the final checkpoint and per-step rows (step, L_TV, L_TM, L).
    """
    cfg = run.tactile
    cfg.validate()
    steps = cfg.steps if steps is None else steps
    if USES_PRIOR[cfg.mode] and prior_features is None:
        if prior is None:
            raise ConfigError(f"mode {cfg.mode} requires a material prior checkpoint")
        prior_features = prior_feature_table(prior, ds, "train", cfg.data_variant)
    prior_dim = int(np.shape(prior_features[0])[1]) if USES_PRIOR[cfg.mode] else None
    model = init_contrastive(cfg, seed, ds.config.touch_resolution, ds.config.resolution,
                             prior_dim)
    table = pair_table(ds, "train", cfg.data_variant, model, prior_features)
    opt = OptimizerState("adam", cfg.lr)
    trainable = sorted(k for k in model.params
                       if not (cfg.freeze_vision and k.startswith("vision.")))
    n = len(table.pair_ids)
    rows = []
    for step in range(steps):
        batch = table.batch(batch_indices(seed, step, n, cfg.batch_size, "tactile-batch"))
        tape = T.Tape()
        p = watch_all(tape, model.params)
        total, l_tv, l_tm = loss_terms(p, batch, cfg.mode, cfg.tau, cfg.material_weight)
        value = _finite(total.item(), "contrastive loss")
        grads = grads_by_name(tape.gradient(total), p, trainable)
        model.params = optimizer_step(opt, model.params, grads)
        rows.append({"step": step + 1,
                     "L_TV": "" if l_tv is None else l_tv.item(),
                     "L_TM": "" if l_tm is None else l_tm.item(),
                     "L": value})
    meta = model.metadata() | {
        "kind": "tactile", "seed": seed, "step": steps, "data_variant": cfg.data_variant,
        "material_weight": cfg.material_weight,
        "prior_checksum": params_sha256(prior.params) if prior is not None else None}
    return Checkpoint(tactile_config_hash(run), model.params, opt, meta), rows
