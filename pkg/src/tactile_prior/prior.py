"""Material estimator: shared trunk, one decoder head per material property.

The trunk maps an image (average-pooled onto a ``pool x pool`` grid) to a
feature vector h; each head decodes one material map at ``map_resolution``.
The frozen trunk output is the material prior consumed by contrastive
training.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import brdf
from . import tensor as T
from .brdf import MaterialMaps
from .checkpoint import Checkpoint, params_sha256
from .config import AdaptConfig, PriorConfig, RunConfig
from .errors import ConfigError, DataError, NumericError, ShapeError
from .layers import (constants, grads_by_name, init_linear, mlp, pool_images,
                     watch_all)
from .optim import OptimizerState, optimizer_step
from .rng import stream
from .synth import Dataset, render_variants, resample_maps

HEAD_CHANNELS = {"diffuse": 3, "normal": 3, "roughness": 1, "specular": 1}
PROPERTIES = tuple(HEAD_CHANNELS)
SSIM_WINDOW = 8
SSIM_STRIDE = 4
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
SQUASH_MARGIN = 1e-6
NORMAL_Z_FLOOR = 0.1


# -- model ---------------------------------------------------------------------

@dataclass
class PriorModel:
    config: PriorConfig
    input_resolution: int
    params: dict[str, np.ndarray]

    @property
    def feature_dim(self) -> int:
        return self.config.feature_dim

    def checksum(self) -> str:
        return params_sha256(self.params)


def init_prior(cfg: PriorConfig, seed: int, input_resolution: int) -> PriorModel:
    in_dim = cfg.pool * cfg.pool * 3
    params = {}
    params |= init_linear(seed, "trunk.0", in_dim, cfg.trunk_hidden)
    params |= init_linear(seed, "trunk.1", cfg.trunk_hidden, cfg.feature_dim, gain=1.0)
    out_px = cfg.map_resolution ** 2
    for prop, ch in HEAD_CHANNELS.items():
        params |= init_linear(seed, f"head.{prop}.0", cfg.feature_dim, cfg.head_hidden)
        params |= init_linear(seed, f"head.{prop}.1", cfg.head_hidden, out_px * ch, gain=1.0)
    return PriorModel(cfg, input_resolution, params)


def trunk_params(params: dict) -> dict:
    return {k: v for k, v in params.items() if k.startswith("trunk.")}


def _check_images(images: np.ndarray, resolution: int) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[None]
    if images.shape[1:] != (resolution, resolution, 3):
        raise ShapeError(f"expected images of shape ({resolution}, {resolution}, 3), "
                         f"got {images.shape[1:]}")
    return images


def trunk_tensor(p: dict, x: T.Tensor) -> T.Tensor:
    return mlp(x, p, ["trunk.0", "trunk.1"])


def _squash(x: T.Tensor) -> T.Tensor:
    return T.scale(T.sigmoid(x), 1.0 - 2.0 * SQUASH_MARGIN) + SQUASH_MARGIN


def heads_tensor(p: dict, h: T.Tensor, cfg: PriorConfig) -> dict[str, T.Tensor]:
    """Per-property maps, flattened row-major as (B, R*R*channels)."""
    out = {}
    for prop in PROPERTIES:
        raw = mlp(h, p, [f"head.{prop}.0", f"head.{prop}.1"])
        if prop == "normal":
            b = raw.shape[0]
            xyz = T.reshape(raw, (-1, 3))
            z = T.sigmoid(xyz[:, 2:3]) + NORMAL_Z_FLOOR
            n = T.l2_normalize(T.concat([xyz[:, 0:2], z], axis=1), axis=1)
            out[prop] = T.reshape(n, (b, -1))
        else:
            out[prop] = _squash(raw)
    return out


def trunk_forward(model: PriorModel, image) -> np.ndarray:
    """Features h for one image (C,) or a batch (N, C)."""
    single = np.asarray(image).ndim == 3
    images = _check_images(image, model.input_resolution)
    x = T.Tensor(pool_images(images, model.config.pool))
    h = trunk_tensor(constants(model.params), x).numpy()
    return h[0] if single else h


def flat_to_maps(flat: dict[str, np.ndarray], resolution: int) -> list[MaterialMaps]:
    n = next(iter(flat.values())).shape[0]
    out = []
    for i in range(n):
        arrs = {prop: flat[prop][i].reshape((resolution, resolution, ch) if ch > 1
                                            else (resolution, resolution))
                for prop, ch in HEAD_CHANNELS.items()}
        arrs["roughness"] = np.maximum(arrs["roughness"], brdf.ROUGHNESS_FLOOR)
        out.append(MaterialMaps(**arrs).validate())
    return out


def maps_to_flat(maps: list[MaterialMaps]) -> dict[str, np.ndarray]:
    return {prop: np.stack([getattr(m, prop).reshape(-1) for m in maps]) for prop in PROPERTIES}


def heads_forward(model: PriorModel, h) -> MaterialMaps | list[MaterialMaps]:
    h = np.asarray(h, dtype=np.float64)
    single = h.ndim == 1
    if h.shape[-1] != model.feature_dim:
        raise ShapeError(f"feature dim {h.shape[-1]} != model dim {model.feature_dim}")
    flat = heads_tensor(constants(model.params), T.Tensor(np.atleast_2d(h)), model.config)
    maps = flat_to_maps({k: v.numpy() for k, v in flat.items()}, model.config.map_resolution)
    return maps[0] if single else maps


def predict_maps(model: PriorModel, images) -> list[MaterialMaps]:
    return heads_forward(model, np.atleast_2d(trunk_forward(model, images)))


# -- losses --------------------------------------------------------------------

def ssim_windows(height: int, width: int) -> np.ndarray:
    """(H*W, n_windows) averaging matrix for 8x8 uniform windows at stride 4."""
    if height < SSIM_WINDOW or width < SSIM_WINDOW:
        raise ShapeError(f"image {height}x{width} is smaller than the {SSIM_WINDOW}px window")
    rows = range(0, height - SSIM_WINDOW + 1, SSIM_STRIDE)
    cols = range(0, width - SSIM_WINDOW + 1, SSIM_STRIDE)
    mat = np.zeros((height * width, len(rows) * len(cols)))
    k = 0
    for r in rows:
        for c in cols:
            block = np.zeros((height, width))
            block[r:r + SSIM_WINDOW, c:c + SSIM_WINDOW] = 1.0 / SSIM_WINDOW ** 2
            mat[:, k] = block.reshape(-1)
            k += 1
    return mat


def _ssim_map(x: T.Tensor, y: T.Tensor, windows: np.ndarray) -> T.Tensor:
    mx, my = x @ windows, y @ windows
    sxx = (x * x) @ windows - mx * mx
    syy = (y * y) @ windows - my * my
    sxy = (x * y) @ windows - mx * my
    num = (2.0 * mx * my + SSIM_C1) * (2.0 * sxy + SSIM_C2)
    den = (mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2)
    return num / den


def ssim(a, b) -> float:
    """Mean local SSIM; (H,W,C) inputs average the per-channel scores."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"ssim inputs differ in shape: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    h, w, c = a.shape
    win = ssim_windows(h, w)
    scores = [T.mean(_ssim_map(T.Tensor(a[..., k].reshape(1, -1)),
                               T.Tensor(b[..., k].reshape(1, -1)), win)).item()
              for k in range(c)]
    return float(np.mean(scores))


def _loss_weights(weights) -> tuple[float, float, float]:
    w = tuple(float(x) for x in weights)
    if len(w) != 3:
        raise ConfigError("rec_loss weights must be (mse, mae, ssim)")
    if min(w) < 0:
        raise ConfigError(f"rec_loss weights must be non-negative, got {w}")
    return w


def _flatten_maps(m) -> dict[str, T.Tensor]:
    if isinstance(m, MaterialMaps):
        m = maps_to_flat([m])
    elif isinstance(m, list):
        m = maps_to_flat(m)
    return {k: T.as_tensor(v) for k, v in m.items()}


def property_loss(pred: T.Tensor, gt: T.Tensor, channels: int, resolution: int,
                  weights) -> T.Tensor:
    w_mse, w_mae, w_ssim = weights
    diff = pred - gt
    total = T.Tensor(0.0)
    if w_mse:
        total = total + w_mse * T.mean(T.square(diff))
    if w_mae:
        total = total + w_mae * T.mean(T.absolute(diff))
    if w_ssim:
        win = ssim_windows(resolution, resolution)
        s = [T.mean(_ssim_map(pred[:, c::channels], gt[:, c::channels], win))
             for c in range(channels)]
        mean_s = s[0] if channels == 1 else T.scale(sum(s[1:], s[0]), 1.0 / channels)
        total = total + w_ssim * (1.0 - mean_s)
    return total


def rec_loss_terms(pred, gt, weights=(1.0, 0.0, 0.1)) -> dict[str, T.Tensor]:
    weights = _loss_weights(weights)
    pred, gt = _flatten_maps(pred), _flatten_maps(gt)
    terms = {}
    for prop, ch in HEAD_CHANNELS.items():
        if pred[prop].shape != gt[prop].shape:
            raise ShapeError(f"{prop}: prediction {pred[prop].shape} vs target {gt[prop].shape}")
        res = int(round(math.sqrt(pred[prop].shape[1] / ch)))
        terms[prop] = property_loss(pred[prop], gt[prop], ch, res, weights)
    return terms


def rec_loss(pred, gt, weights=(1.0, 0.0, 0.1)) -> T.Tensor:
    """Sum over properties of w_mse*MSE + w_mae*MAE + w_ssim*(1 - SSIM)."""
    terms = rec_loss_terms(pred, gt, weights)
    total = terms[PROPERTIES[0]]
    for prop in PROPERTIES[1:]:
        total = total + terms[prop]
    return total


# -- training data -------------------------------------------------------------

@dataclass
class PriorSamples:
    images: np.ndarray                 # (N, H, W, 3)
    pooled: np.ndarray                 # (N, pool*pool*3)
    targets: dict[str, np.ndarray]     # property -> (N, R*R*ch)
    instance_ids: list[int]


def prior_samples(ds: Dataset, split: str, cfg: PriorConfig, seed: int) -> PriorSamples:
    """Multi-light renders of each material, paired with downsampled GT maps."""
    images, maps, ids = [], [], []
    for inst in ds.split_instances(split):
        if inst.maps is None:
            raise DataError(f"instance {inst.instance_id} has no ground-truth maps")
        small = resample_maps(inst.maps, cfg.map_resolution)
        for img in render_variants(inst.maps, _render_seed(seed, inst.instance_id),
                                   cfg.renders_per_material):
            images.append(img)
            maps.append(small)
            ids.append(inst.instance_id)
    if not images:
        raise DataError(f"split {split!r} is empty")
    images = np.stack(images)
    return PriorSamples(images, pool_images(images, cfg.pool), maps_to_flat(maps), ids)


def _render_seed(seed: int, instance_id: int) -> int:
    from .rng import derive_seed

    return derive_seed(seed, instance_id, "prior-render")


def batch_indices(seed: int, step: int, n: int, batch_size: int, purpose: str) -> list[int]:
    """Indices for global step ``step`` (0-based): epoch-wise permutations keyed by seed."""
    bs = min(batch_size, n)
    per_epoch = n // bs
    epoch, slot = divmod(step, per_epoch)
    perm = stream(seed, purpose, epoch).permutation(n)
    return perm[slot * bs:(slot + 1) * bs]


def _generator_loss(p: dict, samples: PriorSamples, idx, cfg: PriorConfig) -> T.Tensor:
    h = trunk_tensor(p, T.Tensor(samples.pooled[idx]))
    pred = heads_tensor(p, h, cfg)
    gt = {k: v[idx] for k, v in samples.targets.items()}
    return rec_loss(pred, gt, cfg.loss_weights)


def evaluate_rec_loss(model: PriorModel, samples: PriorSamples) -> float:
    idx = np.arange(len(samples.instance_ids))
    return _generator_loss(constants(model.params), samples, idx, model.config).item()


def _check_finite(value: float, what: str) -> float:
    if not math.isfinite(value):
        raise NumericError(f"non-finite {what}: {value}")
    return value


@dataclass
class TrainLog:
    steps: list[tuple[int, float]] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)

    def csv_rows(self) -> list[dict]:
        return self.epochs


def prior_config_hash(run: RunConfig) -> str:
    return run.compat_hash("prior")


def prior_checkpoint(model: PriorModel, run: RunConfig, seed: int, opt: OptimizerState | None,
                     kind: str = "prior", extra: dict | None = None) -> Checkpoint:
    meta = {"kind": kind, "seed": seed, "step": opt.step if opt else 0,
            "input_resolution": model.input_resolution,
            "prior_config": run.to_dict()["prior"]}
    if extra:
        meta.update(extra)
    return Checkpoint(prior_config_hash(run), dict(model.params), opt, meta)


def model_from_checkpoint(ckpt: Checkpoint) -> PriorModel:
    if ckpt.kind not in ("prior", "prior-adapted"):
        raise DataError(f"checkpoint kind {ckpt.kind!r} is not a material prior")
    cfg = PriorConfig(**ckpt.metadata["prior_config"])
    return PriorModel(cfg, ckpt.metadata["input_resolution"], dict(ckpt.params))


def _copy_opt(opt: OptimizerState) -> OptimizerState:
    return OptimizerState(opt.kind, opt.learning_rate, dict(opt.m), dict(opt.v), opt.step)


def train_prior(ds: Dataset, run: RunConfig, seed: int, init: Checkpoint | None = None,
                steps: int | None = None) -> tuple[Checkpoint, TrainLog]:
    """Minibatch Adam on the reconstruction loss; returns the best-validation checkpoint.

    With ``init`` the run continues from that checkpoint's parameters,
    optimizer moments and step counter.
    """
    cfg = run.prior
    steps = cfg.steps if steps is None else steps
    train = prior_samples(ds, "train", cfg, seed)
    val = prior_samples(ds, "val", cfg, seed) if ds.splits.get("val") else None
    if init is None:
        model = init_prior(cfg, seed, ds.config.resolution)
        opt = OptimizerState("adam", cfg.lr)
    else:
        model = model_from_checkpoint(init)
        opt = _copy_opt(init.optimizer) if init.optimizer else OptimizerState("adam", cfg.lr)
        opt.learning_rate = cfg.lr
    n = len(train.instance_ids)
    per_epoch = n // min(cfg.batch_size, n)
    log = TrainLog()
    best = (math.inf, dict(model.params), _copy_opt(opt))
    if val is not None:
        best = (evaluate_rec_loss(model, val), dict(model.params), _copy_opt(opt))
    epoch_losses = []
    for _ in range(steps):
        step = opt.step
        idx = batch_indices(seed, step, n, cfg.batch_size, "prior-batch")
        tape = T.Tape()
        p = watch_all(tape, model.params)
        loss = _generator_loss(p, train, idx, cfg)
        value = _check_finite(loss.item(), "prior reconstruction loss")
        grads = grads_by_name(tape.gradient(loss), p)
        model.params = optimizer_step(opt, model.params, grads)
        log.steps.append((opt.step, value))
        epoch_losses.append(value)
        if opt.step % per_epoch == 0:
            row = {"epoch": opt.step // per_epoch, "step": opt.step,
                   "train_loss": float(np.mean(epoch_losses)), "val_loss": ""}
            if val is not None:
                v = _check_finite(evaluate_rec_loss(model, val), "validation loss")
                row["val_loss"] = v
                if v < best[0]:
                    best = (v, dict(model.params), _copy_opt(opt))
            log.epochs.append(row)
            epoch_losses = []
    if val is None:
        best = (math.inf, dict(model.params), _copy_opt(opt))
    elif steps % per_epoch:
        v = evaluate_rec_loss(model, val)
        if v < best[0]:
            best = (v, dict(model.params), _copy_opt(opt))
    model.params = best[1]
    extra = {"best_val_loss": None if math.isinf(best[0]) else best[0]}
    return prior_checkpoint(model, run, seed, best[2], extra=extra), log


# -- unsupervised adaptation ---------------------------------------------------

HIST_BINS = 16
HIST_SIGMA = 1.0 / HIST_BINS


def lambert_rerender(maps: dict[str, T.Tensor], rig: brdf.LightRig = brdf.CANONICAL_RIG) -> T.Tensor:
    """Differentiable diffuse-only re-render of predicted maps: (B, R*R*3)."""
    b = maps["diffuse"].shape[0]
    diffuse = T.reshape(maps["diffuse"], (-1, 3))
    normal = T.reshape(maps["normal"], (-1, 3))
    total = None
    for light in rig.lights:
        cos = T.relu(normal @ np.asarray(light.direction).reshape(3, 1))
        term = diffuse * cos * (np.asarray(light.intensity) / np.pi)
        total = term if total is None else total + term
    return T.reshape(total, (b, -1))


def image_statistics(x: T.Tensor, resolution: int) -> T.Tensor:
    """Soft 16-bin histograms per channel plus mean gradient magnitudes: (B, 54)."""
    b = x.shape[0]
    centers = (np.arange(HIST_BINS) + 0.5) / HIST_BINS
    feats = []
    for c in range(3):
        ch = x[:, c::3]
        d = T.reshape(ch, (b, -1, 1)) - centers
        w = T.exp(T.scale(T.square(d), -0.5 / HIST_SIGMA ** 2))
        feats.append(T.mean(w, axis=1))
    for c in range(3):
        img = T.reshape(x[:, c::3], (b, resolution, resolution))
        dx = img[:, :, 1:] - img[:, :, :-1]
        dy = img[:, 1:, :] - img[:, :-1, :]
        for d in (dx, dy):
            mag = T.sqrt(T.square(T.reshape(d, (b, -1))) + 1e-6)
            feats.append(T.scale(T.mean(mag, axis=1, keepdims=True), 10.0))
    return T.concat(feats, axis=1)


def init_discriminator(cfg: AdaptConfig, seed: int) -> dict[str, np.ndarray]:
    dim = 3 * HIST_BINS + 6
    return init_linear(seed, "disc.0", dim, cfg.disc_hidden) | \
        init_linear(seed, "disc.1", cfg.disc_hidden, 1, gain=1.0)


def discriminate(p: dict, feats: T.Tensor) -> T.Tensor:
    return mlp(feats, p, ["disc.0", "disc.1"])


def _downsample_real(images: np.ndarray, resolution: int) -> np.ndarray:
    n, h = images.shape[0], images.shape[1]
    f = h // resolution
    pooled = images.reshape(n, resolution, f, resolution, f, 3).mean(axis=(2, 4))
    return pooled.reshape(n, -1)


@dataclass
class AdaptationPool:
    pooled: np.ndarray   # trunk input
    real: np.ndarray     # downsampled to map resolution, flattened


def adaptation_pool(images, cfg: PriorConfig) -> AdaptationPool:
    images = np.asarray(images, dtype=np.float64)
    if len(images) == 0:
        raise DataError("unlabeled adaptation pool is empty")
    return AdaptationPool(pool_images(images, cfg.pool),
                          _downsample_real(images, cfg.map_resolution))


def _fake_images(gp: dict, pooled: np.ndarray, cfg: PriorConfig) -> T.Tensor:
    maps = heads_tensor(gp, trunk_tensor(gp, T.Tensor(pooled)), cfg)
    return lambert_rerender(maps)


def _disc_loss(dp: dict, real: T.Tensor, fake: T.Tensor, res: int) -> T.Tensor:
    d_real = discriminate(dp, image_statistics(real, res))
    d_fake = discriminate(dp, image_statistics(fake, res))
    return T.mean(T.softplus(-d_real)) + T.mean(T.softplus(d_fake))


def discriminator_step(dp: dict, dopt: OptimizerState, gen_params: dict, pool: AdaptationPool,
                       idx, cfg: PriorConfig) -> tuple[dict, float]:
    fake = _fake_images(constants(gen_params), pool.pooled[idx], cfg).detach()
    tape = T.Tape()
    w = watch_all(tape, dp)
    loss = _disc_loss(w, T.Tensor(pool.real[idx]), fake, cfg.map_resolution)
    grads = grads_by_name(tape.gradient(loss), w)
    return optimizer_step(dopt, dp, grads), loss.item()


def discriminator_accuracy(dp: dict, gen_params: dict, pool: AdaptationPool,
                           cfg: PriorConfig) -> float:
    """Real/fake accuracy on the whole pool (real = unlabeled image, fake = re-render)."""
    res = cfg.map_resolution
    fake = _fake_images(constants(gen_params), pool.pooled, cfg)
    c = constants(dp)
    d_real = discriminate(c, image_statistics(T.Tensor(pool.real), res)).numpy().ravel()
    d_fake = discriminate(c, image_statistics(fake, res)).numpy().ravel()
    return float((np.sum(d_real > 0) + np.sum(d_fake <= 0)) / (2 * len(d_real)))


def train_discriminator(ckpt: Checkpoint, images, run: RunConfig, seed: int,
                        steps: int) -> tuple[dict, float]:
    """Train only the discriminator against a fixed generator; returns (params, accuracy)."""
    model = model_from_checkpoint(ckpt)
    pool = adaptation_pool(images, model.config)
    dp = init_discriminator(run.adapt, seed)
    dopt = OptimizerState("adam", run.adapt.disc_lr)
    n = len(pool.real)
    for step in range(steps):
        idx = batch_indices(seed, step, n, run.adapt.batch_size, "adapt-pool")
        dp, _ = discriminator_step(dp, dopt, model.params, pool, idx, model.config)
    return dp, discriminator_accuracy(dp, model.params, pool, model.config)


def adapt_unsupervised(ckpt: Checkpoint, ds: Dataset, unlabeled_images, run: RunConfig,
                       seed: int) -> tuple[Checkpoint, TrainLog]:
    """Alternate discriminator and generator steps; the generator keeps a
    reconstruction anchor on the synthetic training split."""
    acfg = run.adapt
    model = model_from_checkpoint(ckpt)
    cfg = model.config
    pool = adaptation_pool(unlabeled_images, cfg)
    train = prior_samples(ds, "train", cfg, seed)
    opt = _copy_opt(ckpt.optimizer) if ckpt.optimizer else OptimizerState("adam", acfg.lr)
    opt.learning_rate = acfg.lr
    dp = init_discriminator(acfg, seed)
    dopt = OptimizerState("adam", acfg.disc_lr)
    n_syn, n_pool = len(train.instance_ids), len(pool.real)
    log = TrainLog()
    res = cfg.map_resolution
    for _ in range(acfg.steps):
        step = opt.step
        pidx = batch_indices(seed, step, n_pool, acfg.batch_size, "adapt-pool")
        dp, d_loss = discriminator_step(dp, dopt, model.params, pool, pidx, cfg)

        idx = batch_indices(seed, step, n_syn, cfg.batch_size, "prior-batch")
        tape = T.Tape()
        gp = watch_all(tape, model.params)
        rec = _generator_loss(gp, train, idx, cfg)
        fake = _fake_images(gp, pool.pooled[pidx], cfg)
        adv = T.mean(T.softplus(-discriminate(constants(dp), image_statistics(fake, res))))
        loss = acfg.lambda_adv * adv + acfg.lambda_rec * rec
        _check_finite(loss.item(), "adaptation loss")
        grads = grads_by_name(tape.gradient(loss), gp)
        model.params = optimizer_step(opt, model.params, grads)
        log.steps.append((opt.step, rec.item()))
        log.epochs.append({"step": opt.step, "rec_loss": rec.item(), "adv_loss": adv.item(),
                           "disc_loss": d_loss})
    extra = {"adapt_config": run.to_dict()["adapt"], "adapted_from": ckpt.metadata.get("seed")}
    return prior_checkpoint(model, run, seed, opt, kind="prior-adapted", extra=extra), log


# -- frozen feature extraction ------------------------------------------------

def extract_prior_features(ckpt: Checkpoint | PriorModel, images) -> np.ndarray:
    model = ckpt if isinstance(ckpt, PriorModel) else model_from_checkpoint(ckpt)
    return np.atleast_2d(trunk_forward(model, images))


def save_feature_cache(path, features: np.ndarray, ids: list[int], meta: dict | None = None) -> None:
    path = Path(path)
    T.save_rten(path, features)
    doc = {"ids": [int(i) for i in ids], "shape": list(features.shape)}
    if meta:
        doc.update(meta)
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_feature_cache(path) -> tuple[np.ndarray, list[int], dict]:
    path = Path(path)
    side = path.with_suffix(path.suffix + ".json")
    if not path.exists() or not side.exists():
        raise DataError(f"feature cache not found: {path} (+ .json sidecar)")
    doc = json.loads(side.read_text())
    feats = T.load_rten(path).numpy()
    if feats.shape[0] != len(doc["ids"]):
        raise DataError("feature cache rows do not match its id list")
    return feats, doc["ids"], doc


def features_digest(features: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(features, dtype="<f8").tobytes()).hexdigest()
