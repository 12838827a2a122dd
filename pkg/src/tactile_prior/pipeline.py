"""Stage runners shared by the command line and the end-to-end checks.

Every stage reads its inputs from disk, writes to paths that must not exist
yet, and embeds the resolved configuration in what it writes.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import shutil
import tempfile
from pathlib import Path

import numpy as np

from . import brdf, contrastive, evaluation, plotting, prior
from . import tensor as T
from .checkpoint import Checkpoint, file_sha256, load_checkpoint, params_sha256, save_checkpoint
from .config import RunConfig
from .errors import ConfigError, DataError, TactilePriorError
from .synth import (Dataset, build_adaptation_pool, build_dataset, build_material_library,
                    load_dataset, load_library, load_maps, resample_maps, write_dataset)

ADAPT_POOL_FILE = "adapt_pool.rten"
METRIC_FIELDS = ("metric", "split", "mode", "seed", "value")
TASKS = ("material", "rough", "hard")


# -- file helpers ---------------------------------------------------------------

def fresh(path) -> Path:
    path = Path(path)
    if path.exists():
        raise ConfigError(f"output path already exists: {path}")
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def write_json(path, doc) -> Path:
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def write_csv(path, rows: list[dict], fields) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fields), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _csv_value(row.get(k, "")) for k in fields})
    return path


def _csv_value(v):
    return repr(v) if isinstance(v, float) else v


def metric(name: str, split: str, mode: str, seed: int, value: float) -> dict:
    return {"metric": name, "split": split, "mode": mode, "seed": seed, "value": float(value)}


def write_metrics(path, records: list[dict], run: RunConfig, extra: dict | None = None) -> Path:
    """JSON report (records + resolved config) plus a flat CSV sibling."""
    path = Path(path)
    doc = {"config": run.to_dict(), "config_hash": run.section_hash(*run.to_dict()),
           "records": records}
    if extra:
        doc.update(extra)
    write_json(path, doc)
    write_csv(path.with_suffix(".csv"), records, METRIC_FIELDS)
    return path


def read_metrics(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"metrics file not found: {path}")
    return json.loads(path.read_text())["records"]


def tree_hashes(root) -> dict[str, str]:
    root = Path(root)
    return {str(p.relative_to(root)): file_sha256(p)
            for p in sorted(root.rglob("*")) if p.is_file()}


# -- stages ---------------------------------------------------------------------

def gen_data(run: RunConfig, out_dir) -> Path:
    out = fresh(out_dir)
    ds = build_dataset(run.data, run.seed)
    library = build_material_library(run.data, run.seed)
    write_dataset(ds, out, library)
    T.save_rten(out / ADAPT_POOL_FILE, np.stack(build_adaptation_pool(run.data, run.seed)))
    return out / "manifest.json"


def open_dataset(data_dir) -> Dataset:
    return load_dataset(data_dir)


def load_rig(path) -> brdf.LightRig:
    """Light rig from a JSON document ``{"lights": [{"direction", "intensity"}], "view"}``."""
    try:
        doc = json.loads(Path(path).read_text())
        return brdf.LightRig.from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, TactilePriorError):
            raise
        raise ConfigError(f"malformed light rig {path}: {exc}") from None


def render_maps(maps_dir, out_png, sphere: bool = False, resolution: int | None = None,
                lights=None) -> Path:
    maps = load_maps(Path(maps_dir))
    rig = brdf.CANONICAL_RIG if lights is None else load_rig(lights)
    out = fresh(out_png)
    if sphere:
        img = brdf.render_sphere(maps, rig, resolution or maps.resolution[0])
    else:
        if resolution is not None and resolution != maps.resolution[0]:
            maps = resample_maps(maps, resolution)
        img = brdf.render(maps, rig)
    brdf.save_png(out, img)
    T.save_rten(out.with_suffix(".rten"), img)
    return out


def _with_config(ckpt: Checkpoint, run: RunConfig) -> Checkpoint:
    ckpt.metadata["config"] = run.to_dict()
    return ckpt


def train_prior_stage(run: RunConfig, data_dir, out_ckpt, log_csv=None, plot_dir=None) -> dict:
    out = fresh(out_ckpt)
    ds = open_dataset(data_dir)
    ckpt, log = prior.train_prior(ds, run, run.seed)
    digest = save_checkpoint(out, _with_config(ckpt, run))
    log_path = fresh(log_csv or out.with_suffix(".csv"))
    write_csv(log_path, log.epochs, ("epoch", "step", "train_loss", "val_loss"))
    if plot_dir is not None:
        _plot_losses(plot_dir, "prior_loss", {"train": ([s for s, _ in log.steps],
                                                        [v for _, v in log.steps])},
                     "material prior reconstruction loss")
    final = log.steps[-1][1] if log.steps else float("nan")
    return {"checkpoint": str(out), "sha256": digest, "final_train_loss": final,
            "best_val_loss": ckpt.metadata.get("best_val_loss")}


def load_prior(path, run: RunConfig, force: bool = False) -> Checkpoint:
    ckpt = load_checkpoint(path, prior.prior_config_hash(run), force=force)
    prior.model_from_checkpoint(ckpt)
    return ckpt


def load_pool(data_dir, path=None) -> np.ndarray:
    path = Path(path) if path else Path(data_dir) / ADAPT_POOL_FILE
    if not path.exists():
        raise DataError(f"unlabeled image pool not found: {path}")
    return T.load_rten(path).numpy()


def adapt_prior_stage(run: RunConfig, data_dir, prior_ckpt, out_ckpt, unlabeled=None,
                      log_csv=None, force: bool = False, plot_dir=None) -> dict:
    out = fresh(out_ckpt)
    ds = open_dataset(data_dir)
    base = load_prior(prior_ckpt, run, force)
    pool = load_pool(data_dir, unlabeled)
    ckpt, log = prior.adapt_unsupervised(base, ds, pool, run, run.seed)
    digest = save_checkpoint(out, _with_config(ckpt, run))
    write_csv(fresh(log_csv or out.with_suffix(".csv")), log.epochs,
              ("step", "rec_loss", "adv_loss", "disc_loss"))
    if plot_dir is not None:
        steps = [r["step"] for r in log.epochs]
        _plot_losses(plot_dir, "adapt_loss",
                     {k: (steps, [r[k] for r in log.epochs])
                      for k in ("rec_loss", "adv_loss", "disc_loss")},
                     "unsupervised adaptation")
    last = log.epochs[-1] if log.epochs else {}
    return {"checkpoint": str(out), "sha256": digest,
            "final_rec_loss": last.get("rec_loss"), "final_adv_loss": last.get("adv_loss")}


def extract_prior_stage(run: RunConfig, data_dir, prior_ckpt, out_rten, split: str = "train",
                        variant: str = "F", force: bool = False) -> dict:
    out = fresh(out_rten)
    ds = open_dataset(data_dir)
    ckpt = load_prior(prior_ckpt, run, force)
    feats, ids = contrastive.prior_feature_table(ckpt, ds, split, variant)
    prior.save_feature_cache(out, feats, ids, {"split": split, "variant": variant,
                                               "prior_checksum": params_sha256(ckpt.params)})
    return {"features": str(out), "rows": int(feats.shape[0]), "dim": int(feats.shape[1])}


def train_tactile_stage(run: RunConfig, data_dir, out_ckpt, prior_ckpt=None, prior_cache=None,
                        log_csv=None, force: bool = False, plot_dir=None) -> dict:
    cfg = run.tactile
    prior_cache = prior_cache or cfg.prior_cache_path
    needs_prior = contrastive.USES_PRIOR[cfg.mode]
    if needs_prior and prior_ckpt is None and prior_cache is None:
        raise ConfigError(f"mode {cfg.mode} requires --prior or --prior-cache")
    out = fresh(out_ckpt)
    ds = open_dataset(data_dir)
    ckpt_prior = load_prior(prior_ckpt, run, force) if prior_ckpt else None
    features = None
    if needs_prior and prior_cache is not None:
        feats, ids, _ = prior.load_feature_cache(prior_cache)
        features = (feats, ids)
    ckpt, rows = contrastive.train_tactile(ds, ckpt_prior, run, run.seed, prior_features=features)
    digest = save_checkpoint(out, _with_config(ckpt, run))
    write_csv(fresh(log_csv or out.with_suffix(".csv")), rows, ("step", "L_TV", "L_TM", "L"))
    if plot_dir is not None and rows:
        steps = [r["step"] for r in rows]
        series = {k: (steps, [r[k] for r in rows]) for k in ("L_TV", "L_TM", "L")
                  if rows[0][k] != ""}
        _plot_losses(plot_dir, f"tactile_loss_{cfg.mode}", series,
                     f"contrastive pretraining, mode {cfg.mode}")
    final = rows[-1] if rows else {"L": float("nan"), "L_TV": "", "L_TM": ""}
    return {"checkpoint": str(out), "sha256": digest, "mode": cfg.mode,
            "final_L": final["L"], "final_L_TV": final["L_TV"], "final_L_TM": final["L_TM"]}


def load_tactile(path, run: RunConfig, force: bool = False) -> Checkpoint:
    ckpt = load_checkpoint(path, contrastive.tactile_config_hash(run), force=force)
    contrastive.model_from_checkpoint(ckpt)
    return ckpt


def probe_accuracies(ckpt: Checkpoint, ds: Dataset, run: RunConfig, variant: str,
                     tasks=TASKS, seed: int | None = None) -> dict[str, float]:
    seed = run.seed if seed is None else seed
    out = {}
    for task in tasks:
        train = evaluation.extract_embeddings(ckpt, ds, "train", "touch", variant, task)
        test = evaluation.extract_embeddings(ckpt, ds, "test", "touch", variant, task)
        out[task] = evaluation.linear_probe(train, test, run.probe, seed)
    return out


def probe_stage(run: RunConfig, data_dir, ckpt_path, out_json, tasks=("material",),
                force: bool = False) -> dict:
    out = fresh(out_json)
    ds = open_dataset(data_dir)
    ckpt = load_tactile(ckpt_path, run, force)
    accs = probe_accuracies(ckpt, ds, run, run.probe.data_variant, tasks)
    mode = ckpt.metadata["mode"]
    records = [metric(f"probe_accuracy_{t}", "test", mode, run.seed, a) for t, a in accs.items()]
    chance = {t: 1.0 / len(set(ds.labels("test", t).tolist()) | set(ds.labels("train", t).tolist()))
              for t in tasks}
    write_metrics(out, records, run, {"chance": chance,
                                      "label_definitions": label_definitions(run)})
    return {"metrics": str(out), **{f"probe_{t}": a for t, a in accs.items()}}


def label_definitions(run: RunConfig) -> dict:
    return {"rough": f"roughness mean > {run.data.rough_threshold}",
            "hard": f"height amplitude > {run.data.hard_height_threshold}"}


def retrieval_metrics(ckpt: Checkpoint, ds: Dataset, run: RunConfig, k: int,
                      library=None) -> dict[str, float]:
    """Touch-to-vision retrieval on the test split; optionally touch-to-library."""
    variant = run.probe.data_variant
    query = evaluation.extract_embeddings(ckpt, ds, "test", "touch", variant)
    gallery = evaluation.extract_embeddings(ckpt, ds, "test", "vision", variant)
    pairing = {pid: ds_pair_instance(pid) for pid in query.ids}
    k_pair = min(k, len(gallery))
    out = {"top1_touch_to_vision": evaluation.topk_accuracy(query, gallery, pairing, 1),
           f"top{k_pair}_touch_to_vision": evaluation.topk_accuracy(query, gallery, pairing,
                                                                    k_pair),
           "mAP_touch_to_vision": evaluation.mean_average_precision(query, gallery),
           "chance_top1_touch_to_vision": 1.0 / len(gallery)}
    if library is not None:
        lib = evaluation.library_embeddings(ckpt, library)
        if k > len(lib):
            raise ConfigError(f"k = {k} exceeds the library size {len(lib)}")
        hits = []
        for qid, vec, lab in zip(query.ids, query.values, query.labels):
            res = evaluation.retrieve_materials(vec, lib, k, qid)
            labels = dict(zip(lib.ids, lib.labels))
            hits.append([labels[i] == lab for i in res.ids])
        hits = np.array(hits, dtype=float)
        out["library_top1_category"] = float(hits[:, 0].mean())
        out[f"library_precision_at_{k}"] = float(hits.mean())
        out["mAP_touch_to_library"] = evaluation.mean_average_precision(query, lib)
    return out


def ds_pair_instance(pair_id: int) -> int:
    return pair_id // 1000


def retrieve_stage(run: RunConfig, data_dir, ckpt_path, out_json, k: int | None = None,
                   force: bool = False) -> dict:
    k = run.retrieval.k if k is None else k
    ds = open_dataset(data_dir)
    ckpt = load_tactile(ckpt_path, run, force)
    if "vision.0.w" not in ckpt.params:
        raise ConfigError(f"mode {ckpt.metadata['mode']} has no image encoder to retrieve with")
    library = load_library(data_dir)
    if not 1 <= k <= len(library):
        raise ConfigError(f"--k must lie in [1, {len(library)}] (library size), got {k}")
    out = fresh(out_json)
    values = retrieval_metrics(ckpt, ds, run, k, library)
    mode = ckpt.metadata["mode"]
    records = [metric(name, "test", mode, run.seed, v) for name, v in values.items()]
    write_metrics(out, records, run)
    return {"metrics": str(out), **values}


def map_predictions(model: prior.PriorModel, ds: Dataset, split: str) -> tuple[list, list]:
    insts = ds.split_instances(split)
    if not insts:
        raise DataError(f"split {split!r} is empty")
    # the surface alone under the instance's own lights, as in prior training
    images = np.stack([np.clip(brdf.render(i.maps, i.rig), 0.0, 1.0) for i in insts])
    preds = prior.predict_maps(model, images)
    gts = [resample_maps(i.maps, model.config.map_resolution) for i in insts]
    return preds, gts


def map_rmse_table(model: prior.PriorModel, ds: Dataset, split: str) -> dict[str, float]:
    preds, gts = map_predictions(model, ds, split)
    return evaluation.mean_rmse([evaluation.map_rmse(p, g) for p, g in zip(preds, gts)])


def eval_maps_stage(run: RunConfig, data_dir, out_json, prior_ckpt=None, split: str = "val",
                    ground_truth: bool = False, force: bool = False, plot_dir=None) -> dict:
    ds = open_dataset(data_dir)
    rows = {}
    if ground_truth:
        gts = [resample_maps(i.maps, run.prior.map_resolution) for i in ds.split_instances(split)]
        rows["ground-truth"] = evaluation.mean_rmse([evaluation.map_rmse(g, g) for g in gts])
    else:
        if prior_ckpt is None:
            raise ConfigError("eval-maps needs --prior (or --ground-truth)")
        ckpt = load_prior(prior_ckpt, run, force)
        model = prior.model_from_checkpoint(ckpt)
        rows["prior"] = map_rmse_table(model, ds, split)
        baseline = prior.init_prior(model.config, ckpt.metadata.get("seed", run.seed),
                                    model.input_resolution)
        rows["untrained"] = map_rmse_table(baseline, ds, split)
    out = fresh(out_json)
    records = [metric(col, split, mode, run.seed, table[col])
               for mode, table in rows.items() for col in evaluation.RMSE_COLUMNS]
    write_metrics(out, records, run, {"columns": list(evaluation.RMSE_COLUMNS)})
    if plot_dir is not None:
        pdir = Path(plot_dir)
        pdir.mkdir(parents=True, exist_ok=True)
        plotting.grouped_bars(pdir / "map_rmse.png", list(evaluation.RMSE_COLUMNS),
                              {m: [t[c] for c in evaluation.RMSE_COLUMNS] for m, t in rows.items()},
                              f"map RMSE ({split} split)", "RMSE")
        for m, t in rows.items():
            plotting.write_series(pdir / f"map_rmse_{m}.csv", list(evaluation.RMSE_COLUMNS),
                                  [t[c] for c in evaluation.RMSE_COLUMNS], "column", "rmse")
    return {"metrics": str(out), **{f"{m}.{c}": t[c] for m, t in rows.items() for c in t}}


# -- ablation -----------------------------------------------------------------------

ABLATION_FIELDS = ("mode", "data_mode", "seed", "probe_material", "probe_rough", "probe_hard",
                   "config_hash")


def alternative_prior(ds: Dataset, run: RunConfig) -> Checkpoint:
    """A second material trunk trained from a different seed, used by mode C."""
    alt_seed = run.seed + run.ablation.alt_prior_seed_offset
    ckpt, _ = prior.train_prior(ds, run, alt_seed)
    return ckpt


def cell_config(run: RunConfig, mode: str, data_mode: str, seed: int) -> RunConfig:
    tactile = dataclasses.replace(run.tactile, mode=mode, data_variant=data_mode[0])
    probe = dataclasses.replace(run.probe, data_variant=data_mode[1])
    return run.replace(tactile=tactile, probe=probe)


def ablation_cell(ds: Dataset, run: RunConfig, mode: str, data_mode: str, seed: int,
                  priors: dict[str, Checkpoint]) -> dict:
    cell = cell_config(run, mode, data_mode, seed)
    prior_ckpt = priors["alt"] if mode == "C" else priors["main"]
    ckpt, _ = contrastive.train_tactile(ds, prior_ckpt if contrastive.USES_PRIOR[mode] else None,
                                        cell, seed)
    accs = probe_accuracies(ckpt, ds, cell, data_mode[1], TASKS, seed)
    doc = {"cell": {"mode": mode, "data_mode": data_mode, "seed": seed}, "config": cell.to_dict(),
           "prior": params_sha256(prior_ckpt.params)}
    chash = hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()
    return {"mode": mode, "data_mode": data_mode, "seed": seed,
            "probe_material": accs["material"], "probe_rough": accs["rough"],
            "probe_hard": accs["hard"], "config_hash": chash}


def ablation_stage(run: RunConfig, data_dir, prior_ckpt, out_csv, alt_prior_ckpt=None,
                   force: bool = False, plot_dir=None, progress=None) -> dict:
    out = fresh(out_csv)
    ds = open_dataset(data_dir)
    if not run.data.clutter and any("S" in dm for dm in run.ablation.data_modes):
        raise ConfigError("segmented (S) data modes need a dataset built with data.clutter = true")
    priors = {"main": load_prior(prior_ckpt, run, force)}
    if "C" in run.ablation.modes:
        priors["alt"] = (load_prior(alt_prior_ckpt, run, force) if alt_prior_ckpt
                         else alternative_prior(ds, run))
    rows = []
    for data_mode in run.ablation.data_modes:
        for mode in run.ablation.modes:
            for seed in run.ablation.seeds:
                rows.append(ablation_cell(ds, run, mode, data_mode, seed, priors))
                if progress:
                    progress(rows[-1])
    write_csv(out, rows, ABLATION_FIELDS)
    write_json(out.with_suffix(".json"), {"config": run.to_dict(), "rows": rows,
                                          "label_definitions": label_definitions(run)})
    if plot_dir is not None:
        _plot_ablation(plot_dir, rows, run)
    return {"table": str(out), "rows": len(rows)}


def _plot_ablation(plot_dir, rows: list[dict], run: RunConfig) -> None:
    pdir = Path(plot_dir)
    pdir.mkdir(parents=True, exist_ok=True)
    groups = list(run.ablation.data_modes)
    series = {}
    for mode in run.ablation.modes:
        series[mode] = [float(np.mean([r["probe_material"] for r in rows
                                       if r["mode"] == mode and r["data_mode"] == dm]))
                        for dm in groups]
        plotting.write_series(pdir / f"ablation_{mode}.csv", groups, series[mode],
                              "data_mode", "probe_material")
    plotting.grouped_bars(pdir / "ablation.png", groups, series, "material probe accuracy",
                          "accuracy", reference=1.0 / len(run.data.categories))


def _plot_losses(plot_dir, name: str, series: dict, title: str) -> None:
    pdir = Path(plot_dir)
    pdir.mkdir(parents=True, exist_ok=True)
    for key, (xs, ys) in series.items():
        plotting.write_series(pdir / f"{name}_{key}.csv", xs, ys, "step", key)
    plotting.loss_curves(pdir / f"{name}.png", series, title)


# -- full pipeline and verification -----------------------------------------------

def run_pipeline(run: RunConfig, out_dir, plots: bool = True) -> dict[str, str]:
    """Every stage in order into ``out_dir``; returns relative path -> sha256."""
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()):
        raise ConfigError(f"pipeline output directory is not empty: {out}")
    out.mkdir(parents=True, exist_ok=True)
    plot_dir = out / "plots" if plots else None
    data = out / "data"
    gen_data(run, data)
    train_prior_stage(run, data, out / "prior.rckp", plot_dir=plot_dir)
    adapt_prior_stage(run, data, out / "prior.rckp", out / "prior_adapted.rckp", plot_dir=plot_dir)
    variant = run.tactile.data_variant
    extract_prior_stage(run, data, out / "prior_adapted.rckp", out / "prior_features.rten",
                        "train", variant)
    train_tactile_stage(run, data, out / "tactile.rckp",
                        prior_ckpt=out / "prior_adapted.rckp",
                        prior_cache=out / "prior_features.rten", plot_dir=plot_dir)
    probe_stage(run, data, out / "tactile.rckp", out / "probe.json", TASKS)
    if contrastive.USES_VISION[run.tactile.mode]:
        retrieve_stage(run, data, out / "tactile.rckp", out / "retrieve.json")
    eval_maps_stage(run, data, out / "eval_maps.json", prior_ckpt=out / "prior_adapted.rckp",
                    plot_dir=plot_dir)
    hashes = tree_hashes(out)
    write_json(out / "hashes.json", hashes)
    return hashes


def verify(run: RunConfig, reference=None, workdir=None, plots: bool = True) -> dict:
    """Re-derive the pipeline and compare file hashes.

    Against ``reference`` (a previous ``run_pipeline`` directory) when given,
    otherwise two fresh runs are compared with each other.
    """
    tmp = Path(tempfile.mkdtemp(prefix="verify-", dir=workdir))
    try:
        first = run_pipeline(run, tmp / "a", plots)
        if reference is not None:
            ref = Path(reference)
            if not ref.is_dir():
                raise DataError(f"reference run not found: {ref}")
            second = {k: v for k, v in tree_hashes(ref).items() if k != "hashes.json"}
        else:
            second = run_pipeline(run, tmp / "b", plots)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    files = sorted(set(first) | set(second))
    mismatched = [f for f in files if first.get(f) != second.get(f)]
    return {"files": len(files), "mismatched": mismatched, "ok": not mismatched}
