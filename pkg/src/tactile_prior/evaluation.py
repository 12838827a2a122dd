"""Evaluation metrics over frozen embeddings and predicted material maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import brdf
from .brdf import MaterialMaps
from .checkpoint import Checkpoint
from .config import ProbeConfig
from .contrastive import encode_touch, encode_vision, model_from_checkpoint
from .errors import ConfigError, DataError, ShapeError
from .optim import OptimizerState, optimizer_step
from .synth import Dataset, MaterialLibrary, task_label

RMSE_COLUMNS = ("Diff.", "Nrm.", "Rgh.", "Spec.", "Rend.")
NORM_TOL = 1e-9


@dataclass
class EmbeddingMatrix:
    values: np.ndarray
    ids: list[int]
    labels: np.ndarray

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=int)
        n = self.values.shape[0]
        if len(self.ids) != n or len(self.labels) != n:
            raise ShapeError(f"{n} rows but {len(self.ids)} ids and {len(self.labels)} labels")
        if len(set(self.ids)) != n:
            raise DataError("embedding ids must be unique")

    def __len__(self) -> int:
        return len(self.ids)

    def check_unit(self) -> "EmbeddingMatrix":
        norms = np.linalg.norm(self.values, axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > NORM_TOL)
        if bad.size:
            raise DataError(f"embedding row {self.ids[bad[0]]} has norm {norms[bad[0]]}")
        return self


def extract_embeddings(ckpt: Checkpoint, ds: Dataset, split: str, modality: str,
                       variant: str = "F", task: str = "material") -> EmbeddingMatrix:
    """Touch rows are one per pair; vision rows are one per instance."""
    model = model_from_checkpoint(ckpt)
    insts = ds.split_instances(split)
    if not insts:
        raise DataError(f"split {split!r} is empty")
    if modality == "touch":
        ids, labels, images = [], [], []
        for pr, lab in zip(ds.pairs(split, variant), ds.labels(split, task)):
            ids.append(pr.pair_id)
            labels.append(lab)
            images.append(pr.touch)
        values = encode_touch(model, np.stack(images))
    elif modality == "vision":
        ids = [i.instance_id for i in insts]
        labels = [task_label(i, task, ds.config) for i in insts]
        values = encode_vision(model, np.stack([i.vision_variant(variant) for i in insts]))
    else:
        raise ConfigError(f"modality must be touch or vision, got {modality!r}")
    return EmbeddingMatrix(values, ids, labels).check_unit()


# -- linear probe --------------------------------------------------------------

def _softmax_xent_grad(x: np.ndarray, y: np.ndarray, w: np.ndarray, b: np.ndarray):
    logits = x @ w + b
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    p[np.arange(len(y)), y] -= 1.0
    p /= len(y)
    return x.T @ p, p.sum(axis=0)


def train_probe(train: EmbeddingMatrix, cfg: ProbeConfig, num_classes: int) -> dict[str, np.ndarray]:
    """Full-batch Adam on softmax cross-entropy from a zero-initialized linear layer."""
    d = train.values.shape[1]
    params = {"w": np.zeros((d, num_classes)), "b": np.zeros(num_classes)}
    opt = OptimizerState("adam", cfg.lr)
    for _ in range(cfg.steps):
        gw, gb = _softmax_xent_grad(train.values, train.labels, params["w"], params["b"])
        params = optimizer_step(opt, params, {"w": gw, "b": gb})
    return params


def predict(params: dict[str, np.ndarray], x: np.ndarray) -> np.ndarray:
    # argmax returns the first maximum, so ties go to the lowest class index
    return np.argmax(x @ params["w"] + params["b"], axis=1)


def linear_probe(train: EmbeddingMatrix, test: EmbeddingMatrix, cfg: ProbeConfig | None = None,
                 seed: int = 0) -> float:
    """Top-1 accuracy of a linear softmax classifier fit on ``train``.

    Training is full-batch from a zero init, so the result does not depend
    on ``seed``; the argument is kept for a uniform call signature.
    """
    cfg = cfg or ProbeConfig()
    if len(train) == 0 or len(test) == 0:
        raise DataError("linear probe needs non-empty train and test sets")
    unseen = sorted(set(test.labels.tolist()) - set(train.labels.tolist()))
    if unseen:
        raise DataError(f"test label {unseen[0]} never appears in the probe training set")
    if train.values.shape[1] != test.values.shape[1]:
        raise ShapeError("train and test embeddings differ in dimension")
    k = int(max(train.labels.max(), test.labels.max())) + 1
    params = train_probe(train, cfg, k)
    return float(np.mean(predict(params, test.values) == test.labels))


# -- ranking -------------------------------------------------------------------

def rank(query: np.ndarray, gallery: EmbeddingMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Gallery row order by descending cosine, ties by ascending id; returns (order, scores)."""
    scores = gallery.values @ np.asarray(query, dtype=np.float64)
    order = np.lexsort((np.asarray(gallery.ids), -scores))
    return order, scores[order]


@dataclass
class RetrievalResult:
    query_id: int | None
    ids: list[int]
    scores: list[float]


def topk_accuracy(query: EmbeddingMatrix, gallery: EmbeddingMatrix, pairing: dict[int, int],
                  k: int) -> float:
    if not 1 <= k <= len(gallery):
        raise ConfigError(f"k must lie in [1, {len(gallery)}], got {k}")
    gallery_ids = np.asarray(gallery.ids)
    hits = 0
    for qid, vec in zip(query.ids, query.values):
        if qid not in pairing or pairing[qid] not in gallery.ids:
            raise DataError(f"query {qid} has no paired gallery item")
        order, _ = rank(vec, gallery)
        hits += pairing[qid] in gallery_ids[order[:k]]
    return hits / len(query)


def average_precision(relevant_in_rank_order: np.ndarray) -> float:
    rel = np.asarray(relevant_in_rank_order, dtype=bool)
    ranks = np.flatnonzero(rel) + 1
    return float(np.mean(np.arange(1, len(ranks) + 1) / ranks))


def mean_average_precision(query: EmbeddingMatrix, gallery: EmbeddingMatrix) -> float:
    """mAP with relevance = same label."""
    aps = []
    for qid, vec, lab in zip(query.ids, query.values, query.labels):
        rel = gallery.labels == lab
        if not rel.any():
            raise DataError(f"query {qid} has no relevant gallery item")
        order, _ = rank(vec, gallery)
        aps.append(average_precision(rel[order]))
    return float(np.mean(aps))


def library_embeddings(ckpt: Checkpoint, library: MaterialLibrary) -> EmbeddingMatrix:
    model = model_from_checkpoint(ckpt)
    values = encode_vision(model, np.stack([e.sphere for e in library.entries]))
    return EmbeddingMatrix(values, library.ids, [e.label for e in library.entries]).check_unit()


def retrieve_materials(query: np.ndarray, library: EmbeddingMatrix, k: int,
                       query_id: int | None = None) -> RetrievalResult:
    if not 1 <= k <= len(library):
        raise ConfigError(f"k must lie in [1, {len(library)}], got {k}")
    order, scores = rank(query, library)
    return RetrievalResult(query_id, [library.ids[i] for i in order[:k]],
                           [float(s) for s in scores[:k]])


# -- material maps -------------------------------------------------------------

def _rmse(a: np.ndarray, b: np.ndarray) -> float:
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.sqrt(np.mean(d * d)))


def map_rmse(pred: MaterialMaps, gt: MaterialMaps,
             rig: brdf.LightRig = brdf.CANONICAL_RIG) -> dict[str, float]:
    """RMSE per property plus the RMSE between the two canonical renders."""
    if pred.resolution != gt.resolution:
        raise ShapeError(f"map resolutions differ: {pred.resolution} vs {gt.resolution}")
    return {
        "Diff.": _rmse(pred.diffuse, gt.diffuse),
        "Nrm.": _rmse(pred.normal, gt.normal),
        "Rgh.": _rmse(pred.roughness, gt.roughness),
        "Spec.": _rmse(pred.specular, gt.specular),
        "Rend.": brdf.rendering_rmse(brdf.render(pred, rig), brdf.render(gt, rig)),
    }


def mean_rmse(records: list[dict[str, float]]) -> dict[str, float]:
    return {c: float(np.mean([r[c] for r in records])) for c in RMSE_COLUMNS}

