"""Linear detector: hinge-loss training, negative/positive mining, latent
re-localization rounds and the CorLoc / average-precision metrics."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .features import Dataset
from .geom import Box, iou

log = logging.getLogger(__name__)

FOREGROUND = "foreground-estimate"
HARD_NEGATIVE = "hard-negative"
NEIGHBOR_NEGATIVE = "neighboring-negative"
MINED_NEGATIVE = "mined-negative"
MINED_POSITIVE = "mined-positive"

DEFAULT_LAMBDA = 1e-4
DEFAULT_EPOCHS = 300
DEFAULT_ROUNDS = 5
DEFAULT_MINING_ROUNDS = 10


@dataclass(frozen=True)
class Example:
    feature: np.ndarray
    label: int
    source: str
    image_id: Optional[int] = None
    patch_id: Optional[int] = None


@dataclass
class TrainingSet:
    examples: list[Example] = field(default_factory=list)

    @property
    def positives(self) -> list[Example]:
        return [e for e in self.examples if e.label > 0]

    @property
    def negatives(self) -> list[Example]:
        return [e for e in self.examples if e.label < 0]

    def negative_patch_ids(self) -> set[int]:
        return {e.patch_id for e in self.negatives if e.patch_id is not None}

    def add(self, ex: Example) -> None:
        self.examples.append(ex)

    def validate(self) -> None:
        pos = {e.patch_id for e in self.positives if e.patch_id is not None}
        clash = pos & self.negative_patch_ids()
        if clash:
            raise ValueError(f"patches used as both positive and negative: {sorted(clash)[:5]}")

    def matrix(self) -> tuple[np.ndarray, np.ndarray]:
        X = np.stack([np.asarray(e.feature, dtype=np.float64) for e in self.examples])
        y = np.array([1.0 if e.label > 0 else -1.0 for e in self.examples])
        return X, y


@dataclass
class LinearModel:
    weights: np.ndarray
    bias: float
    lam: float
    initial_objective: float = float("nan")
    final_objective: float = float("nan")

    @property
    def dim(self) -> int:
        return int(self.weights.shape[0])

    def score(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return X @ self.weights + self.bias

    def to_json(self) -> dict:
        return {"dim": self.dim, "weights": [float(w) for w in self.weights],
                "bias": float(self.bias), "lambda": float(self.lam)}

    @classmethod
    def from_json(cls, obj: Mapping) -> "LinearModel":
        w = np.asarray(obj["weights"], dtype=np.float64)
        if w.shape != (int(obj["dim"]),):
            raise ValueError("model weights do not match dim")
        return cls(w, float(obj["bias"]), float(obj["lambda"]))


@dataclass(frozen=True)
class Detection:
    image_id: int
    box: Box
    score: float
    patch_id: Optional[int] = None


def hinge_objective(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray,
                    c: np.ndarray, lam: float) -> float:
    """``lam/2 * (|w|^2 + b^2) + sum_i c_i * max(0, 1 - y_i (w.x_i + b))``."""
    margins = y * (X @ w + b)
    return 0.5 * lam * (float(w @ w) + b * b) + float(c @ np.maximum(0.0, 1.0 - margins))


def train_svm(ts: TrainingSet, lam: float = DEFAULT_LAMBDA, epochs: int = DEFAULT_EPOCHS,
              seed: int = 0, tol: float = 1e-4) -> LinearModel:
    """L2-regularized hinge loss solved by dual coordinate descent.

    Classes are weighted to contribute equally to the loss and the bias is
    regularized like a weight (constant feature). Coordinates are visited
    in a fresh ``seed``-driven permutation each epoch. The primal objective
    is tracked and the best iterate returned, so the final objective never
    exceeds the starting one (``w = 0``).
    """
    if not ts.positives or not ts.negatives:
        raise ValueError("training needs at least one positive and one negative example")
    X, y = ts.matrix()
    n_pos = float((y > 0).sum())
    n_neg = float((y < 0).sum())
    c = np.where(y > 0, 0.5 / n_pos, 0.5 / n_neg)
    upper = c / lam
    # constant column carries the bias
    Xa = np.hstack([X, np.ones((X.shape[0], 1))])
    q = np.einsum("ij,ij->i", Xa, Xa)

    rng = np.random.default_rng(seed)
    alpha = np.zeros(len(y))
    wa = np.zeros(Xa.shape[1])
    initial = hinge_objective(wa[:-1], 0.0, X, y, c, lam)
    if not np.isfinite(initial):
        raise FloatingPointError("non-finite training objective")
    best_w, best_obj = wa.copy(), initial
    rows = [Xa[i] for i in range(len(y))]
    for _ in range(epochs):
        max_pg = 0.0
        for i in rng.permutation(len(y)):
            xi = rows[i]
            g = y[i] * float(wa @ xi) - 1.0
            a = alpha[i]
            if a == 0.0:
                pg = min(g, 0.0)
            elif a == upper[i]:
                pg = max(g, 0.0)
            else:
                pg = g
            max_pg = max(max_pg, abs(pg))
            if pg != 0.0 and q[i] > 0:
                a_new = min(max(a - g / q[i], 0.0), upper[i])
                wa += (a_new - a) * y[i] * xi
                alpha[i] = a_new
        obj = hinge_objective(wa[:-1], float(wa[-1]), X, y, c, lam)
        if not np.isfinite(obj):
            raise FloatingPointError("non-finite training objective")
        if obj < best_obj:
            best_w, best_obj = wa.copy(), obj
        if max_pg < tol:
            break
    return LinearModel(best_w[:-1].copy(), float(best_w[-1]), lam, initial, best_obj)


def mine_negatives(model: LinearModel, d: Dataset, margin: float = 1.0,
                   exclude: Iterable[int] = ()) -> list[int]:
    """Negative-image patches scoring above ``-margin``, minus ``exclude``."""
    skip = set(exclude)
    ids = [pid for pid in d.negative_patch_ids() if pid not in skip]
    if not ids:
        return []
    scores = model.score(d.features[[d.index_of(pid) for pid in ids]])
    return [pid for pid, s in zip(ids, scores) if s > -margin]


def train_with_mining(ts: TrainingSet, d: Dataset, lam: float = DEFAULT_LAMBDA,
                      epochs: int = DEFAULT_EPOCHS, seed: int = 0, margin: float = 1.0,
                      rounds: int = DEFAULT_MINING_ROUNDS, init_negatives: int = 100
                      ) -> tuple[LinearModel, TrainingSet]:
    """Train, add violating negative-image patches, retrain; until none are new.

    The cache starts with ``init_negatives`` negative-image patches drawn with
    ``seed``. Every negative already in ``ts`` (e.g. hard negatives from
    positive images) stays in every round.
    """
    ts = TrainingSet(list(ts.examples))
    pool = d.negative_patch_ids()
    have = ts.negative_patch_ids()
    rng = np.random.default_rng(seed)
    if pool:
        start = rng.permutation(len(pool))[:min(init_negatives, len(pool))]
        for i in sorted(start):
            pid = pool[i]
            if pid not in have:
                ts.add(Example(d.feature(pid), -1, MINED_NEGATIVE, d.image_of(pid), pid))
                have.add(pid)
    model = train_svm(ts, lam, epochs, seed)
    for _ in range(rounds):
        new = mine_negatives(model, d, margin, exclude=have)
        if not new:
            break
        for pid in new:
            ts.add(Example(d.feature(pid), -1, MINED_NEGATIVE, d.image_of(pid), pid))
            have.add(pid)
        model = train_svm(ts, lam, epochs, seed)
    return model, ts


def mine_positives(model: LinearModel, d: Dataset, remaining: Iterable[int],
                   exclude: Iterable[int] = ()) -> dict[int, Detection]:
    """Highest-scoring candidate per image (lowest patch id on ties)."""
    skip = set(exclude)
    out = {}
    for img in sorted(set(remaining)):
        if img not in d.images or not d.images[img].is_positive:
            raise ValueError(f"image {img} is not a positive image")
        ids = sorted(pid for pid in d.patches_in(img) if pid not in skip)
        if not ids:
            log.warning("image %s has no candidate patches; skipped", img)
            continue
        scores = model.score(d.features[[d.index_of(pid) for pid in ids]])
        j = int(np.argmax(scores))
        out[img] = Detection(img, d.box(ids[j]), float(scores[j]), ids[j])
    return out


def relocalize(model: LinearModel, d: Dataset, ts: TrainingSet) -> TrainingSet:
    """Move every image-bound positive to its image's argmax patch (negatives excluded)."""
    negs = ts.negative_patch_ids()
    imgs = [e.image_id for e in ts.positives if e.image_id is not None]
    best = mine_positives(model, d, imgs, exclude=negs)
    out = TrainingSet()
    for e in ts.examples:
        if e.label > 0 and e.image_id is not None and e.image_id in best:
            det = best[e.image_id]
            e = Example(d.feature(det.patch_id), 1, e.source, e.image_id, det.patch_id)
        out.add(e)
    return out


@dataclass
class LatentHistory:
    models: list[LinearModel] = field(default_factory=list)
    latent: list[dict[int, int]] = field(default_factory=list)


def lsvm_rounds(init: TrainingSet, d: Dataset, rounds: int = DEFAULT_ROUNDS,
                lam: float = DEFAULT_LAMBDA, epochs: int = DEFAULT_EPOCHS, seed: int = 0,
                history: Optional[LatentHistory] = None) -> LinearModel:
    """Alternate detector training with latent re-localization of the positives.

    ``rounds=1`` is a single training pass. Negative mining runs inside every
    training pass.
    """
    if rounds < 1:
        raise ValueError("need at least one round")
    ts = init
    model, ts = train_with_mining(ts, d, lam, epochs, seed)
    if history is not None:
        history.models.append(model)
        history.latent.append(_latent_map(ts))
    for _ in range(rounds - 1):
        ts = relocalize(model, d, ts)
        model, ts = train_with_mining(ts, d, lam, epochs, seed)
        if history is not None:
            history.models.append(model)
            history.latent.append(_latent_map(ts))
    return model


def _latent_map(ts: TrainingSet) -> dict[int, int]:
    return {e.image_id: e.patch_id for e in ts.positives
            if e.image_id is not None and e.patch_id is not None}


def nms(dets: Sequence[Detection], iou_max: float) -> list[Detection]:
    order = sorted(dets, key=lambda x: (-x.score, x.image_id, x.box))
    kept: list[Detection] = []
    for det in order:
        if all(k.image_id != det.image_id or iou(k.box, det.box) <= iou_max for k in kept):
            kept.append(det)
    return kept


def detect(model: LinearModel, d: Dataset, images: Optional[Iterable[int]] = None,
           nms_iou: Optional[float] = 0.3) -> list[Detection]:
    """Score every candidate patch, suppress overlaps per image, rank by score."""
    images = sorted(d.images) if images is None else sorted(images)
    scores = model.score(d.features)
    out: list[Detection] = []
    for img in images:
        dets = [Detection(img, d.box(pid), float(scores[d.index_of(pid)]), pid)
                for pid in d.patches_in(img)]
        out.extend(nms(dets, nms_iou) if nms_iou is not None else dets)
    out.sort(key=lambda x: (-x.score, x.image_id, x.box))
    return out


def evaluate_corloc(estimates: Mapping[int, Box], gt: Mapping[int, Box],
                    iou_min: float = 0.5) -> float:
    """Fraction of images (present in both maps) whose estimate has IoU >= ``iou_min``."""
    keys = sorted(set(estimates) & set(gt))
    if not keys:
        raise ValueError("estimates and ground truth share no images")
    hits = sum(iou(estimates[k], gt[k]) >= iou_min for k in keys)
    return hits / len(keys)


def precision_recall(dets: Sequence[Detection], gt: Sequence[tuple[int, Box]],
                     iou_min: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    if not gt:
        raise ValueError("average precision needs at least one ground-truth box")
    by_img: dict[int, list[Box]] = {}
    for img, b in gt:
        by_img.setdefault(img, []).append(b)
    used = {img: [False] * len(bs) for img, bs in by_img.items()}
    tp = np.zeros(len(dets))
    for i, det in enumerate(dets):
        boxes = by_img.get(det.image_id, [])
        if not boxes:
            continue
        ovs = [iou(det.box, b) for b in boxes]
        j = int(np.argmax(ovs))
        if ovs[j] >= iou_min and not used[det.image_id][j]:
            used[det.image_id][j] = True
            tp[i] = 1.0
    ctp = np.cumsum(tp)
    recall = ctp / len(gt)
    precision = ctp / np.arange(1, len(dets) + 1)
    return precision, recall


def evaluate_ap(dets: Sequence[Detection], gt: Sequence[tuple[int, Box]],
                iou_min: float = 0.5) -> float:
    """All-point interpolated average precision (not the 11-point variant).

    ``dets`` are ranked by descending score; equal scores keep their order.
    """
    dets = sorted(dets, key=lambda x: -x.score)
    precision, recall = precision_recall(dets, gt, iou_min)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    idx = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))
