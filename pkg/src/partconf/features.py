"""Patch storage and the per-image best-match neighborhoods.

Every patch from a positive image gets a neighborhood: its single closest
patch in each *other* image (either label), of which only the ``K`` closest
are kept.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DataError, InsufficientImagesError
from .geom import Box

POSITIVE = "positive"
NEGATIVE = "negative"


@dataclass(frozen=True)
class ImageInfo:
    image_id: int
    width: float
    height: float
    label: str

    def __post_init__(self):
        if self.label not in (POSITIVE, NEGATIVE):
            raise DataError(f"image {self.image_id}: bad label {self.label!r}")

    @property
    def is_positive(self) -> bool:
        return self.label == POSITIVE


@dataclass(frozen=True)
class PatchRecord:
    patch_id: int
    image_id: int
    box: Box


@dataclass(frozen=True)
class Neighborhood:
    owner: int
    neighbors: tuple[tuple[int, float], ...]

    @property
    def ids(self) -> list[int]:
        return [pid for pid, _ in self.neighbors]


class Dataset:
    """Images, their candidate patches and one feature row per patch.

    ``features[i]`` belongs to ``patches[i]``. The object is treated as
    immutable once built.
    """

    def __init__(self, images: Iterable[ImageInfo], patches: Sequence[PatchRecord],
                 features: np.ndarray, check_extent: bool = True):
        self.images: dict[int, ImageInfo] = {}
        for im in images:
            if im.image_id in self.images:
                raise DataError(f"duplicate image_id {im.image_id}")
            self.images[im.image_id] = im
        self.patches = list(patches)
        feats = np.asarray(features, dtype=np.float32)
        if feats.ndim != 2 or feats.shape[0] != len(self.patches):
            raise DataError(f"feature matrix shape {feats.shape} does not match "
                            f"{len(self.patches)} patches")
        if not np.all(np.isfinite(feats)):
            raise DataError("non-finite feature values")
        self.features = feats
        self.features.setflags(write=False)

        self._index: dict[int, int] = {}
        self._by_image: dict[int, list[int]] = {i: [] for i in self.images}
        for i, p in enumerate(self.patches):
            if p.patch_id in self._index:
                raise DataError(f"duplicate patch_id {p.patch_id}")
            im = self.images.get(p.image_id)
            if im is None:
                raise DataError(f"patch {p.patch_id} references unknown image {p.image_id}")
            if check_extent and not (p.box.x_left >= 0 and p.box.y_top >= 0
                                     and p.box.x_right <= im.width
                                     and p.box.y_bottom <= im.height):
                raise DataError(f"patch {p.patch_id} lies outside image {p.image_id}")
            self._index[p.patch_id] = i
            self._by_image[p.image_id].append(p.patch_id)

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def __len__(self) -> int:
        return len(self.patches)

    def index_of(self, patch_id: int) -> int:
        try:
            return self._index[patch_id]
        except KeyError:
            raise KeyError(f"unknown patch_id {patch_id}") from None

    def patch(self, patch_id: int) -> PatchRecord:
        return self.patches[self.index_of(patch_id)]

    def box(self, patch_id: int) -> Box:
        return self.patch(patch_id).box

    def image_of(self, patch_id: int) -> int:
        return self.patch(patch_id).image_id

    def feature(self, patch_id: int) -> np.ndarray:
        return self.features[self.index_of(patch_id)]

    def patches_in(self, image_id: int) -> list[int]:
        return list(self._by_image[image_id])

    def is_positive_patch(self, patch_id: int) -> bool:
        return self.images[self.image_of(patch_id)].is_positive

    @property
    def positive_images(self) -> list[int]:
        return sorted(i for i, im in self.images.items() if im.is_positive)

    @property
    def negative_images(self) -> list[int]:
        return sorted(i for i, im in self.images.items() if not im.is_positive)

    def positive_patch_ids(self) -> list[int]:
        return sorted(p.patch_id for p in self.patches if self.images[p.image_id].is_positive)

    def negative_patch_ids(self) -> list[int]:
        return sorted(p.patch_id for p in self.patches
                      if not self.images[p.image_id].is_positive)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.images == other.images and self.patches == other.patches
                and np.array_equal(self.features, other.features))


def default_k(n_positive: int) -> int:
    """Neighborhood size ``|P| // 2``, never below 1."""
    return max(1, n_positive // 2)


def distance(a, b) -> float:
    """Cosine distance ``1 - <a/|a|, b/|b|>``; 1 when either vector is all-zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = math.sqrt(float(np.dot(a, a)))
    nb = math.sqrt(float(np.dot(b, b)))
    if na == 0.0 or nb == 0.0:
        return 1.0
    d = 1.0 - float(np.dot(a / na, b / nb))
    return min(max(d, 0.0), 2.0)


def normalize_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.sqrt((x * x).sum(axis=1))
    out = np.zeros_like(x)
    nz = norms > 0
    out[nz] = x[nz] / norms[nz, None]
    return out


def thread_count(workers: Optional[int] = None) -> int:
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("PARTCONF_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def _check_dataset(d: Dataset, k: int) -> None:
    if k < 1:
        raise ValueError(f"K must be >= 1, got {k}")
    if len(d.images) < 2:
        raise InsufficientImagesError("insufficient images: need at least 2")
    if not d.positive_images:
        raise DataError("P nonempty required: dataset has no positive images")


class _Index:
    # patches sorted by (image_id, patch_id) so per-image groups are contiguous
    def __init__(self, d: Dataset):
        order = sorted(range(len(d.patches)),
                       key=lambda i: (d.patches[i].image_id, d.patches[i].patch_id))
        self.order = np.asarray(order, dtype=np.int64)
        self.pids = np.asarray([d.patches[i].patch_id for i in order], dtype=np.int64)
        self.imgs = np.asarray([d.patches[i].image_id for i in order], dtype=np.int64)
        self.unit = normalize_rows(d.features)[self.order]
        self.zero = ~np.any(self.unit != 0, axis=1)
        if len(self.imgs):
            starts = np.flatnonzero(np.r_[True, self.imgs[1:] != self.imgs[:-1]])
        else:
            starts = np.zeros(0, dtype=np.int64)
        self.starts = starts
        self.group_img = self.imgs[starts]


def _query(ix: _Index, qpos: int, k: int) -> tuple[tuple[int, float], ...]:
    q = ix.unit[qpos]
    if ix.zero[qpos]:
        dist = np.ones(len(ix.pids))
    else:
        dist = 1.0 - (ix.unit * q).sum(axis=1)
        dist[ix.zero] = 1.0
        np.clip(dist, 0.0, 2.0, out=dist)
    own = ix.imgs[qpos]
    # per-image minimum, ties on lowest patch_id (first in the sorted group)
    mins = np.minimum.reduceat(dist, ix.starts)
    best = []
    bounds = list(ix.starts) + [len(dist)]
    for g, img in enumerate(ix.group_img):
        if img == own:
            continue
        s, e = bounds[g], bounds[g + 1]
        j = s + int(np.argmax(dist[s:e] == mins[g]))
        best.append((float(dist[j]), int(img), int(ix.pids[j])))
    best.sort()
    return tuple((pid, dd) for dd, _, pid in best[:k])


def build_neighborhoods(d: Dataset, k: int, workers: Optional[int] = None
                        ) -> dict[int, Neighborhood]:
    """Neighborhood of every positive-image patch.

    Output is independent of the order of ``d.patches``: ties are resolved on
    ``(distance, image_id, patch_id)``. ``workers`` (default: the
    ``PARTCONF_THREADS`` environment variable, else 1) fans queries out over
    threads; the merge is keyed by patch id.
    """
    _check_dataset(d, k)
    ix = _Index(d)
    pos_images = set(d.positive_images)
    queries = [qpos for qpos in range(len(ix.pids)) if int(ix.imgs[qpos]) in pos_images]

    def run(chunk):
        return [(int(ix.pids[q]), _query(ix, q, k)) for q in chunk]

    n = thread_count(workers)
    if n == 1 or len(queries) < 2:
        results = run(queries)
    else:
        chunks = [queries[i::n] for i in range(n)]
        with ThreadPoolExecutor(max_workers=n) as pool:
            results = [r for part in pool.map(run, chunks) for r in part]
    return {pid: Neighborhood(pid, nb) for pid, nb in sorted(results)}


def neighborhoods_bruteforce(d: Dataset, k: int) -> dict[int, Neighborhood]:
    """Exhaustive double loop over all foreign patches; reference for tests."""
    _check_dataset(d, k)
    out = {}
    for q in d.patches:
        if not d.images[q.image_id].is_positive:
            continue
        fq = d.feature(q.patch_id)
        best: dict[int, tuple[float, int]] = {}
        for p in d.patches:
            if p.image_id == q.image_id:
                continue
            dist = distance(fq, d.feature(p.patch_id))
            cur = best.get(p.image_id)
            if cur is None or (dist, p.patch_id) < cur:
                best[p.image_id] = (dist, p.patch_id)
        ranked = sorted((dist, img, pid) for img, (dist, pid) in best.items())
        out[q.patch_id] = Neighborhood(q.patch_id, tuple((pid, dist) for dist, _, pid in ranked[:k]))
    return dict(sorted(out.items()))


def neighborhoods_match(a: dict[int, Neighborhood], b: dict[int, Neighborhood],
                        tol: float = 1e-9) -> bool:
    """Same owners and neighbor ids in the same order; distances equal to ``tol``.

    The vectorized and scalar distance paths can differ in the last ulp.
    """
    if set(a) != set(b):
        return False
    for pid, na in a.items():
        nb = b[pid]
        if na.ids != nb.ids:
            return False
        if any(abs(x - y) > tol for (_, x), (_, y) in zip(na.neighbors, nb.neighbors)):
            return False
    return True
