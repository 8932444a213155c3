import numpy as np
import pytest

from partconf.cover import ConstraintGraph, CoverGraph
from partconf.features import NEGATIVE, POSITIVE, Dataset, ImageInfo, PatchRecord
from partconf.geom import Box


def make_dataset(images, dim=None, size=(200.0, 200.0)):
    """``images``: list of (label, [(box_ltrb, feature), ...]); ids assigned in order."""
    infos, patches, feats = [], [], []
    pid = 0
    for img, (label, items) in enumerate(images):
        infos.append(ImageInfo(img, size[0], size[1], label))
        for box, feat in items:
            patches.append(PatchRecord(pid, img, Box.from_ltrb(box)))
            feats.append(np.asarray(feat, dtype=np.float32))
            pid += 1
    dim = dim or (len(feats[0]) if feats else 2)
    mat = np.stack(feats) if feats else np.zeros((0, dim), np.float32)
    return Dataset(infos, patches, mat)


def random_dataset(rng, n_pos=4, n_neg=2, per_image=5, dim=6, size=200.0):
    images = []
    for i in range(n_pos + n_neg):
        items = []
        for _ in range(per_image):
            x, y = rng.uniform(0, size - 40, size=2)
            w, h = rng.uniform(10, 40, size=2)
            items.append(([round(x), round(y), round(x + w), round(y + h)],
                          rng.normal(size=dim)))
        images.append((POSITIVE if i < n_pos else NEGATIVE, items))
    return make_dataset(images, size=(size, size))


def random_cover(rng, n_v, n_u, p_edge=0.3, p_member=0.25, disjoint=False):
    """Random CoverGraph on ids ``0..n_v-1`` with universe ``100..100+n_u-1``."""
    universe = list(range(100, 100 + n_u))
    if disjoint:
        owner = rng.integers(0, n_v, size=n_u)
        gamma = {b: [u for u, o in zip(universe, owner) if o == b and rng.random() < 0.7]
                 for b in range(n_v)}
    else:
        gamma = {b: [u for u in universe if rng.random() < p_member] for b in range(n_v)}
    edges = [(a, b) for a in range(n_v) for b in range(a + 1, n_v) if rng.random() < p_edge]
    return CoverGraph.from_sets(gamma, universe), ConstraintGraph.from_edges(range(n_v), edges)


def random_box(rng, lo=0.0, hi=100.0, min_side=1.0):
    x1, x2 = sorted(rng.uniform(lo, hi, size=2))
    y1, y2 = sorted(rng.uniform(lo, hi, size=2))
    return Box(x1, max(x2, x1 + min_side), y1, max(y2, y1 + min_side))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
