"""Seeded synthetic datasets with a planted two-part object.

Each positive image holds one object made of two overlapping part boxes
(``part_a``, ``part_b``, given in object coordinates at scale 1). The planted
part patches carry their prototype feature plus Gaussian noise. All other
candidate boxes get a feature that mixes the prototypes by how much of each
part they cover, plus a clutter term proportional to the fraction of the box
that is not object::

    f(c) = cov_a(c) * proto_a + cov_b(c) * proto_b + (1 - fill(c)) * (clutter + r_c) + noise

where ``r_c`` is an independent isotropic draw per box. Negative images only
contain such clutter boxes. Prototypes depend on ``seed`` alone, so the
``train`` and ``test`` splits of one spec share them. With ``normalize`` every
feature row is scaled to unit length after generation.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from typing import Optional

import numpy as np

from .errors import DataError
from .features import NEGATIVE, POSITIVE, Dataset, ImageInfo, PatchRecord
from .geom import Box, intersect, intersection_area, union_bbox

SPLITS = {"train": 1, "test": 2}


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    n_positive: int = 8
    n_negative: int = 8
    image_width: float = 480.0
    image_height: float = 360.0
    dim: int = 32
    sigma: float = 0.0
    part_a: tuple[float, float, float, float] = (0.0, 0.0, 85.0, 85.0)
    part_b: tuple[float, float, float, float] = (21.0, 64.0, 106.0, 149.0)
    strength_a: float = 1.0
    strength_b: float = 1.0
    clutter: float = 1.0
    clutter_spread: float = 1.0
    offset_jitter: float = 0.0
    scale_jitter: float = 0.0
    aspect_jitter: float = 0.0
    object_proposals: int = 12
    proposal_jitter: float = 0.1
    context: float = 1.4
    distractors: int = 10
    normalize: bool = False

    def validate(self) -> None:
        if self.n_positive < 0 or self.n_negative < 0:
            raise DataError("image counts must be non-negative")
        if self.dim < 4:
            raise DataError("feature dimension must be at least 4")
        if self.sigma < 0 or self.offset_jitter < 0:
            raise DataError("noise levels must be non-negative")
        if not 0 <= self.scale_jitter < 1 or not 0 <= self.aspect_jitter < 1:
            raise DataError("scale/aspect jitter must lie in [0, 1)")
        # prototypes are unit vectors scaled by their strength; keep noise well below that
        if self.sigma * 4 >= min(self.strength_a, self.strength_b):
            raise DataError("sigma too large: prototypes would not be separable")
        for part in (self.part_a, self.part_b):
            Box.from_ltrb(part)
        obj = self.object_extent(1.0, 1.0)
        if (obj.width + self.offset_jitter * 2 > self.image_width
                or obj.height + self.offset_jitter * 2 > self.image_height):
            raise DataError("infeasible geometry: object does not fit in the image")

    def object_extent(self, scale: float, aspect: float) -> Box:
        a, b = Box.from_ltrb(self.part_a), Box.from_ltrb(self.part_b)
        u = union_bbox(a, b)
        hi_s = scale * (1 + self.scale_jitter)
        hi_v = aspect * (1 + self.aspect_jitter)
        return Box(0.0, u.x_right * hi_s * hi_v + 2 * self.offset_jitter,
                   0.0, u.y_bottom * hi_s + 2 * self.offset_jitter)

    @classmethod
    def from_dict(cls, obj: dict) -> "SynthSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise DataError(f"unknown synth spec fields: {sorted(unknown)}")
        kw = dict(obj)
        for key in ("part_a", "part_b"):
            if key in kw:
                kw[key] = tuple(float(x) for x in kw[key])
        return cls(**kw)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["part_a"] = list(self.part_a)
        out["part_b"] = list(self.part_b)
        return out


def load_preset(name: str) -> SynthSpec:
    text = resources.files("partconf").joinpath("presets", f"{name}.json").read_text()
    return SynthSpec.from_dict(json.loads(text))


@dataclass
class SynthResult:
    dataset: Dataset
    ground_truth: dict[int, Box]
    planted: dict = field(default_factory=dict)


def _unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


def prototypes(spec: SynthSpec) -> dict[str, np.ndarray]:
    rng = np.random.default_rng([spec.seed, 0])
    a, b, g = (_unit(rng, spec.dim) for _ in range(3))
    return {"a": spec.strength_a * a, "b": spec.strength_b * b, "clutter": spec.clutter * g}


def _mixed_feature(box: Box, parts: Optional[tuple[Box, Box]], protos, spec, rng) -> np.ndarray:
    r = rng.normal(size=spec.dim) * (spec.clutter_spread / math.sqrt(spec.dim))
    noise = rng.normal(size=spec.dim) * spec.sigma
    if parts is None or box.area <= 0:
        return protos["clutter"] + r + noise
    a, b = parts
    ia, ib = intersection_area(box, a), intersection_area(box, b)
    ab = intersect(a, b)
    iab = intersection_area(box, ab) if ab is not None else 0.0
    fill = min(1.0, (ia + ib - iab) / box.area)
    return (ia / a.area) * protos["a"] + (ib / b.area) * protos["b"] \
        + (1.0 - fill) * (protos["clutter"] + r) + noise


def _random_box(rng, w_img, h_img, min_side=20.0) -> Box:
    w = rng.uniform(min_side, w_img / 2)
    h = rng.uniform(min_side, h_img / 2)
    x = rng.uniform(0, w_img - w)
    y = rng.uniform(0, h_img - h)
    return Box(round(x, 2), round(x + w, 2), round(y, 2), round(y + h, 2))


def _jittered(rng, template: Box, frac: float, w_img, h_img) -> Box:
    dw, dh = template.width * frac, template.height * frac
    l = min(max(template.x_left + rng.uniform(-dw, dw), 0.0), w_img - 2)
    r = min(max(template.x_right + rng.uniform(-dw, dw), l + 2), w_img)
    t = min(max(template.y_top + rng.uniform(-dh, dh), 0.0), h_img - 2)
    b = min(max(template.y_bottom + rng.uniform(-dh, dh), t + 2), h_img)
    return Box(round(l, 2), round(r, 2), round(t, 2), round(b, 2))


def _grow(box: Box, factor: float, w_img, h_img) -> Box:
    cx, cy = box.center
    hw, hh = 0.5 * box.width * factor, 0.5 * box.height * factor
    return Box(max(0.0, cx - hw), min(w_img, cx + hw), max(0.0, cy - hh), min(h_img, cy + hh))


def _place_object(spec: SynthSpec, rng) -> tuple[Box, Box]:
    s = 1.0 + rng.uniform(-spec.scale_jitter, spec.scale_jitter) if spec.scale_jitter else 1.0
    v = 1.0 + rng.uniform(-spec.aspect_jitter, spec.aspect_jitter) if spec.aspect_jitter else 1.0
    pa, pb = Box.from_ltrb(spec.part_a), Box.from_ltrb(spec.part_b)
    if spec.offset_jitter:
        jx, jy = rng.uniform(-spec.offset_jitter, spec.offset_jitter, size=2)
    else:
        jx = jy = 0.0
    ext = union_bbox(pa, pb)
    span_x = ext.x_right * s * v + abs(jx)
    span_y = ext.y_bottom * s + abs(jy)
    if span_x > spec.image_width or span_y > spec.image_height:
        raise DataError("infeasible geometry: parts exceed the image")
    # integer origin keeps zero-jitter coordinates exact
    ox = float(rng.integers(0, int(spec.image_width - span_x) + 1)) + max(0.0, -jx)
    oy = float(rng.integers(0, int(spec.image_height - span_y) + 1)) + max(0.0, -jy)

    def place(p: Box, dx=0.0, dy=0.0) -> Box:
        return Box(ox + p.x_left * s * v + dx, ox + p.x_right * s * v + dx,
                   oy + p.y_top * s + dy, oy + p.y_bottom * s + dy)

    return place(pa), place(pb, jx, jy)


def generate(spec: SynthSpec, split: str = "train") -> SynthResult:
    """Build one split: positives first (ids ``0..n_positive-1``), then negatives.

    Within a positive image the two planted part patches get the lowest patch ids.
    """
    spec.validate()
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    protos = prototypes(spec)
    rng = np.random.default_rng([spec.seed, SPLITS[split]])
    W, H = spec.image_width, spec.image_height
    images, patches, feats = [], [], []
    gt: dict[int, Box] = {}
    planted = {"part_a": {}, "part_b": {}}
    pid = 0
    for img in range(spec.n_positive + spec.n_negative):
        positive = img < spec.n_positive
        images.append(ImageInfo(img, W, H, POSITIVE if positive else NEGATIVE))
        parts = None
        if positive:
            a, b = _place_object(spec, rng)
            parts = (a, b)
            gt[img] = union_bbox(a, b)
            for key, box, proto in (("part_a", a, protos["a"]), ("part_b", b, protos["b"])):
                patches.append(PatchRecord(pid, img, box))
                feats.append(proto + rng.normal(size=spec.dim) * spec.sigma)
                planted[key][img] = pid
                pid += 1
            templates = [gt[img], a, b]
            if spec.context > 1.0:
                templates.append(_grow(gt[img], spec.context, W, H))
            for i in range(spec.object_proposals):
                box = _jittered(rng, templates[i % len(templates)], spec.proposal_jitter, W, H)
                patches.append(PatchRecord(pid, img, box))
                feats.append(_mixed_feature(box, parts, protos, spec, rng))
                pid += 1
        for _ in range(spec.distractors):
            box = _random_box(rng, W, H)
            patches.append(PatchRecord(pid, img, box))
            feats.append(_mixed_feature(box, parts, protos, spec, rng))
            pid += 1
    mat = np.asarray(feats, dtype=np.float64).reshape(len(patches), spec.dim)
    if spec.normalize:
        norms = np.linalg.norm(mat, axis=1, keepdims=True)
        mat = np.where(norms > 0, mat / np.where(norms > 0, norms, 1.0), mat)
    mat = mat.astype(np.float32)
    planted["part_a_box"] = list(spec.part_a)
    planted["part_b_box"] = list(spec.part_b)
    return SynthResult(Dataset(images, patches, mat), gt, planted)
