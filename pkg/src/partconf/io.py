"""Manifest / feature-file reading and writing, plus deterministic JSON output.

Feature file layout (little-endian)::

    b"PCFV"  u32 version  u32 dim  u64 count  count*dim float32 (row-major)

Row ``i`` belongs to the ``i``-th patch of the manifest, counting patches in
file order across image lines. The manifest is JSON-lines: one header line
``{"format": "partconf-manifest", "version": 1, "feature_file": ..., "dim": ...}``
followed by one line per image.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Union

import numpy as np

from .configs import Cluster, ConfigLabel, Configuration
from .errors import SchemaError
from .features import Dataset, ImageInfo, PatchRecord
from .geom import Box
from .pipeline import NegativeRegion

MAGIC = b"PCFV"
FEATURE_VERSION = 1
MANIFEST_FORMAT = "partconf-manifest"
_HEADER = struct.Struct("<4sIIQ")

PathLike = Union[str, Path]


def write_features(path: PathLike, features: np.ndarray) -> None:
    feats = np.ascontiguousarray(features, dtype="<f4")
    if feats.ndim != 2:
        raise ValueError("features must be a 2-D array")
    count, dim = feats.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FEATURE_VERSION, dim, count))
        fh.write(feats.tobytes(order="C"))


def read_features(path: PathLike) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise SchemaError(f"{path}: truncated feature header")
    magic, version, dim, count = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise SchemaError(f"{path}: bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise SchemaError(f"{path}: unsupported feature file version {version}")
    expected = _HEADER.size + 4 * dim * count
    if len(raw) != expected:
        raise SchemaError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size, count=dim * count)
    return data.reshape(count, dim).astype(np.float32)


def _num(x: float) -> Any:
    # integral floats serialize as ints so manifests stay readable
    return int(x) if float(x).is_integer() else float(x)


def box_json(b: Box) -> list:
    return [_num(c) for c in b.to_ltrb()]


def write_dataset(manifest_path: PathLike, d: Dataset, feature_name: str = "features.pcfv") -> None:
    manifest_path = Path(manifest_path)
    order = []
    lines = [{"format": MANIFEST_FORMAT, "version": 1, "feature_file": feature_name,
              "dim": d.dim}]
    for image_id in sorted(d.images):
        im = d.images[image_id]
        patches = []
        for pid in d.patches_in(image_id):
            order.append(d.index_of(pid))
            patches.append({"patch_id": pid, "box": box_json(d.box(pid))})
        lines.append({"image_id": image_id, "width": _num(im.width), "height": _num(im.height),
                      "label": im.label, "patches": patches})
    with open(manifest_path, "w") as fh:
        for line in lines:
            fh.write(dumps_line(line) + "\n")
    write_features(manifest_path.parent / feature_name, d.features[np.asarray(order, dtype=np.int64)]
                   if order else np.zeros((0, d.dim), np.float32))


def read_dataset(manifest_path: PathLike) -> Dataset:
    manifest_path = Path(manifest_path)
    with open(manifest_path) as fh:
        try:
            rows = [json.loads(line) for line in fh if line.strip()]
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{manifest_path}: invalid JSON line: {exc}") from exc
    if not rows or rows[0].get("format") != MANIFEST_FORMAT:
        raise SchemaError(f"{manifest_path}: missing manifest header line")
    header = rows[0]
    feats = read_features(manifest_path.parent / header["feature_file"])
    images, patches = [], []
    try:
        for row in rows[1:]:
            images.append(ImageInfo(int(row["image_id"]), float(row["width"]),
                                    float(row["height"]), row["label"]))
            for p in row["patches"]:
                patches.append(PatchRecord(int(p["patch_id"]), int(row["image_id"]),
                                           Box.from_ltrb(p["box"])))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"{manifest_path}: malformed image line: {exc}") from exc
    if feats.shape[0] != len(patches):
        raise SchemaError(f"{manifest_path}: {len(patches)} patches but "
                          f"{feats.shape[0]} feature rows")
    if "dim" in header and feats.shape[1] != header["dim"]:
        raise SchemaError(f"{manifest_path}: header dim {header['dim']} != {feats.shape[1]}")
    return Dataset(images, patches, feats)


def dumps(obj: Any) -> str:
    """Canonical JSON text: sorted keys, fixed separators, shortest float repr."""
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False)


def dumps_line(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def write_json(path: PathLike, obj: Any) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(obj) + "\n")


def read_json(path: PathLike) -> Any:
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON: {exc}") from exc


# --- stage payloads -------------------------------------------------------

def clusters_from_json(obj: Any) -> list:
    try:
        return [Cluster(int(c["cluster_id"]), int(c["rep_patch_id"]),
                        tuple(int(m) for m in c["members"]), int(c["coverage"]))
                for c in obj["clusters"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed clusters payload: {exc}") from exc


def configuration_json(cfg, d: Dataset) -> dict:
    images = [{"image_id": img, "b1": cfg.pairs[img][0], "b2": cfg.pairs[img][1],
               "foreground": box_json(cfg.foreground(d, img))}
              for img in cfg.images if img in cfg.pairs]
    return {"label": {"ci": cfg.label.ci, "cj": cfg.label.cj, "loc_bin": list(cfg.label.loc)},
            "images": images, "score": cfg.score}


def configuration_from_json(obj: Any):
    try:
        lab = obj["label"]
        label = ConfigLabel(int(lab["ci"]), int(lab["cj"]), tuple(int(x) for x in lab["loc_bin"]))
        pairs = {int(r["image_id"]): (int(r["b1"]), int(r["b2"])) for r in obj["images"]}
        return Configuration(label, tuple(sorted(pairs)), pairs, float(obj["score"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed configuration: {exc}") from exc


def estimates_json(estimates) -> list:
    return [{"image_id": img, "foreground": box_json(fg),
             "pair": list(pair) if pair is not None else None}
            for img, (fg, pair) in sorted(estimates.items())]


def estimates_from_json(rows: Any) -> dict:
    try:
        return {int(r["image_id"]): (Box.from_ltrb(r["foreground"]),
                                     tuple(int(x) for x in r["pair"]) if r["pair"] is not None else None)
                for r in rows}
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed foreground estimates: {exc}") from exc


def negatives_json(regions) -> list:
    by_img: dict[int, list] = {}
    for r in regions:
        by_img.setdefault(r.image_id, []).append(
            {"box": box_json(r.box), "kind": r.kind, "shrunk": r.shrunk})
    return [{"image_id": img, "negatives": negs} for img, negs in sorted(by_img.items())]


def negatives_from_json(rows: Any) -> list:
    try:
        return [NegativeRegion(int(r["image_id"]), Box.from_ltrb(n["box"]), str(n["kind"]),
                               bool(n["shrunk"]))
                for r in rows for n in r["negatives"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed hard negatives: {exc}") from exc


def ground_truth_json(gt) -> dict:
    return {str(img): box_json(b) for img, b in sorted(gt.items())}


def ground_truth_from_json(obj: Any) -> dict:
    try:
        return {int(k): Box.from_ltrb(v) for k, v in obj.items()}
    except (AttributeError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed ground truth: {exc}") from exc


def detection_json(det) -> dict:
    return {"image_id": det.image_id, "box": box_json(det.box), "score": det.score}
