"""Stage functions shared by the CLI and the end-to-end tests."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from .configs import (DEFAULT_ALPHA, DEFAULT_CELL, DEFAULT_MIN_COMPONENT, DEFAULT_WIDTHS,
                      Cluster, ConfigGraph, MiningResult, build_config_graph,
                      clusters_from_selection, foreground_estimates, mine_configurations)
from .cover import (ConstraintGraph, CoverGraph, Selection, build_cover_graph,
                    constraint_graph_from_cover, default_theta, greedy_select)
from .detector import (DEFAULT_EPOCHS, DEFAULT_LAMBDA, DEFAULT_ROUNDS, FOREGROUND,
                       HARD_NEGATIVE, MINED_POSITIVE, NEIGHBOR_NEGATIVE, Example,
                       LatentHistory, LinearModel, TrainingSet, lsvm_rounds, mine_positives,
                       train_with_mining)
from .features import Dataset, Neighborhood, build_neighborhoods, default_k
from .geom import Box, iou
from .hardneg import (DEFAULT_MAX_RATIO, DEFAULT_NEIGHBOR_IOU, generate_hard_negatives,
                      neighboring_negatives)

NEGATIVE_MODES = ("discovered", "neighboring", "none")


@dataclass
class Discovery:
    k: int
    theta: int
    neighborhoods: dict[int, Neighborhood]
    cover: CoverGraph
    constraint: ConstraintGraph
    selection: Selection
    clusters: list[Cluster]


def discover(d: Dataset, k: Optional[int] = None, theta: Optional[int] = None,
             iou_min: float = 0.5, max_clusters: Optional[int] = None,
             workers: Optional[int] = None) -> Discovery:
    if k is None:
        k = default_k(len(d.positive_images))
    if theta is None:
        theta = default_theta(k)
    nbs = build_neighborhoods(d, k, workers=workers)
    g = build_cover_graph(nbs, d)
    c = constraint_graph_from_cover(g, d, theta, iou_min)
    sel = greedy_select(g, c, max_clusters)
    return Discovery(k, theta, nbs, g, c, sel, clusters_from_selection(sel, g))


@dataclass
class Mining:
    graph: ConfigGraph
    result: MiningResult
    estimates: dict[int, tuple[Box, Optional[tuple[int, int]]]]


def mine(d: Dataset, clusters: Sequence[Cluster], widths=DEFAULT_WIDTHS, cell=DEFAULT_CELL,
         alpha=DEFAULT_ALPHA, min_component=DEFAULT_MIN_COMPONENT) -> Mining:
    graph = build_config_graph(clusters, d, widths, cell)
    result = mine_configurations(graph, clusters, min_component, alpha)
    return Mining(graph, result, foreground_estimates(result, clusters, d, min_component))


def snap_to_patch(d: Dataset, image_id: int, box: Box) -> tuple[int, float]:
    """Candidate patch of ``image_id`` overlapping ``box`` best (lowest id on ties)."""
    best, best_iou = None, -1.0
    for pid in sorted(d.patches_in(image_id)):
        ov = iou(d.box(pid), box)
        if ov > best_iou:
            best, best_iou = pid, ov
    if best is None:
        raise ValueError(f"image {image_id} has no candidate patches")
    return best, best_iou


@dataclass
class NegativeRegion:
    image_id: int
    box: Box
    kind: str
    shrunk: bool = False


def negative_regions(d: Dataset, estimates: Mapping[int, tuple[Box, Optional[tuple[int, int]]]],
                     mode: str = "discovered", max_ratio: float = DEFAULT_MAX_RATIO,
                     neighbor_iou: float = DEFAULT_NEIGHBOR_IOU) -> list[NegativeRegion]:
    """Negatives taken from positive images under one of ``NEGATIVE_MODES``."""
    if mode not in NEGATIVE_MODES:
        raise ValueError(f"unknown negative mode {mode!r}")
    out: list[NegativeRegion] = []
    if mode == "none":
        return out
    for img, (fg, pair) in sorted(estimates.items()):
        if mode == "discovered":
            if pair is None:
                continue
            hn = generate_hard_negatives(d.box(pair[0]), d.box(pair[1]), fg, max_ratio)
            out.extend(NegativeRegion(img, s.box, s.kind, s.shrunk) for s in hn.strips)
        else:
            boxes = [d.box(pid) for pid in sorted(d.patches_in(img))]
            out.extend(NegativeRegion(img, b, "neighboring")
                       for b in neighboring_negatives(fg, boxes, neighbor_iou))
    return out


def initial_training_set(d: Dataset, estimates: Mapping[int, tuple[Box, Optional[tuple[int, int]]]],
                         negatives: Sequence[NegativeRegion]) -> TrainingSet:
    """Foreground estimates as positives, region negatives snapped to candidate patches.

    A negative region that snaps onto the same patch as its image's positive
    is dropped, keeping the positive and negative id sets disjoint.
    """
    ts = TrainingSet()
    pos_ids = {}
    for img, (fg, _) in sorted(estimates.items()):
        pid, _ = snap_to_patch(d, img, fg)
        pos_ids[img] = pid
        ts.add(Example(d.feature(pid), 1, FOREGROUND, img, pid))
    seen = set()
    for reg in negatives:
        pid, _ = snap_to_patch(d, reg.image_id, reg.box)
        if pid == pos_ids.get(reg.image_id) or pid in seen:
            continue
        seen.add(pid)
        src = NEIGHBOR_NEGATIVE if reg.kind == "neighboring" else HARD_NEGATIVE
        ts.add(Example(d.feature(pid), -1, src, reg.image_id, pid))
    ts.validate()
    return ts


@dataclass
class TrainResult:
    model: LinearModel
    initial_model: LinearModel
    training_set: TrainingSet
    mined_positives: dict[int, int] = field(default_factory=dict)
    history: LatentHistory = field(default_factory=LatentHistory)


def train_detector(d: Dataset, ts: TrainingSet, lam: float = DEFAULT_LAMBDA,
                   epochs: int = DEFAULT_EPOCHS, rounds: int = DEFAULT_ROUNDS,
                   seed: int = 0) -> TrainResult:
    """Initial detector, positive mining over the remaining positives, latent rounds."""
    initial, _ = train_with_mining(ts, d, lam, epochs, seed)
    have = {e.image_id for e in ts.positives}
    remaining = [img for img in d.positive_images if img not in have]
    mined = mine_positives(initial, d, remaining, exclude=ts.negative_patch_ids())
    aug = TrainingSet(list(ts.examples))
    for img, det in mined.items():
        aug.add(Example(d.feature(det.patch_id), 1, MINED_POSITIVE, img, det.patch_id))
    aug.validate()
    hist = LatentHistory()
    model = lsvm_rounds(aug, d, rounds, lam, epochs, seed, history=hist)
    return TrainResult(model, initial, aug, {i: det.patch_id for i, det in mined.items()}, hist)
