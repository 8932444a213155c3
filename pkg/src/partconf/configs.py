"""Frequent two-cluster configurations across positive images.

For every pair of positive images and every pair of clusters present in both,
each cross-image correspondence of a cluster's patches yields a point in the
4-D transform space ``(dx, dy, scale, aspect)``. Two correspondences that
land in the same transform bin, and whose in-image patch pairs sit at the same
relative-location bin in both images, produce a labeled edge of the image
multigraph. Same-label connected components are the mined configurations.
"""
from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Optional, Sequence

from .cover import CoverGraph, Selection
from .features import Dataset
from .geom import Box, union_bbox

DEFAULT_WIDTHS = (30.0, 30.0, 1.0, 1.0)
DEFAULT_CELL = 0.5
DEFAULT_ALPHA = 0.5
DEFAULT_MIN_COMPONENT = 3


@dataclass(frozen=True)
class Cluster:
    cluster_id: int
    rep: int
    members: tuple[int, ...]
    coverage: int


@dataclass(frozen=True, order=True)
class ConfigLabel:
    ci: int
    cj: int
    loc: tuple[int, int]

    def __post_init__(self):
        if not self.ci < self.cj:
            raise ValueError(f"label clusters must satisfy ci < cj, got {self.ci}, {self.cj}")


@dataclass(frozen=True, order=True)
class ConfigEdge:
    i1: int
    i2: int
    label: ConfigLabel
    # ((patch of ci in i1, patch of ci in i2), (patch of cj in i1, patch of cj in i2))
    corr: tuple[tuple[int, int], tuple[int, int]]


@dataclass
class ConfigGraph:
    nodes: tuple[int, ...]
    edges: list[ConfigEdge]


@dataclass
class Configuration:
    label: ConfigLabel
    images: tuple[int, ...]
    pairs: dict[int, tuple[int, int]]
    score: float

    def foreground(self, d: Dataset, image_id: int) -> Box:
        b1, b2 = self.pairs[image_id]
        return foreground_box(d.box(b1), d.box(b2))


@dataclass
class MiningResult:
    configurations: list[Configuration]
    fallback_cluster: Optional[int] = None

    @property
    def best(self) -> Optional[Configuration]:
        return self.configurations[0] if self.configurations else None


def clusters_from_selection(sel: Selection, g: CoverGraph) -> list[Cluster]:
    """One cluster per selected patch: the patch itself plus its coverage set."""
    return [Cluster(i, b, tuple([b] + sorted(g.gamma[b] - {b})), len(g.gamma[b]))
            for i, b in enumerate(sel.ids)]


def compute_transform(src: Box, dst: Box) -> tuple[float, float, float, float]:
    if src.is_degenerate or dst.is_degenerate:
        raise ValueError("transform needs non-degenerate boxes")
    (sx, sy), (tx, ty) = src.center, dst.center
    scale = math.sqrt(dst.area / src.area)
    aspect = (dst.width / dst.height) / (src.width / src.height)
    return (tx - sx, ty - sy, scale, aspect)


def bin_transform(t: Sequence[float], widths: Sequence[float] = DEFAULT_WIDTHS
                  ) -> tuple[int, int, int, int]:
    if len(widths) != 4 or any(w <= 0 for w in widths):
        raise ValueError(f"need four positive bin widths, got {widths}")
    return tuple(math.floor(v / w) for v, w in zip(t, widths))


def relative_location_bin(b1: Box, b2: Box, cell: float = DEFAULT_CELL) -> tuple[int, int]:
    """Center offset of ``b2`` from ``b1`` in units of ``sqrt(mean area)``, floor-binned."""
    if b1.is_degenerate or b2.is_degenerate:
        raise ValueError("relative location needs non-degenerate boxes")
    (x1, y1), (x2, y2) = b1.center, b2.center
    unit = math.sqrt(0.5 * (b1.area + b2.area))
    return (math.floor((x2 - x1) / unit / cell), math.floor((y2 - y1) / unit / cell))


def foreground_box(b1: Box, b2: Box) -> Box:
    return union_bbox(b1, b2)


def _members_by_image(clusters: Sequence[Cluster], d: Dataset) -> dict[int, dict[int, list[int]]]:
    pos = set(d.positive_images)
    out: dict[int, dict[int, list[int]]] = {}
    for c in clusters:
        per: dict[int, list[int]] = defaultdict(list)
        for pid in c.members:
            img = d.image_of(pid)
            if img in pos:
                per[img].append(pid)
        out[c.cluster_id] = {img: sorted(ids) for img, ids in per.items()}
    return out


def build_config_graph(clusters: Sequence[Cluster], d: Dataset,
                       widths: Sequence[float] = DEFAULT_WIDTHS,
                       cell: float = DEFAULT_CELL) -> ConfigGraph:
    """Labeled image multigraph; correspondences are hash-grouped by transform bin."""
    nodes = tuple(d.positive_images)
    mem = _members_by_image(clusters, d)
    cids = sorted(mem)
    edges: list[ConfigEdge] = []
    for i1, i2 in combinations(nodes, 2):
        present = [c for c in cids if i1 in mem[c] and i2 in mem[c]]
        if len(present) < 2:
            continue
        groups: dict[tuple, list[tuple[int, int, int]]] = defaultdict(list)
        for c in present:
            for a1 in mem[c][i1]:
                for a2 in mem[c][i2]:
                    key = bin_transform(compute_transform(d.box(a1), d.box(a2)), widths)
                    groups[key].append((c, a1, a2))
        for corrs in groups.values():
            for (ci, a1, a2), (cj, c1, c2) in combinations(corrs, 2):
                if ci == cj or a1 == c1 or a2 == c2:
                    continue
                if ci > cj:
                    ci, a1, a2, cj, c1, c2 = cj, c1, c2, ci, a1, a2
                loc = relative_location_bin(d.box(a1), d.box(c1), cell)
                if loc != relative_location_bin(d.box(a2), d.box(c2), cell):
                    continue
                edges.append(ConfigEdge(i1, i2, ConfigLabel(ci, cj, loc), ((a1, a2), (c1, c2))))
    edges.sort()
    return ConfigGraph(nodes, edges)


def config_graph_bruteforce(clusters: Sequence[Cluster], d: Dataset,
                            widths: Sequence[float] = DEFAULT_WIDTHS,
                            cell: float = DEFAULT_CELL) -> ConfigGraph:
    """Nested-loop reference: every correspondence pair compared directly."""
    nodes = tuple(d.positive_images)
    mem = _members_by_image(clusters, d)
    by_id = sorted(clusters, key=lambda c: c.cluster_id)
    edges = []
    for i1 in nodes:
        for i2 in nodes:
            if i1 >= i2:
                continue
            for ci in by_id:
                for cj in by_id:
                    if ci.cluster_id >= cj.cluster_id:
                        continue
                    for a1 in mem[ci.cluster_id].get(i1, []):
                        for a2 in mem[ci.cluster_id].get(i2, []):
                            for c1 in mem[cj.cluster_id].get(i1, []):
                                for c2 in mem[cj.cluster_id].get(i2, []):
                                    if a1 == c1 or a2 == c2:
                                        continue
                                    ti = bin_transform(compute_transform(d.box(a1), d.box(a2)), widths)
                                    tj = bin_transform(compute_transform(d.box(c1), d.box(c2)), widths)
                                    l1 = relative_location_bin(d.box(a1), d.box(c1), cell)
                                    l2 = relative_location_bin(d.box(a2), d.box(c2), cell)
                                    if ti == tj and l1 == l2:
                                        edges.append(ConfigEdge(
                                            i1, i2, ConfigLabel(ci.cluster_id, cj.cluster_id, l1),
                                            ((a1, a2), (c1, c2))))
    edges.sort()
    return ConfigGraph(nodes, edges)


class _DisjointSet:
    def __init__(self):
        self.parent: dict[int, int] = {}

    def find(self, x: int) -> int:
        self.parent.setdefault(x, x)
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # smaller root id wins so component representatives are stable
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra

    def groups(self) -> list[list[int]]:
        out: dict[int, list[int]] = defaultdict(list)
        for x in sorted(self.parent):
            out[self.find(x)].append(x)
        return sorted(out.values())


def label_components(g: ConfigGraph) -> dict[ConfigLabel, list[list[int]]]:
    """Connected components of the subgraph induced by each edge label."""
    sets: dict[ConfigLabel, _DisjointSet] = defaultdict(_DisjointSet)
    for e in g.edges:
        sets[e.label].union(e.i1, e.i2)
    return {label: ds.groups() for label, ds in sorted(sets.items())}


def _pick_pairs(edges: Iterable[ConfigEdge], images: set[int]) -> dict[int, tuple[int, int]]:
    votes: dict[int, Counter] = defaultdict(Counter)
    for e in edges:
        if e.i1 in images:
            votes[e.i1][(e.corr[0][0], e.corr[1][0])] += 1
        if e.i2 in images:
            votes[e.i2][(e.corr[0][1], e.corr[1][1])] += 1
    # most supported patch pair per image; lowest ids on ties
    return {img: min(cnt.items(), key=lambda kv: (-kv[1], kv[0]))[0]
            for img, cnt in sorted(votes.items())}


def mine_configurations(g: ConfigGraph, clusters: Sequence[Cluster],
                        min_component: int = DEFAULT_MIN_COMPONENT,
                        alpha: float = DEFAULT_ALPHA) -> MiningResult:
    """Score every same-label component and rank them.

    ``score = alpha * size / |P| + (1 - alpha) * max(coverage_i, coverage_j) / |P|``.
    If no component reaches ``min_component`` images, ``fallback_cluster``
    names the cluster with the largest coverage.
    """
    if not clusters:
        raise ValueError("no clusters to mine")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    n_pos = max(len(g.nodes), 1)
    cov = {c.cluster_id: c.coverage for c in clusters}
    by_label: dict[ConfigLabel, list[ConfigEdge]] = defaultdict(list)
    for e in g.edges:
        by_label[e.label].append(e)

    configs = []
    for label, comps in label_components(g).items():
        for comp in comps:
            members = set(comp)
            pairs = _pick_pairs((e for e in by_label[label] if e.i1 in members), members)
            score = (alpha * len(comp) / n_pos
                     + (1 - alpha) * max(cov[label.ci], cov[label.cj]) / n_pos)
            configs.append(Configuration(label, tuple(comp), pairs, score))
    configs.sort(key=lambda c: (-c.score, -len(c.images), c.label, c.images))

    fallback = None
    if not configs or len(configs[0].images) < min_component:
        fallback = min(clusters, key=lambda c: (-c.coverage, c.cluster_id)).cluster_id
    return MiningResult(configs, fallback)


def foreground_estimates(result: MiningResult, clusters: Sequence[Cluster], d: Dataset,
                         min_component: int = DEFAULT_MIN_COMPONENT
                         ) -> dict[int, tuple[Box, Optional[tuple[int, int]]]]:
    """Per positive image: the foreground box and the configuration patch pair behind it.

    Images take the estimate of the best-scoring configuration (with at least
    ``min_component`` images) that contains them. Under the single-cluster
    fallback the cluster member's own box is the estimate and no pair exists.
    """
    out: dict[int, tuple[Box, Optional[tuple[int, int]]]] = {}
    if result.fallback_cluster is None:
        for cfg in result.configurations:
            if len(cfg.images) < min_component:
                continue
            for img in cfg.images:
                if img not in out and img in cfg.pairs:
                    b1, b2 = cfg.pairs[img]
                    out[img] = (foreground_box(d.box(b1), d.box(b2)), (b1, b2))
    else:
        cl = next(c for c in clusters if c.cluster_id == result.fallback_cluster)
        for pid in cl.members:
            img = d.image_of(pid)
            if img not in out:
                out[img] = (d.box(pid), None)
    return dict(sorted(out.items()))
