"""Coverage graph, overlap-conflict graph and the constrained greedy.

The utility of a set ``S`` of candidate patches is ``F(S) = |Gamma(S)|``, the
number of positive-image patches reached from ``S`` through the neighborhood
graph. Two candidates conflict when their neighborhoods overlap too much;
feasible selections are the independent sets of the conflict graph.
"""
from __future__ import annotations

import heapq
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

import numpy as np

from .features import Dataset, Neighborhood

BRUTE_FORCE_LIMIT = 20


@dataclass(frozen=True)
class CoverGraph:
    v: tuple[int, ...]
    u: frozenset[int]
    gamma: Mapping[int, frozenset[int]]

    @classmethod
    def from_sets(cls, gamma: Mapping[int, Iterable[int]], u: Optional[Iterable[int]] = None):
        gam = {int(b): frozenset(int(x) for x in s) for b, s in gamma.items()}
        uu = frozenset(u) if u is not None else frozenset().union(*gam.values()) if gam else frozenset()
        return cls(tuple(sorted(gam)), uu, gam)


@dataclass(frozen=True)
class ConstraintGraph:
    nodes: tuple[int, ...]
    adj: Mapping[int, frozenset[int]]

    @classmethod
    def from_edges(cls, nodes: Iterable[int], edges: Iterable[tuple[int, int]]):
        nodes = tuple(sorted(set(nodes)))
        adj: dict[int, set[int]] = {n: set() for n in nodes}
        for a, b in edges:
            if a == b:
                raise ValueError(f"self-loop on {a}")
            adj[a].add(b)
            adj[b].add(a)
        return cls(nodes, {n: frozenset(s) for n, s in adj.items()})

    @property
    def edges(self) -> list[tuple[int, int]]:
        return sorted((a, b) for a, s in self.adj.items() for b in s if a < b)

    @property
    def delta(self) -> int:
        return max((len(s) for s in self.adj.values()), default=0)

    def is_independent(self, ids: Iterable[int]) -> bool:
        ids = list(ids)
        chosen = set(ids)
        return all(not (self.adj.get(b, frozenset()) & chosen) for b in ids)


@dataclass
class Selection:
    ids: list[int]
    value: int
    gains: list[int] = field(default_factory=list)


def build_cover_graph(neighborhoods: Mapping[int, Neighborhood], d: Dataset) -> CoverGraph:
    """Candidates are all positive-image patches; edges keep only positive neighbors."""
    v = d.positive_patch_ids()
    gamma = {}
    for b in v:
        nb = neighborhoods.get(b)
        ids = nb.ids if nb is not None else []
        gamma[b] = frozenset(u for u in ids if d.is_positive_patch(u))
    return CoverGraph(tuple(v), frozenset(v), gamma)


def coverage(g: CoverGraph, s: Iterable[int]) -> int:
    covered: set[int] = set()
    for b in s:
        try:
            covered |= g.gamma[b]
        except KeyError:
            raise KeyError(f"patch {b} is not a candidate of the cover graph") from None
    return len(covered)


def default_theta(k: int) -> int:
    return k // 20


def _overlap_partners(members: Iterable[int], d: Dataset, iou_min: float) -> dict[int, list[int]]:
    by_image: dict[int, list[int]] = defaultdict(list)
    for u in members:
        by_image[d.image_of(u)].append(u)
    partners: dict[int, list[int]] = {}
    for ids in by_image.values():
        ids.sort()
        boxes = np.array([d.box(u).to_ltrb() for u in ids], dtype=np.float64)
        l, t, r, b = boxes.T
        iw = np.clip(np.minimum(r[:, None], r[None]) - np.maximum(l[:, None], l[None]), 0, None)
        ih = np.clip(np.minimum(b[:, None], b[None]) - np.maximum(t[:, None], t[None]), 0, None)
        inter = iw * ih
        area = (r - l) * (b - t)
        union = area[:, None] + area[None] - inter
        with np.errstate(divide="ignore", invalid="ignore"):
            ov = np.where(union > 0, inter / union, 0.0)
        for i, u in enumerate(ids):
            partners[u] = [ids[j] for j in np.flatnonzero(ov[i] >= iou_min)]
    return partners


def directed_overlap_counts(g: CoverGraph, d: Dataset, iou_min: float = 0.5
                            ) -> dict[tuple[int, int], int]:
    """``(b, b2) -> |{u in Gamma(b) : some u2 in Gamma(b2), same image, iou >= iou_min}|``.

    Only pairs with a nonzero count appear.
    """
    members = set().union(*g.gamma.values()) if g.gamma else set()
    partners = _overlap_partners(members, d, iou_min)
    owners: dict[int, list[int]] = defaultdict(list)
    for b in g.v:
        for u in g.gamma[b]:
            owners[u].append(b)
    counts: dict[tuple[int, int], int] = defaultdict(int)
    for b in g.v:
        for u in g.gamma[b]:
            reach = set()
            for u2 in partners[u]:
                reach.update(owners[u2])
            reach.discard(b)
            for b2 in reach:
                counts[(b, b2)] += 1
    return dict(counts)


def constraint_graph_from_cover(g: CoverGraph, d: Dataset, theta: int,
                                iou_min: float = 0.5) -> ConstraintGraph:
    if theta < 0:
        raise ValueError("theta must be >= 0")
    counts = directed_overlap_counts(g, d, iou_min)
    edges = set()
    for (a, b), c in counts.items():
        if max(c, counts.get((b, a), 0)) > theta:
            edges.add((min(a, b), max(a, b)))
    return ConstraintGraph.from_edges(g.v, sorted(edges))


def build_constraint_graph(neighborhoods: Mapping[int, Neighborhood], d: Dataset,
                           theta: Optional[int] = None, iou_min: float = 0.5) -> ConstraintGraph:
    """Conflict graph over the positive-image candidates.

    ``b`` and ``b2`` are joined when more than ``theta`` members of one
    neighborhood have a partner (same image, IoU >= ``iou_min``) in the other;
    the larger of the two directed counts decides. ``theta`` is an absolute
    count and defaults to ``K // 20``.
    """
    g = build_cover_graph(neighborhoods, d)
    if theta is None:
        k = max((len(n.neighbors) for n in neighborhoods.values()), default=1)
        theta = default_theta(k)
    return constraint_graph_from_cover(g, d, theta, iou_min)


def greedy_select(g: CoverGraph, c: ConstraintGraph, max_clusters: Optional[int] = None
                  ) -> Selection:
    """Constrained greedy maximum coverage with lazy gain re-evaluation.

    Picks the candidate with the largest marginal gain (lowest id on ties),
    then drops its conflict-graph neighbors from the candidate pool. Stale
    heap keys are upper bounds because ``F`` is submodular, so an entry whose
    gain was recomputed in the current round and still sits on top is the
    true argmax.
    """
    covered: set[int] = set()
    alive = set(g.v)
    heap = [(-len(g.gamma[b]), b, 0) for b in g.v]
    heapq.heapify(heap)
    sel = Selection([], 0, [])
    rnd = 0
    while heap and (max_clusters is None or len(sel.ids) < max_clusters):
        neg, b, stamp = heapq.heappop(heap)
        if b not in alive:
            continue
        if stamp != rnd:
            gain = len(g.gamma[b] - covered)
            heapq.heappush(heap, (-gain, b, rnd))
            continue
        gain = -neg
        if gain <= 0:
            break
        sel.ids.append(b)
        sel.gains.append(gain)
        covered |= g.gamma[b]
        alive.discard(b)
        alive -= c.adj.get(b, frozenset())
        rnd += 1
    sel.value = len(covered)
    return sel


def naive_greedy_select(g: CoverGraph, c: ConstraintGraph, max_clusters: Optional[int] = None
                        ) -> Selection:
    """Same contract as :func:`greedy_select`, recomputing every gain each round."""
    covered: set[int] = set()
    alive = set(g.v)
    sel = Selection([], 0, [])
    while alive and (max_clusters is None or len(sel.ids) < max_clusters):
        best, best_gain = None, 0
        for b in sorted(alive):
            gain = len(g.gamma[b] - covered)
            if gain > best_gain:
                best, best_gain = b, gain
        if best is None:
            break
        sel.ids.append(best)
        sel.gains.append(best_gain)
        covered |= g.gamma[best]
        alive.discard(best)
        alive -= c.adj.get(best, frozenset())
    sel.value = len(covered)
    return sel


def brute_force_select(g: CoverGraph, c: ConstraintGraph) -> Selection:
    """Exact optimum over all independent sets (``|V| <= 20``).

    Ties go to the lexicographically smallest sorted id tuple.
    """
    v = list(g.v)
    if len(v) > BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute force limited to {BRUTE_FORCE_LIMIT} candidates, got {len(v)}")
    pos = {b: i for i, b in enumerate(v)}
    conflict = [0] * len(v)
    for b in v:
        for nb in c.adj.get(b, ()):
            if nb in pos:
                conflict[pos[b]] |= 1 << pos[nb]

    best_val, best_set = -1, ()

    def rec(i: int, banned: int, chosen: list[int], covered: frozenset):
        nonlocal best_val, best_set
        if i == len(v):
            val = len(covered)
            key = tuple(chosen)
            if val > best_val or (val == best_val and key < best_set):
                best_val, best_set = val, key
            return
        if not banned >> i & 1:
            chosen.append(v[i])
            rec(i + 1, banned | conflict[i], chosen, covered | g.gamma[v[i]])
            chosen.pop()
        rec(i + 1, banned, chosen, covered)

    rec(0, 0, [], frozenset())
    covered: set[int] = set()
    gains = []
    for b in best_set:
        gains.append(len(g.gamma[b] - covered))
        covered |= g.gamma[b]
    return Selection(list(best_set), best_val, gains)


def selection_to_json(sel: Selection, g: CoverGraph) -> dict:
    return {"clusters": [{"cluster_id": i, "rep_patch_id": b,
                          "members": [b] + sorted(g.gamma[b] - {b}),
                          "coverage": len(g.gamma[b]), "gain": gain}
                         for i, (b, gain) in enumerate(zip(sel.ids, sel.gains))],
            "value": sel.value}
