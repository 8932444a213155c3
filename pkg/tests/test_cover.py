import itertools

import pytest

from partconf.cover import (ConstraintGraph, CoverGraph, brute_force_select, build_constraint_graph,
                            build_cover_graph, constraint_graph_from_cover, coverage, default_theta,
                            greedy_select, naive_greedy_select, selection_to_json)
from partconf.features import NEGATIVE, POSITIVE, Neighborhood, build_neighborhoods
from partconf.geom import iou

from conftest import make_dataset, random_cover, random_dataset

# ids: b1..b4 -> 1..4, u1..u6 -> 11..16
STAR = CoverGraph.from_sets({1: [11, 12, 13], 2: [11, 14], 3: [12, 15], 4: [13, 16]})
STAR_C = ConstraintGraph.from_edges([1, 2, 3, 4], [(1, 2), (1, 3), (1, 4)])


def test_coverage_examples():
    g = CoverGraph.from_sets({1: [11, 12], 2: [12, 13]})
    assert coverage(g, []) == 0
    assert coverage(g, [1, 2]) == 3
    assert coverage(g, [1]) == 2
    with pytest.raises(KeyError):
        coverage(g, [9])


def test_greedy_small_example():
    g = CoverGraph.from_sets({1: [11, 12], 2: [12, 13], 3: [14]})
    c = ConstraintGraph.from_edges([1, 2, 3], [(1, 2)])
    sel = greedy_select(g, c)
    assert sel.ids == [1, 3] and sel.value == 3
    assert brute_force_select(g, c).value == 3


def test_star_instance():
    sel = greedy_select(STAR, STAR_C)
    assert sel.ids == [1] and sel.value == 3
    opt = brute_force_select(STAR, STAR_C)
    assert opt.ids == [2, 3, 4] and opt.value == 6
    assert STAR_C.delta == 3
    assert sel.value >= opt.value / (STAR_C.delta + 2)


def test_unconstrained_budget():
    g = CoverGraph.from_sets({1: [1, 2, 3], 2: [3, 4], 3: [5], 4: [1, 2]})
    c = ConstraintGraph.from_edges(g.v, [])
    sel = greedy_select(g, c, max_clusters=2)
    assert sel.ids == [1, 2] and sel.value == 4


def test_brute_force_trivial_cases():
    g = CoverGraph.from_sets({1: [10], 2: [11], 3: [12]})
    assert brute_force_select(g, ConstraintGraph.from_edges(g.v, [])).ids == [1, 2, 3]
    one = CoverGraph.from_sets({1: [10]})
    assert brute_force_select(one, ConstraintGraph.from_edges([1], [])).ids == [1]
    big = CoverGraph.from_sets({i: [i] for i in range(21)})
    with pytest.raises(ValueError):
        brute_force_select(big, ConstraintGraph.from_edges(big.v, []))


def test_greedy_stops_at_zero_gain():
    g = CoverGraph.from_sets({1: [10], 2: [10], 3: []})
    sel = greedy_select(g, ConstraintGraph.from_edges(g.v, []))
    assert sel.ids == [1] and sel.gains == [1]


def test_tie_goes_to_smallest_id():
    g = CoverGraph.from_sets({5: [1, 2], 3: [3, 4], 9: [5, 6]})
    assert greedy_select(g, ConstraintGraph.from_edges(g.v, [])).ids == [3, 5, 9]


def test_lazy_equals_naive(rng):
    for _ in range(300):
        n_v = int(rng.integers(1, 15))
        g, c = random_cover(rng, n_v, int(rng.integers(1, 25)), p_edge=rng.uniform(0, 0.6))
        budget = None if rng.random() < 0.5 else int(rng.integers(1, n_v + 1))
        lazy, naive = greedy_select(g, c, budget), naive_greedy_select(g, c, budget)
        assert (lazy.ids, lazy.value, lazy.gains) == (naive.ids, naive.value, naive.gains)
        assert c.is_independent(lazy.ids)
        assert lazy.gains == sorted(lazy.gains, reverse=True)
        assert coverage(g, lazy.ids) == lazy.value


def test_monotone_submodular(rng):
    for _ in range(200):
        g, _ = random_cover(rng, 8, 15)
        v = list(g.v)
        t = [b for b in v if rng.random() < 0.5]
        s = [b for b in t if rng.random() < 0.5]
        rest = [b for b in v if b not in t]
        if not rest:
            continue
        b = rest[int(rng.integers(len(rest)))]
        assert coverage(g, s) <= coverage(g, s + [b])
        assert coverage(g, s + [b]) - coverage(g, s) >= coverage(g, t + [b]) - coverage(g, t)


def test_brute_force_matches_enumeration(rng):
    for _ in range(50):
        g, c = random_cover(rng, 7, 12, p_edge=0.4)
        best = 0
        for r in range(len(g.v) + 1):
            for s in itertools.combinations(g.v, r):
                if c.is_independent(s):
                    best = max(best, coverage(g, s))
        opt = brute_force_select(g, c)
        assert opt.value == best and c.is_independent(opt.ids)


def test_cover_graph_filters_negative_neighbors():
    # query patch 0; neighbors: 3 positive images, 2 negative images
    items = [(POSITIVE, [([0, 0, 5, 5], [1, 0])])]
    items += [(POSITIVE, [([0, 0, 5, 5], [1, 0.1 * i])]) for i in range(3)]
    items += [(NEGATIVE, [([0, 0, 5, 5], [1, 0.05 + 0.1 * i])]) for i in range(2)]
    d = make_dataset(items)
    g = build_cover_graph(build_neighborhoods(d, 5), d)
    assert len(g.gamma[0]) == 3
    assert all(d.is_positive_patch(u) for u in g.gamma[0])


def test_cover_graph_all_negative_neighbors():
    d = make_dataset([(POSITIVE, [([0, 0, 5, 5], [1, 0])]), (NEGATIVE, [([0, 0, 5, 5], [1, 0])])])
    assert build_cover_graph(build_neighborhoods(d, 1), d).gamma[0] == frozenset()


def _constraint_oracle(g, d, theta, iou_min):
    def count(b, b2):
        return sum(any(d.image_of(u) == d.image_of(u2) and iou(d.box(u), d.box(u2)) >= iou_min
                       for u2 in g.gamma[b2]) for u in g.gamma[b])
    return {(a, b) for a in g.v for b in g.v
            if a < b and max(count(a, b), count(b, a)) > theta}


def test_constraint_graph_matches_definition(rng):
    for _ in range(10):
        d = random_dataset(rng, n_pos=5, n_neg=2, per_image=6)
        g = build_cover_graph(build_neighborhoods(d, 4), d)
        for theta in (0, 1, 2):
            c = constraint_graph_from_cover(g, d, theta, 0.5)
            assert set(c.edges) == _constraint_oracle(g, d, theta, 0.5)


def test_constraint_identical_and_disjoint_neighborhoods():
    # two images each with two identical-box patches; image 2 has an unrelated box
    d = make_dataset([
        (POSITIVE, [([0, 0, 10, 10], [1, 0]), ([0, 0, 10, 10], [1, 0])]),
        (POSITIVE, [([0, 0, 10, 10], [1, 0]), ([50, 50, 60, 60], [0, 1])]),
        (POSITIVE, [([0, 0, 10, 10], [1, 0]), ([50, 50, 60, 60], [0, 1])]),
    ])
    nbs = {0: Neighborhood(0, ((2, 0.0), (4, 0.0))), 1: Neighborhood(1, ((2, 0.0), (4, 0.0))),
           2: Neighborhood(2, ()), 3: Neighborhood(3, ((5, 0.0),)),
           4: Neighborhood(4, ()), 5: Neighborhood(5, ())}
    c = build_constraint_graph(nbs, d, theta=0)
    assert (0, 1) in c.edges
    assert not any(3 in e for e in c.edges)


def test_default_theta():
    assert default_theta(40) == 2
    assert default_theta(19) == 0


def test_selection_json():
    sel = greedy_select(STAR, STAR_C)
    out = selection_to_json(sel, STAR)
    assert out["value"] == 3
    assert out["clusters"][0] == {"cluster_id": 0, "rep_patch_id": 1, "members": [1, 11, 12, 13],
                                  "coverage": 3, "gain": 3}
