from dataclasses import replace

import numpy as np
import pytest

from partconf.configs import Cluster, build_config_graph, label_components
from partconf.errors import DataError
from partconf.features import build_neighborhoods
from partconf.geom import union_bbox
from partconf.synth import SynthSpec, generate, load_preset, prototypes


def test_same_seed_is_bit_identical():
    spec = load_preset("calibrated")
    a, b = generate(spec), generate(spec)
    assert a.dataset == b.dataset and a.ground_truth == b.ground_truth
    assert a.dataset.features.tobytes() == b.dataset.features.tobytes()
    assert not np.array_equal(generate(replace(spec, seed=1)).dataset.features, a.dataset.features)


def test_splits_share_prototypes_not_images():
    spec = load_preset("calibrated")
    tr, te = generate(spec, "train"), generate(spec, "test")
    assert tr.dataset != te.dataset
    with pytest.raises(ValueError):
        generate(spec, "val")
    assert np.array_equal(prototypes(spec)["a"], prototypes(replace(spec, n_positive=3))["a"])


def test_boxes_in_bounds_and_ground_truth_is_union():
    for name in ("zero_noise", "calibrated"):
        res = generate(load_preset(name))
        d = res.dataset
        for p in d.patches:
            im = d.images[p.image_id]
            assert 0 <= p.box.x_left and p.box.x_right <= im.width
            assert 0 <= p.box.y_top and p.box.y_bottom <= im.height
        for img, box in res.ground_truth.items():
            a, b = res.planted["part_a"][img], res.planted["part_b"][img]
            assert box == union_bbox(d.box(a), d.box(b))
        assert set(res.ground_truth) == set(d.positive_images)


def test_zero_noise_planted_parts_are_exact_prototypes():
    spec = load_preset("zero_noise")
    res = generate(spec)
    proto = prototypes(spec)
    for img, pid in res.planted["part_a"].items():
        np.testing.assert_allclose(res.dataset.feature(pid), proto["a"], atol=1e-6)


def test_zero_noise_four_positives_complete_component():
    spec = replace(load_preset("zero_noise"), n_positive=4, n_negative=4)
    res = generate(spec)
    pa, pb = res.planted["part_a"], res.planted["part_b"]
    clusters = [Cluster(0, pa[0], tuple(sorted(pa.values())), 3),
                Cluster(1, pb[0], tuple(sorted(pb.values())), 3)]
    g = build_config_graph(clusters, res.dataset)
    comps = label_components(g)
    assert len(comps) == 1
    (label, groups), = comps.items()
    assert groups == [[0, 1, 2, 3]]
    # complete: every image pair is joined
    assert {(e.i1, e.i2) for e in g.edges} == {(i, j) for i in range(4) for j in range(i + 1, 4)}


def test_no_positives_fails_downstream():
    res = generate(replace(SynthSpec(), n_positive=0))
    with pytest.raises(DataError, match="P nonempty required"):
        build_neighborhoods(res.dataset, 1)


def test_invalid_specs():
    with pytest.raises(DataError, match="infeasible geometry"):
        generate(SynthSpec(image_width=50, image_height=50))
    with pytest.raises(DataError):
        generate(SynthSpec(sigma=0.3))
    with pytest.raises(DataError):
        SynthSpec.from_dict({"sigmaa": 0.1})


def test_spec_dict_round_trip():
    spec = load_preset("calibrated")
    assert SynthSpec.from_dict(spec.to_dict()) == spec
