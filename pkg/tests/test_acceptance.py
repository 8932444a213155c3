"""Exit criteria for the whole package, one check per criterion.

Each check returns ``(ok, detail)``; the pytest wrappers print one
``[criterion N] PASS|FAIL detail`` line and assert ``ok``. Running this file
directly prints the same lines without pytest::

    python tests/test_acceptance.py
"""
import os
import subprocess
import sys
import tempfile
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from partconf.configs import build_config_graph, config_graph_bruteforce
from partconf.cover import brute_force_select, coverage, greedy_select
from partconf.detector import detect, evaluate_ap, evaluate_corloc
from partconf.geom import Box
from partconf.pipeline import (discover, initial_training_set, mine, negative_regions,
                               train_detector)
from partconf.synth import SynthSpec, generate, load_preset

from conftest import random_cover
from test_hardneg import B1, B2, FG, check_strips, random_triple

pytestmark = pytest.mark.acceptance

# calibrated preset, seed 0, discovered hard negatives; computed once and frozen
CALIBRATED_ESTIMATE_CORLOC = 1.0
CALIBRATED_TEST_CORLOC = 0.875
CALIBRATED_TEST_AP = 0.8021
REGRESSION_TOL = 0.01


def criterion_1(n_general=500, n_disjoint=200, seed=1):
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    bad = 0
    worst = np.inf
    for i in range(n_general + n_disjoint):
        disjoint = i >= n_general
        g, c = random_cover(rng, int(rng.integers(1, 11)), int(rng.integers(1, 21)),
                            p_edge=rng.uniform(0, 0.7), p_member=rng.uniform(0.05, 0.5),
                            disjoint=disjoint)
        fg, fo = greedy_select(g, c).value, brute_force_select(g, c).value
        factor = c.delta + (1 if disjoint else 2)
        if fo and fg * factor < fo:
            bad += 1
        if fo:
            worst = min(worst, fg * factor / fo)
    secs = time.perf_counter() - t0
    ok = bad == 0 and secs < 60
    return ok, (f"{n_general} general + {n_disjoint} disjoint instances, {bad} violations, "
                f"min F_g*(Delta+c)/F* = {worst:.3f}, {secs:.1f}s")


def criterion_2(n=1000, seed=2):
    rng = np.random.default_rng(seed)
    bad = checked = 0
    while checked < n:
        g, _ = random_cover(rng, int(rng.integers(2, 12)), int(rng.integers(1, 25)),
                            p_member=rng.uniform(0.05, 0.6))
        v = list(g.v)
        t = [b for b in v if rng.random() < 0.6]
        s = [b for b in t if rng.random() < 0.5]
        rest = [b for b in v if b not in t]
        if not rest:
            continue
        b = rest[int(rng.integers(len(rest)))]
        fs, ft = coverage(g, s), coverage(g, t)
        fsb, ftb = coverage(g, s + [b]), coverage(g, t + [b])
        bad += (fs > fsb) + (ft > ftb) + (fs > ft) + (fsb - fs < ftb - ft)
        checked += 1
    return bad == 0, f"{checked} (S, T, b) triples, {bad} violations"


def criterion_3(n=1000, seed=3):
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(n):
        try:
            check_strips(*random_triple(rng))
        except AssertionError:
            bad += 1
    hn = check_strips(B1, B2, FG)
    strips = {s.kind: s.box for s in hn.strips}
    golden = hn.core == Box(20, 40, 30, 70) and strips.get("right") == Box(50, 100, 0, 100)
    return bad == 0 and golden, f"{n} random triples, {bad} violations, golden example {'exact' if golden else 'WRONG'}"


def criterion_4(n=50, seed=4):
    rng = np.random.default_rng(seed)
    done = mismatches = edges = 0
    while done < n:
        n_pos = int(rng.integers(2, 13))
        spec = SynthSpec(seed=int(rng.integers(2 ** 31)), n_positive=n_pos,
                         n_negative=int(rng.integers(1, 21 - n_pos)),
                         sigma=float(rng.choice([0.0, 0.05, 0.1])),
                         offset_jitter=float(rng.choice([0.0, 6.0, 20.0])),
                         scale_jitter=float(rng.choice([0.0, 0.15])), aspect_jitter=0.1,
                         object_proposals=6, distractors=int(rng.integers(2, 8)))
        d = generate(spec).dataset
        clusters = discover(d).clusters
        if len(clusters) < 2:
            continue
        fast = build_config_graph(clusters, d)
        mismatches += fast != config_graph_bruteforce(clusters, d)
        edges += len(fast.edges)
        done += 1
    return mismatches == 0, f"{done} datasets ({edges} edges in total), {mismatches} mismatches"


def _estimate_corloc(res, m):
    return evaluate_corloc({i: fg for i, (fg, _) in m.estimates.items()}, res.ground_truth)


def _run_detector(spec, mode, rounds=None):
    res = generate(spec)
    d = res.dataset
    m = mine(d, discover(d).clusters)
    ts = initial_training_set(d, m.estimates, negative_regions(d, m.estimates, mode))
    kw = {} if rounds is None else {"rounds": rounds}
    out = train_detector(d, ts, seed=spec.seed, **kw)
    test = generate(spec, "test")
    dets = detect(out.model, test.dataset)
    top = {}
    for det in dets:
        top.setdefault(det.image_id, det.box)
    return (res, m, evaluate_ap(dets, sorted(test.ground_truth.items())),
            evaluate_corloc(top, test.ground_truth))


def criterion_5():
    lines, ok = [], True
    for n_pos in (4, 8):
        res = generate(replace(load_preset("zero_noise"), n_positive=n_pos))
        disc = discover(res.dataset)
        m = mine(res.dataset, disc.clusters)
        best = m.result.best
        reps = {disc.clusters[best.label.ci].rep, disc.clusters[best.label.cj].rep}
        planted = {res.planted["part_a"][0], res.planted["part_b"][0]}
        top_ok = best is not None and reps == planted and m.result.fallback_cluster is None
        cl = _estimate_corloc(res, m)
        ok &= top_ok and cl == 1.0
        lines.append(f"zero noise |P|={n_pos}: planted label top={top_ok}, CorLoc={cl:.3f}")
    res, m, ap, test_cl = _run_detector(load_preset("calibrated"), "discovered")
    est_cl = _estimate_corloc(res, m)
    frozen = [(est_cl, CALIBRATED_ESTIMATE_CORLOC), (test_cl, CALIBRATED_TEST_CORLOC),
              (ap, CALIBRATED_TEST_AP)]
    ok &= all(abs(a - b) <= REGRESSION_TOL for a, b in frozen)
    lines.append(f"calibrated: estimate CorLoc {est_cl:.4f} (frozen {CALIBRATED_ESTIMATE_CORLOC}), "
                 f"test CorLoc {test_cl:.4f} (frozen {CALIBRATED_TEST_CORLOC}), "
                 f"AP {ap:.4f} (frozen {CALIBRATED_TEST_AP})")
    return ok, "; ".join(lines)


def criterion_6(seeds=range(5)):
    base = load_preset("calibrated")
    aps = {mode: [] for mode in ("discovered", "neighboring", "none")}
    for seed in seeds:
        for mode in aps:
            aps[mode].append(_run_detector(replace(base, seed=seed), mode)[2])
    mean = {k: float(np.mean(v)) for k, v in aps.items()}
    ok = mean["discovered"] >= mean["neighboring"] and mean["discovered"] >= mean["none"]
    return ok, (f"mean AP over {len(list(seeds))} seeds: discovered {mean['discovered']:.3f}, "
                f"neighboring {mean['neighboring']:.3f}, none {mean['none']:.3f}")


STAGES = [
    ("synth", ["--preset", "calibrated", "--out", "{w}/tr"]),
    ("synth", ["--preset", "calibrated", "--split", "test", "--out", "{w}/te"]),
    ("discover", ["--in", "{w}/tr/manifest.jsonl", "--out", "{w}/clusters.json"]),
    ("oracle", ["--in", "{w}/tr/manifest.jsonl", "--out", "{w}/oracle.json"]),
    ("mine-configs", ["--in", "{w}/tr/manifest.jsonl", "--clusters", "{w}/clusters.json",
                      "--out", "{w}/configs.json"]),
    ("hardneg", ["--in", "{w}/tr/manifest.jsonl", "--configs", "{w}/configs.json",
                 "--out", "{w}/hn.json"]),
    ("train", ["--in", "{w}/tr/manifest.jsonl", "--hardneg", "{w}/hn.json", "--out", "{w}/model.json"]),
    ("evaluate", ["--model", "{w}/model.json", "--in", "{w}/te/manifest.jsonl", "--gt",
                  "{w}/te/ground_truth.json", "--detections", "{w}/dets.jsonl",
                  "--out", "{w}/metrics.json"]),
]


def _run_stages(w: Path, threads: str):
    env = dict(os.environ, PARTCONF_THREADS=threads)
    for name, argv in STAGES:
        cmd = [sys.executable, "-m", "partconf.cli", name] + [a.format(w=w) for a in argv]
        subprocess.run(cmd, check=True, env=env, capture_output=True)
    return {p.relative_to(w): p.read_bytes() for p in sorted(w.rglob("*")) if p.is_file()}


def criterion_8():
    with tempfile.TemporaryDirectory() as tmp:
        a = _run_stages(Path(tmp) / "a", "1")
        b = _run_stages(Path(tmp) / "b", "4")
    differ = sorted(str(k) for k in set(a) | set(b) if a.get(k) != b.get(k))
    return not differ, (f"{len(a)} files from {len(STAGES)} stage runs, rerun with a different "
                        f"thread count: {len(differ)} differ {differ[:3]}")


def report(n, ok, detail):
    print(f"[criterion {n}] {'PASS' if ok else 'FAIL'} {detail}", flush=True)


def _check(capsys, n, fn):
    ok, detail = fn()
    with capsys.disabled():
        print()
        report(n, ok, detail)
    assert ok, detail


def test_criterion_1_greedy_bound(capsys):
    _check(capsys, 1, criterion_1)


def test_criterion_2_monotone_submodular(capsys):
    _check(capsys, 2, criterion_2)


def test_criterion_3_hard_negative_geometry(capsys):
    _check(capsys, 3, criterion_3)


def test_criterion_4_config_graph_oracle(capsys):
    _check(capsys, 4, criterion_4)


def test_criterion_5_planted_recovery_and_regression(capsys):
    _check(capsys, 5, criterion_5)


def test_criterion_6_negative_regime_ordering(capsys):
    _check(capsys, 6, criterion_6)


def test_criterion_7_out_of_scope(capsys):
    with capsys.disabled():
        print()
        print("[criterion 7] N/A benchmark mAP on real images is out of scope; nothing depends on it")
    pytest.skip("out of scope by definition")


def test_criterion_8_determinism(capsys):
    _check(capsys, 8, criterion_8)


if __name__ == "__main__":
    failed = 0
    for n, fn in ((1, criterion_1), (2, criterion_2), (3, criterion_3), (4, criterion_4),
                  (5, criterion_5), (6, criterion_6), (8, criterion_8)):
        ok, detail = fn()
        report(n, ok, detail)
        failed += not ok
    print("[criterion 7] N/A benchmark mAP on real images is out of scope; nothing depends on it")
    sys.exit(1 if failed else 0)
