"""Command-line pipeline: every stage reads the previous stage's files and
writes its own, so any stage can be rerun or inspected on its own.

    partconf synth --preset zero_noise --out data/
    partconf discover --in data/manifest.jsonl --out clusters.json
    partconf mine-configs --in data/manifest.jsonl --clusters clusters.json --out configs.json
    partconf hardneg --in data/manifest.jsonl --configs configs.json --mode discovered --out hardneg.json
    partconf train --in data/manifest.jsonl --hardneg hardneg.json --out model.json
    partconf evaluate --model model.json --in test/manifest.jsonl --gt test/ground_truth.json --out metrics.json
    partconf oracle --in data/manifest.jsonl --out oracle.json

Exit codes: 0 ok, 1 oracle check failed or other error, 2 usage, 3 missing
file, 4 schema violation, 5 stage-order violation, 6 data error. Failures
print a single JSON line ``{"error": ..., "exit_code": ..., "message": ...}``
to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Optional, Sequence

from . import io
from .configs import (DEFAULT_ALPHA, DEFAULT_CELL, DEFAULT_MIN_COMPONENT, DEFAULT_WIDTHS,
                      build_config_graph, config_graph_bruteforce)
from .cover import BRUTE_FORCE_LIMIT, brute_force_select, naive_greedy_select, selection_to_json
from .detector import (DEFAULT_EPOCHS, DEFAULT_LAMBDA, DEFAULT_ROUNDS, LinearModel, detect,
                       evaluate_ap, evaluate_corloc)
from .errors import MissingFileError, PartconfError, SchemaError, StageOrderError
from .features import neighborhoods_bruteforce, neighborhoods_match
from .geom import iou
from .hardneg import DEFAULT_MAX_RATIO, DEFAULT_NEIGHBOR_IOU
from .pipeline import (NEGATIVE_MODES, discover, initial_training_set, mine, negative_regions,
                       train_detector)
from .synth import SynthSpec, generate, load_preset

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("partconf")


@dataclass(frozen=True)
class PipelineConfig:
    k: Optional[int] = None
    theta: Optional[int] = None
    iou_min: float = 0.5
    max_clusters: Optional[int] = None
    widths: tuple[float, float, float, float] = DEFAULT_WIDTHS
    cell: float = DEFAULT_CELL
    alpha: float = DEFAULT_ALPHA
    min_component: int = DEFAULT_MIN_COMPONENT
    mode: str = "discovered"
    max_ratio: float = DEFAULT_MAX_RATIO
    neighbor_iou: float = DEFAULT_NEIGHBOR_IOU
    lam: float = DEFAULT_LAMBDA
    epochs: int = DEFAULT_EPOCHS
    rounds: int = DEFAULT_ROUNDS
    nms_iou: float = 0.3
    seed: int = 0
    preset: Optional[str] = None
    synth: Optional[dict] = None

    def validate(self) -> "PipelineConfig":
        def need(ok: bool, what: str) -> None:
            if not ok:
                raise SchemaError(f"config: {what}")
        need(self.k is None or self.k >= 1, "k must be >= 1")
        need(self.theta is None or self.theta >= 0, "theta must be >= 0")
        need(self.max_clusters is None or self.max_clusters >= 1, "max_clusters must be >= 1")
        for name in ("iou_min", "alpha", "max_ratio", "neighbor_iou", "nms_iou"):
            need(0.0 <= getattr(self, name) <= 1.0, f"{name} must lie in [0, 1]")
        need(self.max_ratio > 0, "max_ratio must be > 0")
        need(len(self.widths) == 4 and all(w > 0 for w in self.widths),
             "widths must be four positive numbers")
        need(self.cell > 0, "cell must be > 0")
        need(self.min_component >= 1, "min_component must be >= 1")
        need(self.mode in NEGATIVE_MODES, f"mode must be one of {NEGATIVE_MODES}")
        need(self.lam > 0, "lam must be > 0")
        need(self.epochs >= 1 and self.rounds >= 1, "epochs and rounds must be >= 1")
        need(0 <= self.seed < 2 ** 64, "seed must be an unsigned 64-bit integer")
        return self

    @classmethod
    def from_mapping(cls, obj: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise SchemaError(f"config: unknown keys {unknown}")
        kw = dict(obj)
        if "widths" in kw:
            kw["widths"] = tuple(float(w) for w in kw["widths"])
        try:
            return cls(**kw).validate()
        except TypeError as exc:
            raise SchemaError(f"config: {exc}") from exc


def load_config(path: Optional[str]) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    p = _existing(path)
    try:
        if p.suffix == ".toml":
            obj = tomllib.loads(p.read_text())
        else:
            obj = json.loads(p.read_text())
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise SchemaError(f"{path}: cannot parse config: {exc}") from exc
    if not isinstance(obj, dict):
        raise SchemaError(f"{path}: config must be a table/object")
    return PipelineConfig.from_mapping(obj)


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise MissingFileError(f"missing input file: {path}")
    return p


def _read_stage(path: str, stage: str) -> dict:
    obj = io.read_json(_existing(path))
    if not isinstance(obj, dict) or "stage" not in obj:
        raise SchemaError(f"{path}: not a partconf stage file (no 'stage' field)")
    if obj["stage"] != stage:
        raise StageOrderError(f"{path}: expected output of stage {stage!r}, "
                              f"found {obj['stage']!r}")
    return obj


def _dataset(path: str):
    return io.read_dataset(_existing(path))


def _out_path(path: str) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


# --- subcommands ----------------------------------------------------------

def cmd_synth(args, cfg: PipelineConfig) -> None:
    spec = load_preset(cfg.preset) if cfg.preset else SynthSpec()
    if cfg.synth:
        spec = SynthSpec.from_dict({**spec.to_dict(), **cfg.synth})
    # the pipeline seed always drives generation
    spec = replace(spec, seed=cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = generate(spec, args.split)
    io.write_dataset(out / "manifest.jsonl", res.dataset)
    io.write_json(out / "ground_truth.json", io.ground_truth_json(res.ground_truth))
    io.write_json(out / "synth.json", {
        "stage": "synth", "split": args.split, "spec": spec.to_dict(),
        "planted": {"part_a": {str(k): v for k, v in sorted(res.planted["part_a"].items())},
                    "part_b": {str(k): v for k, v in sorted(res.planted["part_b"].items())},
                    "part_a_box": res.planted["part_a_box"],
                    "part_b_box": res.planted["part_b_box"]}})


def cmd_discover(args, cfg: PipelineConfig) -> None:
    d = _dataset(args.inp)
    disc = discover(d, cfg.k, cfg.theta, cfg.iou_min, cfg.max_clusters)
    payload = selection_to_json(disc.selection, disc.cover)
    payload.update({"stage": "discover", "k": disc.k, "theta": disc.theta,
                    "iou_min": cfg.iou_min, "delta": disc.constraint.delta})
    io.write_json(_out_path(args.out), payload)


def cmd_mine(args, cfg: PipelineConfig) -> None:
    d = _dataset(args.inp)
    clusters = io.clusters_from_json(_read_stage(args.clusters, "discover"))
    if not clusters:
        raise SchemaError(f"{args.clusters}: no clusters to mine")
    m = mine(d, clusters, cfg.widths, cfg.cell, cfg.alpha, cfg.min_component)
    io.write_json(_out_path(args.out), {
        "stage": "mine-configs",
        "configurations": [io.configuration_json(c, d) for c in m.result.configurations],
        "fallback_cluster": m.result.fallback_cluster,
        "estimates": io.estimates_json(m.estimates)})


def cmd_hardneg(args, cfg: PipelineConfig) -> None:
    d = _dataset(args.inp)
    obj = _read_stage(args.configs, "mine-configs")
    estimates = io.estimates_from_json(obj.get("estimates", []))
    mode = args.mode or cfg.mode
    regions = negative_regions(d, estimates, mode, cfg.max_ratio, cfg.neighbor_iou)
    out = dict(obj)
    out.update({"stage": "hardneg", "mode": mode, "hard_negatives": io.negatives_json(regions)})
    io.write_json(_out_path(args.out), out)


def cmd_train(args, cfg: PipelineConfig) -> None:
    d = _dataset(args.inp)
    obj = _read_stage(args.hardneg, "hardneg")
    estimates = io.estimates_from_json(obj.get("estimates", []))
    if not estimates:
        raise SchemaError(f"{args.hardneg}: no foreground estimates to train on")
    regions = io.negatives_from_json(obj.get("hard_negatives", []))
    ts = initial_training_set(d, estimates, regions)
    res = train_detector(d, ts, cfg.lam, cfg.epochs, cfg.rounds, cfg.seed)
    payload = res.model.to_json()
    payload.update({"stage": "train", "seed": cfg.seed, "mode": obj.get("mode"),
                    "initial_objective": res.model.initial_objective,
                    "final_objective": res.model.final_objective,
                    "mined_positives": {str(k): v for k, v in sorted(res.mined_positives.items())}})
    io.write_json(_out_path(args.out), payload)


def _per_image(boxes: dict, gt: dict, extra: Optional[dict] = None) -> list:
    rows = []
    for img in sorted(set(boxes) & set(gt)):
        ov = iou(boxes[img], gt[img])
        row = {"image_id": img, "box": io.box_json(boxes[img]), "iou": ov, "hit": ov >= 0.5}
        if extra and img in extra:
            row["score"] = extra[img]
        rows.append(row)
    return rows


def cmd_evaluate(args, cfg: PipelineConfig) -> None:
    gt = io.ground_truth_from_json(io.read_json(_existing(args.gt)))
    if not gt:
        raise SchemaError(f"{args.gt}: empty ground truth")
    if args.model:
        model = LinearModel.from_json(_read_stage(args.model, "train"))
        if args.inp is None:
            raise SchemaError("--model needs --in <manifest> to score")
        d = _dataset(args.inp)
        if d.dim != model.dim:
            raise SchemaError(f"model dim {model.dim} != dataset dim {d.dim}")
        dets = detect(model, d, nms_iou=cfg.nms_iou)
        top: dict = {}
        for det in dets:
            top.setdefault(det.image_id, det)
        boxes = {img: det.box for img, det in top.items()}
        metrics = {"stage": "evaluate",
                   "corloc": evaluate_corloc(boxes, gt),
                   "ap": evaluate_ap(dets, sorted(gt.items())),
                   "per_image": _per_image(boxes, gt, {i: t.score for i, t in top.items()})}
        if args.detections:
            with open(_out_path(args.detections), "w") as fh:
                for det in dets:
                    fh.write(io.dumps_line(io.detection_json(det)) + "\n")
    elif args.estimates:
        obj = io.read_json(_existing(args.estimates))
        if not isinstance(obj, dict) or obj.get("stage") not in ("mine-configs", "hardneg"):
            raise StageOrderError(f"{args.estimates}: expected mine-configs or hardneg output")
        boxes = {img: fg for img, (fg, _) in io.estimates_from_json(obj["estimates"]).items()}
        metrics = {"stage": "evaluate", "corloc": evaluate_corloc(boxes, gt), "ap": None,
                   "per_image": _per_image(boxes, gt)}
    else:
        raise SchemaError("evaluate needs --model or --estimates")
    io.write_json(_out_path(args.out), metrics)


def cmd_oracle(args, cfg: PipelineConfig) -> bool:
    d = _dataset(args.inp)
    disc = discover(d, cfg.k, cfg.theta, cfg.iou_min, cfg.max_clusters)
    checks = []
    brute = neighborhoods_bruteforce(d, disc.k)
    checks.append({"name": "neighborhoods", "ok": neighborhoods_match(brute, disc.neighborhoods)})
    naive = naive_greedy_select(disc.cover, disc.constraint, cfg.max_clusters)
    checks.append({"name": "lazy_greedy", "ok": naive.ids == disc.selection.ids
                   and naive.value == disc.selection.value})
    if len(disc.clusters) >= 2:
        fast = build_config_graph(disc.clusters, d, cfg.widths, cfg.cell)
        slow = config_graph_bruteforce(disc.clusters, d, cfg.widths, cfg.cell)
        checks.append({"name": "config_graph", "ok": sorted(fast.edges) == sorted(slow.edges)})
    if len(disc.cover.v) <= BRUTE_FORCE_LIMIT:
        opt = brute_force_select(disc.cover, disc.constraint)
        bound = opt.value / (disc.constraint.delta + 2)
        checks.append({"name": "greedy_bound", "ok": disc.selection.value >= bound,
                       "greedy": disc.selection.value, "optimum": opt.value})
    ok = all(c["ok"] for c in checks)
    io.write_json(_out_path(args.out), {"stage": "oracle", "ok": ok, "checks": checks})
    return ok


# --- entry point ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="partconf", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def stage(name: str, help: str, needs_in: bool = True) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="JSON or TOML pipeline config")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        if needs_in:
            p.add_argument("--in", dest="inp", required=True, help="dataset manifest (.jsonl)")
        p.add_argument("--out", required=True)
        return p

    p = stage("synth", "generate a synthetic dataset", needs_in=False)
    p.add_argument("--preset", help="bundled preset name (zero_noise, calibrated)")
    p.add_argument("--split", choices=("train", "test"), default="train")
    p = stage("discover", "neighborhoods, cover graph and greedy cluster selection")
    p.add_argument("--k", type=int)
    p.add_argument("--theta", type=int)
    p.add_argument("--max-clusters", type=int)
    p = stage("mine-configs", "mine cluster-pair configurations and foreground estimates")
    p.add_argument("--clusters", required=True, help="output of discover")
    p = stage("hardneg", "negatives from positive images")
    p.add_argument("--configs", required=True, help="output of mine-configs")
    p.add_argument("--mode", choices=NEGATIVE_MODES)
    p = stage("train", "train the detector")
    p.add_argument("--hardneg", required=True, help="output of hardneg")
    p.add_argument("--rounds", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lam", type=float)
    p = sub.add_parser("evaluate", help="CorLoc / AP against ground truth")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--gt", required=True, help="ground truth JSON {image_id: box}")
    p.add_argument("--model", help="output of train")
    p.add_argument("--in", dest="inp", help="manifest to detect on (with --model)")
    p.add_argument("--estimates", help="output of mine-configs or hardneg")
    p.add_argument("--detections", help="also write ranked detections (JSON lines)")
    p.add_argument("--out", required=True)
    stage("oracle", "cross-check fast paths against brute-force oracles")
    return ap


def _overrides(args, cfg: PipelineConfig) -> PipelineConfig:
    kw: dict[str, Any] = {}
    for flag, name in (("seed", "seed"), ("k", "k"), ("theta", "theta"),
                       ("max_clusters", "max_clusters"), ("rounds", "rounds"),
                       ("epochs", "epochs"), ("lam", "lam"), ("preset", "preset")):
        val = getattr(args, flag, None)
        if val is not None:
            kw[name] = val
    return replace(cfg, **kw).validate() if kw else cfg


COMMANDS = {"synth": cmd_synth, "discover": cmd_discover, "mine-configs": cmd_mine,
            "hardneg": cmd_hardneg, "train": cmd_train, "evaluate": cmd_evaluate,
            "oracle": cmd_oracle}


def _fail(kind: str, code: int, message: str) -> int:
    sys.stderr.write(io.dumps_line({"error": kind, "exit_code": code, "message": message}) + "\n")
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _overrides(args, load_config(args.config))
        result = COMMANDS[args.command](args, cfg)
    except PartconfError as exc:
        return _fail(type(exc).__name__, exc.exit_code, str(exc))
    except FileNotFoundError as exc:
        return _fail("MissingFileError", MissingFileError.exit_code, str(exc))
    except (ValueError, KeyError) as exc:
        return _fail(type(exc).__name__, 6, str(exc))
    if result is False:
        return _fail("OracleMismatch", 1, "one or more oracle checks failed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
