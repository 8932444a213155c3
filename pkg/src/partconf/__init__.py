"""Weakly supervised discovery of discriminative part configurations.

Pipeline: nearest-neighbor coverage graphs and constrained greedy cluster
selection (:mod:`cover`), configuration mining in transform space
(:mod:`configs`), geometric hard negatives (:mod:`hardneg`) and a linear
detector with mining and latent re-localization (:mod:`detector`).
"""
from .geom import Box, iou, union_bbox
from .features import Dataset, build_neighborhoods
from .synth import SynthSpec, generate, load_preset

__all__ = ["Box", "Dataset", "SynthSpec", "build_neighborhoods", "generate", "iou",
           "load_preset", "union_bbox"]
__version__ = "0.1.0"
