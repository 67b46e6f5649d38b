"""IoU, foreground-background IoU and per-fold reports."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .tensor import check_binary


def _pair(pred, gt):
    pred = check_binary(pred, "prediction").astype(bool)
    gt = check_binary(gt, "ground truth").astype(bool)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    return pred, gt


def _counts(pred: np.ndarray, gt: np.ndarray) -> tuple[int, int]:
    return int(np.count_nonzero(pred & gt)), int(np.count_nonzero(pred | gt))


def _ratio(inter: int, union: int) -> float:
    # two empty masks agree perfectly
    return 1.0 if union == 0 else inter / union


def iou(pred, gt) -> float:
    pred, gt = _pair(pred, gt)
    return _ratio(*_counts(pred, gt))


def fb_iou(pred, gt) -> float:
    pred, gt = _pair(pred, gt)
    return 0.5 * (_ratio(*_counts(pred, gt)) + _ratio(*_counts(~pred, ~gt)))


@dataclass
class EvalReport:
    per_class_iou: dict[int, float]
    miou: float
    fb_iou: float
    episode_count: int

    def to_dict(self) -> dict:
        return {
            "miou": self.miou,
            "fb_iou": self.fb_iou,
            "per_class": {str(k): v for k, v in sorted(self.per_class_iou.items())},
            "episodes": self.episode_count,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def fold_report(episodes) -> EvalReport:
    """Aggregate ``(pred, gt, class_id)`` triples.

    Each class's IoU uses intersection and union summed over its episodes;
    mIoU is the unweighted mean over classes. FB-IoU sums foreground and
    background counts over all episodes.
    """
    inter: dict[int, int] = defaultdict(int)
    union: dict[int, int] = defaultdict(int)
    fg = [0, 0]
    bg = [0, 0]
    n = 0
    for pred, gt, class_id in episodes:
        pred, gt = _pair(pred, gt)
        i, u = _counts(pred, gt)
        inter[int(class_id)] += i
        union[int(class_id)] += u
        fg[0] += i
        fg[1] += u
        bi, bu = _counts(~pred, ~gt)
        bg[0] += bi
        bg[1] += bu
        n += 1
    if n == 0:
        raise ValueError("fold_report needs at least one episode")
    per_class = {c: _ratio(inter[c], union[c]) for c in sorted(inter)}
    miou = sum(per_class.values()) / len(per_class)
    fb = 0.5 * (_ratio(*fg) + _ratio(*bg))
    return EvalReport(per_class, miou, fb, n)
