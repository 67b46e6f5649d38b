"""Class-agnostic knowledge mining from base-class prototypes."""

from __future__ import annotations

import json
import os
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, EmptyMaskError, FormatError
from .tensor import check_binary, load_jcat, save_jcat

BANK_SIDECAR_VERSION = 1


@dataclass(eq=False)
class BasePrototypeBank:
    prototypes: np.ndarray  # |C_base| x C
    class_ids: list[int]
    instance_counts: list[int]

    def __post_init__(self):
        if self.prototypes.ndim != 2 or self.prototypes.shape[0] < 1:
            raise DimensionError(f"bank must be a non-empty 2-D matrix, got {self.prototypes.shape}")
        if len(self.class_ids) != self.prototypes.shape[0] or len(self.instance_counts) != len(self.class_ids):
            raise DimensionError("bank rows, class ids and instance counts disagree in length")
        if not np.all(np.isfinite(self.prototypes)):
            raise ValueError("bank prototypes must be finite")

    @property
    def channels(self) -> int:
        return self.prototypes.shape[1]

    def __eq__(self, other):
        if not isinstance(other, BasePrototypeBank):
            return NotImplemented
        return (
            self.class_ids == other.class_ids
            and self.instance_counts == other.instance_counts
            and self.prototypes.dtype == other.prototypes.dtype
            and self.prototypes.shape == other.prototypes.shape
            and self.prototypes.tobytes() == other.prototypes.tobytes()
        )


def wgap(f, mask) -> np.ndarray:
    """Mean feature vector over the foreground of ``mask``, shape 1 x C."""
    f = np.asarray(f)
    mask = check_binary(mask)
    if f.ndim != 3 or mask.shape != f.shape[1:]:
        raise DimensionError(f"mask {mask.shape} does not match feature map {f.shape}")
    area = mask.sum()
    if area == 0:
        raise EmptyMaskError("weighted GAP needs at least one foreground pixel")
    w = mask.astype(f.dtype, copy=False)
    return ((f * w).sum(axis=(1, 2)) / area).astype(f.dtype)[None, :]


def build_bank(instances) -> BasePrototypeBank:
    """Average the wGAP vectors of each class's instances.

    ``instances`` yields ``(features, mask, class_id)``; rows come out in
    ascending class id and are accumulated in float64 in input order.
    """
    sums: dict[int, np.ndarray] = {}
    counts: dict[int, int] = defaultdict(int)
    dtype = None
    for features, mask, class_id in instances:
        v = wgap(features, mask)[0]
        dtype = dtype or v.dtype
        class_id = int(class_id)
        if class_id in sums:
            if v.shape != sums[class_id].shape:
                raise DimensionError(f"class {class_id}: channel count changed between instances")
            sums[class_id] += v.astype(np.float64)
        else:
            sums[class_id] = v.astype(np.float64)
        counts[class_id] += 1
    if not sums:
        raise ConfigError("cannot build a prototype bank from zero instances")
    ids = sorted(sums)
    widths = {sums[c].shape for c in ids}
    if len(widths) != 1:
        raise DimensionError(f"instances disagree in channel count: {sorted(widths)}")
    protos = np.stack([sums[c] / counts[c] for c in ids]).astype(dtype)
    return BasePrototypeBank(protos, ids, [counts[c] for c in ids])


def build_bank_for_classes(instances, class_ids) -> BasePrototypeBank:
    """:func:`build_bank`, additionally requiring every listed class to appear."""
    instances = list(instances)
    seen = {int(c) for _, _, c in instances}
    missing = sorted(set(int(c) for c in class_ids) - seen)
    if missing:
        raise ConfigError(f"base classes without any instance: {missing}")
    return build_bank(instances)


def probability_map(bank: BasePrototypeBank, q_feat, normalize: bool = False) -> np.ndarray:
    """Mean over base prototypes of their dot product with every query pixel, 1 x H x W.

    With ``normalize`` both sides are L2-normalised first (cosine); zero
    vectors contribute 0.
    """
    q_feat = np.asarray(q_feat)
    if q_feat.ndim != 3 or q_feat.shape[0] != bank.channels:
        raise DimensionError(
            f"query features {q_feat.shape} do not match bank width {bank.channels}"
        )
    c, h, w = q_feat.shape
    protos = bank.prototypes.astype(q_feat.dtype, copy=False)
    pixels = q_feat.reshape(c, h * w)
    if normalize:
        pn = np.linalg.norm(protos, axis=1, keepdims=True)
        protos = np.divide(protos, pn, out=np.zeros_like(protos), where=pn > 0)
        qn = np.linalg.norm(pixels, axis=0, keepdims=True)
        pixels = np.divide(pixels, qn, out=np.zeros_like(pixels), where=qn > 0)
    # mean over rows commutes with the dot product
    scores = protos.mean(axis=0) @ pixels
    return scores.reshape(1, h, w).astype(q_feat.dtype)


def save_bank(path: str | os.PathLike, bank: BasePrototypeBank) -> None:
    """Write ``<path>`` (JCAT matrix) and ``<path>.json`` (class ids, counts)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_jcat(path, bank.prototypes)
    sidecar = {
        "version": BANK_SIDECAR_VERSION,
        "class_ids": list(bank.class_ids),
        "instance_counts": list(bank.instance_counts),
    }
    with open(_sidecar(path), "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_bank(path: str | os.PathLike) -> BasePrototypeBank:
    path = Path(path)
    protos = load_jcat(path)
    with open(_sidecar(path)) as fh:
        try:
            meta = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"unreadable bank sidecar: {exc}") from exc
    if meta.get("version") != BANK_SIDECAR_VERSION:
        raise FormatError(f"unsupported bank sidecar version {meta.get('version')!r}")
    return BasePrototypeBank(protos, [int(c) for c in meta["class_ids"]],
                             [int(n) for n in meta["instance_counts"]])


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")
