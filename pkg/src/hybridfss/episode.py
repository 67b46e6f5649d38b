"""K-shot episodes: containers, a seeded synthetic generator, and directory I/O.

Synthetic feature fields are built so that the ideal segmentation is known in
closed form. Channel ``c`` (for ``c`` below the total class count) is the
one-hot embedding of class ``c``; an object pixel carries its class embedding
plus isotropic Gaussian noise, a background pixel carries the noise alone.

Random stream
-------------
Every episode draws from ``numpy.random.default_rng(SeedSequence([seed,
episode_index, class_id]))`` in this fixed order:

1. for each support ``i`` in ``0..K-1``: object height, object width, top row,
   left column (``rng.integers``, inclusive-exclusive bounds as in
   :func:`_draw_rect`), then a ``C x H x W`` standard-normal noise field;
2. query target rectangle (four draws as above);
3. one ``rng.random()`` draw deciding whether a latent object is present; if
   so, ``rng.integers(len(candidates))`` picks its class and rectangles are
   drawn until one does not overlap the target (at most 64 attempts, the last
   attempt is kept regardless);
4. the query ``C x H x W`` noise field.

Object side lengths are uniform integers in ``[ceil(H/4), floor(H/2)]``
(likewise for W).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, FormatError
from .tensor import check_binary, load_jcat, save_jcat

MANIFEST_VERSION = 1
_LATENT_ATTEMPTS = 64


@dataclass(frozen=True)
class SyntheticConfig:
    channels: int = 16
    height: int = 16
    width: int = 16
    shot: int = 1
    num_base_classes: int = 4
    num_novel_classes: int = 1
    noise_sigma: float = 0.05
    latent_object_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.num_base_classes < 1 or self.num_novel_classes < 0:
            raise ConfigError("need at least one base class and a non-negative novel class count")
        if self.channels < self.num_base_classes + max(self.num_novel_classes, 1):
            raise ConfigError(
                f"channels={self.channels} cannot hold {self.num_classes} orthogonal class "
                f"embeddings (need channels >= num_base_classes + 1)"
            )
        if self.shot < 1:
            raise ConfigError("shot must be >= 1")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")
        if not 0.0 <= self.latent_object_rate <= 1.0:
            raise ConfigError("latent_object_rate must lie in [0, 1]")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        for name, size in (("height", self.height), ("width", self.width)):
            if size < 2:
                raise ConfigError(f"{name}={size} is too small to hold an object of side >= {name}/4")

    @property
    def num_classes(self) -> int:
        return self.num_base_classes + self.num_novel_classes

    @property
    def base_classes(self) -> list[int]:
        return list(range(self.num_base_classes))

    @property
    def novel_classes(self) -> list[int]:
        return list(range(self.num_base_classes, self.num_classes))


@dataclass
class SupportPair:
    features: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        check_binary(self.mask, "support mask")
        if self.features.ndim != 3 or self.mask.shape != self.features.shape[1:]:
            raise DimensionError(
                f"support mask {self.mask.shape} does not match features {self.features.shape}"
            )


@dataclass(eq=False)
class EpisodeTask:
    supports: list[SupportPair]
    query_features: np.ndarray
    query_gt: np.ndarray
    class_id: int
    latent_class: int | None = None
    latent_mask: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.supports:
            raise ConfigError("an episode needs at least one support pair")
        shape = self.query_features.shape
        for s in self.supports:
            if s.features.shape != shape:
                raise DimensionError(f"support features {s.features.shape} != query {shape}")
        check_binary(self.query_gt, "query ground truth")
        if self.query_gt.shape != shape[1:]:
            raise DimensionError(f"query mask {self.query_gt.shape} does not match {shape}")

    @property
    def shot(self) -> int:
        return len(self.supports)

    @property
    def has_latent_object(self) -> bool:
        return self.latent_mask is not None and bool(np.any(self.latent_mask))

    def tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for i, s in enumerate(self.supports):
            out[f"support_{i}_feat"] = s.features
            out[f"support_{i}_mask"] = s.mask
        out["query_feat"] = self.query_features
        out["query_gt"] = self.query_gt
        if self.latent_mask is not None:
            out["query_latent"] = self.latent_mask
        return out

    def __eq__(self, other):
        if not isinstance(other, EpisodeTask):
            return NotImplemented
        if (self.class_id, self.latent_class) != (other.class_id, other.latent_class):
            return False
        mine, theirs = self.tensors(), other.tensors()
        if mine.keys() != theirs.keys():
            return False
        return all(
            mine[k].dtype == theirs[k].dtype
            and mine[k].shape == theirs[k].shape
            and mine[k].tobytes() == theirs[k].tobytes()
            for k in mine
        )


def side_range(size: int) -> tuple[int, int]:
    """Inclusive bounds on an object side for a spatial extent of ``size``."""
    lo = max(1, math.ceil(size / 4))
    hi = size // 2
    if hi < lo:
        raise ConfigError(f"no object side fits in [{size}/4, {size}/2]")
    return lo, hi


def _draw_rect(rng: np.random.Generator, height: int, width: int) -> tuple[int, int, int, int]:
    hlo, hhi = side_range(height)
    wlo, whi = side_range(width)
    h = int(rng.integers(hlo, hhi + 1))
    w = int(rng.integers(wlo, whi + 1))
    y0 = int(rng.integers(0, height - h + 1))
    x0 = int(rng.integers(0, width - w + 1))
    return y0, x0, h, w


def _rect_mask(rect, height: int, width: int) -> np.ndarray:
    y0, x0, h, w = rect
    m = np.zeros((height, width), dtype=np.float32)
    m[y0:y0 + h, x0:x0 + w] = 1.0
    return m


def episode_rng(seed: int, episode_index: int, class_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, episode_index, class_id]))


def _features(signal: np.ndarray, noise: np.ndarray, sigma: float) -> np.ndarray:
    return (signal + sigma * noise).astype(np.float32)


def generate_episode(cfg: SyntheticConfig, class_id: int, episode_index: int = 0) -> EpisodeTask:
    """Generate one K-shot episode for ``class_id``.

    Pure in ``(cfg, class_id, episode_index)``.
    """
    if not 0 <= class_id < cfg.num_classes:
        raise ConfigError(f"class {class_id} outside [0, {cfg.num_classes})")
    C, H, W = cfg.channels, cfg.height, cfg.width
    rng = episode_rng(cfg.seed, episode_index, class_id)

    supports = []
    for _ in range(cfg.shot):
        mask = _rect_mask(_draw_rect(rng, H, W), H, W)
        noise = rng.standard_normal((C, H, W))
        signal = np.zeros((C, H, W))
        signal[class_id] = mask
        supports.append(SupportPair(_features(signal, noise, cfg.noise_sigma), mask))

    target = _rect_mask(_draw_rect(rng, H, W), H, W)
    latent_class = None
    latent_mask = None
    if rng.random() < cfg.latent_object_rate:
        candidates = [c for c in cfg.base_classes if c != class_id]
        if not candidates:
            candidates = [c for c in range(cfg.num_classes) if c != class_id]
        if candidates:
            latent_class = candidates[int(rng.integers(len(candidates)))]
            for _ in range(_LATENT_ATTEMPTS):
                region = _rect_mask(_draw_rect(rng, H, W), H, W)
                if not np.any(region * target):
                    break
            latent_mask = region * (1.0 - target)

    noise = rng.standard_normal((C, H, W))
    signal = np.zeros((C, H, W))
    if latent_mask is not None:
        signal[latent_class] = latent_mask
    signal[class_id] = target
    query = _features(signal, noise, cfg.noise_sigma)

    return EpisodeTask(
        supports=supports,
        query_features=query,
        query_gt=target,
        class_id=class_id,
        latent_class=latent_class,
        latent_mask=None if latent_mask is None else latent_mask.astype(np.float32),
        metadata={"episode_index": episode_index, "seed": cfg.seed},
    )


def generate_instance(cfg: SyntheticConfig, class_id: int, instance_index: int) -> SupportPair:
    """One labelled (features, mask) pair, e.g. for building a base-class bank.

    Drawn from the support stream of a dedicated one-shot episode so instances
    never coincide with evaluation episodes generated from the same seed.
    """
    one_shot = replace(cfg, shot=1, latent_object_rate=0.0)
    rng_index = 1_000_000 + instance_index
    return generate_episode(one_shot, class_id, rng_index).supports[0]


# directory I/O

def save_episode(path: str | os.PathLike, task: EpisodeTask) -> None:
    """Write ``task`` as a directory of JCAT tensors plus ``manifest.json``."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    supports = []
    for i, s in enumerate(task.supports):
        feat, mask = f"support_{i}_feat.jcat", f"support_{i}_mask.jcat"
        save_jcat(root / feat, s.features)
        save_jcat(root / mask, s.mask)
        supports.append({"features": feat, "mask": mask})
    save_jcat(root / "query_feat.jcat", task.query_features)
    save_jcat(root / "query_gt.jcat", task.query_gt)
    latent_file = None
    if task.latent_mask is not None:
        latent_file = "query_latent.jcat"
        save_jcat(root / latent_file, task.latent_mask)
    manifest = {
        "version": MANIFEST_VERSION,
        "class_id": task.class_id,
        "K": task.shot,
        "supports": supports,
        "query_features": "query_feat.jcat",
        "query_gt": "query_gt.jcat",
        "latent_object": task.has_latent_object,
        "latent_class": task.latent_class,
        "latent_mask": latent_file,
        "metadata": task.metadata,
    }
    with open(root / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_episode(path: str | os.PathLike) -> EpisodeTask:
    root = Path(path)
    with open(root / "manifest.json") as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"unreadable manifest in {root}: {exc}") from exc
    if manifest.get("version") != MANIFEST_VERSION:
        raise FormatError(f"unsupported episode manifest version {manifest.get('version')!r}")
    try:
        supports = [
            SupportPair(load_jcat(root / s["features"]), load_jcat(root / s["mask"]))
            for s in manifest["supports"]
        ]
        if len(supports) != manifest["K"]:
            raise FormatError(f"manifest declares K={manifest['K']} but lists {len(supports)} supports")
        latent = manifest.get("latent_mask")
        return EpisodeTask(
            supports=supports,
            query_features=load_jcat(root / manifest["query_features"]),
            query_gt=load_jcat(root / manifest["query_gt"]),
            class_id=int(manifest["class_id"]),
            latent_class=manifest.get("latent_class"),
            latent_mask=None if latent is None else load_jcat(root / latent),
            metadata=manifest.get("metadata", {}),
        )
    except KeyError as exc:
        raise FormatError(f"manifest in {root} is missing key {exc}") from exc
