"""Hybrid prototypes and the multi-level (feature pyramid) driver."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .episode import EpisodeTask
from .errors import ConfigError, DimensionError
from .p2b import PositionEmbedding, p2b_align
from .p2p import Projection, p2p_align

COMBINE_MODES = ("add", "multiply", "concat")
REFERENCE_TOPK_SCHEDULE = (60, 20, 5, 3)


def hybrid_combine(p2p, p2b, mode: str = "add") -> np.ndarray:
    p2p = np.asarray(p2p)
    p2b = np.asarray(p2b)
    if p2p.shape != p2b.shape:
        raise DimensionError(f"cannot combine prototypes of shapes {p2p.shape} and {p2b.shape}")
    if mode == "add":
        return p2p + p2b
    if mode == "multiply":
        return p2p * p2b
    if mode == "concat":
        return np.concatenate([p2p, p2b], axis=0)
    raise ConfigError(f"unknown combine mode {mode!r}; expected one of {COMBINE_MODES}")


def avg_pool2(x: np.ndarray) -> np.ndarray:
    """2x2 average pooling over the last two axes (both must be even)."""
    *lead, h, w = x.shape
    if h % 2 or w % 2:
        raise ConfigError(f"cannot 2x2-pool odd spatial dims {h} x {w}")
    return x.reshape(*lead, h // 2, 2, w // 2, 2).mean(axis=(-3, -1)).astype(x.dtype)


def max_pool2(x: np.ndarray) -> np.ndarray:
    """2x2 max pooling over the last two axes; keeps binary masks binary."""
    *lead, h, w = x.shape
    if h % 2 or w % 2:
        raise ConfigError(f"cannot 2x2-pool odd spatial dims {h} x {w}")
    return x.reshape(*lead, h // 2, 2, w // 2, 2).max(axis=(-3, -1))


def pool_steps(src: tuple[int, int], dst: tuple[int, int]) -> int:
    """Number of 2x2 poolings taking ``src`` dims to ``dst`` dims."""
    h, w = src
    steps = 0
    while (h, w) != tuple(dst):
        if h % 2 or w % 2 or h <= dst[0] or w <= dst[1]:
            raise ConfigError(f"level dims {dst} are not reachable from {src} by 2x2 pooling")
        h, w = h // 2, w // 2
        steps += 1
    return steps


def downsample_features(f: np.ndarray, steps: int) -> np.ndarray:
    for _ in range(steps):
        f = avg_pool2(f)
    return f


def downsample_mask(m: np.ndarray, steps: int) -> np.ndarray:
    for _ in range(steps):
        m = max_pool2(m)
    return m


def upsample_nearest(x: np.ndarray, steps: int) -> np.ndarray:
    for _ in range(steps):
        x = np.repeat(np.repeat(x, 2, axis=-2), 2, axis=-1)
    return x


@dataclass
class PyramidConfig:
    """Per-level geometry and block budget.

    Exactly one of ``topk_schedule`` (absolute k per level) and
    ``topk_fraction`` (k_l = ceil(fraction * N_l)) is used; the schedule wins
    when both are given.
    """

    level_dims: list[tuple[int, int]]
    block_sizes: list[int]
    topk_schedule: list[int] | None = None
    topk_fraction: float | None = 0.2
    combine_mode: str = "add"
    pad: bool = False
    _k: list[int] = field(init=False, repr=False, default_factory=list)

    def __post_init__(self):
        self.level_dims = [tuple(int(v) for v in d) for d in self.level_dims]
        L = len(self.level_dims)
        if L < 1:
            raise ConfigError("a pyramid needs at least one level")
        if len(self.block_sizes) != L:
            raise ConfigError(f"{len(self.block_sizes)} block sizes for {L} levels")
        if self.combine_mode not in COMBINE_MODES:
            raise ConfigError(f"unknown combine mode {self.combine_mode!r}")
        if self.topk_schedule is not None:
            if len(self.topk_schedule) != L:
                raise ConfigError(f"top-k schedule has {len(self.topk_schedule)} entries for {L} levels")
            ks = [int(k) for k in self.topk_schedule]
            if any(b > a for a, b in zip(ks, ks[1:])):
                raise ConfigError(f"top-k schedule {ks} must not increase with level")
        elif self.topk_fraction is not None:
            if not 0.0 < self.topk_fraction <= 1.0:
                raise ConfigError(f"topk_fraction must lie in (0, 1], got {self.topk_fraction}")
            ks = [math.ceil(self.topk_fraction * self.num_blocks(l)) for l in range(L)]
        else:
            raise ConfigError("either topk_schedule or topk_fraction is required")
        for l, k in enumerate(ks):
            n = self.num_blocks(l)
            if k < 0 or k > n:
                raise ConfigError(f"level {l}: k={k} exceeds the {n} available blocks")
        self._k = ks

    @property
    def levels(self) -> int:
        return len(self.level_dims)

    def num_blocks(self, level: int) -> int:
        (h, w), m = self.level_dims[level], self.block_sizes[level]
        if m < 1:
            raise ConfigError(f"level {level}: block size must be >= 1")
        if self.pad:
            return math.ceil(h / m) * math.ceil(w / m)
        if h % m or w % m:
            raise ConfigError(f"level {level}: block size {m} does not divide {h} x {w}")
        return (h // m) * (w // m)

    def topk(self, level: int) -> int:
        return self._k[level]

    @classmethod
    def halving(cls, height: int, width: int, levels: int, block_size: int = 2, **kwargs):
        """Levels at full, 1/2, 1/4, ... resolution sharing one block size."""
        dims = [(height >> l, width >> l) for l in range(levels)]
        return cls(dims, [block_size] * levels, **kwargs)


def align_level(q_feat, s_feat, s_mask, cfg: PyramidConfig, level: int,
                proj: Projection, pe: PositionEmbedding | None,
                use_p2p: bool = True, use_p2b: bool = True) -> np.ndarray:
    """Hybrid prototype for one already-downsampled level."""
    c, h, w = np.shape(q_feat)
    # a disabled branch contributes the neutral element of the combine mode
    neutral = np.ones if cfg.combine_mode == "multiply" else np.zeros
    if use_p2p:
        dense = p2p_align(q_feat, s_feat, s_mask, proj)
    else:
        dense = neutral((c, h, w), dtype=np.float32)
    if use_p2b:
        sparse = p2b_align(q_feat, s_feat, s_mask, proj, pe, cfg.block_sizes[level],
                           cfg.topk(level), pad=cfg.pad)
    else:
        sparse = neutral((c, h, w), dtype=dense.dtype)
    return hybrid_combine(dense, sparse, cfg.combine_mode)


def pyramid_align(
    episode: EpisodeTask,
    cfg: PyramidConfig,
    projections: list[Projection] | None = None,
    embeddings: list[PositionEmbedding] | None = None,
    shot: int = 0,
    use_p2p: bool = True,
    use_p2b: bool = True,
) -> list[np.ndarray]:
    """One hybrid prototype per pyramid level for support ``shot``."""
    support = episode.supports[shot]
    c, h, w = episode.query_features.shape
    if projections is None:
        projections = [Projection.identity(c)] * cfg.levels
    if embeddings is None:
        embeddings = [PositionEmbedding.zeros(*d) for d in cfg.level_dims]
    if len(projections) != cfg.levels or len(embeddings) != cfg.levels:
        raise ConfigError("need one projection and one position embedding per level")

    out = []
    for level, dims in enumerate(cfg.level_dims):
        steps = pool_steps((h, w), dims)
        q = downsample_features(episode.query_features, steps)
        s = downsample_features(support.features, steps)
        m = downsample_mask(support.mask, steps)
        out.append(align_level(q, s, m, cfg, level, projections[level], embeddings[level],
                               use_p2p=use_p2p, use_p2b=use_p2b))
    return out
