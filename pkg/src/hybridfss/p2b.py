"""Point-to-block alignment.

The masked support map is cut into non-overlapping m x m blocks, blocks are
ranked by how much of them the mask covers, and every query pixel runs the
decomposed attention of :mod:`hybridfss.p2p` against each of the k best
blocks separately. The k per-block results are averaged.

Block ``i`` sits at tile row ``i // (W/m)`` and tile column ``i % (W/m)``
(0-based, row-major); pixels inside a block are also row-major.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .p2p import Projection, _check_features, linear_context
from .tensor import (
    check_binary,
    flatten_tokens,
    masked_product,
    matmul,
    relu,
    unflatten_tokens,
)


@dataclass(frozen=True)
class PositionEmbedding:
    p_q: np.ndarray
    p_s: np.ndarray
    mode: str = "zeros"

    def __post_init__(self):
        if self.p_q.shape != self.p_s.shape or self.p_q.ndim != 2:
            raise DimensionError(
                f"position embeddings must share one H x W shape, got {self.p_q.shape} and {self.p_s.shape}"
            )

    @classmethod
    def zeros(cls, height: int, width: int, dtype=np.float32) -> "PositionEmbedding":
        return cls(np.zeros((height, width), dtype), np.zeros((height, width), dtype), "zeros")

    @classmethod
    def random(cls, height: int, width: int, seed: int, scale: float = 0.1, dtype=np.float32):
        rng = np.random.default_rng(seed)
        p_q = (scale * rng.standard_normal((height, width))).astype(dtype)
        p_s = (scale * rng.standard_normal((height, width))).astype(dtype)
        return cls(p_q, p_s, "seeded-random")

    @classmethod
    def from_mode(cls, mode: str, height: int, width: int, seed: int = 0):
        if mode == "zeros":
            return cls.zeros(height, width)
        if mode in ("random", "seeded-random"):
            return cls.random(height, width, seed)
        raise ValueError(f"unknown position-embedding mode {mode!r}")


@dataclass
class BlockSet:
    block_size: int
    blocks: np.ndarray
    importances: np.ndarray
    selected: list[int]


def add_position(f, p) -> np.ndarray:
    f = np.asarray(f)
    p = np.asarray(p)
    if f.ndim != 3 or p.shape != f.shape[1:]:
        raise DimensionError(f"position embedding {p.shape} does not match feature map {f.shape}")
    return f + p.astype(f.dtype, copy=False)[None, :, :]


def _check_block_size(height: int, width: int, m: int):
    if m < 1:
        raise ConfigError(f"block size must be >= 1, got {m}")
    if height % m or width % m:
        raise ConfigError(f"block size {m} does not divide spatial dims {height} x {width}")


def pad_to_multiple(f: np.ndarray, m: int) -> np.ndarray:
    """Zero-pad the last two axes at the bottom/right up to multiples of m."""
    h, w = f.shape[-2:]
    ph, pw = -h % m, -w % m
    if not (ph or pw):
        return f
    pad = [(0, 0)] * (f.ndim - 2) + [(0, ph), (0, pw)]
    return np.pad(f, pad)


def extract_blocks(f, m: int) -> np.ndarray:
    """C x H x W -> C x N x m^2 with N = (H/m)(W/m)."""
    f = np.asarray(f)
    if f.ndim != 3:
        raise DimensionError(f"expected a C x H x W feature map, got shape {f.shape}")
    c, h, w = f.shape
    _check_block_size(h, w, m)
    tiles = f.reshape(c, h // m, m, w // m, m).transpose(0, 1, 3, 2, 4)
    return np.ascontiguousarray(tiles.reshape(c, (h // m) * (w // m), m * m))


def reassemble_blocks(blocks, height: int, width: int) -> np.ndarray:
    """Inverse of :func:`extract_blocks`."""
    blocks = np.asarray(blocks)
    c, n, mm = blocks.shape
    m = int(round(mm ** 0.5))
    if m * m != mm:
        raise DimensionError(f"block length {mm} is not a square")
    _check_block_size(height, width, m)
    if n != (height // m) * (width // m):
        raise DimensionError(f"{n} blocks cannot tile {height} x {width} with m={m}")
    tiles = blocks.reshape(c, height // m, width // m, m, m).transpose(0, 1, 3, 2, 4)
    return np.ascontiguousarray(tiles.reshape(c, height, width))


def block_importance(mask, m: int) -> np.ndarray:
    """Fraction of each m x m block covered by the mask."""
    mask = check_binary(mask)
    if mask.ndim != 2:
        raise DimensionError(f"expected an H x W mask, got shape {mask.shape}")
    blocks = extract_blocks(mask[None].astype(np.float64), m)[0]
    return (blocks.sum(axis=1) / (m * m)).astype(np.float32)


def select_topk(importances, k: int) -> list[int]:
    """Indices of the k most important blocks.

    Descending importance, ties by ascending index; k is clamped to N and
    k <= 0 selects nothing.
    """
    imp = np.asarray(importances).reshape(-1)
    k = max(0, min(int(k), imp.size))
    order = np.argsort(-imp, kind="stable")
    return [int(i) for i in order[:k]]


def select_blocks(s_feat, s_mask, m: int, k: int) -> BlockSet:
    """Blocks of the masked support map and the top-k selection over them."""
    masked = masked_product(s_feat, s_mask)
    imp = block_importance(s_mask, m)
    return BlockSet(m, extract_blocks(masked, m), imp, select_topk(imp, k))


def p2b_align(
    q_feat,
    s_feat,
    s_mask,
    proj: Projection,
    pe: PositionEmbedding | None,
    m: int,
    k: int,
    pad: bool = False,
):
    """Mean over the k selected support blocks of block-local linear attention.

    With ``pad`` the support map and mask are zero-padded bottom/right to a
    multiple of ``m`` (padded pixels count as background); otherwise ``m``
    must divide H and W.
    """
    q_feat = np.asarray(q_feat)
    s_feat = np.asarray(s_feat)
    s_mask = check_binary(s_mask, "support mask")
    _check_features(q_feat, proj)
    _check_features(s_feat, proj)
    if q_feat.shape != s_feat.shape:
        raise DimensionError(f"query {q_feat.shape} and support {s_feat.shape} differ in shape")
    c, h, w = q_feat.shape
    if pe is None:
        pe = PositionEmbedding.zeros(h, w)
    if pe.p_q.shape != (h, w):
        raise DimensionError(f"position embedding {pe.p_q.shape} does not match {h} x {w}")

    support = add_position(masked_product(s_feat, s_mask), pe.p_s)
    mask = s_mask
    if pad:
        support = pad_to_multiple(support, m)
        mask = pad_to_multiple(np.asarray(s_mask), m)
    else:
        _check_block_size(h, w, m)

    imp = block_importance(mask, m)
    selected = select_topk(imp, k)
    q = matmul(flatten_tokens(add_position(q_feat, pe.p_q)), proj.w_q)
    if not selected:
        return np.zeros((c, h, w), dtype=q.dtype)

    blocks = extract_blocks(support, m)
    context = np.zeros((c, c), dtype=q.dtype)
    # fixed ascending block order keeps the reduction reproducible
    for j in sorted(selected):
        tokens = np.ascontiguousarray(blocks[:, j, :].T)
        context += linear_context(matmul(tokens, proj.w_k), matmul(tokens, proj.w_v))
    context /= len(selected)
    return unflatten_tokens(matmul(relu(q), context), h, w)
