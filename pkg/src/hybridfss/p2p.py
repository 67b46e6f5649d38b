"""Point-to-point alignment with decomposed (linear) attention.

Query tokens attend to masked support tokens. The factored kernel
:func:`p2p_align` evaluates ``ReLU(Q) @ (softmax(K)^T @ V)``; the C x C
context matrix is formed first, so the cost is O(HW * C^2) and no HW x HW map
is ever built. :func:`explicit_attention_oracle`, :func:`nla_align` and
:func:`cosine_align` are the comparison variants used for verification and
benchmarking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .tensor import (
    check_binary,
    flatten_tokens,
    masked_product,
    matmul,
    relu,
    result_dtype,
    softmax,
    unflatten_tokens,
)

NLA_EPS = 1e-5
# bytes of one C x chunk float32 slab; keeps the streaming working set in L2
CHUNK_BYTES = 128 * 1024


@dataclass(frozen=True)
class Projection:
    """Fixed query/key/value projections, each C x C."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    mode: str = "identity"

    def __post_init__(self):
        shapes = {w.shape for w in (self.w_q, self.w_k, self.w_v)}
        if len(shapes) != 1:
            raise DimensionError(f"projection matrices disagree in shape: {sorted(shapes)}")
        (shape,) = shapes
        if len(shape) != 2 or shape[0] != shape[1]:
            raise DimensionError(f"projection matrices must be square, got {shape}")

    @property
    def channels(self) -> int:
        return self.w_q.shape[0]

    @classmethod
    def identity(cls, channels: int, dtype=np.float32) -> "Projection":
        eye = np.eye(channels, dtype=dtype)
        return cls(eye, eye.copy(), eye.copy(), "identity")

    @classmethod
    def random(cls, channels: int, seed: int, dtype=np.float32) -> "Projection":
        """Seeded orthonormal projections (QR of a Gaussian matrix, sign-fixed)."""
        rng = np.random.default_rng(seed)
        mats = []
        for _ in range(3):
            q, r = np.linalg.qr(rng.standard_normal((channels, channels)))
            q *= np.sign(np.where(np.diag(r) == 0, 1.0, np.diag(r)))
            mats.append(q.astype(dtype))
        return cls(*mats, mode="seeded-random")

    @classmethod
    def from_mode(cls, mode: str, channels: int, seed: int = 0) -> "Projection":
        if mode == "identity":
            return cls.identity(channels)
        if mode in ("random", "seeded-random"):
            return cls.random(channels, seed)
        raise ValueError(f"unknown projection mode {mode!r}")

    def astype(self, dtype) -> "Projection":
        return Projection(
            self.w_q.astype(dtype), self.w_k.astype(dtype), self.w_v.astype(dtype), self.mode
        )


def _check_features(f: np.ndarray, proj: Projection):
    if f.ndim != 3:
        raise DimensionError(f"expected a C x H x W feature map, got shape {f.shape}")
    if f.shape[0] != proj.channels:
        raise DimensionError(
            f"feature map has {f.shape[0]} channels but projection is {proj.w_q.shape}"
        )


def project(f, proj: Projection):
    """Flatten ``f`` (C x H x W) to HW tokens and apply the three projections."""
    f = np.asarray(f)
    _check_features(f, proj)
    tokens = flatten_tokens(f)
    return matmul(tokens, proj.w_q), matmul(tokens, proj.w_k), matmul(tokens, proj.w_v)


def _checked(q_feat, s_feat, s_mask, proj):
    check_binary(s_mask, "support mask")
    _check_features(q_feat, proj)
    _check_features(s_feat, proj)
    if q_feat.shape != s_feat.shape:
        raise DimensionError(f"query {q_feat.shape} and support {s_feat.shape} differ in shape")
    if np.shape(s_mask) != q_feat.shape[1:]:
        raise DimensionError(f"mask of shape {np.shape(s_mask)} does not match feature map {s_feat.shape}")


def _masked_inputs(q_feat, s_feat, s_mask, proj):
    q_feat = np.asarray(q_feat)
    s_feat = np.asarray(s_feat)
    _checked(q_feat, s_feat, s_mask, proj)
    return q_feat, masked_product(s_feat, s_mask)


def _prepare(q_feat, s_feat, s_mask, proj):
    """Token-major Q, K, V (HW x C)."""
    q_feat, masked = _masked_inputs(q_feat, s_feat, s_mask, proj)
    support = flatten_tokens(masked)
    q = matmul(flatten_tokens(q_feat), proj.w_q)
    return q, matmul(support, proj.w_k), matmul(support, proj.w_v)


def key_weights(k: np.ndarray, token_mask: np.ndarray | None = None) -> np.ndarray:
    """softmax of the keys over the token axis, separately for each channel.

    With ``token_mask`` the masked-out tokens get zero weight and the softmax
    is renormalised over the remaining ones.
    """
    if token_mask is None:
        return softmax(k, axis=0)
    keep = np.asarray(token_mask, dtype=bool).reshape(-1)
    w = np.zeros_like(k)
    if keep.any():
        w[keep] = softmax(k[keep], axis=0)
    return w


def linear_context(k: np.ndarray, v: np.ndarray, token_mask=None) -> np.ndarray:
    """C x C context ``softmax(K)^T @ V``."""
    return matmul(key_weights(k, token_mask).T, v)


def _token_chunks(tokens: int, channels: int):
    step = max(64, CHUNK_BYTES // (4 * channels))
    for start in range(0, tokens, step):
        yield slice(start, min(start + step, tokens))


def streaming_context(fs, mask, w_k, w_v, keep=None) -> np.ndarray:
    """C x C context ``softmax(K)^T @ V`` in one pass over chunks of support tokens.

    ``fs`` is the C x HW support map and ``mask`` its flattened mask. The
    per-channel softmax over tokens is accumulated online: a running maximum,
    a running normaliser and a running context, rescaled whenever the maximum
    grows. ``keep`` restricts the softmax to the flagged tokens; with no token
    kept the context is zero.
    """
    c, n = fs.shape
    dtype = result_dtype(fs, w_k, w_v)
    run_max = np.full(c, -np.inf, dtype=dtype)
    total = np.zeros(c, dtype=dtype)
    acc = np.zeros((c, c), dtype=dtype)
    for sl in _token_chunks(n, c):
        f = fs[:, sl] * mask[sl]
        if keep is not None:
            cols = keep[sl]
            if not cols.any():
                continue
            f = f[:, cols]
        k = matmul(w_k.T, f)
        v = matmul(w_v.T, f)
        new_max = np.maximum(run_max, k.max(axis=1))
        scale = np.exp(run_max - new_max)
        e = np.exp(k - new_max[:, None])
        total = total * scale + e.sum(axis=1)
        acc = acc * scale[:, None] + matmul(e, v.T)
        run_max = new_max
    if not np.isfinite(run_max).all():
        return np.zeros((c, c), dtype=dtype)
    return acc / total[:, None]


def p2p_align(q_feat, s_feat, s_mask, proj: Projection, exclude_masked_tokens: bool = False):
    """Class-aware field for every query pixel, C x H x W.

    ``exclude_masked_tokens`` drops background support tokens from the key
    softmax instead of letting their (zero) keys take part in it.

    Both passes stream over token chunks small enough to stay in cache, so
    the cost per token does not grow with the map size.
    """
    q_feat = np.asarray(q_feat)
    s_feat = np.asarray(s_feat)
    _checked(q_feat, s_feat, s_mask, proj)
    c, h, w = q_feat.shape
    mask = np.asarray(s_mask).reshape(-1).astype(s_feat.dtype)
    keep = mask.astype(bool) if exclude_masked_tokens else None
    ctx_t = np.ascontiguousarray(streaming_context(s_feat.reshape(c, -1), mask,
                                                   proj.w_k, proj.w_v, keep).T)
    fq = q_feat.reshape(c, -1)
    out = np.empty((c, h * w), dtype=result_dtype(q_feat, s_feat, proj.w_q))
    # (ReLU(Q) @ ctx)^T = ctx^T @ ReLU(Q)^T keeps the result channel-major
    for sl in _token_chunks(h * w, c):
        out[:, sl] = matmul(ctx_t, relu(matmul(proj.w_q.T, fq[:, sl])))
    return out.reshape(c, h, w)


def explicit_attention_oracle(
    q_feat, s_feat, s_mask, proj: Projection, flag: str = "unfactored",
    exclude_masked_tokens: bool = False,
):
    """Reference attention that materialises the HW x HW map.

    ``flag="unfactored"`` evaluates the same expression as :func:`p2p_align`
    in the other association order, ``(ReLU(Q) @ softmax(K)^T) @ V``.
    ``flag="na"`` is ordinary attention, ``softmax(Q @ K^T, rows) @ V``.
    """
    q, k, v = _prepare(q_feat, s_feat, s_mask, proj)
    if flag == "unfactored":
        token_mask = np.asarray(s_mask) if exclude_masked_tokens else None
        attn = matmul(relu(q), key_weights(k, token_mask).T)
    elif flag == "na":
        scores = matmul(q, k.T)
        if exclude_masked_tokens:
            keep = np.asarray(s_mask, dtype=bool).reshape(-1)
            if not keep.any():
                return np.zeros(np.shape(q_feat), dtype=q.dtype)
            scores = np.where(keep[None, :], scores, -np.inf)
        attn = softmax(scores, axis=1)
    else:
        raise ValueError(f"unknown oracle flag {flag!r}")
    _, h, w = np.shape(q_feat)
    return unflatten_tokens(matmul(attn, v), h, w)


def standardize_channels(q: np.ndarray, eps: float = NLA_EPS, axis: int = 0) -> np.ndarray:
    """Zero-mean, unit-variance per channel over tokens.

    ``axis`` is the token axis: 0 for tokens x C input, 1 for C x tokens.
    """
    centred = q - q.mean(axis=axis, keepdims=True)
    return centred / np.sqrt(centred.var(axis=axis, keepdims=True) + eps)


def nla_align(q_feat, s_feat, s_mask, proj: Projection, eps: float = NLA_EPS):
    """Linear attention with per-channel standardisation as the query map."""
    q_feat = np.asarray(q_feat)
    s_feat = np.asarray(s_feat)
    _checked(q_feat, s_feat, s_mask, proj)
    c = q_feat.shape[0]
    mask = np.asarray(s_mask).reshape(-1).astype(s_feat.dtype)
    ctx = streaming_context(s_feat.reshape(c, -1), mask, proj.w_k, proj.w_v)
    qc = matmul(proj.w_q.T, q_feat.reshape(c, -1))
    return matmul(ctx.T, standardize_channels(qc, eps, axis=1)).reshape(q_feat.shape)


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise row cosines, evaluated in float64 and clipped to [-1, 1]."""
    a64 = a.astype(np.float64)
    b64 = b.astype(np.float64)
    norms = np.outer(np.linalg.norm(a64, axis=1), np.linalg.norm(b64, axis=1))
    dots = a64 @ b64.T
    sim = np.divide(dots, norms, out=np.zeros_like(dots), where=norms > 0)
    return np.clip(sim, -1.0, 1.0).astype(result_dtype(a, b))


def cosine_align(q_feat, s_feat, s_mask, proj: Projection):
    """Cosine-similarity attention over foreground support tokens.

    Row x of the output is ``sum_j cos(Q_x, K_j) V_j / n`` over the n support
    tokens inside the mask. Zero-norm vectors have cosine 0.
    """
    q, k, v = _prepare(q_feat, s_feat, s_mask, proj)
    _, h, w = np.shape(q_feat)
    keep = np.asarray(s_mask, dtype=bool).reshape(-1)
    n = int(keep.sum())
    if n == 0:
        return np.zeros((q.shape[1], h, w), dtype=result_dtype(q))
    sim = cosine_matrix(q, k[keep])
    return unflatten_tokens(matmul(sim, v[keep]) / n, h, w)


def attention_flops(variant: str, tokens: int, channels: int) -> int:
    """Multiply-add count of the attention core (projections excluded)."""
    t, c = tokens, channels
    if variant in ("ours", "nla"):
        return 2 * t * c * c + 2 * t * c * c
    if variant in ("na", "unfactored", "cosine"):
        return 2 * t * t * c + 2 * t * t * c
    raise ValueError(f"unknown variant {variant!r}")
