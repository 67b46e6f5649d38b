"""Joining class-aware and class-agnostic guidance, decoding, shot fusion.

The decoder is parameter-free: a pixel's logit is the cosine between its
query feature and its aligned prototype, plus ``w_ag`` times the
class-agnostic map standardised over the image. A pixel is foreground when
its logit is >= ``tau``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError
from .tensor import check_binary, save_jcat

AGGREGATE_MODES = ("concat", "add", "multiply")
DEFAULT_TAU = 0.0
DEFAULT_W_AG = 0.5


@dataclass
class Prediction:
    logits: np.ndarray  # 1 x H x W
    mask: np.ndarray  # H x W, {0, 1}
    tau: float

    @classmethod
    def from_logits(cls, logits, tau: float) -> "Prediction":
        logits = np.asarray(logits)
        if logits.ndim == 2:
            logits = logits[None]
        return cls(logits, (logits[0] >= tau).astype(np.float32), float(tau))


def aggregate(p_aw, p_ag, mode: str = "concat") -> np.ndarray:
    """Concatenate the 1-channel map after the prototype channels, or fuse it in.

    ``add`` and ``multiply`` broadcast the map over every prototype channel
    and return C x H x W instead of (C+1) x H x W.
    """
    p_aw = np.asarray(p_aw)
    p_ag = np.asarray(p_ag)
    if p_ag.ndim == 2:
        p_ag = p_ag[None]
    if p_aw.ndim != 3 or p_ag.shape != (1,) + p_aw.shape[1:]:
        raise DimensionError(f"cannot aggregate prototype {p_aw.shape} with map {p_ag.shape}")
    if mode == "concat":
        dtype = np.result_type(p_aw, p_ag)
        return np.concatenate([p_aw.astype(dtype), p_ag.astype(dtype)], axis=0)
    if mode == "add":
        return p_aw + p_ag
    if mode == "multiply":
        return p_aw * p_ag
    raise ValueError(f"unknown aggregate mode {mode!r}; expected one of {AGGREGATE_MODES}")


def pixel_cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cosine between C-vectors at each pixel of two C x H x W maps; 0 where either is zero."""
    a64 = a.astype(np.float64)
    b64 = b.astype(np.float64)
    dot = (a64 * b64).sum(axis=0)
    norms = np.linalg.norm(a64, axis=0) * np.linalg.norm(b64, axis=0)
    return np.divide(dot, norms, out=np.zeros_like(dot), where=norms > 0)


def standardize_map(p: np.ndarray) -> np.ndarray:
    """Zero mean, unit variance over the image; a constant map becomes zeros."""
    p = np.asarray(p, dtype=np.float64)
    centred = p - p.mean()
    std = centred.std()
    if std == 0:
        return np.zeros_like(centred)
    return centred / std


def decode_logits(guidance, q_feat, w_ag: float = DEFAULT_W_AG) -> np.ndarray:
    """Logits (1 x H x W) for concatenated (C+1)-channel guidance."""
    guidance = np.asarray(guidance)
    q_feat = np.asarray(q_feat)
    if q_feat.ndim != 3 or guidance.shape != (q_feat.shape[0] + 1,) + q_feat.shape[1:]:
        raise DimensionError(
            f"guidance {guidance.shape} must have C+1 channels for query features {q_feat.shape}"
        )
    p_aw, p_ag = guidance[:-1], guidance[-1]
    logits = pixel_cosine(q_feat, p_aw) + w_ag * standardize_map(p_ag)
    return logits[None].astype(np.float32)


def decode(guidance, q_feat, tau: float = DEFAULT_TAU, w_ag: float = DEFAULT_W_AG) -> Prediction:
    return Prediction.from_logits(decode_logits(guidance, q_feat, w_ag), tau)


def decode_fused(guidance, q_feat, tau: float = DEFAULT_TAU) -> Prediction:
    """Cosine-only decoder for guidance already fused by ``add``/``multiply``."""
    guidance = np.asarray(guidance)
    q_feat = np.asarray(q_feat)
    if guidance.shape != q_feat.shape:
        raise DimensionError(f"fused guidance {guidance.shape} does not match query {q_feat.shape}")
    return Prediction.from_logits(pixel_cosine(q_feat, guidance)[None].astype(np.float32), tau)


def multishot_fuse(predictions: list[Prediction], tau: float | None = None) -> Prediction:
    """Majority vote over per-shot masks (a tie counts as foreground).

    Logits are averaged for reporting only. ``tau`` defaults to the first
    prediction's threshold.
    """
    if not predictions:
        raise ValueError("multishot_fuse needs at least one prediction")
    shape = predictions[0].mask.shape
    if any(p.mask.shape != shape or p.logits.shape != predictions[0].logits.shape for p in predictions):
        raise DimensionError("predictions differ in shape")
    # exact integer vote count keeps the result independent of shot order
    votes = np.sum([check_binary(p.mask).astype(np.int64) for p in predictions], axis=0)
    mask = (2 * votes >= len(predictions)).astype(np.float32)
    stacked = np.sort(np.stack([p.logits.astype(np.float64) for p in predictions]), axis=0)
    logits = stacked.mean(axis=0).astype(np.float32)
    return Prediction(logits, mask, predictions[0].tau if tau is None else float(tau))


def save_prediction(path: str | os.PathLike, pred: Prediction, **meta) -> None:
    """``<path>.jcat`` holds the mask, ``<path>.json`` the threshold and any extra metadata."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_jcat(path.with_suffix(".jcat"), pred.mask)
    with open(path.with_suffix(".json"), "w") as fh:
        json.dump({"tau": pred.tau, **meta}, fh, indent=2, sort_keys=True)
        fh.write("\n")
