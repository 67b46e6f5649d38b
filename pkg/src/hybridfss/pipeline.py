"""End-to-end episode pipeline driven by a :class:`RunConfig`.

For every support shot: hybrid prototypes per pyramid level, the
class-agnostic map (computed once at full resolution and average-pooled to
coarser levels), aggregation and decoding per level. Level logits are
upsampled (nearest) to full resolution and averaged; the shots are fused by
majority vote.
"""

from __future__ import annotations

import dataclasses
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import aggregation
from .ckmm import BasePrototypeBank, build_bank_for_classes, probability_map
from .episode import EpisodeTask, SyntheticConfig, generate_episode, generate_instance, load_episode
from .errors import ConfigError
from .metrics import EvalReport, fold_report
from .p2b import PositionEmbedding
from .p2p import Projection
from .pyramid import (
    COMBINE_MODES,
    PyramidConfig,
    downsample_features,
    pool_steps,
    pyramid_align,
    upsample_nearest,
)

ABLATABLE = ("p2p", "p2b", "ckmm")
EPISODE_CLASS_SETS = ("base", "novel", "all")


@dataclass
class RunConfig:
    """All pipeline and data options; every field has a default.

    ``tau`` defaults to 0.5, not to the decoder's own 0.0: a cosine logit is
    centred on 0 for unrelated features, so thresholding at 0 labels about
    half of the background as foreground.
    """

    projection: str = "identity"
    position: str = "zeros"
    block_size: int = 2
    levels: int = 1
    topk_schedule: list[int] | None = None
    topk_fraction: float | None = 0.2
    combine_mode: str = "add"
    aggregate_mode: str = "concat"
    tau: float = 0.5
    w_ag: float = 0.5
    normalize: bool = False
    exclude_masked_tokens: bool = False
    pad: bool = False
    ablate: list[str] = field(default_factory=list)
    episodes: int = 100
    episode_classes: str = "base"
    bank_instances: int = 5
    synthetic: SyntheticConfig = field(default_factory=lambda: SyntheticConfig(channels=64))
    episodes_dir: str | None = None
    bank_path: str | None = None
    out: str | None = None
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if isinstance(self.synthetic, dict):
            self.synthetic = synthetic_from_dict(self.synthetic)
        if self.synthetic.seed != self.seed:
            self.synthetic = dataclasses.replace(self.synthetic, seed=self.seed)
        if isinstance(self.ablate, str):
            self.ablate = [a for a in self.ablate.split(",") if a]
        bad = sorted(set(self.ablate) - set(ABLATABLE))
        if bad:
            raise ConfigError(f"cannot ablate {bad}; choose from {ABLATABLE}")
        self.ablate = sorted(set(self.ablate))
        if self.projection not in ("identity", "random"):
            raise ConfigError(f"unknown projection mode {self.projection!r}")
        if self.position not in ("zeros", "random"):
            raise ConfigError(f"unknown position-embedding mode {self.position!r}")
        if self.combine_mode not in COMBINE_MODES:
            raise ConfigError(f"unknown combine mode {self.combine_mode!r}")
        if self.aggregate_mode not in aggregation.AGGREGATE_MODES:
            raise ConfigError(f"unknown aggregate mode {self.aggregate_mode!r}")
        if self.episode_classes not in EPISODE_CLASS_SETS:
            raise ConfigError(f"episode_classes must be one of {EPISODE_CLASS_SETS}")
        if self.episode_classes == "novel" and not self.synthetic.novel_classes:
            raise ConfigError("episode_classes='novel' needs num_novel_classes >= 1")
        for name in ("levels", "block_size", "bank_instances", "threads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.episodes < 0:
            raise ConfigError("episodes must be >= 0")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["synthetic"] = dataclasses.asdict(self.synthetic)
        return out

    def updated(self, **overrides) -> "RunConfig":
        """Copy with non-None overrides applied (flags win over the file)."""
        data = self.to_dict()
        syn_keys = {f.name for f in dataclasses.fields(SyntheticConfig)}
        for key, value in overrides.items():
            if value is None:
                continue
            if key in syn_keys and key != "seed":
                data["synthetic"][key] = value
            else:
                data[key] = value
        return RunConfig.from_dict(data)

    def pyramid(self, height: int, width: int) -> PyramidConfig:
        return PyramidConfig.halving(
            height, width, self.levels, self.block_size,
            topk_schedule=self.topk_schedule,
            topk_fraction=None if self.topk_schedule is not None else self.topk_fraction,
            combine_mode=self.combine_mode, pad=self.pad,
        )

    def episode_class(self, index: int) -> int:
        syn = self.synthetic
        pool = {"base": syn.base_classes, "novel": syn.novel_classes,
                "all": list(range(syn.num_classes))}[self.episode_classes]
        return pool[index % len(pool)]


def synthetic_from_dict(data: dict) -> SyntheticConfig:
    known = {f.name for f in dataclasses.fields(SyntheticConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown synthetic config keys: {unknown}")
    return SyntheticConfig(**data)


def build_synthetic_bank(cfg: RunConfig) -> BasePrototypeBank:
    syn = cfg.synthetic
    instances = []
    for c in syn.base_classes:
        for i in range(cfg.bank_instances):
            pair = generate_instance(syn, c, i)
            instances.append((pair.features, pair.mask, c))
    return build_bank_for_classes(instances, syn.base_classes)


def generate_episodes(cfg: RunConfig) -> list[EpisodeTask]:
    return [generate_episode(cfg.synthetic, cfg.episode_class(i), i) for i in range(cfg.episodes)]


def load_episodes(directory) -> list[EpisodeTask]:
    root = Path(directory)
    if not root.is_dir():
        raise FileNotFoundError(f"episode directory {root} does not exist")
    dirs = sorted(p for p in root.iterdir() if (p / "manifest.json").is_file())
    if not dirs:
        raise FileNotFoundError(f"no episodes found under {root}")
    return [load_episode(p) for p in dirs]


class Pipeline:
    """Stateless apart from the fixed per-level projections, embeddings and bank."""

    def __init__(self, cfg: RunConfig, bank: BasePrototypeBank | None, channels: int,
                 height: int, width: int):
        self.cfg = cfg
        self.pyr = cfg.pyramid(height, width)
        self.use_ckmm = "ckmm" not in cfg.ablate
        if self.use_ckmm and bank is None:
            raise ConfigError("CKMM is enabled but no prototype bank was supplied")
        self.bank = bank
        self.projections = [
            Projection.from_mode(cfg.projection, channels, seed=cfg.seed * 1000 + l)
            for l in range(self.pyr.levels)
        ]
        self.embeddings = [
            PositionEmbedding.from_mode(cfg.position, h, w, seed=cfg.seed * 1000 + 500 + l)
            for l, (h, w) in enumerate(self.pyr.level_dims)
        ]

    def agnostic_map(self, q_feat: np.ndarray) -> np.ndarray:
        _, h, w = q_feat.shape
        if self.use_ckmm:
            return probability_map(self.bank, q_feat, normalize=self.cfg.normalize)
        # neutral element of the chosen aggregation
        fill = 1.0 if self.cfg.aggregate_mode == "multiply" else 0.0
        return np.full((1, h, w), fill, dtype=np.float32)

    def level_logits(self, proto: np.ndarray, q_feat: np.ndarray, p_ag: np.ndarray) -> np.ndarray:
        if proto.shape[0] != q_feat.shape[0]:
            # concat-combined prototypes (2C channels) are matched against the query repeated
            q_feat = np.concatenate([q_feat] * (proto.shape[0] // q_feat.shape[0]), axis=0)
        guidance = aggregation.aggregate(proto, p_ag, self.cfg.aggregate_mode)
        if self.cfg.aggregate_mode == "concat":
            return aggregation.decode_logits(guidance, q_feat, self.cfg.w_ag)
        return aggregation.decode_fused(guidance, q_feat).logits

    def predict(self, episode: EpisodeTask) -> aggregation.Prediction:
        q = episode.query_features
        _, h, w = q.shape
        p_ag = self.agnostic_map(q)
        use_p2p = "p2p" not in self.cfg.ablate
        use_p2b = "p2b" not in self.cfg.ablate
        shots = []
        for shot in range(episode.shot):
            protos = pyramid_align(episode, self.pyr, self.projections, self.embeddings, shot,
                                   use_p2p=use_p2p, use_p2b=use_p2b)
            total = np.zeros((1, h, w), dtype=np.float64)
            for level, proto in enumerate(protos):
                steps = pool_steps((h, w), self.pyr.level_dims[level])
                q_l = downsample_features(q, steps)
                p_l = downsample_features(p_ag, steps)
                total += upsample_nearest(self.level_logits(proto, q_l, p_l), steps)
            logits = (total / len(protos)).astype(np.float32)
            shots.append(aggregation.Prediction.from_logits(logits, self.cfg.tau))
        return aggregation.multishot_fuse(shots, self.cfg.tau)


def evaluate(cfg: RunConfig, episodes: list[EpisodeTask],
             bank: BasePrototypeBank | None = None) -> tuple[EvalReport, list[aggregation.Prediction]]:
    if not episodes:
        raise ConfigError("no episodes to evaluate")
    if bank is None and "ckmm" not in cfg.ablate:
        bank = build_synthetic_bank(cfg)
    c, h, w = episodes[0].query_features.shape
    pipe = Pipeline(cfg, bank, c, h, w)
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            preds = list(pool.map(pipe.predict, episodes))
    else:
        preds = [pipe.predict(ep) for ep in episodes]
    report = fold_report((p.mask, ep.query_gt, ep.class_id) for p, ep in zip(preds, episodes))
    return report, preds
